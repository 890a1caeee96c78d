#pragma once

namespace hc {

inline constexpr const char* kToolVersion = "hc 0.1.0";

}  // namespace hc
