#pragma once

#include <stdexcept>
#include <string>

namespace hc {

// Invalid or inconsistent configuration / input files. CLI exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss or gradient. CLI exit code 3.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& msg, long epoch_index = -1)
        : std::runtime_error(msg), epoch(epoch_index) {}
    long epoch;
};

// A command needs an artifact (checkpoint, corpus) that does not exist. Exit code 4.
struct MissingArtifactError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace hc
