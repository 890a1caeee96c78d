#pragma once

#include <cstdint>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace hc {

// Deterministic PRNG: SplitMix64 run in counter mode.
//
// output(i) = mix64(seed + (i+1) * 0x9E3779B97F4A7C15), i = 0, 1, 2, ...
//
// The stream is a pure function of the 64-bit seed and uses only fixed-width
// integer arithmetic, so it is identical on every platform and build. The
// algorithm is frozen; changing it would silently invalidate every recorded
// experiment, so don't.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), counter_(0) {}

    std::uint64_t next_u64() {
        std::uint64_t z = seed_ + (++counter_) * 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Lemire multiply-shift; bias < 2^-40 for any
    // n this project uses.
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

// FNV-1a, used for config hashes and per-component seed derivation.
constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

// Every random stream in the pipeline derives from one root seed plus the
// name of the component that consumes it.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view component) {
    return root ^ fnv1a64(component);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view component,
                                 std::uint64_t index) {
    return derive_seed(root, component) + 0x9E3779B97F4A7C15ULL * (index + 1);
}

}  // namespace hc
