#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace ape {

// Error taxonomy shared by the whole library. The CLI maps these onto
// distinct process exit codes.
class error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dimension / shape mismatches between operands.
class shape_error : public error {
public:
    using error::error;
};

// Parameter outside its documented domain (temperature <= 0, odd head_dim, ...).
class value_error : public error {
public:
    using error::error;
};

// A computation produced (or would propagate) a non-finite value.
class numeric_error : public error {
public:
    using error::error;
};

// Filesystem-level failures: missing file, unwritable path.
class io_error : public error {
public:
    using error::error;
};

// Malformed persisted data: bad magic, version, truncation, checksum.
class format_error : public error {
public:
    using error::error;
};

// Store lookups for ids that are not present.
class not_found_error : public error {
public:
    using error::error;
};

// ---------------------------------------------------------------------------
// Deterministic RNG. std::normal_distribution is implementation-defined, so
// weight init and test fixtures use this fixed splitmix64 + Box-Muller pair:
// identical seeds give bit-identical streams on every platform.
// ---------------------------------------------------------------------------

class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in (0, 1]: 53 mantissa bits, never exactly 0 so log() is safe.
    double next_unit() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = next_unit();
        const double u2 = next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// ---------------------------------------------------------------------------
// FNV-1a 64-bit. Used for content addressing of cache entries, model weight
// checksums, and the .apekv file integrity checksum.
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                             std::uint64_t state = kFnvOffsetBasis) {
    for (std::uint8_t b : bytes) {
        state ^= b;
        state *= kFnvPrime;
    }
    return state;
}

inline void ensure_finite(double v, const char* what) {
    if (!std::isfinite(v)) {
        throw numeric_error(std::string(what) + ": non-finite value");
    }
}

inline void ensure_all_finite(std::span<const float> vals, const char* what) {
    for (float v : vals) {
        if (!std::isfinite(v)) {
            throw numeric_error(std::string(what) + ": non-finite element");
        }
    }
}

}  // namespace ape
