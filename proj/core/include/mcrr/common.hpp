#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>

namespace mcrr {

inline constexpr const char* kToolVersion = "0.1.0";

/**
 * @brief Base class for all library errors.
 *
 * Each concrete error corresponds to one failure mode; callers that need to
 * distinguish them catch the derived type.
 */
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// forcing-data
struct MalformedRow : Error { using Error::Error; };
struct NonConsecutiveDates : Error { using Error::Error; };
struct NegativeForcing : Error { using Error::Error; };
struct IncompleteFirstYear : Error { using Error::Error; };
struct TooFewYears : Error { using Error::Error; };
struct MissingObserved : Error { using Error::Error; };

// mcp-core
struct ArityMismatch : Error { using Error::Error; };
struct MissingContext : Error { using Error::Error; };
struct GateSumViolation : Error { using Error::Error; };
struct NonFiniteState : Error { using Error::Error; };
struct InvalidOption : Error { using Error::Error; };

// grad-train
struct NonFiniteLoss : Error { using Error::Error; };
struct NonFiniteGradient : Error { using Error::Error; };
struct AllRunsFailed : Error { using Error::Error; };
struct IncompatibleLineage : Error { using Error::Error; };
struct MissingLineage : Error { using Error::Error; };

// metrics
struct DegenerateObserved : Error { using Error::Error; };

/**
 * @brief Deterministic 64-bit PRNG (xoshiro-free, plain splitmix + mt-quality).
 *
 * The generator and the mapping to doubles are fixed here so that seeded
 * draws are bit-identical across platforms and standard-library versions.
 */
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // Warm up so nearby seeds decorrelate immediately.
        next_u64();
        next_u64();
    }

    std::uint64_t next_u64() {
        // splitmix64; passes BigCrush and is trivially portable.
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform on [0,1) with 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform on [-1,1).
    double uniform_pm1() { return 2.0 * uniform01() - 1.0; }

    /// Uniform on [lo,hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Standard normal via Box-Muller (deterministic, no library distribution).
    double gauss() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double two_pi = 6.283185307179586476925286766559;
        spare_ = r * std::sin(two_pi * u2);
        have_spare_ = true;
        return r * std::cos(two_pi * u2);
    }

    /// Uniform integer on [0,n).
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// Format a double with 17 significant digits (round-trips to the same bits).
inline std::string format17(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

/// Parse a double; returns false on trailing garbage or empty input.
inline bool parse_double(std::string_view s, double& out) {
    // Trim ASCII whitespace and an optional leading '+' (from_chars rejects it).
    size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    if (b < e && s[b] == '+') ++b;
    if (b == e) return false;
    auto res = std::from_chars(s.data() + b, s.data() + e, out);
    return res.ec == std::errc() && res.ptr == s.data() + e;
}

/// FNV-1a 64-bit hash, used to stamp artifacts with a config fingerprint.
inline std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hash_hex(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

}  // namespace mcrr
