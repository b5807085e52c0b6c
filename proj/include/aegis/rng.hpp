#pragma once

// Counter-based random streams.
//
// Every draw is a pure function of (key, counter): the key mixes the run seed
// with a stream name, and the counter increments per 64-bit draw. Output words
// are the SplitMix64 finalizer applied to key + counter * golden-gamma. Named
// streams ("data", "noise", "attack", "init", ...) never share state, so adding
// a consumer to one stream leaves every other stream's sequence unchanged.
// Gaussian draws use Box-Muller on our own uniforms so results do not depend on
// the standard library's distribution implementations.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string_view>

namespace aegis {

inline constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

class Rng {
public:
    using result_type = std::uint64_t;

    Rng() = default;
    explicit Rng(std::uint64_t key) : key_(splitmix64(key)) {}

    /// Independent stream for (seed, name).
    static Rng stream(std::uint64_t seed, std::string_view name) {
        return Rng(splitmix64(seed) ^ fnv1a64(name));
    }

    /// Child stream derived from this stream's key and an index; the parent's
    /// counter is unaffected.
    Rng fork(std::uint64_t index) const { return Rng(key_ ^ splitmix64(index + 0x632BE59BD9B4E019ull)); }
    Rng fork(std::string_view name) const { return Rng(key_ ^ fnv1a64(name)); }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept { return splitmix64(key_ + 0x9E3779B97F4A7C15ull * counter_++); }

    /// Uniform in [0, 1).
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n) by rejection (unbiased).
    std::uint64_t below(std::uint64_t n) noexcept {
        if (n <= 1) return 0;
        const std::uint64_t limit = max() - max() % n;
        std::uint64_t x;
        do x = (*this)();
        while (x >= limit);
        return x % n;
    }

    /// Standard normal via Box-Muller.
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace aegis
