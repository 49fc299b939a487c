#pragma once

#include <cmath>
#include <cstdint>

namespace scdpo {

// Counter-based random stream. Every consumer derives its own stream from a
// (seed, domain...) key, so results are independent of thread scheduling and
// of how many other streams were consumed before this one.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t state) : state_(state) {}

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        // splitmix64 finalizer applied to a simple combiner
        std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    template <typename... Parts>
    static RandomStream keyed(std::uint64_t seed, Parts... parts) {
        std::uint64_t s = seed;
        ((s = mix(s, static_cast<std::uint64_t>(parts))), ...);
        return RandomStream(s);
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1). Hand-rolled because std distributions are not
    // bit-stable across standard library implementations.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(next_unit() * static_cast<double>(n));
    }

    std::int64_t next_range(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(next_below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    // Box-Muller; one value per call, second half discarded for simplicity.
    double next_gaussian() {
        double u1 = next_unit();
        double u2 = next_unit();
        while (u1 <= 1e-300) u1 = next_unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    std::uint64_t state_;
};

}  // namespace scdpo
