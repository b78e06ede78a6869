#pragma once

#include <cmath>
#include <cstdint>

namespace volterra {

// Counter-based Gaussian draws: each variate is a pure function of
// (seed, path, step, component), so parallel path generation is
// order-independent and replays are exact.

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t seed, std::uint64_t path, std::uint64_t step, std::uint64_t comp) {
    std::uint64_t h = splitmix64(seed ^ 0x2545f4914f6cdd1dULL);
    h = splitmix64(h ^ path);
    h = splitmix64(h ^ (step + 0x9e3779b97f4a7c15ULL));
    h = splitmix64(h ^ (comp + 0x94d049bb133111ebULL));
    return h;
}

// uniform in (0, 1): top 53 bits, shifted away from 0
inline double to_unit(std::uint64_t h) {
    return (static_cast<double>(h >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

} // namespace detail

inline double gaussian_at(std::uint64_t seed, std::uint64_t path, std::uint64_t step, std::uint64_t comp) {
    const std::uint64_t h1 = detail::mix(seed, path, step, 2 * comp);
    const std::uint64_t h2 = detail::mix(seed, path, step, 2 * comp + 1);
    const double u1 = detail::to_unit(h1);
    const double u2 = detail::to_unit(h2);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

} // namespace volterra
