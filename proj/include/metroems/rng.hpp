#pragma once

// Keyed, counter-seeded random streams. Every scenario owns an independent
// stream derived from (seed, domain, index), so serial and parallel
// generation produce bit-identical output.

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace metroems {

namespace detail {

inline std::uint64_t splitmix64_next(std::uint64_t& s) {
    std::uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_key(std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = a;
    s ^= b + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
    splitmix64_next(s);
    return s;
}

} // namespace detail

class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t domain, std::uint64_t index) {
        state_ = detail::mix_key(detail::mix_key(seed, domain), index);
        // burn a few outputs so nearby keys decorrelate
        for (int i = 0; i < 4; ++i) detail::splitmix64_next(state_);
    }

    std::uint64_t next_u64() { return detail::splitmix64_next(state_); }

    /// Uniform double in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via inverse CDF (Acklam's rational approximation,
    /// relative error below 1.2e-9 -- plenty for scenario synthesis).
    double normal() {
        double u = uniform();
        // keep strictly inside (0,1)
        if (u <= 0.0) u = 0x1.0p-53;
        return inverse_normal_cdf(u);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    double lognormal(double log_mean, double log_sd) {
        return std::exp(normal(log_mean, log_sd));
    }

    /// Index in [0, n).
    std::size_t pick(std::size_t n) {
        if (n == 0) throw std::invalid_argument("RngStream::pick: empty range");
        return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
    }

    static double inverse_normal_cdf(double p) {
        static constexpr double a[6] = {
            -3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
            1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00};
        static constexpr double b[5] = {
            -5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
            6.680131188771972e+01, -1.328068155288572e+01};
        static constexpr double c[6] = {
            -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
            -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00};
        static constexpr double d[4] = {
            7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
            3.754408661907416e+00};
        constexpr double plow = 0.02425;
        constexpr double phigh = 1 - plow;

        if (p < plow) {
            double q = std::sqrt(-2 * std::log(p));
            return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
                   ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
        }
        if (p > phigh) {
            double q = std::sqrt(-2 * std::log(1 - p));
            return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
                   ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
        }
        double q = p - 0.5;
        double r = q * q;
        return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
               (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
    }

private:
    std::uint64_t state_;
};

// Stream domains, kept distinct so draws never collide across uses.
namespace rng_domain {
inline constexpr std::uint64_t optimization_scenarios = 0x4f505453ULL; // "OPTS"
inline constexpr std::uint64_t assessment_scenarios = 0x41535353ULL;   // "ASSS"
inline constexpr std::uint64_t kmeans = 0x4b4d4e53ULL;                 // "KMNS"
inline constexpr std::uint64_t consistency_draws = 0x434e5354ULL;      // "CNST"
inline constexpr std::uint64_t synthetic_ar = 0x53594e41ULL;           // "SYNA"
} // namespace rng_domain

} // namespace metroems
