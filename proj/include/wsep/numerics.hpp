#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include <boost/math/special_functions/gamma.hpp>

namespace wsep {

/// Raised when an argument falls outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

namespace numerics {

/// Natural log of the gamma function for x > 0.
[[nodiscard]] inline double ln_gamma(double x) {
    if (!std::isfinite(x) || x <= 0.0) {
        throw DomainError("ln_gamma: argument must be positive and finite, got " + std::to_string(x));
    }
    return std::lgamma(x);
}

/// Regularized lower incomplete gamma P(s, x).
[[nodiscard]] inline double regularized_gamma_lower(double s, double x) {
    if (!std::isfinite(s) || s <= 0.0 || std::isnan(x) || x < 0.0) {
        throw DomainError("regularized_gamma_lower: requires s > 0 and x >= 0");
    }
    if (x == 0.0) return 0.0;
    if (std::isinf(x)) return 1.0;
    return boost::math::gamma_p(s, x);
}

/// Upper tail of the chi-squared distribution with `df` degrees of freedom.
///
/// Computed from the complemented incomplete gamma directly so that small
/// p-values keep their relative precision.
[[nodiscard]] inline double chi_squared_sf(double x, int df) {
    if (df < 1) throw DomainError("chi_squared_sf: df must be >= 1");
    if (std::isnan(x) || x < 0.0) throw DomainError("chi_squared_sf: x must be >= 0");
    if (x == 0.0) return 1.0;
    if (std::isinf(x)) return 0.0;
    return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

namespace detail {

// K_{n+1/2}(x) by upward recurrence from K_{1/2} = K_{-1/2} = sqrt(pi/2x) e^{-x}.
inline double bessel_k_half_integer(int n, double x) {
    double km = std::sqrt(std::numbers::pi / (2.0 * x)) * std::exp(-x);  // K_{-1/2}
    double k = km;                                                       // K_{1/2}
    for (int i = 0; i < n; ++i) {
        const double nu = i + 0.5;
        const double kp = km + (2.0 * nu / x) * k;
        km = k;
        k = kp;
    }
    return k;
}

}  // namespace detail

/// Modified Bessel function of the second kind K_nu(x), real order.
///
/// K is even in the order, so negative orders are folded onto |nu|. Half-integer
/// orders use the elementary closed form; other orders go through the
/// standard library's Temme/Steed evaluation.
[[nodiscard]] inline double bessel_k(double nu, double x) {
    if (!std::isfinite(x) || x <= 0.0) throw DomainError("bessel_k: x must be positive and finite");
    if (!std::isfinite(nu)) throw DomainError("bessel_k: order must be finite");
    nu = std::abs(nu);
    const double shifted = nu - 0.5;
    const double rounded = std::round(shifted);
    if (shifted == rounded && rounded >= 0.0 && rounded < 64.0) {
        return detail::bessel_k_half_integer(static_cast<int>(rounded), x);
    }
    return std::cyl_bessel_k(nu, x);
}

}  // namespace numerics

/// Reproducible random stream addressed by (seed, stream id).
///
/// Each (seed, stream) pair seeds an independent Mersenne Twister through a
/// seed sequence, so Monte Carlo replicates can be drawn in any order or on any
/// thread and still see the same numbers. A single instance is not thread-safe.
class SeededRng {
public:
    SeededRng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream), engine_(make_engine(seed, stream)) {}

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] std::uint64_t stream() const noexcept { return stream_; }

    double standard_normal() { return normal_(engine_); }
    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

    std::mt19937_64& engine() noexcept { return engine_; }

private:
    static std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                          0x9e3779b9u};
        return std::mt19937_64(seq);
    }

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

namespace numerics {

inline double standard_normal(SeededRng& rng) { return rng.standard_normal(); }

}  // namespace numerics
}  // namespace wsep
