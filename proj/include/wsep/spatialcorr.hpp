#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/tools/roots.hpp>

#include "wsep/field.hpp"
#include "wsep/grid.hpp"
#include "wsep/numerics.hpp"

namespace wsep {

/// Empirical spatial correlation of one score field, one point per distinct
/// pair distance.
struct Correlogram {
    struct Point {
        double d;
        double rho;
        std::size_t n;
    };
    std::vector<Point> points;  // strictly increasing d
    double omega = 1.0;
};

enum class CorrelationKind { exponential, local_linear };

/// Fitted correlation function rho(d). Evaluates to exactly 1 at d = 0 and
/// is clamped to [-1, 1] elsewhere.
struct CorrelationModel {
    CorrelationKind kind = CorrelationKind::exponential;
    double phi = 1.0;  // exponential range
    // Local-linear fitted curve on the correlogram distances.
    std::vector<double> table_d;
    std::vector<double> table_rho;
    double max_distance = 0.0;
    bool degenerate = false;  // exponential fit hit the lower bound
    bool widened = false;     // local-linear bandwidth had to grow somewhere
    bool truncated = false;   // local-linear curve cut at its first non-positive value

    [[nodiscard]] double operator()(double d) const;
};

[[nodiscard]] inline double eval_correlation(const CorrelationModel& model, double d) {
    if (d <= 0.0) return 1.0;
    double v = 0.0;
    if (model.kind == CorrelationKind::exponential) {
        v = std::exp(-d / model.phi);
    } else {
        const auto& xs = model.table_d;
        const auto& ys = model.table_rho;
        if (xs.empty() || d > model.max_distance) return 0.0;
        if (d <= xs.front()) {
            // Between the zero-lag anchor (0, 1) and the first tabulated point.
            const double w = d / xs.front();
            v = (1.0 - w) * 1.0 + w * ys.front();
        } else if (d >= xs.back()) {
            v = ys.back();
        } else {
            const auto it = std::upper_bound(xs.begin(), xs.end(), d);
            const std::size_t hi = static_cast<std::size_t>(it - xs.begin());
            const std::size_t lo = hi - 1;
            const double w = (d - xs[lo]) / (xs[hi] - xs[lo]);
            v = (1.0 - w) * ys[lo] + w * ys[hi];
        }
    }
    return std::clamp(v, -1.0, 1.0);
}

inline double CorrelationModel::operator()(double d) const { return eval_correlation(*this, d); }

/// Default correlogram cutoff: half the grid diameter.
[[nodiscard]] inline double default_correlogram_cutoff(const SpatialGrid& grid) { return 0.5 * grid.diameter(); }

/// rho~(d) = (N_d^{-1} sum_{|s_i - s_i'| = d} xi_i xi_i') / omega over ordered pairs, d <= d_max.
[[nodiscard]] inline Correlogram empirical_correlation(const Eigen::Ref<const Eigen::VectorXd>& scores, const SpatialGrid& grid,
                                                       double omega, double d_max, double omega_eps = 1e-12) {
    if (!(omega > omega_eps)) throw DomainError("degenerate component variance");
    if (static_cast<std::size_t>(scores.size()) != grid.size()) throw DomainError("empirical_correlation: score length differs from grid");
    if (grid.size() < 2) throw DomainError("empirical_correlation: need at least two locations");

    const double tol = default_pair_tolerance(grid);
    const int qmax = grid.max_lattice_dist2();
    std::vector<double> sums(static_cast<std::size_t>(qmax) + 1, 0.0);
    std::vector<std::size_t> counts(static_cast<std::size_t>(qmax) + 1, 0);
    const std::size_t n = grid.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double si = scores(static_cast<Eigen::Index>(i));
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const int q = grid.lattice_dist2(i, j);
            sums[q] += si * scores(static_cast<Eigen::Index>(j));
            ++counts[q];
        }
    }
    Correlogram out;
    out.omega = omega;
    for (int q = 1; q <= qmax; ++q) {
        if (counts[q] == 0) continue;
        const double d = grid.distance_of(q);
        if (d > d_max + tol) continue;
        out.points.push_back({d, sums[q] / static_cast<double>(counts[q]) / omega, counts[q]});
    }
    return out;
}

namespace detail {

inline double wls_exponential_objective(const Correlogram& c, double phi) {
    double s = 0.0;
    for (const auto& p : c.points) {
        const double r = p.rho - std::exp(-p.d / phi);
        s += static_cast<double>(p.n) * r * r;
    }
    return s;
}

/// Proportional to minus the derivative of the objective in log phi.
inline double wls_exponential_slope(const Correlogram& c, double phi) {
    double s = 0.0;
    for (const auto& p : c.points) {
        const double e = std::exp(-p.d / phi);
        s += static_cast<double>(p.n) * (p.rho - e) * e * p.d;
    }
    return s;
}

}  // namespace detail

/// Weighted least squares fit of exp(-d / phi) with weights N_d.
///
/// A log-spaced scan over [1e-3 d_min, 10 d_max] brackets the global minimum and
/// golden-section search narrows it. Comparing objective values cannot locate a
/// minimum better than sqrt(machine epsilon), so the last step solves for the
/// zero of the slope, which makes the fit reproducible to rounding level.
[[nodiscard]] inline CorrelationModel fit_exponential_wls(const Correlogram& c) {
    if (c.points.empty()) throw DomainError("fit_exponential_wls: empty correlogram");
    const double d_min = c.points.front().d;
    const double d_max = c.points.back().d;
    const double lo = 1e-3 * d_min;
    const double hi = 10.0 * d_max;

    CorrelationModel m;
    m.kind = CorrelationKind::exponential;
    m.max_distance = d_max;

    const bool any_positive = std::any_of(c.points.begin(), c.points.end(), [](const auto& p) { return p.rho > 0.0; });
    if (!any_positive) {
        m.phi = lo;
        m.degenerate = true;
        return m;
    }

    auto f = [&](double u) { return detail::wls_exponential_objective(c, std::exp(u)); };
    const double ulo = std::log(lo);
    const double uhi = std::log(hi);
    constexpr int scan = 400;
    int best = 0;
    double best_val = f(ulo);
    for (int k = 1; k <= scan; ++k) {
        const double v = f(ulo + (uhi - ulo) * k / scan);
        if (v < best_val) {
            best_val = v;
            best = k;
        }
    }
    double a = ulo + (uhi - ulo) * std::max(best - 1, 0) / scan;
    double b = ulo + (uhi - ulo) * std::min(best + 1, scan) / scan;

    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = b - inv_phi * (b - a);
    double x2 = a + inv_phi * (b - a);
    double f1 = f(x1);
    double f2 = f(x2);
    // log-space width 1e-8 is a relative tolerance of 1e-8 in phi.
    while (b - a > 1e-9) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    double u = 0.5 * (a + b);
    // Keep the scan optimum if refinement could not beat it (flat objective).
    if (best_val < f(u)) u = ulo + (uhi - ulo) * best / scan;

    const double ra = std::max(ulo, u - 1e-6), rb = std::min(uhi, u + 1e-6);
    auto slope = [&](double v) { return detail::wls_exponential_slope(c, std::exp(v)); };
    const double sa = slope(ra), sb = slope(rb);
    if (sa != 0.0 && sb != 0.0 && (sa < 0.0) != (sb < 0.0)) {
        std::uintmax_t iters = 200;
        const auto root =
            boost::math::tools::toms748_solve(slope, ra, rb, sa, sb, boost::math::tools::eps_tolerance<double>(), iters);
        u = 0.5 * (root.first + root.second);
    }
    m.phi = std::exp(u);
    m.degenerate = (u <= ulo + 1e-9);
    return m;
}

/// Local-linear smoother over (d, rho~(d)) with Epanechnikov weights times N_d,
/// tabulated at every correlogram distance.
[[nodiscard]] inline CorrelationModel fit_local_linear(const Correlogram& c, double bandwidth) {
    if (c.points.size() < 2) throw DomainError("fit_local_linear: need at least two correlogram points");
    if (!(bandwidth > 0.0)) throw DomainError("fit_local_linear: bandwidth must be positive");
    CorrelationModel m;
    m.kind = CorrelationKind::local_linear;
    m.max_distance = c.points.back().d;
    for (const auto& target : c.points) {
        double bw = bandwidth;
        while (true) {
            double s0 = 0.0, s1 = 0.0, s2 = 0.0, t0 = 0.0, t1 = 0.0;
            int support = 0;
            for (const auto& p : c.points) {
                const double u = (p.d - target.d) / bw;
                if (std::abs(u) >= 1.0) continue;
                const double w = static_cast<double>(p.n) * 0.75 * (1.0 - u * u);
                const double x = p.d - target.d;
                s0 += w;
                s1 += w * x;
                s2 += w * x * x;
                t0 += w * p.rho;
                t1 += w * x * p.rho;
                ++support;
            }
            const double det = s0 * s2 - s1 * s1;
            if (support >= 2 && det > 1e-12 * s0 * s2) {
                m.table_d.push_back(target.d);
                m.table_rho.push_back((s2 * t0 - s1 * t1) / det);
                break;
            }
            bw *= 1.5;
            m.widened = true;
        }
    }
    // Keep the curve up to its first non-positive value; the negative tail of
    // a noisy fit makes the implied score covariance indefinite.
    for (std::size_t i = 0; i < m.table_rho.size(); ++i) {
        if (m.table_rho[i] > 0.0) continue;
        m.max_distance = i == 0 ? 0.5 * m.table_d[0] : 0.5 * (m.table_d[i - 1] + m.table_d[i]);
        m.truncated = true;
        const std::size_t keep = std::max<std::size_t>(i, 1);
        m.table_d.resize(keep);
        m.table_rho.resize(keep);
        break;
    }
    return m;
}

}  // namespace wsep
