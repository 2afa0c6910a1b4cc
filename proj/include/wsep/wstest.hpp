#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "wsep/field.hpp"
#include "wsep/grid.hpp"
#include "wsep/numerics.hpp"
#include "wsep/spatialcorr.hpp"
#include "wsep/spectral.hpp"

namespace wsep {

enum class CorrMethod { parametric, nonparametric };

[[nodiscard]] inline const char* to_string(CorrMethod m) { return m == CorrMethod::parametric ? "para" : "nonp"; }

struct TestOptions {
    /// Correlogram cutoff; <= 0 selects half the grid diameter.
    double correlogram_cutoff = 0.0;
    /// Local-linear bandwidth; <= 0 selects twice the grid spacing.
    double local_linear_bandwidth = 0.0;
    /// Plain eigenvalues closer than this fraction of the largest one are treated as tied.
    double omega_tie_tolerance = 1e-8;
    /// Pair-distance matching tolerance; <= 0 selects 1e-9 * spacing.
    double pair_tolerance = 0.0;
    /// Scores whose matched variance falls below this are rejected.
    double omega_floor = 1e-12;
};

struct PairStat {
    int j = 0;  // 0-based component indices, j < k
    int k = 0;
    double T = 0.0;
    double rho_hat = 0.0;
    double sigma = 0.0;
    double standardized = 0.0;
};

struct TestDiagnostics {
    std::size_t pair_count = 0;  // ordered pairs N_h
    std::size_t locations = 0;
    std::vector<double> lag_eigenvalues;
    std::vector<double> plain_eigenvalues;
    Matching matching;
    std::vector<CorrelationModel> models;
    std::vector<std::string> warnings;
};

struct TestReport {
    double lag = 0.0;
    CorrMethod method = CorrMethod::parametric;
    int R = 0;
    double fve_requested = 0.0;
    double fve_achieved = 0.0;
    std::vector<PairStat> pair_stats;
    double S = 0.0;
    int df = 0;
    double p_value = 1.0;
    TestDiagnostics diagnostics;
};

// ---------------------------------------------------------------------------
// Pairwise statistics

namespace detail {

inline double cross_score_sum(const Eigen::MatrixXd& scores, int j, int k, const char* who) {
    if (j == k) throw DomainError(std::string(who) + ": requires j != k");
    if (j < 0 || k < 0 || j >= scores.cols() || k >= scores.cols()) throw DomainError(std::string(who) + ": component index out of range");
    return scores.col(j).dot(scores.col(k)) / std::sqrt(static_cast<double>(scores.rows()));
}

}  // namespace detail

/// N^{-1/2} sum_i xi_ij xi_ik for scores taken from the plain covariance's own
/// eigenfunctions. Vanishes identically; kept to check that property.
[[nodiscard]] inline double naive_statistic(const Eigen::MatrixXd& plain_scores, int j, int k) {
    return detail::cross_score_sum(plain_scores, j, k, "naive_statistic");
}

/// T_h(j, k) = N^{-1/2} sum_i xi_ij^(h) xi_ik^(h) on lag-eigenfunction scores.
[[nodiscard]] inline double pair_statistic(const Eigen::MatrixXd& lag_scores, int j, int k) {
    return detail::cross_score_sum(lag_scores, j, k, "pair_statistic");
}

/// Scale ratio (eta_j - eta_k) / (omega_j - omega_k). `tie_eps` is an
/// absolute bound on |omega_j - omega_k|.
[[nodiscard]] inline double rho_hat(double omega_j, double omega_k, double eta_j, double eta_k, double tie_eps) {
    const double denom = omega_j - omega_k;
    if (!(std::abs(denom) > tie_eps)) throw DomainError("near-tied plain eigenvalues");
    return (eta_j - eta_k) / denom;
}

[[nodiscard]] inline bool rho_hat_suspicious(double rho) { return !(rho >= 0.01 && rho <= 100.0); }

// ---------------------------------------------------------------------------
// Variance of T_h under Gaussian scores

/// Estimated spatial covariance of every retained score field:
/// U_r[i, i'] = omega_r * rho_r(|s_i - s_i'|).
struct ScoreCovarianceMachinery {
    std::vector<double> omega;
    std::vector<CorrelationModel> models;
    PairSet pairs;
    SpatialGrid grid;

    ScoreCovarianceMachinery(std::vector<double> w, std::vector<CorrelationModel> m, PairSet p, SpatialGrid g)
        : omega(std::move(w)), models(std::move(m)), pairs(std::move(p)), grid(g) {
        if (omega.size() != models.size()) throw DomainError("machinery: omega and model counts differ");
        build_tables();
    }

    /// U_r entry for a squared lattice distance (q = 0 is the diagonal).
    [[nodiscard]] double entry(std::size_t r, int q) const { return tables[r][static_cast<std::size_t>(q)]; }

    /// Materialized U_r; for small grids and tests only.
    [[nodiscard]] Eigen::MatrixXd covariance_matrix(std::size_t r) const {
        const auto n = static_cast<Eigen::Index>(grid.size());
        Eigen::MatrixXd u(n, n);
        for (Eigen::Index a = 0; a < n; ++a)
            for (Eigen::Index b = 0; b < n; ++b) u(a, b) = entry(r, grid.lattice_dist2(a, b));
        return u;
    }

    std::vector<std::vector<double>> tables;
    std::map<int, std::size_t> distance_counts;

private:
    void build_tables() {
        const int qmax = grid.max_lattice_dist2();
        tables.assign(omega.size(), std::vector<double>(static_cast<std::size_t>(qmax) + 1, 0.0));
        for (std::size_t r = 0; r < omega.size(); ++r) {
            tables[r][0] = omega[r];
            for (int q = 1; q <= qmax; ++q) tables[r][q] = omega[r] * eval_correlation(models[r], grid.distance_of(q));
        }
        distance_counts = lattice_distance_counts(grid);
    }
};

struct TraceProducts {
    double tr_UU = 0.0;      // tr(U_j U_k)
    double tr_U1U2 = 0.0;    // tr(U_{j,1} U_{k,2})
    double tr_V1V2t = 0.0;   // tr(V_{j,1} V_{k,2}^T)
};

/// The three traces entering sigma^2_{j,k}, streamed over the lattice without
/// forming any N x N or N_h x N_h matrix.
[[nodiscard]] inline TraceProducts trace_products(const ScoreCovarianceMachinery& m, std::size_t j, std::size_t k) {
    if (j >= m.omega.size() || k >= m.omega.size()) throw DomainError("trace_products: component index out of range");
    const auto& aj = m.tables[j];
    const auto& ak = m.tables[k];
    const auto& grid = m.grid;
    TraceProducts out;

    // tr(U_j U_k): diagonal plus ordered pairs grouped by distance.
    double uu = static_cast<double>(grid.size()) * aj[0] * ak[0];
    for (const auto& [q, c] : m.distance_counts) uu += static_cast<double>(c) * aj[q] * ak[q];
    out.tr_UU = uu;

    const std::size_t nh = m.pairs.count();
    std::vector<int> x1(nh), y1(nh), x2(nh), y2(nh);
    for (std::size_t p = 0; p < nh; ++p) {
        x1[p] = grid.ix(m.pairs.pairs[p].first);
        y1[p] = grid.iy(m.pairs.pairs[p].first);
        x2[p] = grid.ix(m.pairs.pairs[p].second);
        y2[p] = grid.iy(m.pairs.pairs[p].second);
    }

    // tr(U_{j,1} U_{k,2}) = sum_{p,q} U_j[i_p, i_q] U_k[i'_p, i'_q].
    double u12 = 0.0;
    for (std::size_t p = 0; p < nh; ++p) {
        double row = 0.0;
        for (std::size_t q = 0; q < nh; ++q) {
            const int dx1 = x1[p] - x1[q], dy1 = y1[p] - y1[q];
            const int dx2 = x2[p] - x2[q], dy2 = y2[p] - y2[q];
            row += aj[dx1 * dx1 + dy1 * dy1] * ak[dx2 * dx2 + dy2 * dy2];
        }
        u12 += row;
    }
    out.tr_U1U2 = u12;

    // tr(V_{j,1} V_{k,2}^T) = sum_{i,p} U_j[i, i_p] U_k[i, i'_p].
    double v = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const int xi = grid.ix(i), yi = grid.iy(i);
        double row = 0.0;
        for (std::size_t p = 0; p < nh; ++p) {
            const int dx1 = xi - x1[p], dy1 = yi - y1[p];
            const int dx2 = xi - x2[p], dy2 = yi - y2[p];
            row += aj[dx1 * dx1 + dy1 * dy1] * ak[dx2 * dx2 + dy2 * dy2];
        }
        v += row;
    }
    out.tr_V1V2t = v;
    return out;
}

/// sigma^2_{j,k} = tr(U_j U_k)/N + N tr(U_{j,1} U_{k,2}) / (rho N_h)^2 - 2 tr(V_{j,1} V_{k,2}^T) / (rho N_h).
///
/// A nonpositive estimate is floored at 1e-12 omega_j omega_k; `floored` reports it.
[[nodiscard]] inline double sigma_squared(const TraceProducts& tp, double rho, std::size_t n, std::size_t n_h, double omega_j,
                                          double omega_k, bool* floored = nullptr) {
    if (rho == 0.0) throw DomainError("sigma_squared: rho_hat is zero");
    if (n < 1 || n_h < 1) throw DomainError("sigma_squared: N and N_h must be positive");
    const double N = static_cast<double>(n);
    const double rn = rho * static_cast<double>(n_h);
    const double s2 = tp.tr_UU / N + N / (rn * rn) * tp.tr_U1U2 - 2.0 / rn * tp.tr_V1V2t;
    const double floor = 1e-12 * std::abs(omega_j * omega_k);
    if (floored) *floored = !(s2 > 0.0);
    return s2 > 0.0 ? s2 : floor;
}

/// S = sum (T / sigma)^2 over all pairs of the first R components; df = R(R-1)/2.
[[nodiscard]] inline std::pair<double, int> test_statistic(std::span<const PairStat> stats, int R) {
    if (R < 2) throw DomainError("test_statistic: need R >= 2");
    const int df = R * (R - 1) / 2;
    if (static_cast<int>(stats.size()) != df) throw DomainError("test_statistic: expected R(R-1)/2 pair statistics");
    double S = 0.0;
    for (const auto& s : stats) {
        if (!(s.sigma > 0.0)) throw DomainError("test_statistic: nonpositive sigma");
        const double z = s.T / s.sigma;
        S += z * z;
    }
    return {S, df};
}

// ---------------------------------------------------------------------------
// Pipeline

namespace detail {

template <class F>
auto run_stage(const char* stage, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const DomainError& e) {
        throw DomainError(std::string(stage) + ": " + e.what());
    }
}

}  // namespace detail

/// Everything about one lag that does not depend on the truncation level or
/// the correlation method: pairs, both eigen-systems, matching and scores.
/// Correlograms and fitted models are built on demand and cached, so one
/// analysis can serve several (fve, method) reports.
class LagAnalysis {
public:
    LagAnalysis(const FunctionalField& field, double lag, TestOptions options = {})
        : grid_(field.grid), lag_(lag), options_(options) {
        const double tol = options_.pair_tolerance > 0.0 ? options_.pair_tolerance : default_pair_tolerance(grid_);
        pairs_ = detail::run_stage("lag pairs", [&] { return lag_pairs(grid_, lag, tol); });
        if (pairs_.empty()) throw DomainError("lag pairs: no pairs at lag h = " + std::to_string(lag));
        mean_ = sample_mean(field);
        const Kernel plain = detail::run_stage("sample covariance", [&] { return sample_covariance(field); });
        const Kernel lagged = detail::run_stage("lag covariance", [&] { return lag_covariance(field, pairs_); });
        plain_ = detail::run_stage("eigen decomposition", [&] { return eigen_decompose(plain); });
        lag_sys_ = detail::run_stage("eigen decomposition", [&] { return eigen_decompose(lagged); });
        finish_setup(field);
    }

    /// Builds from precomputed eigen-systems (for callers that transform them).
    LagAnalysis(const FunctionalField& field, PairSet pairs, EigenSystem plain, EigenSystem lag_sys, TestOptions options = {})
        : grid_(field.grid), lag_(pairs.lag), options_(options), pairs_(std::move(pairs)), mean_(sample_mean(field)),
          plain_(std::move(plain)), lag_sys_(std::move(lag_sys)) {
        if (pairs_.empty()) throw DomainError("lag pairs: no pairs at lag h = " + std::to_string(lag_));
        finish_setup(field);
    }

    [[nodiscard]] const PairSet& pairs() const noexcept { return pairs_; }
    [[nodiscard]] const EigenSystem& plain_system() const noexcept { return plain_; }
    [[nodiscard]] const EigenSystem& lag_system() const noexcept { return lag_sys_; }
    [[nodiscard]] const Eigen::MatrixXd& scores() const noexcept { return scores_; }
    [[nodiscard]] const Matching& matching() const noexcept { return matching_; }
    [[nodiscard]] double lag() const noexcept { return lag_; }

    /// Truncation used for a requested FVE: floored at 2, capped at the number
    /// of positive lag eigenvalues.
    [[nodiscard]] int truncation(double fve) const {
        const auto R = detail::run_stage("truncation", [&] { return select_truncation(lag_sys_, fve); });
        return static_cast<int>(std::min<Eigen::Index>(R, positive_));
    }

    [[nodiscard]] TestReport report(double fve, CorrMethod method) {
        TestReport rep;
        rep.lag = lag_;
        rep.method = method;
        rep.fve_requested = fve;
        const int R = truncation(fve);
        rep.R = R;
        rep.fve_achieved = explained_fraction(lag_sys_, R);
        auto& diag = rep.diagnostics;
        diag.pair_count = pairs_.count();
        diag.locations = grid_.size();
        diag.lag_eigenvalues.assign(lag_sys_.values.data(), lag_sys_.values.data() + lag_sys_.values.size());
        diag.plain_eigenvalues.assign(plain_.values.data(), plain_.values.data() + plain_.values.size());
        diag.matching.assignment.assign(matching_.assignment.begin(), matching_.assignment.begin() + R);
        diag.matching.inner_products.assign(matching_.inner_products.begin(), matching_.inner_products.begin() + R);
        diag.matching.matched_values.assign(matching_.matched_values.begin(), matching_.matched_values.begin() + R);
        for (std::size_t r = 0; r < static_cast<std::size_t>(R); ++r) {
            if (matching_.inner_products[r] < 0.5) {
                diag.warnings.push_back("weak eigenfunction match for lag component " + std::to_string(r + 1));
            }
        }

        std::vector<double> omega(matching_.matched_values.begin(), matching_.matched_values.begin() + R);
        std::vector<CorrelationModel> models;
        for (int r = 0; r < R; ++r) models.push_back(model(static_cast<std::size_t>(r), method));
        for (int r = 0; r < R; ++r) {
            const auto& m = models[r];
            if (m.degenerate) diag.warnings.push_back("exponential fit at lower bound for component " + std::to_string(r + 1));
            if (m.widened) diag.warnings.push_back("local-linear bandwidth widened for component " + std::to_string(r + 1));
        }
        diag.models = models;
        const ScoreCovarianceMachinery machinery(omega, models, pairs_, grid_);

        const double tie_eps = options_.omega_tie_tolerance * std::abs(plain_.values(0));
        for (int j = 0; j < R; ++j) {
            for (int k = j + 1; k < R; ++k) {
                PairStat ps;
                ps.j = j;
                ps.k = k;
                ps.T = pair_statistic(scores_, j, k);
                ps.rho_hat = detail::run_stage("rho_hat", [&] {
                    return rho_hat(omega[j], omega[k], lag_sys_.values(j), lag_sys_.values(k), tie_eps);
                });
                if (rho_hat_suspicious(ps.rho_hat)) {
                    diag.warnings.push_back("rho_hat outside [0.01, 100] for pair (" + std::to_string(j + 1) + "," +
                                            std::to_string(k + 1) + ")");
                }
                const auto tp = trace_products(machinery, static_cast<std::size_t>(j), static_cast<std::size_t>(k));
                bool floored = false;
                const double s2 = detail::run_stage("sigma", [&] {
                    return sigma_squared(tp, ps.rho_hat, grid_.size(), pairs_.count(), omega[j], omega[k], &floored);
                });
                if (floored) {
                    diag.warnings.push_back("nonpositive variance estimate floored for pair (" + std::to_string(j + 1) + "," +
                                            std::to_string(k + 1) + ")");
                }
                ps.sigma = std::sqrt(s2);
                ps.standardized = ps.T / ps.sigma;
                rep.pair_stats.push_back(ps);
            }
        }
        const auto [S, df] = test_statistic(rep.pair_stats, R);
        rep.S = S;
        rep.df = df;
        rep.p_value = numerics::chi_squared_sf(S, df);
        return rep;
    }

private:
    void finish_setup(const FunctionalField& field) {
        positive_ = 0;
        for (Eigen::Index r = 0; r < lag_sys_.count(); ++r)
            if (lag_sys_.values(r) > 0.0) ++positive_;
        if (positive_ < 2) throw DomainError("truncation: fewer than two positive lag eigenvalues");
        matching_ = detail::run_stage("eigen matching", [&] { return match_eigenpairs(lag_sys_, plain_, positive_); });
        scores_ = project_scores(field, mean_, lag_sys_.functions.leftCols(positive_));
        correlograms_.resize(static_cast<std::size_t>(positive_));
        para_.resize(static_cast<std::size_t>(positive_));
        nonp_.resize(static_cast<std::size_t>(positive_));
    }

    const Correlogram& correlogram(std::size_t r) {
        auto& slot = correlograms_[r];
        if (!slot) {
            const double cutoff =
                options_.correlogram_cutoff > 0.0 ? options_.correlogram_cutoff : default_correlogram_cutoff(grid_);
            slot = detail::run_stage("correlogram", [&] {
                return empirical_correlation(scores_.col(static_cast<Eigen::Index>(r)), grid_, matching_.matched_values[r], cutoff,
                                             options_.omega_floor);
            });
        }
        return *slot;
    }

    const CorrelationModel& model(std::size_t r, CorrMethod method) {
        auto& slot = method == CorrMethod::parametric ? para_[r] : nonp_[r];
        if (!slot) {
            const auto& c = correlogram(r);
            if (method == CorrMethod::parametric) {
                slot = detail::run_stage("exponential fit", [&] { return fit_exponential_wls(c); });
            } else {
                const double bw =
                    options_.local_linear_bandwidth > 0.0 ? options_.local_linear_bandwidth : 2.0 * grid_.spacing();
                slot = detail::run_stage("local-linear fit", [&] { return fit_local_linear(c, bw); });
            }
        }
        return *slot;
    }

    SpatialGrid grid_;
    double lag_;
    TestOptions options_;
    PairSet pairs_;
    Eigen::VectorXd mean_;
    EigenSystem plain_;
    EigenSystem lag_sys_;
    Eigen::Index positive_ = 0;
    Matching matching_;
    Eigen::MatrixXd scores_;
    std::vector<std::optional<Correlogram>> correlograms_;
    std::vector<std::optional<CorrelationModel>> para_;
    std::vector<std::optional<CorrelationModel>> nonp_;
};

/// One weak-separability test at a single lag.
[[nodiscard]] inline TestReport run_test(const FunctionalField& field, double lag, double fve, CorrMethod method,
                                         const TestOptions& options = {}) {
    LagAnalysis analysis(field, lag, options);
    return analysis.report(fve, method);
}

struct MultiLagReport {
    CorrMethod method = CorrMethod::parametric;
    std::vector<TestReport> reports;
    std::vector<double> lags;  // lags actually tested
    double combined_p = 1.0;
    std::vector<std::string> warnings;
};

/// Bonferroni combination of min(1, L * min_l p_l); p-values are supplied directly.
[[nodiscard]] inline double bonferroni(std::span<const double> p_values) {
    if (p_values.empty()) throw DomainError("bonferroni: no p-values");
    const double pmin = *std::min_element(p_values.begin(), p_values.end());
    return std::min(1.0, static_cast<double>(p_values.size()) * pmin);
}

/// Runs the test at each lag and combines the p-values by Bonferroni. Lags with
/// no matching location pairs are dropped with a warning.
[[nodiscard]] inline MultiLagReport multi_lag_test(const FunctionalField& field, std::span<const double> lags, double fve,
                                                   CorrMethod method, const TestOptions& options = {}) {
    if (lags.empty()) throw DomainError("multi_lag_test: no lags given");
    MultiLagReport out;
    out.method = method;
    const double tol = options.pair_tolerance > 0.0 ? options.pair_tolerance : default_pair_tolerance(field.grid);
    for (double h : lags) {
        if (!(h > 0.0)) throw DomainError("multi_lag_test: lags must be positive");
        if (lag_pairs(field.grid, h, tol).empty()) {
            out.warnings.push_back("dropped lag " + std::to_string(h) + ": no location pairs");
            continue;
        }
        out.reports.push_back(run_test(field, h, fve, method, options));
        out.lags.push_back(h);
    }
    if (out.reports.empty()) throw DomainError("multi_lag_test: no lag admits location pairs");
    std::vector<double> ps;
    for (const auto& r : out.reports) ps.push_back(r.p_value);
    out.combined_p = bonferroni(ps);
    return out;
}

}  // namespace wsep
