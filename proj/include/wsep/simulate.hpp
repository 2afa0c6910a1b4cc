#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "wsep/field.hpp"
#include "wsep/grid.hpp"
#include "wsep/numerics.hpp"
#include "wsep/wstest.hpp"

namespace wsep::sim {

/// Matern component: smoothness nu, range phi (0 = spatial white noise), variance omega.
struct MaternParams {
    double nu = 0.5;
    double phi = 0.0;
    double omega = 1.0;
};

/// Matern correlation 2^{1-nu}/Gamma(nu) (d/phi)^nu K_nu(d/phi), with M(0) = 1.
[[nodiscard]] inline double matern(double d, double nu, double phi) {
    if (!(d >= 0.0) || !(nu > 0.0) || !(phi > 0.0)) throw DomainError("matern: requires d >= 0, nu > 0, phi > 0");
    if (d == 0.0) return 1.0;
    const double x = d / phi;
    const double k = numerics::bessel_k(nu, x);
    if (k == 0.0) return 0.0;
    const double log_m = (1.0 - nu) * std::numbers::ln2 - numerics::ln_gamma(nu) + nu * std::log(x) + std::log(k);
    return std::min(1.0, std::exp(log_m));
}

/// omega * M(|s_i - s_i'|; nu, phi), or omega * I when phi = 0.
[[nodiscard]] inline Eigen::MatrixXd build_covariance(const SpatialGrid& grid, const MaternParams& p) {
    if (!(p.nu > 0.0) || !(p.phi >= 0.0) || !(p.omega > 0.0)) throw DomainError("build_covariance: invalid Matern parameters");
    const auto n = static_cast<Eigen::Index>(grid.size());
    if (p.phi == 0.0) return p.omega * Eigen::MatrixXd::Identity(n, n);
    std::vector<double> by_q(static_cast<std::size_t>(grid.max_lattice_dist2()) + 1);
    for (int q = 0; q <= grid.max_lattice_dist2(); ++q) by_q[q] = p.omega * matern(grid.distance_of(q), p.nu, p.phi);
    Eigen::MatrixXd c(n, n);
    for (Eigen::Index a = 0; a < n; ++a)
        for (Eigen::Index b = 0; b < n; ++b) c(a, b) = by_q[grid.lattice_dist2(a, b)];
    return c;
}

/// Lower Cholesky factor with diagonal jitter escalation: none, then
/// 1e-10 * mean diagonal growing tenfold up to 1e-6 * mean diagonal.
struct CholeskyFactor {
    Eigen::MatrixXd lower;
    double jitter = 0.0;
};

[[nodiscard]] inline CholeskyFactor cholesky_with_jitter(const Eigen::MatrixXd& cov) {
    if (cov.rows() != cov.cols()) throw DomainError("covariance must be square");
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, cov.cwiseAbs().maxCoeff())) {
        throw DomainError("covariance must be symmetric");
    }
    const double mean_diag = cov.diagonal().mean();
    double jitter = 0.0;
    const double cap = 1e-6 * mean_diag;
    while (true) {
        Eigen::LLT<Eigen::MatrixXd> llt(cov + jitter * Eigen::MatrixXd::Identity(cov.rows(), cov.cols()));
        if (llt.info() == Eigen::Success) return {llt.matrixL(), jitter};
        jitter = jitter == 0.0 ? 1e-10 * mean_diag : jitter * 10.0;
        if (jitter > cap * (1.0 + 1e-12)) throw DomainError("covariance factorization failed at maximum jitter");
    }
}

/// Draws mean-zero Gaussian vectors with a fixed covariance.
class GaussianSampler {
public:
    explicit GaussianSampler(const Eigen::MatrixXd& cov) : factor_(cholesky_with_jitter(cov)) {}

    [[nodiscard]] Eigen::Index dimension() const noexcept { return factor_.lower.rows(); }
    [[nodiscard]] double jitter() const noexcept { return factor_.jitter; }

    [[nodiscard]] Eigen::VectorXd sample(SeededRng& rng) const {
        Eigen::VectorXd z(dimension());
        for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.standard_normal();
        return factor_.lower.triangularView<Eigen::Lower>() * z;
    }

private:
    CholeskyFactor factor_;
};

[[nodiscard]] inline Eigen::VectorXd sample_field(const Eigen::MatrixXd& cov, SeededRng& rng) {
    return GaussianSampler(cov).sample(rng);
}

/// Joint covariance of two Matern fields with a Matern cross-covariance
/// rho12 sqrt(omega1 omega2) M(d; nu12, phi12), laid out [[C1, C12], [C12^T, C2]].
///
/// With `validate`, a Cholesky factorization (with jitter escalation) must
/// succeed or the parameters are rejected.
[[nodiscard]] inline Eigen::MatrixXd build_bivariate_covariance(const SpatialGrid& grid, const MaternParams& p1,
                                                                const MaternParams& p2, double rho12, double nu12,
                                                                double phi12, bool validate = true) {
    if (!(std::abs(rho12) < 1.0)) throw DomainError("bivariate Matern: |rho12| must be < 1");
    const auto n = static_cast<Eigen::Index>(grid.size());
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    c.topLeftCorner(n, n) = build_covariance(grid, p1);
    c.bottomRightCorner(n, n) = build_covariance(grid, p2);
    if (rho12 != 0.0) {
        const double scale = rho12 * std::sqrt(p1.omega * p2.omega);
        MaternParams cross{nu12, phi12, 1.0};
        Eigen::MatrixXd c12 = scale * build_covariance(grid, cross);
        c.topRightCorner(n, n) = c12;
        c.bottomLeftCorner(n, n) = c12.transpose();
    }
    if (validate) {
        try {
            (void)cholesky_with_jitter(c);
        } catch (const DomainError&) {
            throw DomainError("invalid bivariate Matern parameters");
        }
    }
    return c;
}

/// Synthetic-field design: lattice, time grid, Matern score fields with
/// variances omega_r = 4 r^-2, an optional Matern cross-covariance between the
/// first two score fields, mean 3 + 2t^2 and the Fourier basis.
struct SimulationConfig {
    int nx = 20;
    int ny = 20;
    double spacing = 0.05;
    int T = 50;
    std::vector<MaternParams> components;
    double rho12 = 0.0;
    double nu12 = 0.8;
    double phi12 = 0.15;
    std::uint64_t seed = 1;

    void validate() const {
        if (nx < 1 || ny < 1 || !(spacing > 0.0)) throw DomainError("simulation: invalid grid");
        if (T < 2) throw DomainError("simulation: need at least two time points");
        if (components.empty()) throw DomainError("simulation: no components");
        if (!(std::abs(rho12) < 1.0)) throw DomainError("simulation: |rho12| must be < 1");
        if (rho12 != 0.0 && components.size() < 2) throw DomainError("simulation: rho12 needs at least two components");
        for (const auto& c : components) {
            if (!(c.nu > 0.0) || !(c.phi >= 0.0) || !(c.omega > 0.0)) throw DomainError("simulation: invalid component");
        }
    }
};

[[nodiscard]] inline double component_variance(int r) { return 4.0 / (static_cast<double>(r) * r); }

/// Component r (1-based) of the reference design: ranges (0.2, 0.1, 0.15, 0.08)
/// then white noise, smoothness 1 for the first component and 0.5 otherwise.
[[nodiscard]] inline std::vector<MaternParams> reference_components(int p) {
    static constexpr double ranges[] = {0.2, 0.1, 0.15, 0.08};
    std::vector<MaternParams> out;
    for (int r = 1; r <= p; ++r) {
        out.push_back({r == 1 ? 1.0 : 0.5, r <= 4 ? ranges[r - 1] : 0.0, component_variance(r)});
    }
    return out;
}

/// 20x20 lattice, spacing 0.05, T = 50, six components.
[[nodiscard]] inline SimulationConfig desk_preset() {
    SimulationConfig c;
    c.nx = c.ny = 20;
    c.spacing = 0.05;
    c.T = 50;
    c.components = reference_components(6);
    return c;
}

/// 40x40 lattice, spacing 0.05, T = 100, ten components.
[[nodiscard]] inline SimulationConfig paper_preset() {
    SimulationConfig c;
    c.nx = c.ny = 40;
    c.spacing = 0.05;
    c.T = 100;
    c.components = reference_components(10);
    return c;
}

/// Replaces every component's correlation by one common Matern correlation,
/// which makes the field strongly separable.
[[nodiscard]] inline SimulationConfig with_common_correlation(SimulationConfig c, double nu, double phi) {
    for (auto& comp : c.components) {
        comp.nu = nu;
        comp.phi = phi;
    }
    c.rho12 = 0.0;
    return c;
}

[[nodiscard]] inline double mean_function(double t) { return 3.0 + 2.0 * t * t; }

/// Fourier basis on [0, 1], r 1-based: sqrt2 cos(r pi t) for odd r,
/// sqrt2 sin((r - 1) pi t) for even r.
[[nodiscard]] inline double fourier_basis(int r, double t) {
    if (r % 2 == 1) return std::numbers::sqrt2 * std::cos(r * std::numbers::pi * t);
    return std::numbers::sqrt2 * std::sin((r - 1) * std::numbers::pi * t);
}

/// T equally spaced cell midpoints on [0, 1].
[[nodiscard]] inline std::vector<double> time_grid(int T) {
    std::vector<double> t(static_cast<std::size_t>(T));
    for (int j = 0; j < T; ++j) t[j] = (j + 0.5) / T;
    return t;
}

[[nodiscard]] inline Eigen::MatrixXd basis_matrix(const std::vector<double>& times, int p) {
    Eigen::MatrixXd b(static_cast<Eigen::Index>(times.size()), p);
    for (Eigen::Index j = 0; j < b.rows(); ++j)
        for (int r = 0; r < p; ++r) b(j, r) = fourier_basis(r + 1, times[j]);
    return b;
}

/// Holds the factorized covariances of a design so replicates only cost a
/// triangular matrix-vector product per correlated component.
class FieldGenerator {
public:
    explicit FieldGenerator(SimulationConfig config) : config_(std::move(config)), grid_(config_.nx, config_.ny, config_.spacing) {
        config_.validate();
        times_ = time_grid(config_.T);
        basis_ = basis_matrix(times_, static_cast<int>(config_.components.size()));
        const auto& comps = config_.components;
        samplers_.resize(comps.size());
        if (config_.rho12 != 0.0) {
            try {
                joint_ = std::make_shared<GaussianSampler>(build_bivariate_covariance(grid_, comps[0], comps[1], config_.rho12,
                                                                                      config_.nu12, config_.phi12, false));
            } catch (const DomainError&) {
                throw DomainError("invalid bivariate Matern parameters");
            }
        }
        // Identical components share one factor.
        for (std::size_t r = 0; r < comps.size(); ++r) {
            if (joint_ && r < 2) continue;
            if (comps[r].phi == 0.0) continue;
            for (std::size_t q = 0; q < r; ++q) {
                if (samplers_[q] && comps[q].nu == comps[r].nu && comps[q].phi == comps[r].phi &&
                    comps[q].omega == comps[r].omega) {
                    samplers_[r] = samplers_[q];
                    break;
                }
            }
            if (!samplers_[r]) samplers_[r] = std::make_shared<GaussianSampler>(build_covariance(grid_, comps[r]));
        }
    }

    [[nodiscard]] const SimulationConfig& config() const noexcept { return config_; }
    [[nodiscard]] const SpatialGrid& grid() const noexcept { return grid_; }
    [[nodiscard]] const std::vector<double>& times() const noexcept { return times_; }
    [[nodiscard]] const Eigen::MatrixXd& basis() const noexcept { return basis_; }

    /// Score fields xi_r(s_i) of one replicate, N x p.
    [[nodiscard]] Eigen::MatrixXd scores(std::uint64_t replicate) const {
        SeededRng rng(config_.seed, replicate);
        const auto n = static_cast<Eigen::Index>(grid_.size());
        const auto p = static_cast<Eigen::Index>(config_.components.size());
        Eigen::MatrixXd xi(n, p);
        Eigen::Index r = 0;
        if (joint_) {
            const Eigen::VectorXd both = joint_->sample(rng);
            xi.col(0) = both.head(n);
            xi.col(1) = both.tail(n);
            r = 2;
        }
        for (; r < p; ++r) {
            if (samplers_[r]) {
                xi.col(r) = samplers_[r]->sample(rng);
            } else {
                const double sd = std::sqrt(config_.components[r].omega);
                for (Eigen::Index i = 0; i < n; ++i) xi(i, r) = sd * rng.standard_normal();
            }
        }
        return xi;
    }

    [[nodiscard]] FunctionalField field(std::uint64_t replicate) const {
        const Eigen::MatrixXd xi = scores(replicate);
        Eigen::RowVectorXd mu(config_.T);
        for (int j = 0; j < config_.T; ++j) mu(j) = mean_function(times_[j]);
        Eigen::MatrixXd values = xi * basis_.transpose();
        values.rowwise() += mu;
        return FunctionalField(grid_, times_, std::move(values));
    }

private:
    SimulationConfig config_;
    SpatialGrid grid_;
    std::vector<double> times_;
    Eigen::MatrixXd basis_;
    std::shared_ptr<GaussianSampler> joint_;
    std::vector<std::shared_ptr<GaussianSampler>> samplers_;
};

/// X(s_i, t_j) = mu(t_j) + sum_r xi_r(s_i) psi_r(t_j) for one replicate; the
/// replicate index is the random stream id.
[[nodiscard]] inline FunctionalField generate_field(const SimulationConfig& config, std::uint64_t replicate) {
    return FieldGenerator(config).field(replicate);
}

// ---------------------------------------------------------------------------
// Monte Carlo size / power

struct PowerRow {
    double rho12 = 0.0;
    double lag = 0.0;
    double fve = 0.0;
    CorrMethod method = CorrMethod::parametric;
    int rejections = 0;
    int replicates = 0;  // requested
    int failures = 0;
    /// rejections / (replicates - failures); 0 when every replicate failed.
    [[nodiscard]] double rate() const {
        const int used = replicates - failures;
        return used > 0 ? static_cast<double>(rejections) / used : 0.0;
    }
};

struct PowerStudyResult {
    std::vector<PowerRow> rows;
    /// Selected truncation counts per (lag, fve): R -> number of replicates.
    std::map<std::pair<double, double>, std::map<int, int>> truncations;
    std::vector<std::string> failure_messages;
};

struct PowerStudyRequest {
    int replicates = 200;
    std::vector<double> lags;  // physical distances
    std::vector<double> fve_levels{0.8};
    double alpha = 0.05;
    std::vector<CorrMethod> methods{CorrMethod::parametric};
    unsigned threads = 1;
    TestOptions options{};
};

namespace detail {

enum class Outcome : std::uint8_t { accept, reject, fail };

struct ReplicateResult {
    std::vector<Outcome> outcomes;  // lag x fve x method
    std::vector<int> truncation;    // lag x fve, 0 on failure
    std::vector<std::string> errors;
};

inline ReplicateResult run_replicate(const FieldGenerator& gen, std::uint64_t replicate, const PowerStudyRequest& req) {
    ReplicateResult out;
    const std::size_t nl = req.lags.size(), nf = req.fve_levels.size(), nm = req.methods.size();
    out.outcomes.assign(nl * nf * nm, Outcome::fail);
    out.truncation.assign(nl * nf, 0);
    const FunctionalField field = gen.field(replicate);
    for (std::size_t l = 0; l < nl; ++l) {
        std::optional<LagAnalysis> analysis;
        try {
            analysis.emplace(field, req.lags[l], req.options);
        } catch (const std::exception& e) {
            out.errors.push_back("replicate " + std::to_string(replicate) + ": " + e.what());
            continue;
        }
        for (std::size_t f = 0; f < nf; ++f) {
            for (std::size_t m = 0; m < nm; ++m) {
                try {
                    const TestReport rep = analysis->report(req.fve_levels[f], req.methods[m]);
                    out.outcomes[(l * nf + f) * nm + m] = rep.p_value < req.alpha ? Outcome::reject : Outcome::accept;
                    out.truncation[l * nf + f] = rep.R;
                } catch (const std::exception& e) {
                    out.errors.push_back("replicate " + std::to_string(replicate) + ": " + e.what());
                }
            }
        }
    }
    return out;
}

}  // namespace detail

/// Rejection rates of the test over independent replicates for every
/// (lag, fve, method) cell. Replicate r always uses random stream r, and
/// results are merged in replicate order, so the output does not depend on
/// the thread count.
[[nodiscard]] inline PowerStudyResult power_study(const FieldGenerator& gen, const PowerStudyRequest& req) {
    if (req.replicates < 1) throw DomainError("power_study: replicates must be >= 1");
    if (req.lags.empty() || req.fve_levels.empty() || req.methods.empty()) throw DomainError("power_study: empty request");
    if (!(req.alpha > 0.0 && req.alpha < 1.0)) throw DomainError("power_study: alpha must lie in (0, 1)");

    std::vector<detail::ReplicateResult> results(static_cast<std::size_t>(req.replicates));
    const unsigned threads = std::max(1u, std::min<unsigned>(req.threads, static_cast<unsigned>(req.replicates)));
    if (threads == 1) {
        for (int r = 0; r < req.replicates; ++r) results[r] = detail::run_replicate(gen, static_cast<std::uint64_t>(r), req);
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < threads; ++w) {
            pool.emplace_back([&, w] {
                for (int r = static_cast<int>(w); r < req.replicates; r += static_cast<int>(threads)) {
                    results[r] = detail::run_replicate(gen, static_cast<std::uint64_t>(r), req);
                }
            });
        }
        for (auto& t : pool) t.join();
    }

    PowerStudyResult out;
    const std::size_t nf = req.fve_levels.size(), nm = req.methods.size();
    for (std::size_t l = 0; l < req.lags.size(); ++l) {
        for (std::size_t f = 0; f < nf; ++f) {
            auto& hist = out.truncations[{req.lags[l], req.fve_levels[f]}];
            for (const auto& res : results)
                if (res.truncation[l * nf + f] > 0) ++hist[res.truncation[l * nf + f]];
            for (std::size_t m = 0; m < nm; ++m) {
                PowerRow row;
                row.rho12 = gen.config().rho12;
                row.lag = req.lags[l];
                row.fve = req.fve_levels[f];
                row.method = req.methods[m];
                row.replicates = req.replicates;
                for (const auto& res : results) {
                    const auto o = res.outcomes[(l * nf + f) * nm + m];
                    if (o == detail::Outcome::reject) ++row.rejections;
                    if (o == detail::Outcome::fail) ++row.failures;
                }
                out.rows.push_back(row);
            }
        }
    }
    for (const auto& res : results) out.failure_messages.insert(out.failure_messages.end(), res.errors.begin(), res.errors.end());
    return out;
}

[[nodiscard]] inline PowerStudyResult power_study(const SimulationConfig& config, const PowerStudyRequest& req) {
    return power_study(FieldGenerator(config), req);
}

/// Rate table with columns rho12, lag, fve, method, rejections, replicates, rate, failures.
inline void write_rates_csv(std::ostream& out, const std::vector<PowerRow>& rows) {
    out << "rho12,lag,fve,method,rejections,replicates,rate,failures\n";
    for (const auto& r : rows) {
        out << wsep::detail::format_real(r.rho12) << ',' << wsep::detail::format_real(r.lag) << ','
            << wsep::detail::format_real(r.fve) << ',' << to_string(r.method) << ',' << r.rejections << ',' << r.replicates
            << ',' << wsep::detail::format_real(r.rate()) << ',' << r.failures << '\n';
    }
}

}  // namespace wsep::sim
