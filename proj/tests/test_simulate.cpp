#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "checks.hpp"
#include "oracles.hpp"
#include "wsep/simulate.hpp"

using namespace wsep;
using namespace wsep::sim;

namespace {

SimulationConfig tiny_config(std::uint64_t seed, double rho12 = 0.0) {
    SimulationConfig c = desk_preset();
    c.nx = c.ny = 8;
    c.T = 20;
    c.seed = seed;
    c.rho12 = rho12;
    return c;
}

}  // namespace

TEST(Matern, Examples) {
    EXPECT_EQ(matern(0.0, 1.3, 0.2), 1.0);
    for (double d : {0.01, 0.1, 0.5, 2.0}) EXPECT_NEAR(matern(d, 0.5, 0.15), std::exp(-d / 0.15), 1e-14);
    // Frozen from the Bessel-integral oracle.
    EXPECT_NEAR(matern(0.1, 1.0, 0.2), 0.828220560001663, 1e-12);
    EXPECT_NEAR(matern(0.1, 1.0, 0.2), oracle::matern(0.1, 1.0, 0.2), 1e-12);
}

TEST(Matern, QuadratureOracleSweep) { EXPECT_LE(checks::matern_oracle_error(), 1e-8); }

TEST(Matern, MonotoneInDistanceAndRange) {
    for (double nu : {0.3, 0.5, 0.8, 1.0, 2.5}) {
        double prev = 1.0;
        for (double d = 0.01; d < 1.5; d += 0.01) {
            const double m = matern(d, nu, 0.2);
            EXPECT_LT(m, prev);
            EXPECT_GT(m, 0.0);
            prev = m;
        }
        for (double phi = 0.02; phi < 1.0; phi += 0.02) EXPECT_LT(matern(0.3, nu, phi), matern(0.3, nu, phi + 0.02));
    }
}

TEST(Matern, RejectsBadParameters) {
    EXPECT_THROW((void)matern(-0.1, 1.0, 1.0), DomainError);
    EXPECT_THROW((void)matern(0.1, 0.0, 1.0), DomainError);
    EXPECT_THROW((void)matern(0.1, 1.0, 0.0), DomainError);
}

TEST(BuildCovariance, Examples) {
    const SpatialGrid g(3, 3, 0.05);
    EXPECT_EQ(build_covariance(g, {0.5, 0.0, 2.5}), 2.5 * Eigen::MatrixXd::Identity(9, 9));

    const auto c = build_covariance(SpatialGrid(1, 2, 0.1), {0.5, 0.2, 3.0});
    EXPECT_EQ(c(0, 0), 3.0);
    EXPECT_EQ(c(1, 1), 3.0);
    EXPECT_NEAR(c(0, 1), 3.0 * std::exp(-0.5), 1e-14);
    EXPECT_EQ(c(0, 1), c(1, 0));

    const Eigen::MatrixXd m = build_covariance(SpatialGrid(4, 3, 0.05), {1.0, 0.2, 4.0}) / 4.0;
    EXPECT_EQ(m, m.transpose());
    EXPECT_TRUE((m.diagonal().array() == 1.0).all());
}

TEST(BivariateCovariance, BlockStructure) {
    const SpatialGrid g(5, 5, 0.05);
    const auto comps = reference_components(2);
    const auto c0 = build_bivariate_covariance(g, comps[0], comps[1], 0.0, 0.8, 0.15);
    EXPECT_EQ(c0.topRightCorner(25, 25).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(c0.topLeftCorner(25, 25), build_covariance(g, comps[0]));
    EXPECT_EQ(c0.bottomRightCorner(25, 25), build_covariance(g, comps[1]));

    const auto c4 = build_bivariate_covariance(g, comps[0], comps[1], 0.4, 0.8, 0.15);
    EXPECT_TRUE((c4.diagonal().head(25).array() == 4.0).all());
    EXPECT_TRUE((c4.diagonal().tail(25).array() == 1.0).all());
    EXPECT_NEAR(c4(0, 25), 0.4 * 2.0, 1e-15);
    EXPECT_EQ(c4, c4.transpose());
    EXPECT_NO_THROW((void)cholesky_with_jitter(c4));
    EXPECT_THROW((void)build_bivariate_covariance(g, comps[0], comps[1], 1.0, 0.8, 0.15), DomainError);
}

TEST(BivariateCovariance, InvalidParametersAreRejected) {
    // A cross range far longer than either marginal range is not a valid model.
    const SpatialGrid g(5, 5, 0.05);
    try {
        (void)build_bivariate_covariance(g, {0.5, 0.02, 1.0}, {0.5, 0.02, 1.0}, 0.95, 0.5, 1.0);
        FAIL();
    } catch (const DomainError& e) {
        EXPECT_STREQ(e.what(), "invalid bivariate Matern parameters");
    }
}

TEST(SampleField, IdentityGivesStandardNormals) {
    SeededRng a(5, 0), b(5, 0);
    const auto x = sample_field(Eigen::MatrixXd::Identity(6, 6), a);
    for (int i = 0; i < 6; ++i) EXPECT_EQ(x(i), b.standard_normal());
}

TEST(SampleField, ReplayIsIdentical) {
    const auto cov = build_covariance(SpatialGrid(3, 3, 0.05), {1.0, 0.2, 4.0});
    SeededRng a(11, 3), b(11, 3);
    EXPECT_EQ(sample_field(cov, a), sample_field(cov, b));
}

TEST(SampleField, MonteCarloCovariance) {
    const auto cov = build_covariance(SpatialGrid(3, 3, 0.05), {0.5, 0.1, 1.0});
    const GaussianSampler sampler(cov);
    constexpr int n = 10000;
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(9, 9);
    SeededRng rng(2024, 0);
    for (int r = 0; r < n; ++r) {
        const Eigen::VectorXd x = sampler.sample(rng);
        acc += x * x.transpose();
    }
    acc /= n;
    for (int a = 0; a < 9; ++a) {
        EXPECT_LE(std::abs(acc(a, a) / cov(a, a) - 1.0), 0.05);
        for (int b = 0; b < 9; ++b) {
            // Gaussian fourth moments give var(x_a x_b) = c_ab^2 + c_aa c_bb.
            const double se = std::sqrt((cov(a, b) * cov(a, b) + cov(a, a) * cov(b, b)) / n);
            EXPECT_LE(std::abs(acc(a, b) - cov(a, b)), 3.5 * se) << a << "," << b;
        }
    }
}

TEST(Cholesky, JitterEscalation) {
    const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(4, 4);  // rank one
    const auto f = cholesky_with_jitter(ones);
    EXPECT_GT(f.jitter, 0.0);
    EXPECT_LE(f.jitter, 1e-6);
    Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(2, 2);
    bad(0, 1) = bad(1, 0) = 2.0;
    EXPECT_THROW((void)cholesky_with_jitter(bad), DomainError);
}

TEST(Design, MeanVariancesAndBasis) {
    EXPECT_EQ(mean_function(0.0), 3.0);
    EXPECT_EQ(mean_function(1.0), 5.0);
    EXPECT_EQ(component_variance(1), 4.0);
    EXPECT_EQ(component_variance(2), 1.0);
    EXPECT_DOUBLE_EQ(component_variance(3), 4.0 / 9.0);

    const auto times = time_grid(100);
    const Eigen::MatrixXd b = basis_matrix(times, 10);
    const Eigen::MatrixXd gram = b.transpose() * b / 100.0;
    EXPECT_LE((gram - Eigen::MatrixXd::Identity(10, 10)).cwiseAbs().maxCoeff(), 1e-3);
    EXPECT_NEAR(fourier_basis(1, 0.25), std::sqrt(2.0) * std::cos(std::numbers::pi / 4), 1e-15);
    EXPECT_NEAR(fourier_basis(2, 0.25), std::sqrt(2.0) * std::sin(std::numbers::pi / 4), 1e-15);
}

TEST(Design, Presets) {
    const auto desk = desk_preset();
    EXPECT_EQ(desk.nx * desk.ny, 400);
    EXPECT_EQ(desk.T, 50);
    EXPECT_EQ(desk.components.size(), 6u);
    const auto full = paper_preset();
    EXPECT_EQ(full.nx * full.ny, 1600);
    EXPECT_EQ(full.T, 100);
    EXPECT_EQ(full.components.size(), 10u);
    EXPECT_EQ(full.components[0].nu, 1.0);
    EXPECT_EQ(full.components[0].phi, 0.2);
    EXPECT_EQ(full.components[3].phi, 0.08);
    for (std::size_t r = 1; r < 10; ++r) EXPECT_EQ(full.components[r].nu, 0.5);
    for (std::size_t r = 4; r < 10; ++r) EXPECT_EQ(full.components[r].phi, 0.0);

    const auto common = with_common_correlation(desk, 0.5, 0.1);
    for (const auto& c : common.components) {
        EXPECT_EQ(c.nu, 0.5);
        EXPECT_EQ(c.phi, 0.1);
    }
}

TEST(GenerateField, ShapeAndDeterminism) {
    const auto cfg = tiny_config(3);
    const auto a = generate_field(cfg, 4);
    const auto b = generate_field(cfg, 4);
    EXPECT_EQ(a.locations(), 64u);
    EXPECT_EQ(a.timepoints(), 20u);
    EXPECT_EQ(a.values, b.values);
    EXPECT_NE(a.values, generate_field(cfg, 5).values);
}

TEST(GenerateField, TrueBasisRecoversScores) {
    for (double rho12 : {0.0, 0.4}) {
        const FieldGenerator gen(tiny_config(6, rho12));
        const Eigen::MatrixXd xi = gen.scores(2);
        const auto f = gen.field(2);
        const Eigen::MatrixXd est = project_scores(f, sample_mean(f), gen.basis());
        const Eigen::MatrixXd centered = xi.rowwise() - xi.colwise().mean();
        EXPECT_LE((est - centered).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(GenerateField, NullMatchesIndependentDraws) {
    // rho12 = 0 must equal drawing every component on its own, in order, from the replicate stream.
    const auto cfg = tiny_config(9);
    const FieldGenerator gen(cfg);
    const SpatialGrid g(cfg.nx, cfg.ny, cfg.spacing);
    SeededRng rng(cfg.seed, 7);
    Eigen::MatrixXd xi(g.size(), static_cast<Eigen::Index>(cfg.components.size()));
    for (std::size_t r = 0; r < cfg.components.size(); ++r) {
        const auto& c = cfg.components[r];
        if (c.phi > 0.0) {
            xi.col(r) = sample_field(build_covariance(g, c), rng);
        } else {
            for (Eigen::Index i = 0; i < xi.rows(); ++i) xi(i, r) = std::sqrt(c.omega) * rng.standard_normal();
        }
    }
    EXPECT_EQ(gen.scores(7), xi);
}

TEST(GenerateField, CrossCorrelationAppears) {
    const FieldGenerator gen(tiny_config(10, 0.6));
    double s12 = 0.0, s11 = 0.0, s22 = 0.0;
    for (int r = 0; r < 200; ++r) {
        const Eigen::MatrixXd xi = gen.scores(r);
        s12 += xi.col(0).dot(xi.col(1));
        s11 += xi.col(0).squaredNorm();
        s22 += xi.col(1).squaredNorm();
    }
    EXPECT_NEAR(s12 / std::sqrt(s11 * s22), 0.6, 0.05);
}

TEST(GenerateField, InvalidConfig) {
    auto cfg = tiny_config(1, 0.5);
    cfg.components.resize(1);
    EXPECT_THROW((void)generate_field(cfg, 0), DomainError);
    cfg = tiny_config(1);
    cfg.T = 1;
    EXPECT_THROW((void)generate_field(cfg, 0), DomainError);
}

TEST(PowerStudy, DeterministicAcrossThreadCounts) {
    const FieldGenerator gen(tiny_config(13, 0.3));
    PowerStudyRequest req;
    req.replicates = 12;
    req.lags = {0.05, 0.1};
    req.fve_levels = {0.8, 0.9};
    req.methods = {CorrMethod::parametric, CorrMethod::nonparametric};
    std::string csv[2];
    for (unsigned threads : {1u, 3u}) {
        req.threads = threads;
        const auto res = power_study(gen, req);
        ASSERT_EQ(res.rows.size(), 8u);
        std::ostringstream out;
        write_rates_csv(out, res.rows);
        csv[threads == 1 ? 0 : 1] = out.str();
    }
    EXPECT_EQ(csv[0], csv[1]);
}

TEST(PowerStudy, RowsAndTruncationHistogram) {
    const FieldGenerator gen(tiny_config(14));
    PowerStudyRequest req;
    req.replicates = 6;
    req.lags = {0.05};
    const auto res = power_study(gen, req);
    ASSERT_EQ(res.rows.size(), 1u);
    const auto& row = res.rows[0];
    EXPECT_EQ(row.replicates, 6);
    EXPECT_LE(row.rejections + row.failures, 6);
    int total = 0;
    for (const auto& [R, n] : res.truncations.at({0.05, 0.8})) {
        EXPECT_GE(R, 2);
        total += n;
    }
    EXPECT_EQ(total, 6 - row.failures);

    req.replicates = 0;
    EXPECT_THROW((void)power_study(gen, req), DomainError);
}

TEST(PowerStudy, FailuresAreCountedNotFatal) {
    // A lag with no pairs fails every replicate.
    const FieldGenerator gen(tiny_config(15));
    PowerStudyRequest req;
    req.replicates = 3;
    req.lags = {0.033};
    const auto res = power_study(gen, req);
    EXPECT_EQ(res.rows[0].failures, 3);
    EXPECT_EQ(res.rows[0].rate(), 0.0);
    EXPECT_EQ(res.failure_messages.size(), 3u);
}

TEST(RatesCsv, Format) {
    PowerRow a;
    a.rho12 = 0.6;
    a.lag = 0.05;
    a.fve = 0.8;
    a.method = CorrMethod::nonparametric;
    a.rejections = 3;
    a.replicates = 10;
    a.failures = 2;
    std::ostringstream out;
    write_rates_csv(out, {a});
    EXPECT_EQ(out.str(), "rho12,lag,fve,method,rejections,replicates,rate,failures\n0.6,0.05,0.8,nonp,3,10,0.375,2\n");
}
