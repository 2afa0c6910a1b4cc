// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>

#include "checks.hpp"
#include "oracles.hpp"
#include "wsep/simulate.hpp"

using namespace wsep;
using namespace wsep::sim;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

int failures = 0;

void criterion(int id, const char* name, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2d %-22s %s  %s (%.1f s)\n", id, name, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failures;
}

constexpr std::uint64_t kSeed = 7;
constexpr int kReplicates = 200;
constexpr double kAlpha = 0.05;

unsigned worker_count() { return std::max(1u, std::thread::hardware_concurrency()); }

PowerStudyRequest desk_request(std::vector<double> lags, unsigned threads) {
    PowerStudyRequest req;
    req.replicates = kReplicates;
    req.lags = std::move(lags);
    req.fve_levels = {0.8};
    req.alpha = kAlpha;
    req.methods = {CorrMethod::parametric, CorrMethod::nonparametric};
    req.threads = threads;
    return req;
}

SimulationConfig desk(double rho12) {
    auto c = desk_preset();
    c.seed = kSeed;
    c.rho12 = rho12;
    return c;
}

const PowerRow& cell(const PowerStudyResult& r, double lag, CorrMethod m) {
    for (const auto& row : r.rows)
        if (row.lag == lag && row.method == m) return row;
    throw std::runtime_error("missing power-study cell");
}

std::string csv_of(const PowerStudyResult& r) {
    std::ostringstream out;
    write_rates_csv(out, r.rows);
    return out.str();
}

}  // namespace

int main() {
    const double lag1 = 0.05, lag3 = 0.15;

    criterion(1, "degeneracy", [] {
        std::mt19937_64 rng(101);
        double worst = 0.0;
        for (int i = 0; i < 50; ++i) {
            double ratio;
            if (i % 2 == 0) {
                ratio = checks::degeneracy_ratio(oracle::random_field(3 + i % 9, 4 + i % 7, 8 + 2 * (i % 13), rng));
            } else {
                auto c = desk_preset();
                c.nx = 4 + i % 11;
                c.ny = 5 + i % 6;
                c.T = 10 + 3 * (i % 11);
                c.seed = 200 + i;
                ratio = checks::degeneracy_ratio(generate_field(c, 0));
            }
            worst = std::max(worst, ratio);
        }
        return Outcome{worst <= 1e-7, fmt("max |T0| / (sqrt(N) omega1) = %.2e over 50 fields", worst)};
    });

    criterion(2, "sigma-machinery", [] {
        const std::vector<double> omega{4.0, 1.0, 4.0 / 9.0, 0.25};
        const std::vector<double> phi{0.2, 0.1, 0.15, 0.08};
        const double e3 = checks::trace_oracle_error(SpatialGrid(3, 3, 0.05), 0.05, omega, phi);
        const double e4 = std::max(checks::trace_oracle_error(SpatialGrid(4, 4, 0.05), 0.05, omega, phi),
                                   checks::trace_oracle_error(SpatialGrid(4, 4, 0.05), 0.1, omega, phi));
        const double ec = std::max(checks::independent_closed_form_error(SpatialGrid(3, 3, 0.05), 0.05, 4.0, 1.0, 0.7),
                                   checks::independent_closed_form_error(SpatialGrid(4, 4, 0.05), 0.1, 1.0, 0.25, 1.3));
        return Outcome{std::max({e3, e4, ec}) <= 1e-10,
                       fmt("3x3 rel err %.1e, 4x4 rel err %.1e, closed form rel err %.1e", e3, e4, ec)};
    });

    criterion(3, "special-functions", [] {
        const double em = checks::matern_oracle_error();
        const double ec = checks::chi_squared_oracle_error();
        return Outcome{em <= 1e-8 && ec <= 1e-10, fmt("matern abs err %.1e, chi-squared abs err %.1e", em, ec)};
    });

    const unsigned threads = worker_count();
    std::printf("running desk-scale power studies: %d replicates, %u thread(s)\n", kReplicates, threads);
    std::fflush(stdout);
    PowerStudyResult null_study, alt_study, common_study;

    criterion(4, "size", [&] {
        null_study = power_study(desk(0.0), desk_request({lag1, lag3}, threads));
        const double para = cell(null_study, lag1, CorrMethod::parametric).rate();
        const double nonp = cell(null_study, lag1, CorrMethod::nonparametric).rate();
        const bool ok = para >= 0.01 && para <= 0.10 && nonp >= 0.01 && nonp <= 0.10;
        return Outcome{ok, fmt("lag-1 FVE 0.8 rejection: para %.3f, nonp %.3f (band [0.01, 0.10])", para, nonp)};
    });

    criterion(5, "power", [&] {
        alt_study = power_study(desk(0.6), desk_request({lag1, lag3}, threads));
        bool ok = true;
        std::string detail;
        for (auto m : {CorrMethod::parametric, CorrMethod::nonparametric}) {
            const double power = cell(alt_study, lag1, m).rate();
            const double size = cell(null_study, lag1, m).rate();
            ok = ok && power >= 0.5 && power >= size + 0.3;
            detail += fmt("%s%s %.3f (size %.3f)", detail.empty() ? "" : ", ", to_string(m), power, size);
        }
        return Outcome{ok, "rho12 0.6 lag-1 rejection: " + detail};
    });

    criterion(6, "lag-ordering", [&] {
        bool ok = true;
        std::string detail;
        for (auto m : {CorrMethod::parametric, CorrMethod::nonparametric}) {
            const double r1 = cell(alt_study, lag1, m).rate(), r3 = cell(alt_study, lag3, m).rate();
            ok = ok && r1 >= r3;
            detail += fmt("%s%s lag-1 %.3f vs lag-3 %.3f", detail.empty() ? "" : ", ", to_string(m), r1, r3);
        }
        return Outcome{ok, detail};
    });

    criterion(7, "truncation", [&] {
        const auto& hist = null_study.truncations.at({lag1, 0.8});
        int total = 0, two = 0;
        for (const auto& [R, n] : hist) {
            total += n;
            if (R == 2) two = n;
        }
        const double frac = total ? static_cast<double>(two) / kReplicates : 0.0;
        return Outcome{frac > 0.6, fmt("R = 2 in %d of %d replicates (%.3f)", two, kReplicates, frac)};
    });

    criterion(8, "common-correlation", [&] {
        auto cfg = with_common_correlation(desk(0.0), 0.5, 0.1);
        common_study = power_study(cfg, desk_request({lag1}, threads));
        const double para = cell(common_study, lag1, CorrMethod::parametric).rate();
        const double nonp = cell(common_study, lag1, CorrMethod::nonparametric).rate();
        const bool ok = para >= 0.01 && para <= 0.10 && nonp >= 0.01 && nonp <= 0.10;
        return Outcome{ok, fmt("exponential range 0.1 for all components: para %.3f, nonp %.3f", para, nonp)};
    });

    criterion(9, "invariance", [] {
        auto c = desk_preset();
        c.nx = c.ny = 12;
        c.T = 30;
        c.seed = 909;
        const FieldGenerator gen(c);
        checks::InvarianceResult worst;
        for (int i = 0; i < 20; ++i) {
            const auto f = gen.field(i);
            for (auto m : {CorrMethod::parametric, CorrMethod::nonparametric}) {
                const auto r = checks::invariance(f, 0.05, 0.9, m);
                worst.mean_shift = std::max(worst.mean_shift, r.mean_shift);
                worst.scale = std::max(worst.scale, r.scale);
                worst.sign_flip = std::max(worst.sign_flip, r.sign_flip);
            }
        }
        const bool ok = worst.mean_shift <= 1e-10 && worst.scale <= 1e-10 && worst.sign_flip <= 1e-10;
        return Outcome{ok, fmt("20 fields, both methods: mean shift %.1e, scale %.1e, sign flip %.1e", worst.mean_shift, worst.scale,
                               worst.sign_flip)};
    });

    criterion(10, "determinism", [&] {
        // Rerun the power study of criterion 5 serially and with four workers.
        const auto serial = power_study(desk(0.6), desk_request({lag1, lag3}, 1));
        const auto parallel = power_study(desk(0.6), desk_request({lag1, lag3}, 4));
        const std::string a = csv_of(alt_study), b = csv_of(serial), p = csv_of(parallel);
        return Outcome{a == b && b == p, fmt("%zu-byte CSV; serial and 4-thread reruns %s the first run", b.size(),
                                            a == b && b == p ? "match" : "differ from")};
    });

    std::printf("%s: %d criterion failure(s)\n", failures ? "FAIL" : "PASS", failures);
    return failures ? 1 : 0;
}
