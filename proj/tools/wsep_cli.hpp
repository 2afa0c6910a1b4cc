#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "wsep/field.hpp"
#include "wsep/report_json.hpp"
#include "wsep/simulate.hpp"
#include "wsep/wstest.hpp"

namespace wsep::cli {

/// Failure carrying a stable error code; printed as "error: <code>: <reason>".
class CliError : public std::runtime_error {
public:
    CliError(std::string code, const std::string& reason) : std::runtime_error(reason), code_(std::move(code)) {}
    [[nodiscard]] const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

inline constexpr int exit_ok = 0;
inline constexpr int exit_error = 2;

struct LagSpec {
    std::vector<double> lags;
    std::vector<int> lag_z;

    /// Physical lags in the order given, z-multiples after explicit lags.
    [[nodiscard]] std::vector<double> resolve(double spacing) const {
        std::vector<double> out = lags;
        for (int z : lag_z) {
            if (z < 1) throw CliError("E_USAGE", "--lag-z must be a positive integer");
            out.push_back(z * spacing);
        }
        for (double h : out)
            if (!(h > 0.0)) throw CliError("E_USAGE", "lags must be positive");
        return out;
    }
};

inline std::vector<CorrMethod> parse_methods(const std::string& m) {
    if (m == "para") return {CorrMethod::parametric};
    if (m == "nonp") return {CorrMethod::nonparametric};
    if (m == "both") return {CorrMethod::parametric, CorrMethod::nonparametric};
    throw CliError("E_USAGE", "--method must be para, nonp or both");
}

inline sim::SimulationConfig preset_config(const std::string& name) {
    if (name == "desk") return sim::desk_preset();
    if (name == "paper") return sim::paper_preset();
    throw CliError("E_USAGE", "--preset must be desk or paper");
}

inline void check_fve(double fve) {
    if (!(fve > 0.0 && fve <= 1.0)) throw CliError("E_USAGE", "--fve must lie in (0, 1]");
}

inline void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw CliError("E_USAGE", "--alpha must lie in (0, 1)");
}

/// Writes `text` to `path`, or to `out` when the path is empty or "-".
inline void emit(const std::string& path, const std::string& text, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << text;
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw CliError("E_IO", "cannot open output '" + path + "'");
    f << text;
    if (!f) throw CliError("E_IO", "failed writing output '" + path + "'");
}

struct TestArgs {
    std::string input;
    std::string output;
    LagSpec lag;
    double fve = 0.9;
    std::string method = "para";
    double alpha = 0.05;
    double bandwidth = 0.0;
    double cutoff = 0.0;
};

inline void cmd_test(const TestArgs& a, std::ostream& out, std::ostream& err) {
    check_fve(a.fve);
    check_alpha(a.alpha);
    const auto methods = parse_methods(a.method);
    if (a.lag.lags.empty() && a.lag.lag_z.empty()) throw CliError("E_USAGE", "test needs at least one --lag or --lag-z");

    std::ifstream in(a.input, std::ios::binary);
    if (!in) throw CliError("E_IO", "cannot open input '" + a.input + "'");
    const FunctionalField field = [&] {
        try {
            return load_field(in);
        } catch (const ParseError& e) {
            throw CliError("E_PARSE", a.input + ": " + e.what());
        }
    }();
    const auto lags = a.lag.resolve(field.grid.spacing());

    TestOptions opts;
    opts.local_linear_bandwidth = a.bandwidth;
    opts.correlogram_cutoff = a.cutoff;

    nlohmann::json results = nlohmann::json::array();
    for (const auto m : methods) {
        const MultiLagReport rep = multi_lag_test(field, lags, a.fve, m, opts);
        for (const auto& w : rep.warnings) err << "warning: " << w << '\n';
        for (const auto& r : rep.reports)
            for (const auto& w : r.diagnostics.warnings)
                err << "warning: [" << to_string(m) << ", lag " << detail::format_real(r.lag) << "] " << w << '\n';
        results.push_back(to_json(rep, a.alpha));
    }
    const nlohmann::json doc = {{"locations", field.locations()},
                                {"timepoints", field.timepoints()},
                                {"spacing", field.grid.spacing()},
                                {"alpha", a.alpha},
                                {"fve", a.fve},
                                {"results", results}};
    emit(a.output, doc.dump(2) + "\n", out);
}

struct SimulateArgs {
    std::string output;
    std::string preset = "desk";
    std::uint64_t seed = 1;
    double rho12 = 0.0;
    std::uint64_t replicate = 0;
};

inline void cmd_simulate(const SimulateArgs& a, std::ostream& out) {
    auto cfg = preset_config(a.preset);
    cfg.seed = a.seed;
    cfg.rho12 = a.rho12;
    const auto field = sim::generate_field(cfg, a.replicate);
    std::ostringstream text;
    write_field(text, field);
    emit(a.output, text.str(), out);
}

struct PowerArgs {
    std::string output;
    std::string rdist;
    std::string preset = "desk";
    std::uint64_t seed = 1;
    std::vector<double> rho12{0.0};
    LagSpec lag;
    std::vector<double> fve{0.9};
    std::string method = "para";
    double alpha = 0.05;
    int replicates = 200;
    unsigned threads = 1;
};

inline void cmd_power_study(const PowerArgs& a, std::ostream& out, std::ostream& err) {
    for (double f : a.fve) check_fve(f);
    check_alpha(a.alpha);
    if (a.replicates < 1) throw CliError("E_USAGE", "--replicates must be at least 1");
    const auto base = preset_config(a.preset);

    sim::PowerStudyRequest req;
    req.replicates = a.replicates;
    req.lags = (a.lag.lags.empty() && a.lag.lag_z.empty()) ? std::vector<double>{base.spacing} : a.lag.resolve(base.spacing);
    req.fve_levels = a.fve;
    req.alpha = a.alpha;
    req.methods = parse_methods(a.method);
    req.threads = a.threads;

    std::vector<sim::PowerRow> rows;
    std::ostringstream rd;
    rd << "rho12,lag,fve,R,count\n";
    for (double rho : a.rho12) {
        auto cfg = base;
        cfg.seed = a.seed;
        cfg.rho12 = rho;
        const auto res = sim::power_study(cfg, req);
        rows.insert(rows.end(), res.rows.begin(), res.rows.end());
        for (const auto& msg : res.failure_messages) err << "warning: rho12 " << detail::format_real(rho) << ", " << msg << '\n';
        for (const auto& [key, hist] : res.truncations)
            for (const auto& [R, count] : hist)
                rd << detail::format_real(rho) << ',' << detail::format_real(key.first) << ','
                   << detail::format_real(key.second) << ',' << R << ',' << count << '\n';
    }
    std::ostringstream text;
    sim::write_rates_csv(text, rows);
    emit(a.output, text.str(), out);
    if (!a.rdist.empty()) emit(a.rdist, rd.str(), out);
}

/// Entry point shared by the executable and the tests.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Weak separability tests for spatial functional fields"};
    app.require_subcommand(1);

    TestArgs ta;
    auto* test = app.add_subcommand("test", "Test a field for weak separability");
    test->add_option("--input", ta.input, "Field CSV (x,y,t1,...,tT)")->required();
    test->add_option("--output", ta.output, "Report path (default stdout)");
    test->add_option("--lag", ta.lag.lags, "Lag distance (repeatable)");
    test->add_option("--lag-z", ta.lag.lag_z, "Lag as a multiple of the grid spacing (repeatable)");
    test->add_option("--fve", ta.fve, "Fraction of variance explained")->capture_default_str();
    test->add_option("--method", ta.method, "para, nonp or both")->capture_default_str();
    test->add_option("--alpha", ta.alpha, "Significance level")->capture_default_str();
    test->add_option("--bandwidth", ta.bandwidth, "Local-linear bandwidth (default twice the spacing)");
    test->add_option("--cutoff", ta.cutoff, "Correlogram distance cutoff (default half the grid diameter)");

    SimulateArgs sa;
    auto* simc = app.add_subcommand("simulate", "Generate a synthetic field");
    simc->add_option("--output", sa.output, "Field CSV path (default stdout)");
    simc->add_option("--preset", sa.preset, "desk or paper")->capture_default_str();
    simc->add_option("--seed", sa.seed, "Random seed")->capture_default_str();
    simc->add_option("--rho12", sa.rho12, "Cross-correlation of the first two score fields")->capture_default_str();
    simc->add_option("--replicate", sa.replicate, "Replicate index")->capture_default_str();

    PowerArgs pa;
    auto* pow = app.add_subcommand("power-study", "Monte Carlo rejection rates");
    pow->add_option("--output", pa.output, "Rate table CSV path (default stdout)");
    pow->add_option("--rdist", pa.rdist, "Optional CSV of selected truncation counts");
    pow->add_option("--preset", pa.preset, "desk or paper")->capture_default_str();
    pow->add_option("--seed", pa.seed, "Random seed")->capture_default_str();
    pow->add_option("--rho12", pa.rho12, "Cross-correlation levels (repeatable)");
    pow->add_option("--lag", pa.lag.lags, "Lag distance (repeatable)");
    pow->add_option("--lag-z", pa.lag.lag_z, "Lag as a multiple of the grid spacing (repeatable, default 1)");
    pow->add_option("--fve", pa.fve, "FVE levels (repeatable)");
    pow->add_option("--method", pa.method, "para, nonp or both")->capture_default_str();
    pow->add_option("--alpha", pa.alpha, "Significance level")->capture_default_str();
    pow->add_option("--replicates", pa.replicates, "Replicates per rho12 level")->capture_default_str();
    pow->add_option("--threads", pa.threads, "Worker threads")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e, out, err);
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        err << "error: E_USAGE: " << msg << '\n';
        return exit_error;
    }

    try {
        if (*test) cmd_test(ta, out, err);
        else if (*simc) cmd_simulate(sa, out);
        else cmd_power_study(pa, out, err);
    } catch (const CliError& e) {
        err << "error: " << e.code() << ": " << e.what() << '\n';
        return exit_error;
    } catch (const ParseError& e) {
        err << "error: E_PARSE: " << e.what() << '\n';
        return exit_error;
    } catch (const DomainError& e) {
        err << "error: E_DOMAIN: " << e.what() << '\n';
        return exit_error;
    } catch (const std::exception& e) {
        err << "error: E_INTERNAL: " << e.what() << '\n';
        return exit_error;
    }
    return exit_ok;
}

}  // namespace wsep::cli
