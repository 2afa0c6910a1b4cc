#pragma once

#include <nlohmann/json.hpp>

#include "wsep/wstest.hpp"

namespace wsep {

// Component indices are written 1-based.

inline nlohmann::json to_json(const CorrelationModel& m) {
    nlohmann::json j;
    if (m.kind == CorrelationKind::exponential) {
        j["kind"] = "exponential";
        j["phi"] = m.phi;
        j["degenerate"] = m.degenerate;
    } else {
        j["kind"] = "local_linear";
        j["max_distance"] = m.max_distance;
        j["distances"] = m.table_d;
        j["values"] = m.table_rho;
        j["widened"] = m.widened;
        j["truncated"] = m.truncated;
    }
    return j;
}

inline nlohmann::json to_json(const TestReport& r) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : r.pair_stats) {
        pairs.push_back({{"j", p.j + 1},
                         {"k", p.k + 1},
                         {"T", p.T},
                         {"rho_hat", p.rho_hat},
                         {"sigma", p.sigma},
                         {"standardized", p.standardized}});
    }
    const auto& d = r.diagnostics;
    nlohmann::json matching = nlohmann::json::array();
    for (std::size_t i = 0; i < d.matching.assignment.size(); ++i) {
        matching.push_back({{"lag_component", i + 1},
                            {"plain_component", d.matching.assignment[i] + 1},
                            {"inner_product", d.matching.inner_products[i]},
                            {"omega", d.matching.matched_values[i]}});
    }
    nlohmann::json models = nlohmann::json::array();
    for (const auto& m : d.models) models.push_back(to_json(m));

    return {{"lag", r.lag},
            {"method", to_string(r.method)},
            {"R", r.R},
            {"fve_requested", r.fve_requested},
            {"fve_achieved", r.fve_achieved},
            {"pair_stats", pairs},
            {"S", r.S},
            {"df", r.df},
            {"p_value", r.p_value},
            {"diagnostics",
             {{"pair_count", d.pair_count},
              {"locations", d.locations},
              {"lag_eigenvalues", d.lag_eigenvalues},
              {"plain_eigenvalues", d.plain_eigenvalues},
              {"matching", matching},
              {"models", models},
              {"warnings", d.warnings}}}};
}

inline nlohmann::json to_json(const MultiLagReport& m, double alpha) {
    nlohmann::json reports = nlohmann::json::array();
    for (const auto& r : m.reports) reports.push_back(to_json(r));
    return {{"method", to_string(m.method)},
            {"lags", m.lags},
            {"p_value", m.combined_p},
            {"reject", m.combined_p < alpha},
            {"reports", reports},
            {"warnings", m.warnings}};
}

}  // namespace wsep
