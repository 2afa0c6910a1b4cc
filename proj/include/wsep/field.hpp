#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "wsep/grid.hpp"
#include "wsep/numerics.hpp"

namespace wsep {

/// Malformed field file. Carries the 1-based line and column of the offending cell.
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, std::size_t column, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what),
          line_(line),
          column_(column) {}

    [[nodiscard]] std::size_t line() const noexcept { return line_; }
    [[nodiscard]] std::size_t column() const noexcept { return column_; }

private:
    std::size_t line_;
    std::size_t column_;
};

/// One realization of a functional field: a curve on a uniform time grid at
/// every location of a regular lattice. values(i, j) = X(s_i, t_j).
struct FunctionalField {
    SpatialGrid grid;
    std::vector<double> times;
    Eigen::MatrixXd values;
    /// Physical coordinates of lattice index (0, 0); only used when writing files.
    double origin_x = 0.0;
    double origin_y = 0.0;

    FunctionalField(SpatialGrid g, std::vector<double> t, Eigen::MatrixXd v, double ox = 0.0, double oy = 0.0)
        : grid(g), times(std::move(t)), values(std::move(v)), origin_x(ox), origin_y(oy) {
        validate();
    }

    [[nodiscard]] std::size_t locations() const noexcept { return grid.size(); }
    [[nodiscard]] std::size_t timepoints() const noexcept { return times.size(); }
    [[nodiscard]] double dt() const noexcept { return times.size() > 1 ? (times.back() - times.front()) / (times.size() - 1) : 1.0; }

    void validate() const {
        if (static_cast<std::size_t>(values.rows()) != grid.size()) {
            throw DomainError("field has " + std::to_string(values.rows()) + " rows but grid has " +
                              std::to_string(grid.size()) + " locations");
        }
        if (static_cast<std::size_t>(values.cols()) != times.size()) throw DomainError("field column count differs from time grid");
        if (times.size() < 2) throw DomainError("field needs at least two time points");
        if (!values.allFinite()) throw DomainError("field contains non-finite values");
        const double step = dt();
        if (!(step > 0.0)) throw DomainError("time points must be strictly increasing");
        for (std::size_t j = 1; j < times.size(); ++j) {
            if (std::abs((times[j] - times[j - 1]) - step) > 1e-9 * std::abs(step)) {
                throw DomainError("time grid is not uniform at index " + std::to_string(j));
            }
        }
    }
};

/// Symmetric discretized covariance surface on a uniform time grid.
struct Kernel {
    Eigen::MatrixXd values;
    double dt = 1.0;

    [[nodiscard]] Eigen::Index size() const noexcept { return values.rows(); }

    [[nodiscard]] double asymmetry() const { return (values - values.transpose()).cwiseAbs().maxCoeff(); }

    [[nodiscard]] bool is_symmetric(double rel_tol = 1e-10) const {
        if (values.size() == 0) return true;
        const double scale = values.cwiseAbs().maxCoeff();
        return asymmetry() <= rel_tol * scale;
    }
};

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            cells.push_back(line.substr(start));
            break;
        }
        cells.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    for (auto& c : cells) {
        while (!c.empty() && (c.front() == ' ' || c.front() == '\t')) c.remove_prefix(1);
        while (!c.empty() && (c.back() == ' ' || c.back() == '\t' || c.back() == '\r')) c.remove_suffix(1);
    }
    return cells;
}

inline double parse_cell(std::string_view cell, std::size_t line, std::size_t column) {
    if (cell.empty()) throw ParseError(line, column, "empty cell");
    double v = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    if (*first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) throw ParseError(line, column, "not a number: '" + std::string(cell) + "'");
    if (!std::isfinite(v)) throw ParseError(line, column, "non-finite value");
    return v;
}

// Sorted distinct coordinates; near-equal values are merged.
inline std::vector<double> distinct_sorted(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::vector<double> out;
    for (double x : v) {
        if (out.empty() || std::abs(x - out.back()) > 1e-9 * std::max(1.0, std::abs(x))) out.push_back(x);
    }
    return out;
}

}  // namespace detail

/// Reads a field from the CSV layout `x,y,t_1,...,t_T` followed by one row per
/// location. Rows may come in any order but must cover a complete lattice with
/// equal spacing in x and y.
[[nodiscard]] inline FunctionalField load_field(std::istream& in) {
    std::string line;
    std::size_t lineno = 0;

    // Header.
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.find_first_not_of(" \t\r") != std::string::npos) break;
    }
    if (lineno == 0 || line.find_first_not_of(" \t\r") == std::string::npos) throw ParseError(1, 1, "empty input");
    if (lineno == 1 && line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
    const auto header = detail::split_csv(line);
    if (header.size() < 4) throw ParseError(lineno, 1, "header needs x, y and at least two time columns");
    if (header[0] != "x") throw ParseError(lineno, 1, "expected 'x'");
    if (header[1] != "y") throw ParseError(lineno, 2, "expected 'y'");
    std::vector<double> times;
    for (std::size_t c = 2; c < header.size(); ++c) times.push_back(detail::parse_cell(header[c], lineno, c + 1));
    const std::size_t T = times.size();
    const double step = (times.back() - times.front()) / static_cast<double>(T - 1);
    if (!(step > 0.0)) throw ParseError(lineno, 3, "time points must be increasing");
    for (std::size_t j = 1; j < T; ++j) {
        if (std::abs((times[j] - times[j - 1]) - step) > 1e-9 * std::abs(step)) {
            throw ParseError(lineno, j + 3, "time grid is not uniform");
        }
    }

    struct Row {
        double x, y;
        std::vector<double> v;
        std::size_t line;
    };
    std::vector<Row> rows;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = detail::split_csv(line);
        if (cells.size() != T + 2) {
            throw ParseError(lineno, std::min(cells.size(), T + 2) + 1,
                             "expected " + std::to_string(T + 2) + " cells, found " + std::to_string(cells.size()));
        }
        Row r{detail::parse_cell(cells[0], lineno, 1), detail::parse_cell(cells[1], lineno, 2), {}, lineno};
        r.v.reserve(T);
        for (std::size_t c = 0; c < T; ++c) r.v.push_back(detail::parse_cell(cells[c + 2], lineno, c + 3));
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw ParseError(lineno + 1, 1, "no data rows");

    std::vector<double> xs, ys;
    for (const auto& r : rows) {
        xs.push_back(r.x);
        ys.push_back(r.y);
    }
    const auto ux = detail::distinct_sorted(xs);
    const auto uy = detail::distinct_sorted(ys);
    const int nx = static_cast<int>(ux.size());
    const int ny = static_cast<int>(uy.size());
    double spacing = 0.0;
    if (nx > 1) spacing = (ux.back() - ux.front()) / (nx - 1);
    if (ny > 1) {
        const double sy = (uy.back() - uy.front()) / (ny - 1);
        if (spacing > 0.0 && std::abs(sy - spacing) > 1e-9 * spacing) {
            throw ParseError(rows.front().line, 2, "x and y spacings differ; the loader needs a square lattice");
        }
        spacing = sy;
    }
    if (spacing == 0.0) spacing = 1.0;  // single location
    auto lattice_index = [&](double v, double origin, std::size_t line, std::size_t col, int n) {
        const double k = (v - origin) / spacing;
        const double kr = std::round(k);
        if (std::abs(k - kr) > 1e-6 || kr < 0 || kr >= n) throw ParseError(line, col, "coordinate is off the lattice");
        return static_cast<int>(kr);
    };

    const SpatialGrid grid(nx, ny, spacing);
    if (rows.size() != grid.size()) {
        throw ParseError(lineno, 1, "incomplete lattice: " + std::to_string(rows.size()) + " rows for a " +
                                        std::to_string(nx) + "x" + std::to_string(ny) + " grid");
    }
    Eigen::MatrixXd values(grid.size(), T);
    std::vector<char> seen(grid.size(), 0);
    for (const auto& r : rows) {
        const int ix = lattice_index(r.x, ux.front(), r.line, 1, nx);
        const int iy = lattice_index(r.y, uy.front(), r.line, 2, ny);
        const std::size_t idx = static_cast<std::size_t>(iy) * nx + ix;
        if (seen[idx]) throw ParseError(r.line, 1, "duplicate location");
        seen[idx] = 1;
        for (std::size_t j = 0; j < T; ++j) values(idx, j) = r.v[j];
    }
    return FunctionalField(grid, std::move(times), std::move(values), ux.front(), uy.front());
}

[[nodiscard]] inline FunctionalField load_field_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open input file: " + path);
    return load_field(in);
}

namespace detail {

/// Shortest decimal text that reads back to the same double.
inline std::string format_real(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace detail

/// Writes the field in the same CSV layout `load_field` reads, with
/// round-trip precision.
inline void write_field(std::ostream& out, const FunctionalField& field) {
    auto put = [&](double v) { out << detail::format_real(v); };
    out << "x,y";
    for (double t : field.times) {
        out << ',';
        put(t);
    }
    out << '\n';
    for (std::size_t i = 0; i < field.locations(); ++i) {
        const auto p = field.grid.location(i);
        put(field.origin_x + p.x);
        out << ',';
        put(field.origin_y + p.y);
        for (Eigen::Index j = 0; j < field.values.cols(); ++j) {
            out << ',';
            put(field.values(static_cast<Eigen::Index>(i), j));
        }
        out << '\n';
    }
}

/// Pooled mean curve over all locations.
[[nodiscard]] inline Eigen::VectorXd sample_mean(const FunctionalField& field) {
    return field.values.colwise().mean().transpose();
}

[[nodiscard]] inline Eigen::MatrixXd centered_values(const FunctionalField& field, const Eigen::VectorXd& mean) {
    return field.values.rowwise() - mean.transpose();
}

[[nodiscard]] inline Kernel sample_covariance(const FunctionalField& field) {
    const auto n = static_cast<double>(field.locations());
    if (field.locations() < 2) throw DomainError("sample_covariance: need at least two locations");
    const Eigen::MatrixXd xc = centered_values(field, sample_mean(field));
    Kernel k{(xc.transpose() * xc) / n, field.dt()};
    k.values = 0.5 * (k.values + k.values.transpose()).eval();
    return k;
}

/// Lag covariance from an explicit pair list:
/// N_h^{-1} sum_{(i,i')} (X_i - mu)(X_i' - mu)^T.
[[nodiscard]] inline Kernel lag_covariance(const FunctionalField& field, const PairSet& pairs) {
    if (pairs.empty()) throw DomainError("no pairs at lag h = " + std::to_string(pairs.lag));
    const Eigen::MatrixXd xc = centered_values(field, sample_mean(field));
    // Sum partners per first index so the outer products collapse into one GEMM.
    Eigen::MatrixXd partner_sum = Eigen::MatrixXd::Zero(xc.rows(), xc.cols());
    for (const auto& [i, j] : pairs.pairs) partner_sum.row(static_cast<Eigen::Index>(i)) += xc.row(static_cast<Eigen::Index>(j));
    Kernel k{(xc.transpose() * partner_sum) / static_cast<double>(pairs.count()), field.dt()};
    // Ordered pairs make the estimate symmetric; this removes summation-order noise only.
    k.values = 0.5 * (k.values + k.values.transpose()).eval();
    return k;
}

/// Epanechnikov kernel with bandwidth delta, integrating to one.
[[nodiscard]] inline double epanechnikov(double u, double delta) {
    const double z = u / delta;
    return std::abs(z) < 1.0 ? 0.75 * (1.0 - z * z) / delta : 0.0;
}

/// Sum of the pair weights kappa(h - |s_i - s_i'|) over all ordered (i, i'),
/// i.e. the denominator of the smoothed estimator.
[[nodiscard]] inline double smoothed_weight_total(const SpatialGrid& grid, double h, double bandwidth) {
    double total = grid.size() * epanechnikov(h, bandwidth);  // i == i'
    for (const auto& [q, c] : lattice_distance_counts(grid)) total += c * epanechnikov(h - grid.distance_of(q), bandwidth);
    return total;
}

/// Kernel-smoothed lag covariance over all ordered pairs, weighted by
/// Epanechnikov weights in (h - |s_i - s_i'|), then symmetrized.
[[nodiscard]] inline Kernel smoothed_lag_covariance(const FunctionalField& field, double h, double bandwidth) {
    if (!(h > 0.0)) throw DomainError("smoothed_lag_covariance: lag must be positive");
    if (!(bandwidth > 0.0)) throw DomainError("smoothed_lag_covariance: bandwidth must be positive");
    const auto& grid = field.grid;
    std::vector<double> weight_of(static_cast<std::size_t>(grid.max_lattice_dist2()) + 1);
    for (int q = 0; q <= grid.max_lattice_dist2(); ++q) weight_of[q] = epanechnikov(h - grid.distance_of(q), bandwidth);
    const double total = smoothed_weight_total(grid, h, bandwidth);
    if (!(total > 0.0)) throw DomainError("smoothed_lag_covariance: all pair weights are zero");

    const Eigen::MatrixXd xc = centered_values(field, sample_mean(field));
    const auto n = grid.size();
    Eigen::MatrixXd partner_sum = Eigen::MatrixXd::Zero(xc.rows(), xc.cols());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double w = weight_of[grid.lattice_dist2(i, j)];
            if (w != 0.0) partner_sum.row(static_cast<Eigen::Index>(i)) += w * xc.row(static_cast<Eigen::Index>(j));
        }
    }
    Kernel k{(xc.transpose() * partner_sum) / total, field.dt()};
    k.values = 0.5 * (k.values + k.values.transpose()).eval();
    return k;
}

/// Smoothed lag covariance with the default bandwidth of one grid spacing.
[[nodiscard]] inline Kernel smoothed_lag_covariance(const FunctionalField& field, double h) {
    return smoothed_lag_covariance(field, h, field.grid.spacing());
}

}  // namespace wsep
