#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "wsep/numerics.hpp"

namespace wsep {

/// Regular nx-by-ny lattice with equal spacing in both directions.
///
/// Locations are stored row-major: index = iy * nx + ix, coordinates
/// (ix * spacing, iy * spacing). Integer lattice coordinates are kept so
/// that pair distances can be compared exactly through squared offsets.
class SpatialGrid {
public:
    struct Point {
        double x;
        double y;
    };

    SpatialGrid(int nx, int ny, double spacing) : nx_(nx), ny_(ny), spacing_(spacing) {
        if (nx < 1 || ny < 1) throw DomainError("grid dimensions must be >= 1");
        if (!(spacing > 0.0) || !std::isfinite(spacing)) throw DomainError("grid spacing must be positive");
    }

    [[nodiscard]] int nx() const noexcept { return nx_; }
    [[nodiscard]] int ny() const noexcept { return ny_; }
    [[nodiscard]] double spacing() const noexcept { return spacing_; }
    [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(nx_) * ny_; }

    [[nodiscard]] int ix(std::size_t i) const noexcept { return static_cast<int>(i % nx_); }
    [[nodiscard]] int iy(std::size_t i) const noexcept { return static_cast<int>(i / nx_); }

    [[nodiscard]] Point location(std::size_t i) const noexcept {
        return {ix(i) * spacing_, iy(i) * spacing_};
    }

    [[nodiscard]] std::vector<Point> locations() const {
        std::vector<Point> out;
        out.reserve(size());
        for (std::size_t i = 0; i < size(); ++i) out.push_back(location(i));
        return out;
    }

    /// Squared distance in lattice units (an exact integer).
    [[nodiscard]] int lattice_dist2(std::size_t a, std::size_t b) const noexcept {
        const int dx = ix(a) - ix(b);
        const int dy = iy(a) - iy(b);
        return dx * dx + dy * dy;
    }

    [[nodiscard]] double distance(std::size_t a, std::size_t b) const noexcept {
        return spacing_ * std::sqrt(static_cast<double>(lattice_dist2(a, b)));
    }

    /// Largest squared lattice distance between any two locations.
    [[nodiscard]] int max_lattice_dist2() const noexcept {
        return (nx_ - 1) * (nx_ - 1) + (ny_ - 1) * (ny_ - 1);
    }

    [[nodiscard]] double diameter() const noexcept {
        return spacing_ * std::sqrt(static_cast<double>(max_lattice_dist2()));
    }

    /// Physical distance for a squared lattice distance.
    [[nodiscard]] double distance_of(int lattice_d2) const noexcept {
        return spacing_ * std::sqrt(static_cast<double>(lattice_d2));
    }

    friend bool operator==(const SpatialGrid&, const SpatialGrid&) = default;

private:
    int nx_;
    int ny_;
    double spacing_;
};

[[nodiscard]] inline SpatialGrid build_regular_grid(int nx, int ny, double spacing) {
    return SpatialGrid(nx, ny, spacing);
}

/// Ordered location pairs at one spatial lag.
struct PairSet {
    double lag = 0.0;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;

    [[nodiscard]] std::size_t count() const noexcept { return pairs.size(); }
    [[nodiscard]] bool empty() const noexcept { return pairs.empty(); }
};

[[nodiscard]] inline double default_pair_tolerance(const SpatialGrid& grid) { return 1e-9 * grid.spacing(); }

/// Every ordered pair (i, i') with | |s_i - s_i'| - h | <= tol, sorted by (i, i').
///
/// Both directions of every matched pair are included; self pairs never are.
[[nodiscard]] inline PairSet lag_pairs(const SpatialGrid& grid, double h, double tol) {
    if (!(h > 0.0)) throw DomainError("lag_pairs: lag must be positive");
    if (tol < 0.0) throw DomainError("lag_pairs: tolerance must be nonnegative");
    PairSet out;
    out.lag = h;

    // Candidate squared lattice distances that match h, found once.
    std::vector<char> match(static_cast<std::size_t>(grid.max_lattice_dist2()) + 1, 0);
    bool any = false;
    for (int q = 1; q <= grid.max_lattice_dist2(); ++q) {
        if (std::abs(grid.distance_of(q) - h) <= tol) {
            match[q] = 1;
            any = true;
        }
    }
    if (!any) return out;

    const std::size_t n = grid.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            if (match[grid.lattice_dist2(i, j)]) out.pairs.emplace_back(i, j);
        }
    }
    return out;
}

[[nodiscard]] inline PairSet lag_pairs(const SpatialGrid& grid, double h) {
    return lag_pairs(grid, h, default_pair_tolerance(grid));
}

/// Ordered-pair counts keyed by squared lattice distance (exact keys).
[[nodiscard]] inline std::map<int, std::size_t> lattice_distance_counts(const SpatialGrid& grid) {
    // Count offsets rather than pairs: an offset (dx, dy) occurs (nx-|dx|)(ny-|dy|) times.
    std::map<int, std::size_t> counts;
    for (int dy = -(grid.ny() - 1); dy <= grid.ny() - 1; ++dy) {
        for (int dx = -(grid.nx() - 1); dx <= grid.nx() - 1; ++dx) {
            if (dx == 0 && dy == 0) continue;
            const std::size_t c = static_cast<std::size_t>(grid.nx() - std::abs(dx)) *
                                  static_cast<std::size_t>(grid.ny() - std::abs(dy));
            counts[dx * dx + dy * dy] += c;
        }
    }
    return counts;
}

/// Distinct nonzero pairwise distances with their ordered-pair counts.
///
/// Keys come from exact squared lattice distances, so distances that coincide
/// on the lattice (e.g. 5 = |(3,4)| = |(5,0)|) are merged without any
/// floating-point tolerance.
[[nodiscard]] inline std::map<double, std::size_t> distance_multiset(const SpatialGrid& grid) {
    std::map<double, std::size_t> out;
    for (const auto& [q, c] : lattice_distance_counts(grid)) out.emplace(grid.distance_of(q), c);
    return out;
}

}  // namespace wsep
