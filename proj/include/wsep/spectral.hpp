#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "wsep/field.hpp"
#include "wsep/numerics.hpp"

namespace wsep {

/// Eigenpairs of the integral operator f -> int K(., t) f(t) dt, discretized
/// with uniform weight dt. Eigenfunctions are the columns of `functions`,
/// normalized so that dt * |psi|^2 = 1.
struct EigenSystem {
    Eigen::VectorXd values;     // descending
    Eigen::MatrixXd functions;  // T x R
    double dt = 1.0;

    [[nodiscard]] Eigen::Index count() const noexcept { return values.size(); }
    [[nodiscard]] Eigen::VectorXd function(Eigen::Index r) const { return functions.col(r); }
};

/// Lag-system index r -> plain-system index assignment[r].
struct Matching {
    std::vector<Eigen::Index> assignment;
    std::vector<double> inner_products;  // |dt <psi_r^(h), psi_assigned>|
    std::vector<double> matched_values;  // plain eigenvalue for each lag index
};

[[nodiscard]] inline EigenSystem eigen_decompose(const Kernel& kernel, Eigen::Index max_components) {
    const Eigen::Index T = kernel.size();
    if (max_components < 1 || max_components > T) throw DomainError("eigen_decompose: max_components must be in [1, T]");
    if (!kernel.is_symmetric()) throw DomainError("eigen_decompose: kernel is not symmetric");
    if (!kernel.values.allFinite()) throw DomainError("eigen_decompose: kernel has non-finite entries");

    const Eigen::MatrixXd op = kernel.values * kernel.dt;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(op);
    if (solver.info() != Eigen::Success) throw DomainError("eigen_decompose: eigensolver did not converge");

    // Solver returns ascending order.
    EigenSystem out;
    out.dt = kernel.dt;
    out.values.resize(max_components);
    out.functions.resize(T, max_components);
    const double scale = 1.0 / std::sqrt(kernel.dt);
    for (Eigen::Index r = 0; r < max_components; ++r) {
        const Eigen::Index src = T - 1 - r;
        out.values(r) = solver.eigenvalues()(src);
        Eigen::VectorXd v = solver.eigenvectors().col(src) * scale;
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        out.functions.col(r) = v;
    }
    return out;
}

[[nodiscard]] inline EigenSystem eigen_decompose(const Kernel& kernel) { return eigen_decompose(kernel, kernel.size()); }

/// Fraction of variance explained by the first R components, counting
/// positive eigenvalues only.
[[nodiscard]] inline double explained_fraction(const EigenSystem& eigs, Eigen::Index R) {
    double total = 0.0;
    double head = 0.0;
    for (Eigen::Index r = 0; r < eigs.count(); ++r) {
        const double v = std::max(eigs.values(r), 0.0);
        total += v;
        if (r < R) head += v;
    }
    return total > 0.0 ? head / total : 0.0;
}

/// Smallest R whose positive-eigenvalue share reaches `fve`, floored at 2.
[[nodiscard]] inline Eigen::Index select_truncation(const EigenSystem& eigs, double fve) {
    if (!(fve > 0.0 && fve <= 1.0)) throw DomainError("select_truncation: fve must lie in (0, 1]");
    double total = 0.0;
    Eigen::Index positive = 0;
    for (Eigen::Index r = 0; r < eigs.count(); ++r) {
        if (eigs.values(r) > 0.0) {
            total += eigs.values(r);
            ++positive;
        }
    }
    if (positive == 0) throw DomainError("select_truncation: no positive eigenvalue");

    Eigen::Index R = positive;
    double cum = 0.0;
    for (Eigen::Index r = 0; r < eigs.count(); ++r) {
        cum += std::max(eigs.values(r), 0.0);
        if (cum >= fve * total) {
            R = r + 1;
            break;
        }
    }
    return std::min(std::max<Eigen::Index>(R, 2), eigs.count());
}

/// Greedy matching in lag order: component r of `lag_sys` takes the still
/// unmatched component of `plain_sys` with the largest |dt <psi_r^(h), psi_r'>|.
[[nodiscard]] inline Matching match_eigenpairs(const EigenSystem& lag_sys, const EigenSystem& plain_sys, Eigen::Index R) {
    if (R < 1 || lag_sys.count() < R || plain_sys.count() < R) {
        throw DomainError("match_eigenpairs: fewer than R components available");
    }
    if (lag_sys.functions.rows() != plain_sys.functions.rows()) throw DomainError("match_eigenpairs: length mismatch");
    const Eigen::MatrixXd gram = (lag_sys.functions.leftCols(R).transpose() * plain_sys.functions).cwiseAbs() * lag_sys.dt;

    Matching m;
    std::vector<char> taken(static_cast<std::size_t>(plain_sys.count()), 0);
    for (Eigen::Index r = 0; r < R; ++r) {
        Eigen::Index best = -1;
        double best_ip = -1.0;
        for (Eigen::Index c = 0; c < plain_sys.count(); ++c) {
            if (taken[c]) continue;
            if (gram(r, c) > best_ip) {
                best_ip = gram(r, c);
                best = c;
            }
        }
        taken[best] = 1;
        m.assignment.push_back(best);
        m.inner_products.push_back(best_ip);
        m.matched_values.push_back(plain_sys.values(best));
    }
    return m;
}

/// FPC scores dt * sum_j (X_i(t_j) - mean(t_j)) psi_r(t_j), one column per function.
[[nodiscard]] inline Eigen::MatrixXd project_scores(const FunctionalField& field, const Eigen::VectorXd& mean,
                                                    const Eigen::MatrixXd& eigenfunctions) {
    if (eigenfunctions.rows() != static_cast<Eigen::Index>(field.timepoints()) ||
        mean.size() != static_cast<Eigen::Index>(field.timepoints())) {
        throw DomainError("project_scores: eigenfunction length differs from the time grid");
    }
    return (centered_values(field, mean) * eigenfunctions) * field.dt();
}

}  // namespace wsep
