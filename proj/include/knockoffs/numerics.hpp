#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>

#include "knockoffs/errors.hpp"
#include "knockoffs/rng.hpp"

namespace knockoff {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// A "SymMatrix" throughout the library is a dense Eigen matrix validated by
// require_symmetric: square, finite, and symmetric to 1e-12 relative.

inline void require_finite(const MatrixXd& m, const std::string& name) {
    if (!m.allFinite()) {
        throw validation_error(name + ": entries must be finite");
    }
}

inline void require_symmetric(const MatrixXd& m, const std::string& name,
                              double rel_tol = 1e-12) {
    if (m.rows() != m.cols()) {
        throw validation_error(name + ": matrix must be square");
    }
    require_finite(m, name);
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    const double gap = (m - m.transpose()).cwiseAbs().maxCoeff();
    if (gap > rel_tol * scale) {
        throw validation_error(name + ": matrix must be symmetric (asymmetry " +
                               std::to_string(gap) + ")");
    }
}

struct CholeskyResult {
    MatrixXd factor;     // lower triangular; valid only when is_psd
    bool is_psd = false;
    double jitter_used = 0.0;
};

// PSD probe: succeeds iff m + eps*I admits a Cholesky factorization for some
// eps <= jitter_max, escalating eps from 0 through powers of ten.
inline CholeskyResult cholesky_psd(const MatrixXd& m, double jitter_max = 0.0) {
    require_symmetric(m, "cholesky_psd");
    const Eigen::Index dim = m.rows();

    CholeskyResult result;
    double jitter = 0.0;
    // Smallest nonzero jitter is tied to the matrix scale so the escalation
    // covers jitter_max in a handful of steps.
    const double base = std::max(1e-16, 1e-16 * m.diagonal().cwiseAbs().maxCoeff());
    for (;;) {
        MatrixXd shifted = m;
        if (jitter > 0.0) {
            shifted.diagonal().array() += jitter;
        }
        Eigen::LLT<MatrixXd> llt(shifted);
        if (llt.info() == Eigen::Success) {
            result.factor = llt.matrixL();
            result.is_psd = true;
            result.jitter_used = jitter;
            return result;
        }
        if (jitter >= jitter_max) {
            break;
        }
        jitter = (jitter == 0.0) ? std::min(base, jitter_max) : std::min(jitter * 10.0, jitter_max);
    }
    result.is_psd = false;
    result.jitter_used = jitter;
    result.factor = MatrixXd::Zero(dim, dim);
    return result;
}

// Smallest eigenvalue of a symmetric matrix, accurate to ~1e-8 absolute.
inline double min_eigenvalue(const MatrixXd& m) {
    require_symmetric(m, "min_eigenvalue");
    Eigen::SelfAdjointEigenSolver<MatrixXd> solver(m, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) {
        throw numeric_error("min_eigenvalue: eigenvalue iteration failed");
    }
    return solver.eigenvalues().minCoeff();
}

// Eigenvalues >= -1e-10 * trace/dim are treated as zero: the knockoff joint
// covariance sits exactly on the PSD boundary when s is maximal.
inline double psd_zero_tolerance(const MatrixXd& m) {
    const double avg_diag = std::abs(m.trace()) / static_cast<double>(m.rows());
    return 1e-10 * std::max(avg_diag, 1.0);
}

// Factor for sampling N(0, cov) as factor * z.  Uses Cholesky when cov is
// comfortably PD and falls back to an eigendecomposition with negative
// eigenvalues clamped to zero, so exactly singular covariances sample on
// their degenerate support instead of failing.
inline MatrixXd sampling_factor(const MatrixXd& cov) {
    require_symmetric(cov, "sampling_factor");
    const Eigen::Index dim = cov.rows();
    if (dim == 0) {
        return MatrixXd::Zero(0, 0);
    }
    if (cov.cwiseAbs().maxCoeff() == 0.0) {
        return MatrixXd::Zero(dim, dim);
    }
    Eigen::LLT<MatrixXd> llt(cov);
    if (llt.info() == Eigen::Success) {
        // Reject marginal factorizations that a tiny perturbation would break.
        MatrixXd l = llt.matrixL();
        if ((l.diagonal().array() > std::sqrt(psd_zero_tolerance(cov))).all()) {
            return l;
        }
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) {
        throw numeric_error("sampling_factor: eigendecomposition failed");
    }
    const double tol = psd_zero_tolerance(cov);
    if (eig.eigenvalues().minCoeff() < -tol) {
        throw numeric_error("sampling_factor: covariance is not PSD (min eigenvalue " +
                            std::to_string(eig.eigenvalues().minCoeff()) + ")");
    }
    VectorXd roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * roots.asDiagonal();
}

// count x p matrix of draws from N(mean, cov); a pure function of
// (mean, cov, seed, count).  Each row uses its own counter-based substream.
inline MatrixXd mvn_sample(const VectorXd& mean, const MatrixXd& cov,
                           std::uint64_t seed, Eigen::Index count) {
    require_symmetric(cov, "mvn_sample");
    if (mean.size() != cov.rows()) {
        throw validation_error("mvn_sample: mean/cov dimension mismatch");
    }
    const Eigen::Index p = mean.size();
    const MatrixXd factor = sampling_factor(cov);

    MatrixXd draws(count, p);
    VectorXd z(p);
    for (Eigen::Index i = 0; i < count; ++i) {
        Rng rng = Rng::stream(seed, {0x6d766eULL, static_cast<std::uint64_t>(i)});
        for (Eigen::Index j = 0; j < p; ++j) {
            z(j) = rng.normal();
        }
        draws.row(i) = (mean + factor * z).transpose();
    }
    return draws;
}

// Solves m * x = rhs for symmetric positive definite m, with jitter
// escalation.  Factorizations with a vanishing pivot are rejected even when
// the Cholesky nominally succeeds: solving against them amplifies noise by
// the inverse of the smallest squared pivot.
inline MatrixXd sym_solve(const MatrixXd& m, const MatrixXd& rhs,
                          double jitter_max = 1e-10) {
    require_symmetric(m, "sym_solve");
    const double scale = std::max(m.diagonal().maxCoeff(), 1e-300);
    double jitter = 0.0;
    for (;;) {
        MatrixXd shifted = m;
        if (jitter > 0.0) {
            shifted.diagonal().array() += jitter;
        }
        Eigen::LLT<MatrixXd> llt(shifted);
        if (llt.info() == Eigen::Success) {
            const MatrixXd factor = llt.matrixL();
            const double min_pivot = factor.diagonal().minCoeff();
            if (min_pivot * min_pivot > 1e-13 * scale) {
                MatrixXd x = factor.triangularView<Eigen::Lower>().solve(rhs);
                factor.triangularView<Eigen::Lower>().transpose().solveInPlace(x);
                return x;
            }
        }
        if (jitter >= jitter_max) {
            throw numeric_error("sym_solve: matrix is singular beyond the jitter budget");
        }
        jitter = (jitter == 0.0) ? std::min(1e-14 * scale, jitter_max)
                                 : std::min(jitter * 10.0, jitter_max);
    }
}

} // namespace knockoff
