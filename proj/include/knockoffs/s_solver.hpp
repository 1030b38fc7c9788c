#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "knockoffs/errors.hpp"
#include "knockoffs/numerics.hpp"

namespace knockoff {

enum class SMethod { EQ, SDP, ASDP };

inline const char* to_string(SMethod m) {
    switch (m) {
        case SMethod::EQ: return "eq";
        case SMethod::SDP: return "sdp";
        case SMethod::ASDP: return "asdp";
    }
    return "?";
}

// Decorrelation parameters for knockoff sampling: corr(X_j, Xk_j) = 1 - s_j,
// subject to diag(s) <= 2*Sigma in the PSD order.
struct SVector {
    VectorXd s;
    SMethod method = SMethod::EQ;
    double gamma = 1.0;               // ASDP shrinkage; 1 otherwise
    double feasibility_margin = 0.0;  // lambda_min(2*Sigma - diag(s))
};

namespace detail {

inline void require_correlation_like(const MatrixXd& sigma, const std::string& who) {
    require_symmetric(sigma, who);
    if ((sigma.diagonal().array() - 1.0).abs().maxCoeff() > 1e-8) {
        throw validation_error(who + ": sigma must have unit diagonal (standardize first)");
    }
}

inline double feasibility_margin(const MatrixXd& sigma, const VectorXd& s) {
    MatrixXd slack = 2.0 * sigma;
    slack.diagonal() -= s;
    return min_eigenvalue(slack);
}

// Entries below the PSD zero tolerance are numerical noise around a
// degenerate construction; snap them to exact zero so downstream samplers
// take the replica path instead of dividing by vanishing pivots.
inline void clean_tiny(VectorXd& s) {
    for (Eigen::Index j = 0; j < s.size(); ++j) {
        if (std::abs(s(j)) < 1e-10) {
            s(j) = 0.0;
        }
    }
}

// Largest t with A - t*e_j*e_j^T still PSD is 1/(A^{-1})_jj; one sweep of
// these exact rank-one moves pins coordinates that belong on the box bound
// (s_j = 1) and tightens the interior point returned by the barrier stage.
inline void polish_sweep(const MatrixXd& sigma, VectorXd& s) {
    const Eigen::Index p = s.size();
    MatrixXd slack = 2.0 * sigma;
    slack.diagonal() -= s;
    Eigen::LLT<MatrixXd> llt(slack);
    if (llt.info() != Eigen::Success) {
        return; // already on the boundary; nothing to tighten
    }
    MatrixXd inv = llt.solve(MatrixXd::Identity(p, p));
    const double margin = 1e-11 * static_cast<double>(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const double denom = inv(j, j);
        if (denom <= 0.0) continue;
        const double head_room = 1.0 / denom;
        double step = std::min(head_room - margin, 1.0 - s(j));
        if (step <= 0.0) continue;
        s(j) += step;
        // Sherman-Morrison update of inv for the diagonal decrement.
        const double scale = 1.0 - step * denom;
        if (scale <= 1e-14) break; // slack went singular; stop the sweep
        inv += (step / scale) * (inv.col(j) * inv.row(j));
    }
}

} // namespace detail

// Equicorrelated construction: s_j = min(2*lambda_min(Sigma), 1) for all j.
inline SVector solve_equi(const MatrixXd& sigma) {
    detail::require_correlation_like(sigma, "solve_equi");
    const double lambda_min = min_eigenvalue(sigma);
    const double value = std::clamp(2.0 * lambda_min, 0.0, 1.0);
    SVector result;
    result.s = VectorXd::Constant(sigma.rows(), value);
    detail::clean_tiny(result.s);
    result.method = SMethod::EQ;
    result.gamma = 1.0;
    result.feasibility_margin = detail::feasibility_margin(sigma, result.s);
    return result;
}

// Semidefinite construction: minimize sum_j |1 - s_j| subject to s >= 0 and
// diag(s) <= 2*Sigma.  The optimum never exceeds 1, so this is equivalent to
// maximizing sum_j s_j over the box-constrained spectrahedron
//     K = { s in [0,1]^p : 2*Sigma - diag(s) >= 0 },
// which is solved by a primal log-barrier Newton iteration followed by one
// exact polish sweep.  Coordinate-wise ascent alone cannot work here: the
// natural feasible start s^EQ already lies on the spectrahedron boundary and
// no single coordinate can increase from a boundary point whose null
// eigenvector has all nonzero entries.
inline SVector solve_sdp(const MatrixXd& sigma, double tol = 1e-6) {
    detail::require_correlation_like(sigma, "solve_sdp");
    const Eigen::Index p = sigma.rows();
    if (tol <= 0.0) {
        throw validation_error("solve_sdp: tol must be positive");
    }

    SVector result;
    result.method = SMethod::SDP;
    result.gamma = 1.0;

    const double lambda_min_sigma = min_eigenvalue(sigma);
    const double s_eq = std::clamp(2.0 * lambda_min_sigma, 0.0, 1.0);
    if (s_eq <= 1e-10) {
        // Singular covariance: the feasible set has empty interior.  A dense
        // null eigenvector forces s = 0 (knockoffs become exact replicas).
        result.s = VectorXd::Zero(p);
        result.feasibility_margin = 2.0 * lambda_min_sigma;
        return result;
    }

    VectorXd s = VectorXd::Constant(p, 0.5 * s_eq); // strictly interior
    const double mu_final = std::clamp(tol * 1e-4, 1e-12, 1e-9);

    auto slack_of = [&](const VectorXd& v) {
        MatrixXd a = 2.0 * sigma;
        a.diagonal() -= v;
        return a;
    };
    auto barrier_value = [&](const VectorXd& v, double mu, bool& ok) {
        ok = false;
        if ((v.array() <= 0.0).any() || (v.array() >= 1.0).any()) return 0.0;
        Eigen::LLT<MatrixXd> llt(slack_of(v));
        if (llt.info() != Eigen::Success) return 0.0;
        double logdet = 0.0;
        for (Eigen::Index i = 0; i < p; ++i) {
            logdet += 2.0 * std::log(llt.matrixL()(i, i));
        }
        ok = true;
        return v.sum() + mu * (logdet + v.array().log().sum() +
                               (1.0 - v.array()).log().sum());
    };

    for (double mu = 1.0; mu >= mu_final; mu *= 0.1) {
        for (int newton_iter = 0; newton_iter < 60; ++newton_iter) {
            Eigen::LLT<MatrixXd> llt(slack_of(s));
            if (llt.info() != Eigen::Success) {
                throw numeric_error("solve_sdp: lost feasibility during barrier iteration");
            }
            const MatrixXd inv = llt.solve(MatrixXd::Identity(p, p));
            const VectorXd grad =
                VectorXd::Ones(p) +
                mu * ((-inv.diagonal()).array() + s.array().inverse() -
                      (1.0 - s.array()).inverse())
                         .matrix();
            MatrixXd hess = inv.cwiseProduct(inv);
            hess.diagonal() +=
                (s.array().square().inverse() + (1.0 - s.array()).square().inverse())
                    .matrix();
            // Newton step for maximizing: H is the negated Hessian / mu.
            const VectorXd step = hess.ldlt().solve(grad) / mu;

            const double decrement = grad.dot(step);
            bool ok = false;
            const double current = barrier_value(s, mu, ok);
            double t = 1.0;
            VectorXd candidate;
            for (int back = 0; back < 60; ++back) {
                candidate = s + t * step;
                bool cand_ok = false;
                const double value = barrier_value(candidate, mu, cand_ok);
                if (cand_ok && value >= current + 1e-4 * t * decrement) {
                    break;
                }
                t *= 0.5;
                candidate.resize(0);
            }
            if (candidate.size() == 0) {
                break; // no admissible step; mu stage has converged
            }
            s = candidate;
            if (decrement * t < 1e-13 * (1.0 + std::abs(current))) {
                break;
            }
        }
    }

    detail::polish_sweep(sigma, s);
    s = s.cwiseMax(0.0).cwiseMin(1.0);
    detail::clean_tiny(s);
    result.s = s;
    result.feasibility_margin = detail::feasibility_margin(sigma, s);
    return result;
}

// Single-linkage clustering of |correlation| with a maximum block size;
// supplies an ASDP partition when the caller has none.
inline std::vector<std::vector<Eigen::Index>> make_correlation_blocks(
    const MatrixXd& sigma, Eigen::Index max_block_size) {
    detail::require_correlation_like(sigma, "make_correlation_blocks");
    if (max_block_size < 1) {
        throw validation_error("make_correlation_blocks: block size must be >= 1");
    }
    const Eigen::Index p = sigma.rows();
    struct Edge {
        double weight;
        Eigen::Index a, b;
    };
    std::vector<Edge> edges;
    edges.reserve(static_cast<std::size_t>(p) * (p - 1) / 2);
    for (Eigen::Index i = 0; i < p; ++i) {
        for (Eigen::Index j = i + 1; j < p; ++j) {
            edges.push_back({std::abs(sigma(i, j)), i, j});
        }
    }
    std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
        if (x.weight != y.weight) return x.weight > y.weight;
        if (x.a != y.a) return x.a < y.a;
        return x.b < y.b;
    });

    std::vector<Eigen::Index> parent(p), size(p, 1);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<Eigen::Index(Eigen::Index)> find = [&](Eigen::Index v) {
        while (parent[v] != v) {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        return v;
    };
    for (const Edge& e : edges) {
        if (e.weight <= 0.0) break;
        const Eigen::Index ra = find(e.a), rb = find(e.b);
        if (ra == rb || size[ra] + size[rb] > max_block_size) continue;
        parent[rb] = ra;
        size[ra] += size[rb];
    }

    std::vector<std::vector<Eigen::Index>> blocks(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        blocks[find(j)].push_back(j);
    }
    std::vector<std::vector<Eigen::Index>> out;
    for (auto& b : blocks) {
        if (!b.empty()) out.push_back(std::move(b));
    }
    return out;
}

// Approximate-SDP construction.  Step 1 solves the SDP on the block-diagonal
// approximation of Sigma; step 2 shrinks the result by the largest gamma in
// [0,1] keeping diag(gamma*s_hat) <= 2*Sigma, found by bisection to 1e-6.
inline SVector solve_asdp(const MatrixXd& sigma,
                          const std::vector<std::vector<Eigen::Index>>& blocks,
                          double tol = 1e-6) {
    detail::require_correlation_like(sigma, "solve_asdp");
    const Eigen::Index p = sigma.rows();

    std::vector<bool> seen(static_cast<std::size_t>(p), false);
    for (const auto& block : blocks) {
        if (block.empty()) {
            throw validation_error("solve_asdp: empty block in partition");
        }
        for (Eigen::Index j : block) {
            if (j < 0 || j >= p || seen[static_cast<std::size_t>(j)]) {
                throw validation_error("solve_asdp: blocks must partition the index set");
            }
            seen[static_cast<std::size_t>(j)] = true;
        }
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
        throw validation_error("solve_asdp: blocks must cover every index");
    }

    VectorXd s_hat(p);
    for (const auto& block : blocks) {
        if (block.size() == 1) {
            // 1x1 subproblem: min |1 - s| subject to 0 <= s <= 2 gives s = 1.
            s_hat(block[0]) = 1.0;
            continue;
        }
        MatrixXd sub(block.size(), block.size());
        for (std::size_t a = 0; a < block.size(); ++a) {
            for (std::size_t b = 0; b < block.size(); ++b) {
                sub(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
                    sigma(block[a], block[b]);
            }
        }
        const SVector sub_solution = solve_sdp(sub, tol);
        for (std::size_t a = 0; a < block.size(); ++a) {
            s_hat(block[a]) = sub_solution.s(static_cast<Eigen::Index>(a));
        }
    }

    auto feasible = [&](double gamma) {
        MatrixXd slack = 2.0 * sigma;
        slack.diagonal() -= gamma * s_hat;
        return cholesky_psd(slack, psd_zero_tolerance(slack)).is_psd;
    };

    double gamma = 0.0;
    if (feasible(1.0)) {
        gamma = 1.0;
    } else {
        double lo = 0.0, hi = 1.0; // s=0 is always feasible
        while (hi - lo > 1e-6) {
            const double mid = 0.5 * (lo + hi);
            (feasible(mid) ? lo : hi) = mid;
        }
        gamma = lo;
    }

    SVector result;
    result.method = SMethod::ASDP;
    result.gamma = gamma;
    result.s = gamma * s_hat;
    detail::clean_tiny(result.s);
    result.feasibility_margin = detail::feasibility_margin(sigma, result.s);
    return result;
}

inline std::vector<std::vector<Eigen::Index>> trivial_partition(Eigen::Index p) {
    std::vector<std::vector<Eigen::Index>> blocks(1);
    blocks[0].resize(static_cast<std::size_t>(p));
    std::iota(blocks[0].begin(), blocks[0].end(), 0);
    return blocks;
}

inline std::vector<std::vector<Eigen::Index>> singleton_partition(Eigen::Index p) {
    std::vector<std::vector<Eigen::Index>> blocks;
    blocks.reserve(static_cast<std::size_t>(p));
    for (Eigen::Index j = 0; j < p; ++j) {
        blocks.push_back({j});
    }
    return blocks;
}

} // namespace knockoff
