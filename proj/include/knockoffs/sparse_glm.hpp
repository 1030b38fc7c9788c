#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <string>
#include <vector>

#include "knockoffs/errors.hpp"
#include "knockoffs/parallel.hpp"
#include "knockoffs/rng.hpp"

namespace knockoff {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Family { gaussian, logistic };

struct LassoFit {
    double lambda = 0.0;
    VectorXd coefficients; // original scale, one per design column
    double intercept = 0.0;
    Family family = Family::gaussian;
    bool converged = false;
    double tol_reached = 0.0; // max KKT violation at exit
};

struct CvResult {
    VectorXd lambda_grid; // descending
    VectorXd cv_mean;
    VectorXd cv_se;
    double lambda_min = 0.0;
    Eigen::Index lambda_min_index = 0;
};

namespace detail {

inline double soft_threshold(double value, double threshold) {
    if (value > threshold) return value - threshold;
    if (value < -threshold) return value + threshold;
    return 0.0;
}

inline std::uint64_t column_content_hash(const double* data, Eigen::Index n) {
    // FNV-1a over the raw bytes.
    std::uint64_t h = 1469598103934665603ULL;
    const unsigned char* bytes = reinterpret_cast<const unsigned char*>(data);
    const std::size_t len = static_cast<std::size_t>(n) * sizeof(double);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace detail

// Coordinate-descent solver over an internally standardized copy of the
// design.  Two properties matter more than speed here:
//
//  * The sweep order is canonical: columns are visited sorted by a content
//    hash (ties broken by byte comparison), never by position.  Permuting or
//    swapping design columns therefore permutes the arithmetic -- and hence
//    the fitted coefficients -- bit-exactly, which is what the flip-sign
//    construction downstream relies on.
//  * Exactly duplicated columns receive equal coefficients: after
//    convergence the coefficient mass within each duplicate group is
//    averaged, which preserves the fit and the objective.
class LassoSolver {
public:
    LassoSolver(const MatrixXd& design, const VectorXd& y, Family family)
        : family_(family), n_(design.rows()), m_(design.cols()), y_(y) {
        if (design.rows() != y.size()) {
            throw validation_error("lasso: design/response dimension mismatch");
        }
        if (n_ < 1 || m_ < 1) {
            throw validation_error("lasso: empty design");
        }
        if (!design.allFinite() || !y.allFinite()) {
            throw validation_error("lasso: non-finite inputs");
        }
        if (family_ == Family::logistic) {
            for (Eigen::Index i = 0; i < n_; ++i) {
                if (y(i) != 0.0 && y(i) != 1.0) {
                    throw validation_error("lasso: logistic response must be 0/1");
                }
            }
            const double mean = y.mean();
            if (mean == 0.0 || mean == 1.0) {
                throw validation_error("lasso: constant 0/1 response");
            }
        }

        // Standardize columns to mean zero, variance one (divisor n).
        z_.resize(n_, m_);
        center_.resize(m_);
        scale_.resize(m_);
        usable_.assign(static_cast<std::size_t>(m_), true);
        const double n_inv = 1.0 / static_cast<double>(n_);
        for (Eigen::Index j = 0; j < m_; ++j) {
            const double mean = design.col(j).mean();
            VectorXd centered = design.col(j).array() - mean;
            const double var = centered.squaredNorm() * n_inv;
            center_(j) = mean;
            if (var > 0.0) {
                scale_(j) = std::sqrt(var);
                z_.col(j) = centered / scale_(j);
            } else {
                scale_(j) = 1.0;
                z_.col(j).setZero();
                usable_[static_cast<std::size_t>(j)] = false;
            }
        }

        build_canonical_order(design);
    }

    Eigen::Index n() const { return n_; }
    Eigen::Index m() const { return m_; }

    double lambda_max() const {
        const VectorXd centered = y_.array() - y_.mean();
        double best = 0.0;
        const double n_inv = 1.0 / static_cast<double>(n_);
        for (Eigen::Index j : order_) {
            if (!usable_[static_cast<std::size_t>(j)]) continue;
            best = std::max(best, std::abs(z_.col(j).dot(centered)) * n_inv);
        }
        return best;
    }

    // Geometric grid spanning `decades` downward from lambda_max.
    VectorXd lambda_grid(Eigen::Index size, double decades = 4.0) const {
        if (size < 1) {
            throw validation_error("lasso: grid size must be >= 1");
        }
        const double top = lambda_max();
        VectorXd grid(size);
        if (top <= 0.0) {
            grid.setZero();
            return grid;
        }
        for (Eigen::Index i = 0; i < size; ++i) {
            const double frac = (size == 1) ? 0.0 : static_cast<double>(i) / static_cast<double>(size - 1);
            grid(i) = top * std::pow(10.0, -decades * frac);
        }
        return grid;
    }

    // Single fit; `warm` (standardized-scale coefficients) speeds up paths.
    LassoFit fit(double lambda, double tol, int max_sweeps,
                 VectorXd* warm = nullptr) const {
        if (lambda < 0.0) {
            throw validation_error("lasso: lambda must be >= 0");
        }
        VectorXd beta = (warm != nullptr && warm->size() == m_) ? *warm : VectorXd::Zero(m_);
        double intercept_std = 0.0;

        bool converged = false;
        double kkt = 0.0;
        if (family_ == Family::gaussian) {
            converged = solve_gaussian(lambda, tol, max_sweeps, beta, kkt);
        } else {
            converged = solve_logistic(lambda, tol, max_sweeps, beta, intercept_std, kkt);
        }
        average_duplicates(beta);

        if (warm != nullptr) {
            *warm = beta;
        }
        return to_original_scale(beta, intercept_std, lambda, converged, kkt);
    }

    // Fits along a descending grid with warm starts.
    std::vector<LassoFit> path(const VectorXd& grid, double tol, int max_sweeps) const {
        VectorXd warm = VectorXd::Zero(m_);
        std::vector<LassoFit> fits;
        fits.reserve(static_cast<std::size_t>(grid.size()));
        for (Eigen::Index i = 0; i < grid.size(); ++i) {
            fits.push_back(fit(grid(i), tol, max_sweeps, &warm));
        }
        return fits;
    }

    // Linear predictor on new rows, accumulated in canonical column order so
    // predictions inherit the solver's permutation equivariance bit-exactly.
    VectorXd predict_linear(const LassoFit& f, const MatrixXd& rows) const {
        VectorXd eta = VectorXd::Constant(rows.rows(), f.intercept);
        for (Eigen::Index j : order_) {
            if (f.coefficients(j) != 0.0) {
                eta.noalias() += rows.col(j) * f.coefficients(j);
            }
        }
        return eta;
    }

    static double default_tol(Family family) {
        return family == Family::gaussian ? 1e-7 : 1e-6;
    }

private:
    void build_canonical_order(const MatrixXd& design) {
        std::vector<std::uint64_t> hashes(static_cast<std::size_t>(m_));
        for (Eigen::Index j = 0; j < m_; ++j) {
            hashes[static_cast<std::size_t>(j)] = detail::column_content_hash(design.col(j).data(), n_);
        }
        order_.resize(static_cast<std::size_t>(m_));
        std::iota(order_.begin(), order_.end(), 0);
        const Eigen::Index rows = n_;
        auto content_cmp = [&](Eigen::Index a, Eigen::Index b) {
            return std::memcmp(design.col(a).data(), design.col(b).data(),
                               static_cast<std::size_t>(rows) * sizeof(double));
        };
        std::sort(order_.begin(), order_.end(), [&](Eigen::Index a, Eigen::Index b) {
            const auto ha = hashes[static_cast<std::size_t>(a)];
            const auto hb = hashes[static_cast<std::size_t>(b)];
            if (ha != hb) return ha < hb;
            const int cmp = content_cmp(a, b);
            if (cmp != 0) return cmp < 0;
            return a < b; // identical content: order is immaterial after averaging
        });

        // Duplicate groups are contiguous runs of identical content.
        duplicate_groups_.clear();
        std::size_t start = 0;
        while (start < order_.size()) {
            std::size_t end = start + 1;
            while (end < order_.size() &&
                   hashes[static_cast<std::size_t>(order_[end])] ==
                       hashes[static_cast<std::size_t>(order_[start])] &&
                   content_cmp(order_[end], order_[start]) == 0) {
                ++end;
            }
            if (end - start > 1) {
                duplicate_groups_.emplace_back(order_.begin() + static_cast<std::ptrdiff_t>(start),
                                               order_.begin() + static_cast<std::ptrdiff_t>(end));
            }
            start = end;
        }
    }

    // Sum of standardized columns weighted by beta, accumulated in canonical
    // order: column permutations must permute the arithmetic exactly.
    VectorXd ordered_predictor(const VectorXd& beta) const {
        VectorXd eta = VectorXd::Zero(n_);
        for (Eigen::Index j : order_) {
            if (beta(j) != 0.0) {
                eta.noalias() += z_.col(j) * beta(j);
            }
        }
        return eta;
    }

    bool solve_gaussian(double lambda, double tol, int max_sweeps, VectorXd& beta,
                        double& kkt_out) const {
        const double n_inv = 1.0 / static_cast<double>(n_);
        const double y_mean = y_.mean();
        VectorXd residual = y_.array() - y_mean;
        residual.noalias() -= ordered_predictor(beta);

        std::vector<std::uint8_t> in_active(static_cast<std::size_t>(m_), 0);
        std::vector<Eigen::Index> active;
        for (Eigen::Index j : order_) {
            if (beta(j) != 0.0) {
                active.push_back(j);
                in_active[static_cast<std::size_t>(j)] = 1;
            }
        }

        auto update = [&](Eigen::Index j) {
            if (!usable_[static_cast<std::size_t>(j)]) return 0.0;
            const double old = beta(j);
            const double grad = z_.col(j).dot(residual) * n_inv + old;
            const double next = detail::soft_threshold(grad, lambda);
            if (next != old) {
                residual.noalias() += z_.col(j) * (old - next);
                beta(j) = next;
            }
            return std::abs(next - old);
        };

        int sweeps = 0;
        bool converged = false;
        while (sweeps < max_sweeps) {
            // Inner sweeps on the current active set.
            for (;;) {
                if (sweeps >= max_sweeps) break;
                ++sweeps;
                double max_delta = 0.0;
                for (Eigen::Index j : active) {
                    max_delta = std::max(max_delta, update(j));
                }
                if (max_delta <= 0.1 * tol) break;
            }
            if (sweeps >= max_sweeps) break;
            // Full sweep: picks up KKT violators and refreshes the active set.
            ++sweeps;
            bool changed = false;
            for (Eigen::Index j : order_) {
                const double delta = update(j);
                if (beta(j) != 0.0 && !in_active[static_cast<std::size_t>(j)]) {
                    in_active[static_cast<std::size_t>(j)] = 1;
                    active.push_back(j);
                    changed = true;
                }
                if (delta > 0.1 * tol) changed = true;
            }
            kkt_out = gaussian_kkt(lambda, beta, residual);
            if (kkt_out <= tol) {
                converged = true;
                break;
            }
            if (!changed) {
                break; // fixed point reached but KKT above tol: report honestly
            }
        }
        if (!converged) {
            kkt_out = gaussian_kkt(lambda, beta, residual);
            converged = kkt_out <= tol;
        }
        return converged;
    }

    double gaussian_kkt(double lambda, const VectorXd& beta, const VectorXd& residual) const {
        const double n_inv = 1.0 / static_cast<double>(n_);
        double worst = 0.0;
        for (Eigen::Index j : order_) {
            if (!usable_[static_cast<std::size_t>(j)]) continue;
            const double grad = z_.col(j).dot(residual) * n_inv;
            if (beta(j) == 0.0) {
                worst = std::max(worst, std::abs(grad) - lambda);
            } else {
                worst = std::max(worst, std::abs(grad - lambda * (beta(j) > 0 ? 1.0 : -1.0)));
            }
        }
        return std::max(worst, 0.0);
    }

    bool solve_logistic(double lambda, double tol, int max_sweeps, VectorXd& beta,
                        double& intercept_std, double& kkt_out) const {
        const double n_inv = 1.0 / static_cast<double>(n_);
        VectorXd eta = ordered_predictor(beta);
        eta.array() += intercept_std;

        VectorXd prob(n_), weight(n_), working_res(n_);
        int sweeps = 0;
        bool converged = false;

        for (int irls = 0; irls < 100 && sweeps < max_sweeps; ++irls) {
            for (Eigen::Index i = 0; i < n_; ++i) {
                const double p = 1.0 / (1.0 + std::exp(-eta(i)));
                prob(i) = std::clamp(p, 1e-9, 1.0 - 1e-9);
                weight(i) = std::max(prob(i) * (1.0 - prob(i)), 1e-5);
            }
            // Quadratic approximation around the current eta.
            working_res = (y_ - prob).cwiseQuotient(weight); // residual of working response
            VectorXd denom(m_);
            for (Eigen::Index j = 0; j < m_; ++j) {
                denom(j) = usable_[static_cast<std::size_t>(j)]
                               ? z_.col(j).cwiseProduct(weight).dot(z_.col(j)) * n_inv
                               : 1.0;
            }
            const double weight_sum = weight.sum();

            auto update = [&](Eigen::Index j) {
                if (!usable_[static_cast<std::size_t>(j)]) return 0.0;
                const double old = beta(j);
                const double grad =
                    z_.col(j).cwiseProduct(weight).dot(working_res) * n_inv + denom(j) * old;
                const double next = detail::soft_threshold(grad, lambda) / denom(j);
                if (next != old) {
                    working_res.noalias() += z_.col(j) * (old - next);
                    beta(j) = next;
                }
                return std::abs(next - old) * std::sqrt(denom(j));
            };
            auto update_intercept = [&]() {
                const double shift = weight.cwiseProduct(working_res).sum() / weight_sum;
                intercept_std += shift;
                working_res.array() -= shift;
            };

            double inner_delta = 0.0;
            for (int inner = 0; inner < 50 && sweeps < max_sweeps; ++inner) {
                ++sweeps;
                inner_delta = 0.0;
                update_intercept();
                for (Eigen::Index j : order_) {
                    inner_delta = std::max(inner_delta, update(j));
                }
                if (inner_delta <= 0.1 * tol) break;
            }

            VectorXd new_eta = ordered_predictor(beta);
            new_eta.array() += intercept_std;
            const double eta_shift = (new_eta - eta).cwiseAbs().maxCoeff();
            eta = new_eta;
            if (eta_shift <= 1e-9) {
                break;
            }
        }

        kkt_out = logistic_kkt(lambda, beta, eta);
        converged = kkt_out <= tol;
        return converged;
    }

    double logistic_kkt(double lambda, const VectorXd& beta, const VectorXd& eta) const {
        const double n_inv = 1.0 / static_cast<double>(n_);
        VectorXd prob(n_);
        for (Eigen::Index i = 0; i < n_; ++i) {
            prob(i) = 1.0 / (1.0 + std::exp(-eta(i)));
        }
        const VectorXd grad_vec = prob - y_;
        double worst = std::abs(grad_vec.sum() * n_inv); // unpenalized intercept
        for (Eigen::Index j : order_) {
            if (!usable_[static_cast<std::size_t>(j)]) continue;
            const double grad = z_.col(j).dot(grad_vec) * n_inv;
            if (beta(j) == 0.0) {
                worst = std::max(worst, std::abs(grad) - lambda);
            } else {
                worst = std::max(worst, std::abs(grad + lambda * (beta(j) > 0 ? 1.0 : -1.0)));
            }
        }
        return std::max(worst, 0.0);
    }

    // Canonical tie rule: coefficients of exactly duplicated columns are
    // averaged; the linear predictor and the penalty are unchanged.
    void average_duplicates(VectorXd& beta) const {
        for (const auto& group : duplicate_groups_) {
            double total = 0.0;
            for (Eigen::Index j : group) total += beta(j);
            const double share = total / static_cast<double>(group.size());
            for (Eigen::Index j : group) beta(j) = share;
        }
    }

    LassoFit to_original_scale(const VectorXd& beta, double intercept_std, double lambda,
                               bool converged, double kkt) const {
        LassoFit fit;
        fit.lambda = lambda;
        fit.family = family_;
        fit.converged = converged;
        fit.tol_reached = kkt;
        fit.coefficients = beta.cwiseQuotient(scale_);
        double center_shift = 0.0;
        for (Eigen::Index j : order_) {
            center_shift += fit.coefficients(j) * center_(j);
        }
        const double base = (family_ == Family::gaussian) ? y_.mean() : intercept_std;
        fit.intercept = base - center_shift;
        return fit;
    }

    Family family_;
    Eigen::Index n_, m_;
    VectorXd y_;
    MatrixXd z_;
    VectorXd center_, scale_;
    std::vector<std::uint8_t> usable_;
    std::vector<Eigen::Index> order_;
    std::vector<std::vector<Eigen::Index>> duplicate_groups_;
};

inline LassoFit lasso_fit(const MatrixXd& design, const VectorXd& y, double lambda,
                          Family family, double tol = 0.0, int max_sweeps = 5000) {
    if (tol <= 0.0) tol = LassoSolver::default_tol(family);
    LassoSolver solver(design, y, family);
    return solver.fit(lambda, tol, max_sweeps);
}

// K-fold cross-validation over a geometric grid (4 decades below lambda_max).
// Fold assignment depends only on (n, seed): the selected lambda is invariant
// under any permutation of the design columns.
inline CvResult cv_lambda(const MatrixXd& design, const VectorXd& y, Family family,
                          int folds = 10, Eigen::Index grid_size = 100,
                          std::uint64_t seed = 0, double tol = 0.0, int max_sweeps = 5000) {
    if (folds < 2) {
        throw validation_error("cv_lambda: need at least 2 folds");
    }
    const Eigen::Index n = design.rows();
    if (folds > n) {
        throw validation_error("cv_lambda: more folds than observations");
    }
    if (tol <= 0.0) tol = LassoSolver::default_tol(family);

    LassoSolver full(design, y, family);
    const VectorXd grid = full.lambda_grid(grid_size);

    // Seeded shuffle of row indices; round-robin fold labels.
    std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
    std::iota(rows.begin(), rows.end(), 0);
    Rng rng = Rng::stream(seed, {0x6376ULL});
    for (std::size_t i = rows.size(); i > 1; --i) {
        const std::size_t k = static_cast<std::size_t>(rng.uniform_index(i));
        std::swap(rows[i - 1], rows[k]);
    }
    std::vector<int> fold_of(static_cast<std::size_t>(n));
    for (std::size_t pos = 0; pos < rows.size(); ++pos) {
        fold_of[static_cast<std::size_t>(rows[pos])] = static_cast<int>(pos % static_cast<std::size_t>(folds));
    }

    MatrixXd fold_err(folds, grid.size());
    parallel_for(static_cast<std::size_t>(folds), [&](std::size_t f) {
        std::vector<Eigen::Index> train, test;
        for (Eigen::Index i = 0; i < n; ++i) {
            (fold_of[static_cast<std::size_t>(i)] == static_cast<int>(f) ? test : train).push_back(i);
        }
        MatrixXd x_tr(train.size(), design.cols());
        VectorXd y_tr(train.size());
        for (std::size_t r = 0; r < train.size(); ++r) {
            x_tr.row(static_cast<Eigen::Index>(r)) = design.row(train[r]);
            y_tr(static_cast<Eigen::Index>(r)) = y(train[r]);
        }
        MatrixXd x_te(test.size(), design.cols());
        VectorXd y_te(test.size());
        for (std::size_t r = 0; r < test.size(); ++r) {
            x_te.row(static_cast<Eigen::Index>(r)) = design.row(test[r]);
            y_te(static_cast<Eigen::Index>(r)) = y(test[r]);
        }
        LassoSolver solver(x_tr, y_tr, family);
        VectorXd warm = VectorXd::Zero(design.cols());
        for (Eigen::Index g = 0; g < grid.size(); ++g) {
            const LassoFit fit = solver.fit(grid(g), tol, max_sweeps, &warm);
            const VectorXd eta = solver.predict_linear(fit, x_te);
            double err = 0.0;
            for (Eigen::Index t = 0; t < y_te.size(); ++t) {
                if (family == Family::gaussian) {
                    const double diff = y_te(t) - eta(t);
                    err += diff * diff;
                } else {
                    const double p = std::clamp(1.0 / (1.0 + std::exp(-eta(t))), 1e-12, 1.0 - 1e-12);
                    err += -2.0 * (y_te(t) * std::log(p) + (1.0 - y_te(t)) * std::log(1.0 - p));
                }
            }
            fold_err(static_cast<Eigen::Index>(f), g) = err / static_cast<double>(y_te.size());
        }
    });

    CvResult result;
    result.lambda_grid = grid;
    result.cv_mean = fold_err.colwise().mean();
    result.cv_se.resize(grid.size());
    for (Eigen::Index g = 0; g < grid.size(); ++g) {
        const double mean = result.cv_mean(g);
        const double var =
            (fold_err.col(g).array() - mean).square().sum() / static_cast<double>(folds - 1);
        result.cv_se(g) = std::sqrt(var / static_cast<double>(folds));
    }
    // Largest lambda attaining the minimum (grid is descending).
    Eigen::Index best = 0;
    for (Eigen::Index g = 1; g < grid.size(); ++g) {
        if (result.cv_mean(g) < result.cv_mean(best)) {
            best = g;
        }
    }
    result.lambda_min_index = best;
    result.lambda_min = grid(best);
    return result;
}

// First grid lambda (largest penalty) at which each column enters the model;
// zero for columns that never enter.
inline VectorXd entry_lambdas(const MatrixXd& design, const VectorXd& y, Family family,
                              Eigen::Index grid_size = 200, double tol = 0.0,
                              int max_sweeps = 5000) {
    if (tol <= 0.0) tol = LassoSolver::default_tol(family);
    LassoSolver solver(design, y, family);
    const VectorXd grid = solver.lambda_grid(grid_size);
    VectorXd entry = VectorXd::Zero(design.cols());
    VectorXd warm = VectorXd::Zero(design.cols());
    for (Eigen::Index g = 0; g < grid.size(); ++g) {
        const LassoFit fit = solver.fit(grid(g), tol, max_sweeps, &warm);
        for (Eigen::Index j = 0; j < design.cols(); ++j) {
            if (entry(j) == 0.0 && fit.coefficients(j) != 0.0) {
                entry(j) = grid(g);
            }
        }
    }
    return entry;
}

} // namespace knockoff
