#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "knockoffs/covariate_model.hpp"
#include "knockoffs/errors.hpp"
#include "knockoffs/numerics.hpp"
#include "knockoffs/rng.hpp"
#include "knockoffs/s_solver.hpp"

namespace knockoff {

struct Provenance {
    std::string generator;
    std::uint64_t seed = 0;
    std::string detail;
};

// Paired original/knockoff design plus response.  Rows flagged in copy_mask
// carry bit-exact copies (x_tilde row == x row).
struct KnockoffDataset {
    MatrixXd x;
    MatrixXd x_tilde;
    VectorXd y; // may be empty until a response is attached
    std::vector<std::uint8_t> copy_mask;
    Provenance provenance;

    Eigen::Index n() const { return x.rows(); }
    Eigen::Index p() const { return x.cols(); }

    void validate() const {
        if (x.rows() != x_tilde.rows() || x.cols() != x_tilde.cols()) {
            throw validation_error("KnockoffDataset: x and x_tilde dimensions differ");
        }
        if (y.size() != 0 && y.size() != x.rows()) {
            throw validation_error("KnockoffDataset: response length mismatch");
        }
        if (!copy_mask.empty() && copy_mask.size() != static_cast<std::size_t>(x.rows())) {
            throw validation_error("KnockoffDataset: copy_mask length mismatch");
        }
        require_finite(x, "KnockoffDataset.x");
        require_finite(x_tilde, "KnockoffDataset.x_tilde");
        for (std::size_t i = 0; i < copy_mask.size(); ++i) {
            if (copy_mask[i] &&
                x.row(static_cast<Eigen::Index>(i)) != x_tilde.row(static_cast<Eigen::Index>(i))) {
                throw validation_error("KnockoffDataset: masked row " + std::to_string(i) +
                                       " is not an exact copy");
            }
        }
    }

    // Design [X, Xk] with the columns in S exchanged between the halves.
    MatrixXd augmented(const std::vector<Eigen::Index>& swap_set = {}) const {
        MatrixXd design(n(), 2 * p());
        design.leftCols(p()) = x;
        design.rightCols(p()) = x_tilde;
        for (Eigen::Index j : swap_set) {
            if (j < 0 || j >= p()) {
                throw validation_error("KnockoffDataset: swap index out of range");
            }
            design.col(j).swap(design.col(j + p()));
        }
        return design;
    }
};

// ---------------------------------------------------------------------------
// Gaussian knockoffs (exact construction for X ~ N(mean, Sigma))
// ---------------------------------------------------------------------------

// Precomputes the row-independent pieces of the conditional law
//   Xk | X = x  ~  N(x - (x - mean) * Sigma^{-1} diag(s),
//                    2 diag(s) - diag(s) Sigma^{-1} diag(s)),
// so repeated generation against the same model costs one factorization.
class GaussianKnockoffSampler {
public:
    GaussianKnockoffSampler(GaussianModel model, SVector s)
        : model_(std::move(model)), s_(std::move(s)) {
        const Eigen::Index p = model_.dim();
        if (s_.s.size() != p) {
            throw validation_error("gaussian_knockoffs: s has wrong length");
        }
        if ((s_.s.array() < -1e-12).any()) {
            throw validation_error("gaussian_knockoffs: s must be nonnegative");
        }
        MatrixXd slack = 2.0 * model_.sigma;
        slack.diagonal() -= s_.s;
        if (min_eigenvalue(slack) < -psd_zero_tolerance(model_.sigma)) {
            throw validation_error("gaussian_knockoffs: s is infeasible (2*Sigma - diag(s) not PSD)");
        }

        degenerate_ = (s_.s.array() == 0.0).all();
        if (degenerate_) {
            // s = 0 makes knockoffs exact replicas; no factorization needed,
            // which also covers singular sigma (the empirical-covariance case).
            shift_ = MatrixXd::Zero(p, p);
            factor_ = MatrixXd::Zero(p, p);
            return;
        }

        // Sigma^{-1} diag(s) via one Cholesky solve, shared across rows.
        MatrixXd s_cols = MatrixXd::Zero(p, p);
        s_cols.diagonal() = s_.s;
        shift_ = sym_solve(model_.sigma, s_cols, 100.0 * psd_zero_tolerance(model_.sigma));
        MatrixXd cond_cov = 2.0 * s_cols - s_cols * shift_;
        cond_cov = ((cond_cov + cond_cov.transpose()) * 0.5).eval();
        factor_ = sampling_factor(cond_cov);
    }

    const GaussianModel& model() const { return model_; }
    const SVector& s() const { return s_; }

    KnockoffDataset sample(const MatrixXd& x, std::uint64_t seed,
                           const std::vector<std::uint8_t>& copy_mask = {}) const {
        const Eigen::Index p = model_.dim();
        if (x.cols() != p) {
            throw validation_error("gaussian_knockoffs: x has wrong number of columns");
        }
        if (!copy_mask.empty() && copy_mask.size() != static_cast<std::size_t>(x.rows())) {
            throw validation_error("gaussian_knockoffs: copy_mask length mismatch");
        }
        require_finite(x, "gaussian_knockoffs.x");

        KnockoffDataset out;
        out.x = x;
        out.x_tilde.resize(x.rows(), p);
        out.copy_mask = copy_mask;
        out.provenance = {"gaussian", seed, std::string("s_method=") + to_string(s_.method)};

        VectorXd z(p);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const bool copy_row = !copy_mask.empty() && copy_mask[static_cast<std::size_t>(i)];
            if (copy_row || degenerate_) {
                // Copies never consume randomness, so masking rows in or out
                // leaves every other row's draw unchanged.
                out.x_tilde.row(i) = x.row(i);
                continue;
            }
            const VectorXd centered = x.row(i).transpose() - model_.mean;
            const VectorXd mu = x.row(i).transpose() - shift_.transpose() * centered;
            Rng rng = Rng::stream(seed, {0x676b6eULL, static_cast<std::uint64_t>(i)});
            for (Eigen::Index j = 0; j < p; ++j) {
                z(j) = rng.normal();
            }
            out.x_tilde.row(i) = (mu + factor_ * z).transpose();
        }
        out.validate();
        return out;
    }

private:
    GaussianModel model_;
    SVector s_;
    MatrixXd shift_;  // Sigma^{-1} diag(s)
    MatrixXd factor_; // factor of the conditional covariance
    bool degenerate_ = false;
};

inline KnockoffDataset gaussian_knockoffs(const MatrixXd& x, const GaussianModel& model,
                                          const SVector& s, std::uint64_t seed,
                                          const std::vector<std::uint8_t>& copy_mask = {}) {
    return GaussianKnockoffSampler(model, s).sample(x, seed, copy_mask);
}

// Solves for s on the correlation scale and maps it back to the model scale,
// recording the standardization explicitly.
inline SVector solve_s_for_model(const GaussianModel& model, SMethod method,
                                 Eigen::Index asdp_block_size = 0, double tol = 1e-6) {
    const Standardizer std_rec = Standardizer::from_model(model);
    const MatrixXd corr = std_rec.standardized_sigma(model.sigma);
    SVector on_corr;
    switch (method) {
        case SMethod::EQ:
            on_corr = solve_equi(corr);
            break;
        case SMethod::SDP:
            on_corr = solve_sdp(corr, tol);
            break;
        case SMethod::ASDP: {
            auto blocks = (asdp_block_size > 0)
                              ? make_correlation_blocks(corr, asdp_block_size)
                              : singleton_partition(corr.rows());
            on_corr = solve_asdp(corr, blocks, tol);
            break;
        }
    }
    SVector scaled = on_corr;
    scaled.s = on_corr.s.cwiseProduct(model.sigma.diagonal());
    scaled.feasibility_margin = on_corr.feasibility_margin;
    return scaled;
}

// ---------------------------------------------------------------------------
// Exact copies (identity knockoffs for designated rows)
// ---------------------------------------------------------------------------

inline MatrixXd exact_copy_knockoffs(const MatrixXd& rows) {
    return rows;
}

// ---------------------------------------------------------------------------
// Sequential conditional independent pairs for discrete Markov chains
// ---------------------------------------------------------------------------

namespace detail {

// Joint PMF of (X_{1:p}, Xk_{1:level}) under the sequential construction,
// evaluated by the product-form recursion
//   L_l(x, t_{1:l}) = L_{l-1}(x, .) * L_{l-1}(x[l <- t_l], .) /
//                     sum_u L_{l-1}(x[l <- u], .).
// Exponential in p, which is fine for the enumerable chains this sampler
// supports; a per-call memo keeps repeated subcalls cheap.
class ScipPmf {
public:
    explicit ScipPmf(const DiscreteMarkovModel& model) : model_(model) {}

    double joint(std::vector<int>& x, const std::vector<int>& knockoffs, int level) {
        if (level == 0) {
            return model_.pmf(x);
        }
        const auto key = encode(x, knockoffs, level);
        if (const auto it = memo_.find(key); it != memo_.end()) {
            return it->second;
        }
        const int coord = level - 1;
        const int saved = x[coord];

        double numerator = joint(x, knockoffs, level - 1);
        x[coord] = knockoffs[coord];
        numerator *= joint(x, knockoffs, level - 1);

        double denom = 0.0;
        for (int u = 0; u < model_.state_counts[coord]; ++u) {
            x[coord] = u;
            denom += joint(x, knockoffs, level - 1);
        }
        x[coord] = saved;

        const double value = denom > 0.0 ? numerator / denom : 0.0;
        memo_.emplace(key, value);
        return value;
    }

    // Normalized conditional of Xk_{level+1} given x and the knockoff prefix.
    VectorXd conditional(std::vector<int>& x, const std::vector<int>& prefix) {
        const int coord = static_cast<int>(prefix.size());
        const int states = model_.state_counts[coord];
        const int saved = x[coord];
        VectorXd weights(states);
        for (int u = 0; u < states; ++u) {
            x[coord] = u;
            weights(u) = joint(x, prefix, coord);
        }
        x[coord] = saved;
        const double total = weights.sum();
        if (!(total > 0.0)) {
            throw numeric_error("scip_knockoffs: observed state has zero probability");
        }
        return weights / total;
    }

private:
    // Fixed-width mixed-radix packing (unsampled knockoff slots use the
    // sentinel digit S_j), so keys are injective across levels.
    std::uint64_t encode(const std::vector<int>& x, const std::vector<int>& knockoffs,
                         int level) const {
        std::uint64_t key = 0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            key = key * static_cast<std::uint64_t>(model_.state_counts[j]) +
                  static_cast<std::uint64_t>(x[j]);
        }
        for (std::size_t j = 0; j < x.size(); ++j) {
            const std::uint64_t digit =
                (j < static_cast<std::size_t>(level)) ? static_cast<std::uint64_t>(knockoffs[j])
                                                      : static_cast<std::uint64_t>(model_.state_counts[j]);
            key = key * static_cast<std::uint64_t>(model_.state_counts[j] + 1) + digit;
        }
        return key;
    }

    const DiscreteMarkovModel& model_;
    std::unordered_map<std::uint64_t, double> memo_;
};

inline std::vector<int> row_states(const DiscreteMarkovModel& model, const MatrixXd& x,
                                   Eigen::Index i) {
    std::vector<int> states(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double value = x(i, j);
        const int state = static_cast<int>(std::llround(value));
        if (std::abs(value - state) > 1e-9 || state < 0 || state >= model.state_counts[j]) {
            throw validation_error("scip_knockoffs: entry (" + std::to_string(i) + "," +
                                   std::to_string(j) + ") is not a valid state");
        }
        states[static_cast<std::size_t>(j)] = state;
    }
    return states;
}

} // namespace detail

// Normalized law of the next knockoff coordinate given the observed row and
// the knockoffs sampled so far.  Exposed so exactness checks can enumerate
// the full joint distribution of (X, Xk).
inline VectorXd scip_conditional(const DiscreteMarkovModel& model, const std::vector<int>& x,
                                 const std::vector<int>& knockoff_prefix) {
    if (x.size() != static_cast<std::size_t>(model.dim())) {
        throw validation_error("scip_conditional: x has wrong length");
    }
    if (knockoff_prefix.size() >= static_cast<std::size_t>(model.dim())) {
        throw validation_error("scip_conditional: prefix too long");
    }
    std::vector<int> mutable_x = x;
    detail::ScipPmf pmf(model);
    return pmf.conditional(mutable_x, knockoff_prefix);
}

// Sequential sampler: for j = 1..p draw Xk_j from L(X_j | X_{-j}, Xk_{1:j-1}),
// independently per row.
inline KnockoffDataset scip_knockoffs(const MatrixXd& x, const DiscreteMarkovModel& model,
                                      std::uint64_t seed) {
    if (x.cols() != model.dim()) {
        throw validation_error("scip_knockoffs: x has wrong number of columns");
    }
    KnockoffDataset out;
    out.x = x;
    out.x_tilde.resize(x.rows(), x.cols());
    out.provenance = {"scip", seed, "markov_chain"};

    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        std::vector<int> row = detail::row_states(model, x, i);
        if (!(model.pmf(row) > 0.0)) {
            throw numeric_error("scip_knockoffs: row " + std::to_string(i) +
                                " has zero probability under the model");
        }
        detail::ScipPmf pmf(model);
        std::vector<int> knockoffs;
        knockoffs.reserve(row.size());
        Rng rng = Rng::stream(seed, {0x73636970ULL, static_cast<std::uint64_t>(i)});
        for (Eigen::Index j = 0; j < model.dim(); ++j) {
            const VectorXd weights = pmf.conditional(row, knockoffs);
            double u = rng.uniform();
            int drawn = static_cast<int>(weights.size()) - 1;
            for (int state = 0; state < static_cast<int>(weights.size()); ++state) {
                u -= weights(state);
                if (u <= 0.0) {
                    drawn = state;
                    break;
                }
            }
            knockoffs.push_back(drawn);
            out.x_tilde(i, j) = static_cast<double>(drawn);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Second-order pipeline: moment-matching knockoffs from a covariance source
// ---------------------------------------------------------------------------

// Computes s on sigma_source and samples as if X were Gaussian with that
// covariance.  sigma_source must be on the correlation scale.
inline KnockoffDataset second_order_knockoffs(const MatrixXd& x, const MatrixXd& sigma_source,
                                              SMethod s_method, std::uint64_t seed,
                                              Eigen::Index asdp_block_size = 0,
                                              const std::vector<std::uint8_t>& copy_mask = {}) {
    GaussianModel model = GaussianModel::make(VectorXd::Zero(sigma_source.rows()), sigma_source);
    if (!model.standardized) {
        throw validation_error("second_order_knockoffs: sigma_source must have unit diagonal");
    }
    const SVector s = solve_s_for_model(model, s_method, asdp_block_size);
    KnockoffDataset out = gaussian_knockoffs(x, model, s, seed, copy_mask);
    out.provenance.generator = "second_order";
    return out;
}

} // namespace knockoff
