#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "knockoffs/errors.hpp"
#include "knockoffs/numerics.hpp"

namespace knockoff {

// ---------------------------------------------------------------------------
// Gaussian covariate model
// ---------------------------------------------------------------------------

struct GaussianModel {
    VectorXd mean;
    MatrixXd sigma;
    bool standardized = false; // diag(sigma) == 1 within 1e-8

    Eigen::Index dim() const { return mean.size(); }

    static GaussianModel make(VectorXd mean, MatrixXd sigma) {
        require_symmetric(sigma, "GaussianModel.sigma");
        if (mean.size() != sigma.rows()) {
            throw validation_error("GaussianModel: mean/sigma dimension mismatch");
        }
        if (min_eigenvalue(sigma) < -psd_zero_tolerance(sigma)) {
            throw validation_error("GaussianModel: sigma must be PSD");
        }
        GaussianModel model;
        model.mean = std::move(mean);
        model.sigma = std::move(sigma);
        model.standardized =
            (model.sigma.diagonal().array() - 1.0).abs().maxCoeff() <= 1e-8;
        return model;
    }
};

// Exact conditional law of X_j given X_{-j}: mean and variance from the
// regression formulas on the complement block.
struct GaussianConditional {
    Eigen::Index j = 0;
    VectorXd weights;   // Sigma_{-j,-j}^{-1} Sigma_{-j,j}
    double var = 0.0;
    double base_mean = 0.0; // mean_j - weights . mean_{-j}

    // x_minus_j lists the other coordinates in their original order.
    double mean_given(const VectorXd& x_minus_j) const {
        return base_mean + weights.dot(x_minus_j);
    }
};

// Factors the complement block once; Algorithm-style resampling loops query
// the same j many times, so callers cache the returned object.
inline GaussianConditional make_gaussian_conditional(const GaussianModel& model,
                                                     Eigen::Index j) {
    const Eigen::Index p = model.dim();
    if (j < 0 || j >= p) {
        throw validation_error("conditional_gaussian: index out of range");
    }
    GaussianConditional cond;
    cond.j = j;
    if (p == 1) {
        cond.weights = VectorXd();
        cond.var = model.sigma(0, 0);
        cond.base_mean = model.mean(0);
        return cond;
    }

    MatrixXd block(p - 1, p - 1);
    VectorXd cross(p - 1);
    VectorXd mean_rest(p - 1);
    Eigen::Index r = 0;
    for (Eigen::Index a = 0; a < p; ++a) {
        if (a == j) continue;
        cross(r) = model.sigma(a, j);
        mean_rest(r) = model.mean(a);
        Eigen::Index c = 0;
        for (Eigen::Index b = 0; b < p; ++b) {
            if (b == j) continue;
            block(r, c) = model.sigma(a, b);
            ++c;
        }
        ++r;
    }

    MatrixXd solved;
    try {
        solved = sym_solve(block, cross, 1e-10);
    } catch (const numeric_error&) {
        throw numeric_error("conditional_gaussian: complement block is singular");
    }
    cond.weights = solved.col(0);
    cond.var = model.sigma(j, j) - cross.dot(cond.weights);
    if (cond.var < 0.0) {
        cond.var = 0.0; // round-off on degenerate (perfectly predictable) coordinates
    }
    cond.base_mean = model.mean(j) - cond.weights.dot(mean_rest);
    return cond;
}

inline std::pair<double, double> conditional_gaussian(const GaussianModel& model,
                                                      Eigen::Index j,
                                                      const VectorXd& x_minus_j) {
    const GaussianConditional cond = make_gaussian_conditional(model, j);
    if (x_minus_j.size() != model.dim() - 1) {
        throw validation_error("conditional_gaussian: x_minus_j has wrong length");
    }
    return {cond.mean_given(x_minus_j), cond.var};
}

// ---------------------------------------------------------------------------
// Discrete Markov chain model
// ---------------------------------------------------------------------------

// Coordinate chain X_1 -> X_2 -> ... -> X_p with finite state spaces.  The
// chain structure keeps every conditional needed by the sequential knockoff
// sampler exactly enumerable.
struct DiscreteMarkovModel {
    std::vector<int> state_counts;          // per coordinate
    VectorXd initial;                       // distribution of X_1
    std::vector<MatrixXd> transitions;      // transitions[j]: states_j x states_{j+1}

    Eigen::Index dim() const { return static_cast<Eigen::Index>(state_counts.size()); }

    static DiscreteMarkovModel make(std::vector<int> state_counts, VectorXd initial,
                                    std::vector<MatrixXd> transitions) {
        const std::size_t p = state_counts.size();
        if (p == 0) {
            throw validation_error("DiscreteMarkovModel: empty chain");
        }
        for (int s : state_counts) {
            if (s < 1) throw validation_error("DiscreteMarkovModel: state counts must be >= 1");
        }
        if (initial.size() != state_counts[0]) {
            throw validation_error("DiscreteMarkovModel: initial distribution has wrong length");
        }
        if (transitions.size() != p - 1) {
            throw validation_error("DiscreteMarkovModel: need p-1 transition matrices");
        }
        auto check_row = [](const VectorXd& row, const std::string& what) {
            if ((row.array() < 0.0).any()) {
                throw validation_error(what + ": probabilities must be >= 0");
            }
            if (std::abs(row.sum() - 1.0) > 1e-12) {
                throw validation_error(what + ": probabilities must sum to 1");
            }
        };
        check_row(initial, "DiscreteMarkovModel.initial");
        for (std::size_t j = 0; j + 1 < p; ++j) {
            const MatrixXd& t = transitions[j];
            if (t.rows() != state_counts[j] || t.cols() != state_counts[j + 1]) {
                throw validation_error("DiscreteMarkovModel: transition " + std::to_string(j) +
                                       " has wrong shape");
            }
            for (Eigen::Index r = 0; r < t.rows(); ++r) {
                check_row(t.row(r).transpose(), "DiscreteMarkovModel.transition row");
            }
        }
        DiscreteMarkovModel model;
        model.state_counts = std::move(state_counts);
        model.initial = std::move(initial);
        model.transitions = std::move(transitions);
        return model;
    }

    // Joint PMF of the chain at a full assignment.
    double pmf(const std::vector<int>& x) const {
        double prob = initial(x[0]);
        for (std::size_t j = 1; j < x.size(); ++j) {
            prob *= transitions[j - 1](x[j - 1], x[j]);
        }
        return prob;
    }

    // Marginal distribution of coordinate j by forward propagation.
    VectorXd marginal(Eigen::Index j) const {
        VectorXd dist = initial;
        for (Eigen::Index step = 0; step < j; ++step) {
            dist = transitions[step].transpose() * dist;
        }
        return dist;
    }

    // Conditional PMF of X_j given the neighboring values (chain Markov
    // property: only x_{j-1} and x_{j+1} matter).
    VectorXd conditional(Eigen::Index j, const std::vector<int>& x) const {
        const int states = state_counts[j];
        VectorXd weights(states);
        for (int u = 0; u < states; ++u) {
            double w = (j == 0) ? initial(u) : transitions[j - 1](x[j - 1], u);
            if (j + 1 < dim()) {
                w *= transitions[j](u, x[j + 1]);
            }
            weights(u) = w;
        }
        const double total = weights.sum();
        if (total <= 0.0) {
            throw numeric_error("DiscreteMarkovModel: observed state has zero probability");
        }
        return weights / total;
    }
};

using CovariateModel = std::variant<GaussianModel, DiscreteMarkovModel>;

// ---------------------------------------------------------------------------
// Covariance utilities
// ---------------------------------------------------------------------------

// Maximum-likelihood covariance (divide by n) of column-centered data.
inline MatrixXd empirical_covariance(const MatrixXd& data) {
    if (data.rows() < 1) {
        throw validation_error("empirical_covariance: need at least one row");
    }
    const double n = static_cast<double>(data.rows());
    MatrixXd centered = data.rowwise() - data.colwise().mean();
    MatrixXd cov = (centered.transpose() * centered) / n;
    cov = ((cov + cov.transpose()) * 0.5).eval(); // kill round-off asymmetry
    return cov;
}

struct MixedCovariance {
    double alpha = 0.0;
    MatrixXd sigma_true;
    MatrixXd sigma_hat;
};

// (1 - alpha) * Sigma + alpha * Sigma_hat.
inline MatrixXd mix_covariance(const MixedCovariance& mix) {
    if (!(mix.alpha >= 0.0 && mix.alpha <= 1.0)) {
        throw validation_error("mix_covariance: alpha must lie in [0, 1]");
    }
    require_symmetric(mix.sigma_true, "mix_covariance.sigma_true");
    require_symmetric(mix.sigma_hat, "mix_covariance.sigma_hat");
    if (mix.sigma_true.rows() != mix.sigma_hat.rows()) {
        throw validation_error("mix_covariance: dimension mismatch");
    }
    if (mix.alpha == 0.0) return mix.sigma_true;
    if (mix.alpha == 1.0) return mix.sigma_hat;
    return (1.0 - mix.alpha) * mix.sigma_true + mix.alpha * mix.sigma_hat;
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

// Column standardization is always an explicit, recorded transformation.
struct Standardizer {
    VectorXd shift;
    VectorXd scale; // standard deviations; zero-variance columns keep scale 1

    static Standardizer from_data(const MatrixXd& x) {
        Standardizer s;
        const double n = static_cast<double>(x.rows());
        s.shift = x.colwise().mean();
        s.scale.resize(x.cols());
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            const double var = (x.col(j).array() - s.shift(j)).square().sum() / n;
            s.scale(j) = var > 0.0 ? std::sqrt(var) : 1.0;
        }
        return s;
    }

    static Standardizer from_model(const GaussianModel& model) {
        Standardizer s;
        s.shift = model.mean;
        s.scale = model.sigma.diagonal().cwiseMax(0.0).cwiseSqrt();
        for (Eigen::Index j = 0; j < s.scale.size(); ++j) {
            if (s.scale(j) == 0.0) s.scale(j) = 1.0;
        }
        return s;
    }

    MatrixXd apply(const MatrixXd& x) const {
        MatrixXd z = x.rowwise() - shift.transpose();
        z.array().rowwise() /= scale.transpose().array();
        return z;
    }

    MatrixXd invert(const MatrixXd& z) const {
        MatrixXd x = z;
        x.array().rowwise() *= scale.transpose().array();
        x.rowwise() += shift.transpose();
        return x;
    }

    // Correlation-scale covariance of the standardized coordinates.
    MatrixXd standardized_sigma(const MatrixXd& sigma) const {
        return scale.cwiseInverse().asDiagonal() * sigma * scale.cwiseInverse().asDiagonal();
    }
};

} // namespace knockoff
