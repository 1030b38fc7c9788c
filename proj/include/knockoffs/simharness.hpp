#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "knockoffs/covariate_model.hpp"
#include "knockoffs/errors.hpp"
#include "knockoffs/filter.hpp"
#include "knockoffs/knockoff_gen.hpp"
#include "knockoffs/parallel.hpp"
#include "knockoffs/rng.hpp"
#include "knockoffs/statistics.hpp"

namespace knockoff {

// ---------------------------------------------------------------------------
// Scenario configuration
// ---------------------------------------------------------------------------

enum class DesignKind { iid_gaussian, ar1 };
enum class ResponseKind { gaussian_linear, binomial_logit };

struct ScenarioConfig {
    Eigen::Index n = 600;
    Eigen::Index p = 200;
    DesignKind design = DesignKind::iid_gaussian;
    double rho = 0.0; // AR(1) autocorrelation
    ResponseKind response = ResponseKind::gaussian_linear;
    Eigen::Index k_nonzero = 20;
    double amplitude = 3.5;
    double noise_sd = 1.0;                        // gaussian_linear only
    std::vector<Eigen::Index> nonzero_locations;  // empty -> uniform at random
    double q = 0.1;
    int reps = 100;
    std::uint64_t seed = 0;
    double column_variance = 0.0; // <= 0 -> 1/n

    double scale() const {
        return column_variance > 0.0 ? column_variance : 1.0 / static_cast<double>(n);
    }

    void validate() const {
        if (n < 2 || p < 1) throw validation_error("scenario: need n >= 2, p >= 1");
        if (k_nonzero < 0 || k_nonzero > p) throw validation_error("scenario: k_nonzero must lie in [0, p]");
        if (!(rho > -1.0 && rho < 1.0)) throw validation_error("scenario: rho must lie in (-1, 1)");
        if (!(q > 0.0 && q < 1.0)) throw validation_error("scenario: q must lie in (0, 1)");
        if (reps < 1) throw validation_error("scenario: reps must be >= 1");
        if (!nonzero_locations.empty() &&
            static_cast<Eigen::Index>(nonzero_locations.size()) != k_nonzero) {
            throw validation_error("scenario: nonzero_locations length must equal k_nonzero");
        }
        for (Eigen::Index j : nonzero_locations) {
            if (j < 0 || j >= p) throw validation_error("scenario: nonzero location out of range");
        }
    }
};

// ---------------------------------------------------------------------------
// Design and response generation
// ---------------------------------------------------------------------------

inline MatrixXd toeplitz_correlation(Eigen::Index p, double rho) {
    MatrixXd r(p, p);
    for (Eigen::Index i = 0; i < p; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) {
            r(i, j) = std::pow(rho, std::abs(static_cast<double>(i - j)));
        }
    }
    return r;
}

struct GeneratedDesign {
    MatrixXd x;          // model scale (column variance = config.scale())
    GaussianModel model; // the true covariate law
};

// Rows are i.i.d. with AR(1) (or independent) columns; marginal column
// variance defaults to 1/n.  The AR recursion gives the exact Toeplitz law.
inline GeneratedDesign gen_design(const ScenarioConfig& config, std::uint64_t seed) {
    config.validate();
    const Eigen::Index n = config.n, p = config.p;
    const double sd = std::sqrt(config.scale());
    const double rho = (config.design == DesignKind::ar1) ? config.rho : 0.0;
    const double innovation = std::sqrt(1.0 - rho * rho);

    MatrixXd x(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
        Rng rng = Rng::stream(seed, {0x646573ULL, static_cast<std::uint64_t>(i)});
        double prev = rng.normal();
        x(i, 0) = sd * prev;
        for (Eigen::Index j = 1; j < p; ++j) {
            prev = rho * prev + innovation * rng.normal();
            x(i, j) = sd * prev;
        }
    }

    GeneratedDesign out;
    out.x = std::move(x);
    const MatrixXd sigma =
        (rho == 0.0 ? MatrixXd::Identity(p, p) : toeplitz_correlation(p, rho)) * config.scale();
    out.model = GaussianModel::make(VectorXd::Zero(p), sigma);
    return out;
}

struct GeneratedResponse {
    VectorXd y;
    std::vector<Eigen::Index> support; // sorted
    VectorXd beta;
};

inline GeneratedResponse gen_response(const MatrixXd& x, const ScenarioConfig& config,
                                      std::uint64_t seed) {
    const Eigen::Index p = x.cols();
    GeneratedResponse out;
    out.beta = VectorXd::Zero(p);

    Rng coef_rng = Rng::stream(seed, {0x62657461ULL});
    if (!config.nonzero_locations.empty()) {
        out.support = config.nonzero_locations;
    } else {
        // Partial Fisher-Yates: k distinct positions uniform at random.
        std::vector<Eigen::Index> positions(static_cast<std::size_t>(p));
        std::iota(positions.begin(), positions.end(), 0);
        for (Eigen::Index i = 0; i < config.k_nonzero; ++i) {
            const std::size_t pick =
                static_cast<std::size_t>(i) +
                static_cast<std::size_t>(coef_rng.uniform_index(static_cast<std::uint64_t>(p - i)));
            std::swap(positions[static_cast<std::size_t>(i)], positions[pick]);
        }
        out.support.assign(positions.begin(), positions.begin() + config.k_nonzero);
    }
    std::sort(out.support.begin(), out.support.end());
    for (Eigen::Index j : out.support) {
        out.beta(j) = config.amplitude * (coef_rng.bernoulli(0.5) ? 1.0 : -1.0);
    }

    const VectorXd eta = x * out.beta;
    out.y.resize(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        Rng rng = Rng::stream(seed, {0x726573ULL, static_cast<std::uint64_t>(i)});
        if (config.response == ResponseKind::gaussian_linear) {
            out.y(i) = eta(i) + config.noise_sd * rng.normal();
        } else {
            const double prob = 1.0 / (1.0 + std::exp(-eta(i)));
            out.y(i) = rng.uniform() <= prob ? 1.0 : 0.0;
        }
    }
    return out;
}

// FDP with 0/0 = 0 and power = |selected & support| / |support| (0 if empty).
inline std::pair<double, double> evaluate(const std::vector<Eigen::Index>& selected,
                                          const std::vector<Eigen::Index>& true_support) {
    const std::set<Eigen::Index> support(true_support.begin(), true_support.end());
    Eigen::Index true_positives = 0;
    for (Eigen::Index j : selected) {
        if (support.count(j) > 0) ++true_positives;
    }
    const double fdp =
        selected.empty()
            ? 0.0
            : static_cast<double>(selected.size() - static_cast<std::size_t>(true_positives)) /
                  static_cast<double>(selected.size());
    const double power = support.empty() ? 0.0
                                         : static_cast<double>(true_positives) /
                                               static_cast<double>(support.size());
    return {fdp, power};
}

// ---------------------------------------------------------------------------
// Sweep summaries
// ---------------------------------------------------------------------------

struct RepRecord {
    int rep = 0;
    double fdp = 0.0;
    double power = 0.0;
    double threshold = 0.0;
    std::uint64_t seed = 0;
};

struct SweepSummary {
    std::vector<RepRecord> records;

    double fdr_mean() const { return mean([](const RepRecord& r) { return r.fdp; }); }
    double power_mean() const { return mean([](const RepRecord& r) { return r.power; }); }
    double fdr_se() const { return se([](const RepRecord& r) { return r.fdp; }); }
    double power_se() const { return se([](const RepRecord& r) { return r.power; }); }

    template <typename Fn>
    double mean(Fn&& value) const {
        if (records.empty()) return 0.0;
        double total = 0.0;
        for (const auto& r : records) total += value(r);
        return total / static_cast<double>(records.size());
    }

    template <typename Fn>
    double se(Fn&& value) const {
        if (records.size() < 2) return 0.0;
        const double avg = mean(value);
        double ss = 0.0;
        for (const auto& r : records) {
            const double d = value(r) - avg;
            ss += d * d;
        }
        const double sd = std::sqrt(ss / static_cast<double>(records.size() - 1));
        return sd / std::sqrt(static_cast<double>(records.size()));
    }
};

// ---------------------------------------------------------------------------
// Exact-knockoff pipeline cell (model known, s precomputed once)
// ---------------------------------------------------------------------------

struct KnockoffCell {
    GaussianModel model_std; // unit-diagonal law of the standardized columns
    Standardizer standardizer;
    SVector s;
    std::shared_ptr<GaussianKnockoffSampler> sampler;
};

inline KnockoffCell make_knockoff_cell(const ScenarioConfig& config, SMethod method) {
    config.validate();
    const Eigen::Index p = config.p;
    const MatrixXd corr = (config.design == DesignKind::ar1 && config.rho != 0.0)
                              ? toeplitz_correlation(p, config.rho)
                              : MatrixXd::Identity(p, p);
    KnockoffCell cell;
    cell.model_std = GaussianModel::make(VectorXd::Zero(p), corr);
    cell.standardizer.shift = VectorXd::Zero(p);
    cell.standardizer.scale = VectorXd::Constant(p, std::sqrt(config.scale()));
    switch (method) {
        case SMethod::EQ: cell.s = solve_equi(corr); break;
        case SMethod::SDP: cell.s = solve_sdp(corr); break;
        case SMethod::ASDP: cell.s = solve_asdp(corr, trivial_partition(p)); break;
    }
    cell.sampler = std::make_shared<GaussianKnockoffSampler>(cell.model_std, cell.s);
    return cell;
}

// One repetition: generate data, sample exact knockoffs, compute W, threshold.
struct RepOutcome {
    double fdp = 0.0;
    double power = 0.0;
    double threshold = 0.0;
    SelectionResult selection;
    WStatistics stats;
};

inline RepOutcome run_knockoff_rep(const ScenarioConfig& config, const KnockoffCell& cell,
                                   const StatisticConfig& stat_config, bool plus, int rep,
                                   std::uint64_t seed) {
    const std::uint64_t design_seed = derive_stream(seed, {0x726570ULL, static_cast<std::uint64_t>(rep), 1});
    const std::uint64_t response_seed = derive_stream(seed, {0x726570ULL, static_cast<std::uint64_t>(rep), 2});
    const std::uint64_t knockoff_seed = derive_stream(seed, {0x726570ULL, static_cast<std::uint64_t>(rep), 3});

    const GeneratedDesign design = gen_design(config, design_seed);
    const GeneratedResponse response = gen_response(design.x, config, response_seed);

    const MatrixXd x_std = cell.standardizer.apply(design.x);
    KnockoffDataset dataset = cell.sampler->sample(x_std, knockoff_seed);
    dataset.y = response.y;

    StatisticConfig cfg = stat_config;
    cfg.seed = derive_stream(seed, {0x726570ULL, static_cast<std::uint64_t>(rep), 4});
    RepOutcome outcome;
    outcome.stats = compute_w(dataset, cfg);
    outcome.selection = knockoff_threshold(outcome.stats.w, config.q, plus);
    outcome.threshold = outcome.selection.threshold;
    const auto [fdp, power] = evaluate(outcome.selection.selected, response.support);
    outcome.fdp = fdp;
    outcome.power = power;
    return outcome;
}

// Full FDR/power sweep for one scenario cell.
inline SweepSummary fdr_sweep(const ScenarioConfig& config, SMethod s_method,
                              const StatisticConfig& stat_config, bool plus) {
    const KnockoffCell cell = make_knockoff_cell(config, s_method);
    SweepSummary summary;
    summary.records.resize(static_cast<std::size_t>(config.reps));
    parallel_for(static_cast<std::size_t>(config.reps), [&](std::size_t r) {
        const RepOutcome outcome =
            run_knockoff_rep(config, cell, stat_config, plus, static_cast<int>(r), config.seed);
        summary.records[r] = {static_cast<int>(r), outcome.fdp, outcome.power, outcome.threshold,
                              config.seed};
    });
    return summary;
}

// ---------------------------------------------------------------------------
// Logistic MLE and the p-value inflation experiment
// ---------------------------------------------------------------------------

struct LogisticMle {
    VectorXd beta;
    MatrixXd information; // X^T W X at the MLE
    bool converged = false;
};

// Unpenalized Newton-Raphson with step halving.  The generating models here
// carry no intercept, so none is fitted.
inline LogisticMle logistic_mle(const MatrixXd& x, const VectorXd& y, int max_iter = 60) {
    const Eigen::Index n = x.rows(), p = x.cols();
    LogisticMle fit;
    fit.beta = VectorXd::Zero(p);

    auto log_likelihood = [&](const VectorXd& eta) {
        double ll = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            // log sigma(eta) and log sigma(-eta), stable at large |eta|
            ll += y(i) * -std::log1p(std::exp(-eta(i))) +
                  (1.0 - y(i)) * -std::log1p(std::exp(eta(i)));
        }
        return ll;
    };

    VectorXd eta = VectorXd::Zero(n);
    double current = log_likelihood(eta);
    for (int iter = 0; iter < max_iter; ++iter) {
        VectorXd prob(n), weight(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            prob(i) = 1.0 / (1.0 + std::exp(-eta(i)));
            weight(i) = prob(i) * (1.0 - prob(i));
        }
        const VectorXd grad = x.transpose() * (y - prob);
        if (grad.cwiseAbs().maxCoeff() < 1e-8) {
            fit.information = x.transpose() * weight.asDiagonal() * x;
            fit.converged = true;
            return fit;
        }
        const MatrixXd info = x.transpose() * weight.asDiagonal() * x;
        Eigen::LDLT<MatrixXd> ldlt(info);
        if (ldlt.info() != Eigen::Success) {
            return fit; // singular information: treated as non-existence
        }
        const VectorXd direction = ldlt.solve(grad);

        double step = 1.0;
        VectorXd candidate_beta, candidate_eta;
        double candidate_ll = current;
        for (int half = 0; half < 30; ++half) {
            candidate_beta = fit.beta + step * direction;
            candidate_eta = x * candidate_beta;
            candidate_ll = log_likelihood(candidate_eta);
            if (candidate_ll >= current - 1e-12) break;
            step *= 0.5;
        }
        fit.beta = candidate_beta;
        eta = candidate_eta;
        current = candidate_ll;
        if (eta.cwiseAbs().maxCoeff() > 30.0) {
            return fit; // fitted probabilities saturated: separation
        }
    }
    return fit;
}

struct InflationResult {
    double tail_prob[3] = {0.0, 0.0, 0.0};  // P(p <= 5%), P(p <= 1%), P(p <= 0.1%)
    double tail_se[3] = {0.0, 0.0, 0.0};
    int reps_used = 0;
    int excluded = 0; // separation / non-convergence, reported not hidden
};

// Null Wald p-value tail frequencies for logistic regression with n=500,
// p=200.  Setting 1: AR(1) rho=0.5 design (unit marginal variance), pure-coin
// response.  Setting 2: same design, logit 0.08*(X_2+...+X_21).  Setting 3:
// i.i.d. N(0,1) design, pure-coin response.
inline InflationResult pvalue_inflation_experiment(int setting, int reps, std::uint64_t seed,
                                                   Eigen::Index n = 500, Eigen::Index p = 200) {
    if (setting < 1 || setting > 3) {
        throw validation_error("pvalue_inflation_experiment: setting must be 1, 2, or 3");
    }
    ScenarioConfig design_config;
    design_config.n = n;
    design_config.p = p;
    design_config.design = (setting == 3) ? DesignKind::iid_gaussian : DesignKind::ar1;
    design_config.rho = (setting == 3) ? 0.0 : 0.5;
    design_config.column_variance = 1.0;
    design_config.k_nonzero = 0;
    design_config.reps = 1;

    std::vector<double> pvals(static_cast<std::size_t>(reps), -1.0);
    parallel_for(static_cast<std::size_t>(reps), [&](std::size_t r) {
        const std::uint64_t rep_seed = derive_stream(seed, {0x696e66ULL, r});
        const GeneratedDesign design = gen_design(design_config, rep_seed);

        VectorXd eta = VectorXd::Zero(n);
        if (setting == 2) {
            for (Eigen::Index j = 1; j <= 20; ++j) {
                eta += 0.08 * design.x.col(j);
            }
        }
        VectorXd y(n);
        Rng rng = Rng::stream(rep_seed, {0x79ULL});
        for (Eigen::Index i = 0; i < n; ++i) {
            const double prob = 1.0 / (1.0 + std::exp(-eta(i)));
            y(i) = rng.uniform() <= prob ? 1.0 : 0.0;
        }

        const LogisticMle fit = logistic_mle(design.x, y);
        if (!fit.converged) {
            return; // leave the sentinel: excluded with count
        }
        Eigen::LDLT<MatrixXd> ldlt(fit.information);
        const double var1 = ldlt.solve(VectorXd::Unit(p, 0))(0);
        if (!(var1 > 0.0)) {
            return;
        }
        const double z = fit.beta(0) / std::sqrt(var1);
        pvals[r] = std::erfc(std::abs(z) / std::sqrt(2.0));
    });

    InflationResult result;
    const double cuts[3] = {0.05, 0.01, 0.001};
    int counts[3] = {0, 0, 0};
    for (double p_value : pvals) {
        if (p_value < 0.0) {
            ++result.excluded;
            continue;
        }
        ++result.reps_used;
        for (int c = 0; c < 3; ++c) {
            if (p_value <= cuts[c]) ++counts[c];
        }
    }
    if (result.reps_used > 0) {
        for (int c = 0; c < 3; ++c) {
            const double freq = static_cast<double>(counts[c]) / result.reps_used;
            result.tail_prob[c] = freq;
            result.tail_se[c] = std::sqrt(freq * (1.0 - freq) / result.reps_used);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Covariance-misspecification robustness sweep
// ---------------------------------------------------------------------------

// Knockoffs generated from (1-alpha)*Sigma + alpha*Sigma_hat while the data
// come from Sigma; the equicorrelated construction keeps the per-rep solve
// cheap (Sigma_hat changes every rep).
inline std::vector<SweepSummary> robustness_sweep(const std::vector<double>& alpha_grid,
                                                  const ScenarioConfig& config,
                                                  std::uint64_t seed) {
    config.validate();
    const Eigen::Index p = config.p;
    const MatrixXd corr = (config.design == DesignKind::ar1 && config.rho != 0.0)
                              ? toeplitz_correlation(p, config.rho)
                              : MatrixXd::Identity(p, p);

    std::vector<SweepSummary> summaries(alpha_grid.size());
    for (std::size_t a = 0; a < alpha_grid.size(); ++a) {
        const double alpha = alpha_grid[a];
        if (!(alpha >= 0.0 && alpha <= 1.0)) {
            throw validation_error("robustness_sweep: alpha must lie in [0, 1]");
        }
        SweepSummary& summary = summaries[a];
        summary.records.resize(static_cast<std::size_t>(config.reps));
        parallel_for(static_cast<std::size_t>(config.reps), [&](std::size_t r) {
            const std::uint64_t rep_seed =
                derive_stream(seed, {0x726f62ULL, a, r});
            const GeneratedDesign design = gen_design(config, derive_stream(rep_seed, {1}));
            const GeneratedResponse response =
                gen_response(design.x, config, derive_stream(rep_seed, {2}));

            // Data standardization (variance 1, divisor n) makes the
            // empirical covariance an exact correlation matrix.
            const Standardizer std_rec = Standardizer::from_data(design.x);
            const MatrixXd x_std = std_rec.apply(design.x);
            MixedCovariance mix;
            mix.alpha = alpha;
            mix.sigma_true = corr;
            mix.sigma_hat = empirical_covariance(x_std);
            MatrixXd sigma_ec = mix_covariance(mix);
            sigma_ec.diagonal().setOnes(); // exact unit diagonal survives mixing round-off

            const SVector s = solve_equi(sigma_ec);
            const GaussianModel believed = GaussianModel::make(VectorXd::Zero(p), sigma_ec);
            KnockoffDataset dataset =
                gaussian_knockoffs(x_std, believed, s, derive_stream(rep_seed, {3}));
            dataset.y = response.y;

            StatisticConfig stat_config;
            stat_config.kind = StatisticKind::LCD;
            stat_config.family = (config.response == ResponseKind::binomial_logit)
                                     ? Family::logistic
                                     : Family::gaussian;
            stat_config.seed = derive_stream(rep_seed, {4});
            const WStatistics stats = compute_w(dataset, stat_config);
            const SelectionResult selection = knockoff_threshold(stats.w, config.q, true);
            const auto [fdp, power] = evaluate(selection.selected, response.support);
            summary.records[r] = {static_cast<int>(r), fdp, power, selection.threshold, rep_seed};
        });
    }
    return summaries;
}

} // namespace knockoff
