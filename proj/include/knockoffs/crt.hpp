#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "knockoffs/covariate_model.hpp"
#include "knockoffs/errors.hpp"
#include "knockoffs/parallel.hpp"
#include "knockoffs/rng.hpp"
#include "knockoffs/sparse_glm.hpp"

namespace knockoff {

// ---------------------------------------------------------------------------
// Feature importance statistics for randomization testing
// ---------------------------------------------------------------------------

// T_j(X, y): large values are evidence against conditional independence.
// `warm` (optional) carries solver state across the randomizations of one
// feature; it must not change the value computed.
struct CrtStatistic {
    std::string name;
    bool zero_is_point_mass_min = false;
    std::function<double(const MatrixXd& x, const VectorXd& y, Eigen::Index j, VectorXd* warm)>
        evaluate;
};

// Absolute lasso coefficient at a fixed penalty.
inline CrtStatistic make_lasso_statistic(Family family, double lambda) {
    if (lambda < 0.0) {
        throw validation_error("crt: lambda must be >= 0");
    }
    CrtStatistic stat;
    stat.name = "lasso";
    stat.zero_is_point_mass_min = true;
    stat.evaluate = [family, lambda](const MatrixXd& x, const VectorXd& y, Eigen::Index j,
                                     VectorXd* warm) {
        LassoSolver solver(x, y, family);
        const LassoFit fit = solver.fit(lambda, LassoSolver::default_tol(family), 5000, warm);
        return std::abs(fit.coefficients(j));
    };
    return stat;
}

// Absolute sample correlation between X_j and y.
inline CrtStatistic make_correlation_statistic() {
    CrtStatistic stat;
    stat.name = "corr";
    stat.zero_is_point_mass_min = false;
    stat.evaluate = [](const MatrixXd& x, const VectorXd& y, Eigen::Index j, VectorXd*) {
        const VectorXd xc = x.col(j).array() - x.col(j).mean();
        const VectorXd yc = y.array() - y.mean();
        const double denom = xc.norm() * yc.norm();
        return denom > 0.0 ? std::abs(xc.dot(yc)) / denom : 0.0;
    };
    return stat;
}

// ---------------------------------------------------------------------------
// Column resamplers from the known covariate law
// ---------------------------------------------------------------------------

namespace detail {

// Per-row conditional law of column j given the other columns; fixed across
// randomizations because only column j is replaced.
struct ColumnResampler {
    VectorXd gaussian_mean; // per row
    double gaussian_sd = 0.0;
    std::vector<VectorXd> markov_weights; // per row, categorical
    bool is_gaussian = true;

    VectorXd draw(Rng& rng) const {
        if (is_gaussian) {
            VectorXd column(gaussian_mean.size());
            for (Eigen::Index i = 0; i < column.size(); ++i) {
                column(i) = gaussian_mean(i) + gaussian_sd * rng.normal();
            }
            return column;
        }
        VectorXd column(static_cast<Eigen::Index>(markov_weights.size()));
        for (std::size_t i = 0; i < markov_weights.size(); ++i) {
            const VectorXd& weights = markov_weights[i];
            double u = rng.uniform();
            int drawn = static_cast<int>(weights.size()) - 1;
            for (int s = 0; s < static_cast<int>(weights.size()); ++s) {
                u -= weights(s);
                if (u <= 0.0) {
                    drawn = s;
                    break;
                }
            }
            column(static_cast<Eigen::Index>(i)) = static_cast<double>(drawn);
        }
        return column;
    }
};

inline ColumnResampler make_column_resampler(const MatrixXd& x, const CovariateModel& model,
                                             Eigen::Index j) {
    ColumnResampler resampler;
    if (const auto* gaussian = std::get_if<GaussianModel>(&model)) {
        const GaussianConditional cond = make_gaussian_conditional(*gaussian, j);
        resampler.is_gaussian = true;
        resampler.gaussian_sd = std::sqrt(std::max(cond.var, 0.0));
        resampler.gaussian_mean.resize(x.rows());
        VectorXd rest(x.cols() - 1);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            Eigen::Index c = 0;
            for (Eigen::Index b = 0; b < x.cols(); ++b) {
                if (b == j) continue;
                rest(c++) = x(i, b);
            }
            resampler.gaussian_mean(i) = cond.mean_given(rest);
        }
        return resampler;
    }
    const auto& markov = std::get<DiscreteMarkovModel>(model);
    resampler.is_gaussian = false;
    resampler.markov_weights.reserve(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        std::vector<int> states(static_cast<std::size_t>(x.cols()));
        for (Eigen::Index b = 0; b < x.cols(); ++b) {
            states[static_cast<std::size_t>(b)] = static_cast<int>(std::llround(x(i, b)));
        }
        resampler.markov_weights.push_back(markov.conditional(j, states));
    }
    return resampler;
}

// Exact upper binomial tail P(Bin(k, prob) >= c).
inline double binomial_upper_tail(int k, int c, double prob) {
    if (c <= 0) return 1.0;
    if (c > k) return 0.0;
    double log_term = static_cast<double>(k) * std::log1p(-prob); // i = 0 term
    double cdf_below = 0.0;
    double log_ratio_base = std::log(prob) - std::log1p(-prob);
    for (int i = 0; i < c; ++i) {
        if (i > 0) {
            log_term += std::log(static_cast<double>(k - i + 1)) -
                        std::log(static_cast<double>(i)) + log_ratio_base;
        }
        cdf_below += std::exp(log_term);
    }
    return std::max(0.0, 1.0 - cdf_below);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Conditional randomization test
// ---------------------------------------------------------------------------

inline double crt_pvalue(const MatrixXd& x, const VectorXd& y, Eigen::Index j,
                         const CovariateModel& model, const CrtStatistic& statistic,
                         int k, std::uint64_t seed) {
    if (j < 0 || j >= x.cols()) {
        throw validation_error("crt_pvalue: feature index out of range");
    }
    if (k < 1) {
        throw validation_error("crt_pvalue: need at least one randomization");
    }
    VectorXd warm;
    const double t_obs = statistic.evaluate(x, y, j, &warm);
    const detail::ColumnResampler resampler = detail::make_column_resampler(x, model, j);

    MatrixXd modified = x;
    int exceedances = 0;
    for (int rep = 0; rep < k; ++rep) {
        Rng rng = Rng::stream(seed, {0x637274ULL, static_cast<std::uint64_t>(j),
                                     static_cast<std::uint64_t>(rep)});
        modified.col(j) = resampler.draw(rng);
        const double t_star = statistic.evaluate(modified, y, j, &warm);
        if (t_star >= t_obs) {
            ++exceedances;
        }
    }
    return (1.0 + exceedances) / (static_cast<double>(k) + 1.0);
}

struct EarlyStopConfig {
    bool zero_shortcut = true;   // T_j == 0 with a point mass at the minimum -> p = 1
    double cutoff = 0.0;         // 0 disables the sequential abandonment check
    int check_every = 10;
    double significance = 1e-4;  // exact binomial tail level for abandonment
};

struct CrtResult {
    VectorXd p_values;
    std::vector<int> randomizations_used;
    std::string statistic_kind;
    std::vector<std::string> early_stop_log;
};

// Runs the randomization test for every feature, with the zero-statistic
// shortcut and sequential abandonment of features whose running p-value is
// confidently above `cutoff`.  With shortcuts disabled the p-values are
// identical to independent crt_pvalue calls (matched substreams).
inline CrtResult crt_all(const MatrixXd& x, const VectorXd& y, const CovariateModel& model,
                         const CrtStatistic& statistic, int k, std::uint64_t seed,
                         const EarlyStopConfig& early_stop = {}) {
    const Eigen::Index p = x.cols();
    CrtResult result;
    result.p_values.resize(p);
    result.randomizations_used.assign(static_cast<std::size_t>(p), 0);
    result.statistic_kind = statistic.name;
    std::vector<std::string> logs(static_cast<std::size_t>(p));

    parallel_for(static_cast<std::size_t>(p), [&](std::size_t jj) {
        const Eigen::Index j = static_cast<Eigen::Index>(jj);
        VectorXd warm;
        const double t_obs = statistic.evaluate(x, y, j, &warm);

        if (early_stop.zero_shortcut && statistic.zero_is_point_mass_min && t_obs == 0.0) {
            // The observed statistic sits on the point mass at the minimum:
            // every randomization ties, so the p-value is 1 for free.
            result.p_values(j) = 1.0;
            result.randomizations_used[jj] = 0;
            logs[jj] = "zero_statistic";
            return;
        }

        const detail::ColumnResampler resampler = detail::make_column_resampler(x, model, j);
        MatrixXd modified = x;
        int exceedances = 0;
        int used = 0;
        bool abandoned = false;
        for (int rep = 0; rep < k; ++rep) {
            Rng rng = Rng::stream(seed, {0x637274ULL, static_cast<std::uint64_t>(j),
                                         static_cast<std::uint64_t>(rep)});
            modified.col(j) = resampler.draw(rng);
            const double t_star = statistic.evaluate(modified, y, j, &warm);
            if (t_star >= t_obs) {
                ++exceedances;
            }
            ++used;
            if (early_stop.cutoff > 0.0 && used % early_stop.check_every == 0 && used < k) {
                const double tail = detail::binomial_upper_tail(used, exceedances, early_stop.cutoff);
                if (tail <= early_stop.significance) {
                    abandoned = true;
                    break;
                }
            }
        }
        result.p_values(j) = (1.0 + exceedances) / (static_cast<double>(used) + 1.0);
        result.randomizations_used[jj] = used;
        if (abandoned) {
            logs[jj] = "abandoned_at_" + std::to_string(used);
        }
    });

    for (std::size_t jj = 0; jj < logs.size(); ++jj) {
        if (!logs[jj].empty()) {
            result.early_stop_log.push_back("feature " + std::to_string(jj) + ": " + logs[jj]);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Benjamini-Hochberg step-up
// ---------------------------------------------------------------------------

inline std::vector<Eigen::Index> bhq(const VectorXd& p_values, double q) {
    if (!(q > 0.0 && q < 1.0)) {
        throw validation_error("bhq: q must lie in (0, 1)");
    }
    const Eigen::Index m = p_values.size();
    for (Eigen::Index j = 0; j < m; ++j) {
        if (!(p_values(j) > 0.0 && p_values(j) <= 1.0)) {
            throw validation_error("bhq: p-values must lie in (0, 1]");
        }
    }
    std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](Eigen::Index a, Eigen::Index b) { return p_values(a) < p_values(b); });

    double cutoff = -1.0;
    for (Eigen::Index rank = m; rank >= 1; --rank) {
        const double p = p_values(order[static_cast<std::size_t>(rank - 1)]);
        if (p <= static_cast<double>(rank) * q / static_cast<double>(m)) {
            cutoff = p;
            break;
        }
    }
    std::vector<Eigen::Index> selected;
    if (cutoff >= 0.0) {
        for (Eigen::Index j = 0; j < m; ++j) {
            if (p_values(j) <= cutoff) {
                selected.push_back(j);
            }
        }
    }
    return selected;
}

// ---------------------------------------------------------------------------
// Marginal correlation p-values via Monte Carlo against the known marginals
// ---------------------------------------------------------------------------

// Two-sided p-value for the sample correlation of each column with y: the
// null distribution is simulated by redrawing X_j from its marginal law with
// y held fixed, with the +1 correction.
inline VectorXd marginal_pvalues(const MatrixXd& x, const VectorXd& y,
                                 const CovariateModel& model, int draws = 2000,
                                 std::uint64_t seed = 0) {
    if (draws < 1) {
        throw validation_error("marginal_pvalues: need at least one draw");
    }
    const VectorXd yc = y.array() - y.mean();
    const double y_norm = yc.norm();
    if (y_norm == 0.0) {
        throw validation_error("marginal_pvalues: response is constant");
    }
    const Eigen::Index n = x.rows();
    const Eigen::Index p = x.cols();

    auto abs_corr = [&](const VectorXd& column) {
        const VectorXd xc = column.array() - column.mean();
        const double denom = xc.norm() * y_norm;
        return denom > 0.0 ? std::abs(xc.dot(yc)) / denom : 0.0;
    };

    VectorXd p_values(p);
    parallel_for(static_cast<std::size_t>(p), [&](std::size_t jj) {
        const Eigen::Index j = static_cast<Eigen::Index>(jj);
        const double observed = abs_corr(x.col(j));

        double mean = 0.0, sd = 0.0;
        VectorXd pmf;
        bool gaussian = true;
        if (const auto* g = std::get_if<GaussianModel>(&model)) {
            mean = g->mean(j);
            sd = std::sqrt(std::max(g->sigma(j, j), 0.0));
        } else {
            gaussian = false;
            pmf = std::get<DiscreteMarkovModel>(model).marginal(j);
        }

        int exceed = 0;
        VectorXd column(n);
        for (int rep = 0; rep < draws; ++rep) {
            Rng rng = Rng::stream(seed, {0x6d617267ULL, static_cast<std::uint64_t>(j),
                                         static_cast<std::uint64_t>(rep)});
            for (Eigen::Index i = 0; i < n; ++i) {
                if (gaussian) {
                    column(i) = mean + sd * rng.normal();
                } else {
                    double u = rng.uniform();
                    int drawn = static_cast<int>(pmf.size()) - 1;
                    for (int s = 0; s < static_cast<int>(pmf.size()); ++s) {
                        u -= pmf(s);
                        if (u <= 0.0) {
                            drawn = s;
                            break;
                        }
                    }
                    column(i) = static_cast<double>(drawn);
                }
            }
            if (abs_corr(column) >= observed) {
                ++exceed;
            }
        }
        p_values(j) = (1.0 + exceed) / (static_cast<double>(draws) + 1.0);
    });
    return p_values;
}

} // namespace knockoff
