#pragma once

#include <Eigen/Dense>

#include <cfloat>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "knockoffs/errors.hpp"
#include "knockoffs/knockoff_gen.hpp"
#include "knockoffs/rng.hpp"
#include "knockoffs/sparse_glm.hpp"

namespace knockoff {

enum class StatisticKind { LCD, LSM, BVS, custom };

inline const char* to_string(StatisticKind k) {
    switch (k) {
        case StatisticKind::LCD: return "lcd";
        case StatisticKind::LSM: return "lsm";
        case StatisticKind::BVS: return "bvs";
        case StatisticKind::custom: return "custom";
    }
    return "?";
}

enum class AntisymmetricFn { difference, signed_max, log_ratio };

// f(u, v) = -f(v, u) exactly, for importance magnitudes u, v >= 0.
inline double apply_antisymmetric(AntisymmetricFn fn, double u, double v) {
    switch (fn) {
        case AntisymmetricFn::difference:
            return u - v;
        case AntisymmetricFn::signed_max: {
            if (u == v) return 0.0;
            return (u > v ? 1.0 : -1.0) * std::max(u, v);
        }
        case AntisymmetricFn::log_ratio:
            // Offset keeps zero importances finite without breaking antisymmetry.
            return std::log(u + DBL_MIN) - std::log(v + DBL_MIN);
    }
    return 0.0;
}

struct WStatistics {
    VectorXd w;
    VectorXd z;
    VectorXd z_tilde;
    StatisticKind statistic_kind = StatisticKind::custom;
    AntisymmetricFn antisymmetric_fn = AntisymmetricFn::difference;
};

// ---------------------------------------------------------------------------
// Lasso coefficient-difference: W_j = |b_j(lambda)| - |b_{j+p}(lambda)| with
// lambda chosen by cross-validation on the augmented design.
// ---------------------------------------------------------------------------

inline WStatistics lcd(const KnockoffDataset& dataset, Family family, int cv_folds = 10,
                       std::uint64_t seed = 0) {
    dataset.validate();
    if (dataset.y.size() != dataset.n()) {
        throw validation_error("lcd: dataset has no response");
    }
    const MatrixXd design = dataset.augmented();
    const CvResult cv = cv_lambda(design, dataset.y, family, cv_folds, 100, seed);
    const LassoFit fit = lasso_fit(design, dataset.y, cv.lambda_min, family);
    if (!fit.converged) {
        throw numeric_error("lcd: lasso did not converge at lambda=" +
                            std::to_string(cv.lambda_min) + " (KKT residual " +
                            std::to_string(fit.tol_reached) + ")");
    }

    const Eigen::Index p = dataset.p();
    WStatistics stats;
    stats.statistic_kind = StatisticKind::LCD;
    stats.antisymmetric_fn = AntisymmetricFn::difference;
    stats.z = fit.coefficients.head(p).cwiseAbs();
    stats.z_tilde = fit.coefficients.tail(p).cwiseAbs();
    stats.w.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        stats.w(j) = apply_antisymmetric(stats.antisymmetric_fn, stats.z(j), stats.z_tilde(j));
    }
    return stats;
}

// ---------------------------------------------------------------------------
// Lasso signed-max: Z_j is the largest penalty at which column j enters the
// path (200-point geometric grid), combined by sign(Z - Zk) max(Z, Zk).
// ---------------------------------------------------------------------------

inline WStatistics lsm(const KnockoffDataset& dataset, Family family,
                       Eigen::Index grid_size = 200) {
    dataset.validate();
    if (dataset.y.size() != dataset.n()) {
        throw validation_error("lsm: dataset has no response");
    }
    const MatrixXd design = dataset.augmented();
    const VectorXd entries = entry_lambdas(design, dataset.y, family, grid_size);

    const Eigen::Index p = dataset.p();
    WStatistics stats;
    stats.statistic_kind = StatisticKind::LSM;
    stats.antisymmetric_fn = AntisymmetricFn::signed_max;
    stats.z = entries.head(p);
    stats.z_tilde = entries.tail(p);
    stats.w.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        stats.w(j) = apply_antisymmetric(stats.antisymmetric_fn, stats.z(j), stats.z_tilde(j));
    }
    return stats;
}

// ---------------------------------------------------------------------------
// Spike-and-slab Bayesian variable selection statistic
// ---------------------------------------------------------------------------

// Hierarchical model over the augmented design: each pair j carries a latent
// activation; when active, exactly one of (X_j, Xk_j) enters (probability 1/2
// each), with N(0, tau^2) slab coefficients and Gamma(a, b) prior (shape /
// scale) on the noise precision.  W_j is the difference of posterior
// inclusion frequencies.
struct BvsPrior {
    double tau = 1.0;
    double pi = 0.05;
    double a = 5.0;
    double b = 4.0;
};

struct GibbsConfig {
    int burn_in = 50;
    int samples = 500;
};

namespace detail {

// Marsaglia-Tsang sampler; shape >= 1 in every call site (shape = a + n/2).
inline double gamma_draw(Rng& rng, double shape, double scale) {
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = rng.normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = rng.uniform();
        if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) {
            return d * v * scale;
        }
    }
}

} // namespace detail

inline WStatistics bvs(const KnockoffDataset& dataset, const BvsPrior& prior,
                       const GibbsConfig& gibbs, std::uint64_t seed) {
    dataset.validate();
    if (dataset.y.size() != dataset.n()) {
        throw validation_error("bvs: dataset has no response");
    }
    if (!(prior.pi >= 0.0 && prior.pi <= 1.0)) {
        throw validation_error("bvs: pi must lie in [0, 1]");
    }
    if (prior.tau <= 0.0 || prior.a <= 0.0 || prior.b <= 0.0) {
        throw validation_error("bvs: tau, a, b must be positive");
    }
    if (gibbs.samples < 1 || gibbs.burn_in < 0) {
        throw validation_error("bvs: need samples >= 1 and burn_in >= 0");
    }

    const Eigen::Index n = dataset.n();
    const Eigen::Index p = dataset.p();
    const VectorXd& y = dataset.y;

    // Per pair: the two candidate columns ordered by content hash, so the
    // Gibbs trajectory is a function of column contents only and swapping a
    // pair flips its recorded inclusion labels exactly.
    struct Pair {
        const double* first;   // column data, hash-smaller content
        const double* second;
        bool first_is_original;
        double norm2_first, norm2_second;
    };
    std::vector<Pair> pairs(static_cast<std::size_t>(p));
    for (Eigen::Index j = 0; j < p; ++j) {
        const double* orig = dataset.x.col(j).data();
        const double* knock = dataset.x_tilde.col(j).data();
        const auto h_orig = detail::column_content_hash(orig, n);
        const auto h_knock = detail::column_content_hash(knock, n);
        bool orig_first = h_orig < h_knock;
        if (h_orig == h_knock) {
            const int cmp = std::memcmp(orig, knock, static_cast<std::size_t>(n) * sizeof(double));
            orig_first = cmp <= 0;
        }
        Pair& pair = pairs[static_cast<std::size_t>(j)];
        pair.first = orig_first ? orig : knock;
        pair.second = orig_first ? knock : orig;
        pair.first_is_original = orig_first;
        pair.norm2_first = Eigen::Map<const VectorXd>(pair.first, n).squaredNorm();
        pair.norm2_second = Eigen::Map<const VectorXd>(pair.second, n).squaredNorm();
    }

    // State: 0 none, 1 first column active, 2 second column active.
    std::vector<int> state(static_cast<std::size_t>(p), 0);
    VectorXd coef = VectorXd::Zero(p);
    VectorXd fitted = VectorXd::Zero(n);
    double precision = prior.a * prior.b; // prior mean of 1/sigma^2

    const double log_none = std::log1p(-prior.pi);
    const double log_active = prior.pi > 0.0 ? std::log(prior.pi / 2.0) : -HUGE_VAL;
    const double tau2 = prior.tau * prior.tau;

    VectorXd freq_original = VectorXd::Zero(p);
    VectorXd freq_knockoff = VectorXd::Zero(p);

    const int total_sweeps = gibbs.burn_in + gibbs.samples;
    for (int sweep = 0; sweep < total_sweeps; ++sweep) {
        for (Eigen::Index j = 0; j < p; ++j) {
            Pair& pair = pairs[static_cast<std::size_t>(j)];
            Eigen::Map<const VectorXd> col_first(pair.first, n);
            Eigen::Map<const VectorXd> col_second(pair.second, n);

            // Remove this pair's current contribution.
            if (state[static_cast<std::size_t>(j)] == 1) {
                fitted.noalias() -= col_first * coef(j);
            } else if (state[static_cast<std::size_t>(j)] == 2) {
                fitted.noalias() -= col_second * coef(j);
            }
            const VectorXd residual = y - fitted;

            // Log-weights with the coefficient integrated out analytically;
            // the shared -precision/2 * |residual|^2 term cancels.
            auto activation_gain = [&](const double* col, double norm2) {
                const double dot = Eigen::Map<const VectorXd>(col, n).dot(residual);
                const double denom = precision * norm2 + 1.0 / tau2;
                return 0.5 * precision * precision * dot * dot / denom -
                       0.5 * std::log(tau2 * precision * norm2 + 1.0);
            };
            double logw[3];
            logw[0] = log_none;
            logw[1] = log_active + (prior.pi > 0.0 ? activation_gain(pair.first, pair.norm2_first) : 0.0);
            logw[2] = log_active + (prior.pi > 0.0 ? activation_gain(pair.second, pair.norm2_second) : 0.0);
            const double top = std::max(logw[0], std::max(logw[1], logw[2]));
            double weights[3];
            double total = 0.0;
            for (int k = 0; k < 3; ++k) {
                weights[k] = std::exp(logw[k] - top);
                total += weights[k];
            }

            Rng rng = Rng::stream(seed, {0x627673ULL, static_cast<std::uint64_t>(sweep),
                                         static_cast<std::uint64_t>(j)});
            double u = rng.uniform() * total;
            int chosen = 2;
            for (int k = 0; k < 2; ++k) {
                u -= weights[k];
                if (u <= 0.0) {
                    chosen = k;
                    break;
                }
            }
            state[static_cast<std::size_t>(j)] = chosen;
            if (chosen == 0) {
                coef(j) = 0.0;
            } else {
                const double* col = (chosen == 1) ? pair.first : pair.second;
                const double norm2 = (chosen == 1) ? pair.norm2_first : pair.norm2_second;
                const double post_precision = precision * norm2 + 1.0 / tau2;
                const double mean = precision * Eigen::Map<const VectorXd>(col, n).dot(residual) /
                                    post_precision;
                coef(j) = mean + rng.normal() / std::sqrt(post_precision);
                fitted.noalias() += Eigen::Map<const VectorXd>(col, n) * coef(j);
            }
        }

        // Precision update: Gamma(a + n/2, scale 1/(1/b + SSR/2)).
        Rng rng = Rng::stream(seed, {0x627673ULL, static_cast<std::uint64_t>(sweep), 0xffffffffULL});
        const double ssr = (y - fitted).squaredNorm();
        precision = detail::gamma_draw(rng, prior.a + 0.5 * static_cast<double>(n),
                                       1.0 / (1.0 / prior.b + 0.5 * ssr));

        if (sweep >= gibbs.burn_in) {
            for (Eigen::Index j = 0; j < p; ++j) {
                const Pair& pair = pairs[static_cast<std::size_t>(j)];
                const int st = state[static_cast<std::size_t>(j)];
                const bool original_active =
                    (st == 1 && pair.first_is_original) || (st == 2 && !pair.first_is_original);
                const bool knockoff_active =
                    (st == 1 && !pair.first_is_original) || (st == 2 && pair.first_is_original);
                if (original_active) freq_original(j) += 1.0;
                if (knockoff_active) freq_knockoff(j) += 1.0;
            }
        }
    }

    WStatistics stats;
    stats.statistic_kind = StatisticKind::BVS;
    stats.antisymmetric_fn = AntisymmetricFn::difference;
    stats.z = freq_original / static_cast<double>(gibbs.samples);
    stats.z_tilde = freq_knockoff / static_cast<double>(gibbs.samples);
    stats.w.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        stats.w(j) = apply_antisymmetric(stats.antisymmetric_fn, stats.z(j), stats.z_tilde(j));
    }
    return stats;
}

// ---------------------------------------------------------------------------
// Statistic dispatch and the flip-sign check
// ---------------------------------------------------------------------------

struct StatisticConfig {
    StatisticKind kind = StatisticKind::LCD;
    Family family = Family::gaussian;
    int cv_folds = 10;
    std::uint64_t seed = 0;
    Eigen::Index lsm_grid = 200;
    BvsPrior bvs_prior;
    GibbsConfig bvs_gibbs;
};

inline WStatistics compute_w(const KnockoffDataset& dataset, const StatisticConfig& config) {
    switch (config.kind) {
        case StatisticKind::LCD:
            return lcd(dataset, config.family, config.cv_folds, config.seed);
        case StatisticKind::LSM:
            return lsm(dataset, config.family, config.lsm_grid);
        case StatisticKind::BVS:
            if (config.family != Family::gaussian) {
                throw validation_error("bvs: gaussian response required");
            }
            return bvs(dataset, config.bvs_prior, config.bvs_gibbs, config.seed);
        case StatisticKind::custom:
            break;
    }
    throw validation_error("compute_w: unsupported statistic kind");
}

inline KnockoffDataset swap_columns(const KnockoffDataset& dataset,
                                    const std::vector<Eigen::Index>& swap_set) {
    KnockoffDataset swapped = dataset;
    for (Eigen::Index j : swap_set) {
        if (j < 0 || j >= dataset.p()) {
            throw validation_error("swap_columns: index out of range");
        }
        swapped.x.col(j) = dataset.x_tilde.col(j);
        swapped.x_tilde.col(j) = dataset.x.col(j);
    }
    swapped.copy_mask.clear(); // swapped rows are no longer exact copies
    return swapped;
}

struct FlipSignReport {
    VectorXd w;
    VectorXd w_swapped;
    double max_discrepancy = 0.0;
};

// Recomputes W on the column-swapped dataset and reports
// max_j |W_swapped_j - sigma_j W_j| with sigma_j = -1 on the swap set.
inline FlipSignReport flip_sign_check(const KnockoffDataset& dataset,
                                      const StatisticConfig& config,
                                      const std::vector<Eigen::Index>& swap_set) {
    FlipSignReport report;
    report.w = compute_w(dataset, config).w;
    report.w_swapped = compute_w(swap_columns(dataset, swap_set), config).w;

    VectorXd signs = VectorXd::Ones(dataset.p());
    for (Eigen::Index j : swap_set) {
        signs(j) = -1.0;
    }
    report.max_discrepancy =
        (report.w_swapped - signs.cwiseProduct(report.w)).cwiseAbs().maxCoeff();
    return report;
}

} // namespace knockoff
