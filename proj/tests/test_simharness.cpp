#include <catch2/catch_amalgamated.hpp>

#include "knockoffs/simharness.hpp"
#include "test_support.hpp"

using namespace knockoff;

TEST_CASE("evaluate set arithmetic") {
    REQUIRE(evaluate({0, 1, 2}, {0, 1}) == std::make_pair(1.0 / 3.0, 1.0));
    REQUIRE(evaluate({}, {0, 1}) == std::make_pair(0.0, 0.0));
    REQUIRE(evaluate({3, 4}, {3, 4}) == std::make_pair(0.0, 1.0));
    REQUIRE(evaluate({5}, {}) == std::make_pair(1.0, 0.0));
}

TEST_CASE("scenario validation") {
    ScenarioConfig config;
    config.k_nonzero = 500;
    REQUIRE_THROWS_AS(config.validate(), validation_error);
    config.k_nonzero = 10;
    config.rho = 1.0;
    REQUIRE_THROWS_AS(config.validate(), validation_error);
}

TEST_CASE("gen_design determinism and shape") {
    ScenarioConfig config;
    config.n = 50;
    config.p = 8;
    config.k_nonzero = 2;
    config.design = DesignKind::ar1;
    config.rho = 0.4;
    const GeneratedDesign a = gen_design(config, 5);
    const GeneratedDesign b = gen_design(config, 5);
    REQUIRE(a.x == b.x);
    REQUIRE(a.x.rows() == 50);
    REQUIRE(a.model.sigma(0, 1) == Catch::Approx(0.4 / 50.0));
}

TEST_CASE("gen_design column variance and lag-1 correlation", "[slow]") {
    ScenarioConfig config;
    config.n = 5000;
    config.p = 40;
    config.design = DesignKind::ar1;
    config.rho = 0.5;
    const GeneratedDesign design = gen_design(config, 11);

    // Column variance is 1/n by default.
    const MatrixXd cov = empirical_covariance(design.x);
    const double target = 1.0 / 5000.0;
    for (Eigen::Index j = 0; j < 40; ++j) {
        REQUIRE(cov(j, j) == Catch::Approx(target).epsilon(0.15));
    }
    // Empirical lag-1 correlation near rho.
    double lag1 = 0.0;
    for (Eigen::Index j = 0; j + 1 < 40; ++j) {
        lag1 += cov(j, j + 1) / std::sqrt(cov(j, j) * cov(j + 1, j + 1));
    }
    lag1 /= 39.0;
    REQUIRE(lag1 == Catch::Approx(0.5).margin(0.03));

    ScenarioConfig indep = config;
    indep.design = DesignKind::iid_gaussian;
    const GeneratedDesign flat = gen_design(indep, 12);
    const MatrixXd cov0 = empirical_covariance(flat.x);
    double max_off = 0.0;
    for (Eigen::Index j = 0; j + 1 < 40; ++j) {
        max_off = std::max(max_off,
                           std::abs(cov0(j, j + 1) / std::sqrt(cov0(j, j) * cov0(j + 1, j + 1))));
    }
    REQUIRE(max_off < 0.06);
}

TEST_CASE("gen_response basics") {
    ScenarioConfig config;
    config.n = 30;
    config.p = 6;
    config.k_nonzero = 2;
    config.amplitude = 0.0;
    const GeneratedDesign design = gen_design(config, 21);

    // Zero amplitude: the response ignores X entirely.
    const GeneratedResponse null_resp = gen_response(design.x, config, 22);
    REQUIRE(null_resp.beta.cwiseAbs().maxCoeff() == 0.0);

    // Noiseless linear check.
    config.amplitude = 2.0;
    config.noise_sd = 0.0;
    const GeneratedResponse exact = gen_response(design.x, config, 23);
    REQUIRE((exact.y - design.x * exact.beta).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(exact.support.size() == 2);

    // Logistic at eta = 0 is a fair coin.
    config.response = ResponseKind::binomial_logit;
    config.amplitude = 0.0;
    ScenarioConfig big = config;
    big.n = 4000;
    const GeneratedDesign wide = gen_design(big, 24);
    const GeneratedResponse coin = gen_response(wide.x, big, 25);
    REQUIRE(coin.y.mean() == Catch::Approx(0.5).margin(0.03));
}

TEST_CASE("fixed nonzero locations are honored") {
    ScenarioConfig config;
    config.n = 20;
    config.p = 10;
    config.k_nonzero = 3;
    config.nonzero_locations = {2, 5, 9};
    const GeneratedDesign design = gen_design(config, 31);
    const GeneratedResponse resp = gen_response(design.x, config, 32);
    REQUIRE(resp.support == std::vector<Eigen::Index>{2, 5, 9});
}

TEST_CASE("logistic_mle recovers coefficients in a well-posed problem") {
    Rng rng(41);
    const Eigen::Index n = 2000, p = 3;
    MatrixXd x(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j) x(i, j) = rng.normal();
    VectorXd beta(p);
    beta << 1.0, -0.5, 0.0;
    VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double prob = 1.0 / (1.0 + std::exp(-x.row(i).dot(beta)));
        y(i) = rng.uniform() <= prob ? 1.0 : 0.0;
    }
    const LogisticMle fit = logistic_mle(x, y);
    REQUIRE(fit.converged);
    REQUIRE(fit.beta(0) == Catch::Approx(1.0).margin(0.15));
    REQUIRE(fit.beta(1) == Catch::Approx(-0.5).margin(0.15));
    REQUIRE(fit.beta(2) == Catch::Approx(0.0).margin(0.15));
}

TEST_CASE("logistic_mle flags separation instead of diverging") {
    MatrixXd x(6, 1);
    x << -3, -2, -1, 1, 2, 3;
    VectorXd y(6);
    y << 0, 0, 0, 1, 1, 1; // perfectly separated
    const LogisticMle fit = logistic_mle(x, y);
    REQUIRE_FALSE(fit.converged);
}

TEST_CASE("wald p-values are calibrated when n >> p", "[slow]") {
    // Classical regime: null tail frequency should sit near nominal.
    const InflationResult r = pvalue_inflation_experiment(3, 300, 77, 500, 5);
    REQUIRE(r.excluded == 0);
    REQUIRE(r.tail_prob[0] == Catch::Approx(0.05).margin(3.0 * 0.013 + 0.01));
}

TEST_CASE("knockoff pipeline controls FDR on a tiny null scenario", "[slow]") {
    ScenarioConfig config;
    config.n = 80;
    config.p = 20;
    config.k_nonzero = 0;
    config.amplitude = 0.0;
    config.q = 0.2;
    config.reps = 40;
    config.seed = 99;

    StatisticConfig stat;
    stat.kind = StatisticKind::LCD;
    stat.family = Family::gaussian;
    stat.cv_folds = 5;
    const SweepSummary summary = fdr_sweep(config, SMethod::SDP, stat, true);
    REQUIRE(summary.records.size() == 40);
    REQUIRE(summary.fdr_mean() <= config.q + 3.0 * std::max(summary.fdr_se(), 0.02));
}
