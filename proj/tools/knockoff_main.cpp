// knockoff: command-line frontend for knockoff generation, selection with
// FDR control, conditional randomization testing, and simulation sweeps.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "knockoffs/crt.hpp"
#include "knockoffs/filter.hpp"
#include "knockoffs/io.hpp"
#include "knockoffs/knockoff_gen.hpp"
#include "knockoffs/parallel.hpp"
#include "knockoffs/simharness.hpp"
#include "knockoffs/sparse_glm.hpp"
#include "knockoffs/statistics.hpp"

namespace fs = std::filesystem;
using namespace knockoff;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

std::string join_args(int argc, char** argv) {
    std::string joined;
    for (int i = 0; i < argc; ++i) {
        if (i > 0) joined += ' ';
        joined += argv[i];
    }
    return joined;
}

RunManifest base_manifest(const std::string& command_line, std::uint64_t seed,
                          const std::vector<std::string>& inputs) {
    RunManifest manifest;
    manifest.command_line = command_line;
    manifest.seed = seed;
    for (const auto& path : inputs) {
        manifest.input_digests.emplace_back(path, file_digest(path));
    }
    std::uint64_t config = content_hash_bytes(command_line);
    for (const auto& [path, digest] : manifest.input_digests) {
        config = splitmix64(config ^ digest);
    }
    manifest.config_hash = config;
    return manifest;
}

VectorXd read_response(const std::string& path) {
    const CsvTable table = read_csv(path);
    if (table.values.cols() != 1) {
        throw validation_error(path + ": expected a single response column");
    }
    return table.values.col(0);
}

Family resolve_family(const std::string& family, const VectorXd& y) {
    if (family == "gaussian") return Family::gaussian;
    if (family == "logistic") return Family::logistic;
    if (family == "auto") {
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            if (y(i) != 0.0 && y(i) != 1.0) return Family::gaussian;
        }
        return Family::logistic;
    }
    throw validation_error("family must be gaussian, logistic, or auto");
}

SMethod resolve_s_method(const std::string& name) {
    if (name == "eq") return SMethod::EQ;
    if (name == "sdp") return SMethod::SDP;
    if (name == "asdp") return SMethod::ASDP;
    throw validation_error("--s must be eq, sdp, asdp, or zero");
}

// --------------------------- knockoffs subcommand ---------------------------

struct KnockoffsArgs {
    std::string x_path, model_path, out_dir;
    std::string method = "exact-gaussian";
    std::string s_name = "sdp";
    Eigen::Index blocks = 0;
    std::uint64_t seed = 0;
};

int cmd_knockoffs(const KnockoffsArgs& args, const std::string& command_line) {
    const CsvTable x_table = read_csv(args.x_path);
    const CovariateModel model = load_model(args.model_path);
    fs::create_directories(args.out_dir);

    KnockoffDataset dataset;
    std::string s_detail = args.s_name;
    if (args.method == "scip") {
        const auto* markov = std::get_if<DiscreteMarkovModel>(&model);
        if (markov == nullptr) {
            throw validation_error("--method scip requires a markov model");
        }
        dataset = scip_knockoffs(x_table.values, *markov, args.seed);
        s_detail = "none";
    } else if (args.method == "exact-gaussian" || args.method == "second-order") {
        const auto* gaussian = std::get_if<GaussianModel>(&model);
        if (gaussian == nullptr) {
            throw validation_error("--method " + args.method + " requires a gaussian model");
        }
        SVector s;
        if (args.s_name == "zero") {
            s.s = VectorXd::Zero(gaussian->dim());
            s.feasibility_margin = 0.0;
        } else {
            s = solve_s_for_model(*gaussian, resolve_s_method(args.s_name), args.blocks);
        }
        if (args.method == "second-order") {
            // Second-order construction: match the first two moments of the
            // model while standardizing the observed columns explicitly.
            const Standardizer std_rec = Standardizer::from_data(x_table.values);
            const Standardizer model_rec = Standardizer::from_model(*gaussian);
            const MatrixXd corr = model_rec.standardized_sigma(gaussian->sigma);
            GaussianModel std_model = GaussianModel::make(VectorXd::Zero(corr.rows()), corr);
            SVector s_corr = s;
            s_corr.s = s.s.cwiseQuotient(gaussian->sigma.diagonal());
            KnockoffDataset std_dataset =
                gaussian_knockoffs(std_rec.apply(x_table.values), std_model, s_corr, args.seed);
            dataset = std_dataset;
            dataset.x = x_table.values;
            dataset.x_tilde = std_rec.invert(std_dataset.x_tilde);
            dataset.provenance.generator = "second_order";
        } else {
            dataset = gaussian_knockoffs(x_table.values, *gaussian, s, args.seed);
        }
    } else {
        throw validation_error("--method must be exact-gaussian, second-order, or scip");
    }

    write_csv((fs::path(args.out_dir) / "x_tilde.csv").string(), dataset.x_tilde,
              x_table.headers);
    RunManifest manifest = base_manifest(command_line, args.seed, {args.x_path, args.model_path});
    auto json = manifest.to_json();
    json["provenance"] = {{"generator", dataset.provenance.generator},
                          {"s", s_detail},
                          {"method", args.method}};
    std::ofstream out((fs::path(args.out_dir) / "manifest.json").string());
    out << json.dump(2) << '\n';
    return kExitOk;
}

// ----------------------------- select subcommand ----------------------------

struct SelectArgs {
    std::string x_path, xtilde_path, y_path, out_dir;
    std::string statistic = "lcd";
    std::string family = "auto";
    double q = 0.1;
    bool no_plus = false;
    int cv_folds = 10;
    std::uint64_t seed = 0;
    double bvs_pi = -1.0, bvs_tau = 1.0, bvs_a = 5.0, bvs_b = 4.0;
    int bvs_burnin = 50, bvs_samples = 500;
};

int cmd_select(const SelectArgs& args, const std::string& command_line) {
    KnockoffDataset dataset;
    dataset.x = read_csv(args.x_path).values;
    dataset.x_tilde = read_csv(args.xtilde_path).values;
    dataset.y = read_response(args.y_path);
    if (dataset.x.rows() != dataset.x_tilde.rows() || dataset.x.cols() != dataset.x_tilde.cols() ||
        dataset.y.size() != dataset.x.rows()) {
        throw validation_error("select: x, x_tilde, y are not conformable");
    }
    fs::create_directories(args.out_dir);

    StatisticConfig config;
    config.family = resolve_family(args.family, dataset.y);
    config.cv_folds = args.cv_folds;
    config.seed = args.seed;
    if (args.statistic == "lcd") {
        config.kind = StatisticKind::LCD;
    } else if (args.statistic == "lsm") {
        config.kind = StatisticKind::LSM;
    } else if (args.statistic == "bvs") {
        config.kind = StatisticKind::BVS;
        config.bvs_prior.pi =
            args.bvs_pi > 0.0 ? args.bvs_pi : 60.0 / static_cast<double>(dataset.p());
        config.bvs_prior.tau = args.bvs_tau;
        config.bvs_prior.a = args.bvs_a;
        config.bvs_prior.b = args.bvs_b;
        config.bvs_gibbs = {args.bvs_burnin, args.bvs_samples};
    } else {
        throw validation_error("--statistic must be lcd, lsm, or bvs");
    }

    const WStatistics stats = compute_w(dataset, config);
    const SelectionResult selection = knockoff_threshold(stats.w, args.q, !args.no_plus);

    // Per-feature audit table plus a machine-readable result summary.
    MatrixXd table(dataset.p(), 5);
    for (Eigen::Index j = 0; j < dataset.p(); ++j) {
        const bool chosen = std::binary_search(selection.selected.begin(),
                                               selection.selected.end(), j);
        table.row(j) << static_cast<double>(j + 1), stats.w(j), stats.z(j), stats.z_tilde(j),
            chosen ? 1.0 : 0.0;
    }
    write_csv((fs::path(args.out_dir) / "selection.csv").string(), table,
              {"feature", "w", "z", "z_tilde", "selected"});

    nlohmann::json result;
    result["threshold"] = std::isfinite(selection.threshold)
                              ? nlohmann::json(selection.threshold)
                              : nlohmann::json("inf");
    result["fdp_estimate"] = selection.fdp_estimate;
    result["q"] = selection.q;
    result["plus"] = selection.plus;
    result["statistic"] = args.statistic;
    result["selected"] = nlohmann::json::array();
    for (Eigen::Index j : selection.selected) {
        result["selected"].push_back(j + 1);
    }
    std::ofstream out((fs::path(args.out_dir) / "result.json").string());
    out << result.dump(2) << '\n';

    RunManifest manifest =
        base_manifest(command_line, args.seed, {args.x_path, args.xtilde_path, args.y_path});
    write_manifest((fs::path(args.out_dir) / "manifest.json").string(), manifest);
    return kExitOk;
}

// ------------------------------ crt subcommand ------------------------------

struct CrtArgs {
    std::string x_path, y_path, model_path, out_dir;
    std::string statistic = "lasso";
    int k = 199;
    double lambda = -1.0;
    bool lambda_cv = false;
    double early_stop_cutoff = 0.0;
    int check_every = 10;
    std::uint64_t seed = 0;
};

int cmd_crt(const CrtArgs& args, const std::string& command_line) {
    const MatrixXd x = read_csv(args.x_path).values;
    const VectorXd y = read_response(args.y_path);
    if (y.size() != x.rows()) {
        throw validation_error("crt: x and y are not conformable");
    }
    const CovariateModel model = load_model(args.model_path);
    fs::create_directories(args.out_dir);

    CrtStatistic statistic;
    if (args.statistic == "lasso") {
        const Family family = resolve_family("auto", y);
        double lambda = args.lambda;
        if (args.lambda_cv) {
            lambda = cv_lambda(x, y, family, 10, 100, derive_stream(args.seed, {0x706c74ULL}))
                         .lambda_min;
        }
        if (lambda < 0.0) {
            throw validation_error("crt: supply --lambda or --lambda-cv for the lasso statistic");
        }
        statistic = make_lasso_statistic(family, lambda);
    } else if (args.statistic == "corr") {
        statistic = make_correlation_statistic();
    } else {
        throw validation_error("--statistic must be lasso or corr");
    }

    EarlyStopConfig early;
    early.cutoff = args.early_stop_cutoff;
    early.check_every = args.check_every;
    const CrtResult result = crt_all(x, y, model, statistic, args.k, args.seed, early);

    MatrixXd table(x.cols(), 3);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        table.row(j) << static_cast<double>(j + 1), result.p_values(j),
            static_cast<double>(result.randomizations_used[static_cast<std::size_t>(j)]);
    }
    write_csv((fs::path(args.out_dir) / "pvalues.csv").string(), table,
              {"feature", "p_value", "randomizations"});

    RunManifest manifest =
        base_manifest(command_line, args.seed, {args.x_path, args.y_path, args.model_path});
    write_manifest((fs::path(args.out_dir) / "manifest.json").string(), manifest);
    return kExitOk;
}

// ---------------------------- simulate subcommand ---------------------------

struct SimulateArgs {
    std::string scenario_path, out_dir;
    int reps_override = 0;
    std::int64_t seed_override = -1;
};

ScenarioConfig scenario_from_json(const nlohmann::json& j) {
    ScenarioConfig config;
    config.n = j.value("n", 600);
    config.p = j.value("p", 200);
    const std::string design = j.value("design", "iid");
    if (design == "ar1") {
        config.design = DesignKind::ar1;
        config.rho = j.value("rho", 0.0);
    } else if (design == "iid") {
        config.design = DesignKind::iid_gaussian;
    } else {
        throw validation_error("scenario: design must be iid or ar1");
    }
    const std::string response = j.value("response", "gaussian");
    if (response == "logistic") {
        config.response = ResponseKind::binomial_logit;
    } else if (response == "gaussian") {
        config.response = ResponseKind::gaussian_linear;
    } else {
        throw validation_error("scenario: response must be gaussian or logistic");
    }
    config.k_nonzero = j.value("k_nonzero", 20);
    config.amplitude = j.value("amplitude", 3.5);
    config.noise_sd = j.value("noise_sd", 1.0);
    config.q = j.value("q", 0.1);
    config.reps = j.value("reps", 100);
    config.seed = j.value("seed", 1);
    config.column_variance = j.value("column_variance", 0.0);
    if (j.contains("nonzero_locations")) {
        for (const auto& loc : j["nonzero_locations"]) {
            config.nonzero_locations.push_back(loc.get<Eigen::Index>() - 1);
        }
        config.k_nonzero = static_cast<Eigen::Index>(config.nonzero_locations.size());
    }
    return config;
}

void write_records_csv(const std::string& path, std::uint64_t scenario_hash,
                       const std::vector<std::pair<std::string, const SweepSummary*>>& cells) {
    Eigen::Index total = 0;
    for (const auto& [name, summary] : cells) {
        total += static_cast<Eigen::Index>(summary->records.size());
    }
    MatrixXd table(total, 6);
    std::vector<std::string> cell_names;
    Eigen::Index row = 0;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        for (const RepRecord& r : cells[c].second->records) {
            table.row(row++) << static_cast<double>(scenario_hash % 1000000007ULL),
                static_cast<double>(c), static_cast<double>(r.rep), r.fdp, r.power,
                std::isfinite(r.threshold) ? r.threshold : -1.0;
        }
    }
    write_csv(path, table, {"scenario_hash", "cell", "rep", "fdp", "power", "threshold"});
}

int cmd_simulate(const SimulateArgs& args, const std::string& command_line) {
    std::ifstream in(args.scenario_path);
    if (!in) {
        throw validation_error("cannot open scenario file: " + args.scenario_path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw validation_error(args.scenario_path + ": invalid JSON (" + e.what() + ")");
    }
    fs::create_directories(args.out_dir);

    ScenarioConfig config = scenario_from_json(j);
    if (args.reps_override > 0) config.reps = args.reps_override;
    if (args.seed_override >= 0) config.seed = static_cast<std::uint64_t>(args.seed_override);
    const std::uint64_t scenario_hash = file_digest(args.scenario_path);
    const std::string experiment = j.value("experiment", "fdr_sweep");

    if (experiment == "inflation") {
        const int setting = j.value("setting", 3);
        const InflationResult result =
            pvalue_inflation_experiment(setting, config.reps, config.seed);
        MatrixXd table(3, 4);
        const double cuts[3] = {0.05, 0.01, 0.001};
        for (int c = 0; c < 3; ++c) {
            table.row(c) << cuts[c], result.tail_prob[c], result.tail_se[c],
                static_cast<double>(result.excluded);
        }
        write_csv((fs::path(args.out_dir) / "inflation.csv").string(), table,
                  {"cutoff", "tail_prob", "tail_se", "excluded"});
    } else if (experiment == "robustness") {
        std::vector<double> alpha_grid = {0.0, 0.25, 0.5, 0.75, 1.0};
        if (j.contains("alpha_grid")) {
            alpha_grid = j["alpha_grid"].get<std::vector<double>>();
        }
        const auto summaries = robustness_sweep(alpha_grid, config, config.seed);
        std::vector<std::pair<std::string, const SweepSummary*>> cells;
        for (std::size_t a = 0; a < alpha_grid.size(); ++a) {
            cells.emplace_back("alpha=" + format_numeric(alpha_grid[a]), &summaries[a]);
        }
        write_records_csv((fs::path(args.out_dir) / "reps.csv").string(), scenario_hash, cells);
        MatrixXd table(static_cast<Eigen::Index>(alpha_grid.size()), 6);
        for (std::size_t a = 0; a < alpha_grid.size(); ++a) {
            const SweepSummary& s = summaries[a];
            table.row(static_cast<Eigen::Index>(a)) << alpha_grid[a], s.fdr_mean(), s.fdr_se(),
                s.power_mean(), s.power_se(), static_cast<double>(s.records.size());
        }
        write_csv((fs::path(args.out_dir) / "summary.csv").string(), table,
                  {"alpha", "fdr_mean", "fdr_se", "power_mean", "power_se", "reps"});
    } else if (experiment == "fdr_sweep") {
        StatisticConfig stat_config;
        const std::string statistic = j.value("statistic", "lcd");
        if (statistic == "lcd") {
            stat_config.kind = StatisticKind::LCD;
        } else if (statistic == "lsm") {
            stat_config.kind = StatisticKind::LSM;
        } else {
            throw validation_error("scenario: statistic must be lcd or lsm");
        }
        stat_config.family = (config.response == ResponseKind::binomial_logit)
                                 ? Family::logistic
                                 : Family::gaussian;
        SMethod method = SMethod::SDP;
        const std::string s_name = j.value("s_method", "sdp");
        if (s_name == "eq") method = SMethod::EQ;
        else if (s_name == "sdp") method = SMethod::SDP;
        else if (s_name == "asdp") method = SMethod::ASDP;
        else throw validation_error("scenario: s_method must be eq, sdp, or asdp");
        const bool plus = j.value("plus", true);

        const SweepSummary summary = fdr_sweep(config, method, stat_config, plus);
        std::vector<std::pair<std::string, const SweepSummary*>> cells = {{"main", &summary}};
        write_records_csv((fs::path(args.out_dir) / "reps.csv").string(), scenario_hash, cells);
        MatrixXd table(1, 5);
        table.row(0) << summary.fdr_mean(), summary.fdr_se(), summary.power_mean(),
            summary.power_se(), static_cast<double>(summary.records.size());
        write_csv((fs::path(args.out_dir) / "summary.csv").string(), table,
                  {"fdr_mean", "fdr_se", "power_mean", "power_se", "reps"});
    } else {
        throw validation_error("scenario: experiment must be fdr_sweep, robustness, or inflation");
    }

    RunManifest manifest = base_manifest(command_line, config.seed, {args.scenario_path});
    write_manifest((fs::path(args.out_dir) / "manifest.json").string(), manifest);
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Model-free knockoff variable selection toolkit"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "Worker thread cap (default: hardware, or KNOCKOFF_THREADS)");

    KnockoffsArgs ko;
    CLI::App* ko_cmd = app.add_subcommand("knockoffs", "Generate knockoff copies of a design");
    ko_cmd->add_option("--x", ko.x_path, "Design CSV (header row, one sample per line)")->required();
    ko_cmd->add_option("--model", ko.model_path, "Covariate model config (JSON)")->required();
    ko_cmd->add_option("--method", ko.method, "exact-gaussian | second-order | scip");
    ko_cmd->add_option("--s", ko.s_name, "eq | sdp | asdp | zero");
    ko_cmd->add_option("--blocks", ko.blocks, "ASDP max block size (0: singleton blocks)");
    ko_cmd->add_option("--seed", ko.seed, "RNG seed");
    ko_cmd->add_option("--out", ko.out_dir, "Output directory")->required();

    SelectArgs sel;
    CLI::App* sel_cmd = app.add_subcommand("select", "Knockoff selection with FDR control");
    sel_cmd->add_option("--x", sel.x_path, "Design CSV")->required();
    sel_cmd->add_option("--xtilde", sel.xtilde_path, "Knockoff CSV")->required();
    sel_cmd->add_option("--y", sel.y_path, "Response CSV (single column)")->required();
    sel_cmd->add_option("--statistic", sel.statistic, "lcd | lsm | bvs");
    sel_cmd->add_option("--family", sel.family, "gaussian | logistic | auto");
    sel_cmd->add_option("--q", sel.q, "Target FDR level in (0,1)");
    sel_cmd->add_flag("--no-plus", sel.no_plus, "Use the knockoff (not knockoff+) threshold");
    sel_cmd->add_option("--cv-folds", sel.cv_folds, "Cross-validation folds for LCD");
    sel_cmd->add_option("--seed", sel.seed, "RNG seed");
    sel_cmd->add_option("--bvs-pi", sel.bvs_pi, "BVS prior inclusion probability (default 60/p)");
    sel_cmd->add_option("--bvs-tau", sel.bvs_tau, "BVS slab standard deviation");
    sel_cmd->add_option("--bvs-a", sel.bvs_a, "BVS precision prior shape");
    sel_cmd->add_option("--bvs-b", sel.bvs_b, "BVS precision prior scale");
    sel_cmd->add_option("--bvs-burnin", sel.bvs_burnin, "BVS burn-in sweeps");
    sel_cmd->add_option("--bvs-samples", sel.bvs_samples, "BVS posterior samples");
    sel_cmd->add_option("--out", sel.out_dir, "Output directory")->required();

    CrtArgs crt;
    CLI::App* crt_cmd = app.add_subcommand("crt", "Conditional randomization test p-values");
    crt_cmd->add_option("--x", crt.x_path, "Design CSV")->required();
    crt_cmd->add_option("--y", crt.y_path, "Response CSV (single column)")->required();
    crt_cmd->add_option("--model", crt.model_path, "Covariate model config (JSON)")->required();
    crt_cmd->add_option("--k", crt.k, "Randomizations per feature");
    crt_cmd->add_option("--statistic", crt.statistic, "lasso | corr");
    crt_cmd->add_option("--lambda", crt.lambda, "Fixed lasso penalty");
    crt_cmd->add_flag("--lambda-cv", crt.lambda_cv, "Choose the penalty by pilot cross-validation");
    crt_cmd->add_option("--early-stop-cutoff", crt.early_stop_cutoff,
                        "Abandon features confidently above this p-value (0: off)");
    crt_cmd->add_option("--check-every", crt.check_every, "Early-stop check period");
    crt_cmd->add_option("--seed", crt.seed, "RNG seed");
    crt_cmd->add_option("--out", crt.out_dir, "Output directory")->required();

    SimulateArgs sim;
    CLI::App* sim_cmd = app.add_subcommand("simulate", "Run a scenario sweep");
    sim_cmd->add_option("--scenario", sim.scenario_path, "Scenario config (JSON)")->required();
    sim_cmd->add_option("--reps", sim.reps_override, "Override scenario repetitions");
    sim_cmd->add_option("--seed", sim.seed_override, "Override scenario seed");
    sim_cmd->add_option("--out", sim.out_dir, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e); // prints usage, exit 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitValidation;
    }
    if (threads > 0) {
        thread_cap() = threads;
    }

    const std::string command_line = join_args(argc, argv);
    try {
        if (ko_cmd->parsed()) return cmd_knockoffs(ko, command_line);
        if (sel_cmd->parsed()) return cmd_select(sel, command_line);
        if (crt_cmd->parsed()) return cmd_crt(crt, command_line);
        if (sim_cmd->parsed()) return cmd_simulate(sim, command_line);
    } catch (const validation_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const numeric_error& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "unexpected failure: " << e.what() << '\n';
        return kExitNumeric;
    }
    return kExitValidation;
}
