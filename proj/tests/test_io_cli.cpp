#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "knockoffs/io.hpp"
#include "knockoffs/rng.hpp"
#include "test_support.hpp"

using namespace knockoff;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("knockoff_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string cli_path() {
    const char* env = std::getenv("KNOCKOFF_CLI");
    return env != nullptr ? env : "";
}

int run_cli(const std::string& args) {
    const int status = std::system((cli_path() + " " + args).c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_identity_model(const fs::path& path, int p) {
    nlohmann::json j;
    j["kind"] = "gaussian";
    MatrixXd eye = MatrixXd::Identity(p, p);
    for (int r = 0; r < p; ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < p; ++c) row.push_back(eye(r, c));
        j["sigma"].push_back(row);
    }
    std::ofstream out(path);
    out << j.dump();
}

} // namespace

TEST_CASE("csv round trip preserves doubles exactly") {
    const fs::path dir = temp_dir("csv");
    Rng rng(71);
    MatrixXd m(17, 4);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double raw = rng.normal();
            m(i, j) = raw * std::pow(10.0, static_cast<double>(rng.uniform_index(20)) - 10.0);
        }
    }
    m(0, 0) = 0.1 + 0.2; // classic non-representable sum
    write_csv((dir / "m.csv").string(), m, default_headers("x", 4));
    const CsvTable back = read_csv((dir / "m.csv").string());
    REQUIRE(back.values == m);
    REQUIRE(back.headers == default_headers("x", 4));
}

TEST_CASE("csv errors carry row and column positions") {
    const fs::path dir = temp_dir("csverr");
    {
        std::ofstream out(dir / "bad.csv");
        out << "a,b\n1,2\n3,oops\n";
    }
    try {
        read_csv((dir / "bad.csv").string());
        FAIL("expected validation_error");
    } catch (const validation_error& e) {
        const std::string what = e.what();
        REQUIRE(what.find("row 3") != std::string::npos);
        REQUIRE(what.find("column 2") != std::string::npos);
        REQUIRE(what.find("oops") != std::string::npos);
    }

    {
        std::ofstream out(dir / "ragged.csv");
        out << "a,b\n1\n";
    }
    REQUIRE_THROWS_AS(read_csv((dir / "ragged.csv").string()), validation_error);
}

TEST_CASE("model files round trip through JSON") {
    const fs::path dir = temp_dir("model");
    write_identity_model(dir / "gauss.json", 3);
    const CovariateModel model = load_model((dir / "gauss.json").string());
    REQUIRE(std::holds_alternative<GaussianModel>(model));
    REQUIRE(std::get<GaussianModel>(model).dim() == 3);

    {
        nlohmann::json j;
        j["kind"] = "markov";
        j["states"] = {2, 2};
        j["initial"] = {0.5, 0.5};
        j["transitions"] = {{{0.9, 0.1}, {0.2, 0.8}}};
        std::ofstream out(dir / "markov.json");
        out << j.dump();
    }
    const CovariateModel markov = load_model((dir / "markov.json").string());
    REQUIRE(std::holds_alternative<DiscreteMarkovModel>(markov));

    {
        std::ofstream out(dir / "broken.json");
        out << "{ not json";
    }
    REQUIRE_THROWS_AS(load_model((dir / "broken.json").string()), validation_error);
}

TEST_CASE("cli help and argument errors", "[cli]") {
    REQUIRE_FALSE(cli_path().empty());
    REQUIRE(run_cli("--help > /dev/null 2>&1") == 0);
    REQUIRE(run_cli("knockoffs --help > /dev/null 2>&1") == 0);
    REQUIRE(run_cli("select --help > /dev/null 2>&1") == 0);
    REQUIRE(run_cli("crt --help > /dev/null 2>&1") == 0);
    REQUIRE(run_cli("simulate --help > /dev/null 2>&1") == 0);
    REQUIRE(run_cli("--definitely-not-a-flag > /dev/null 2>&1") == 2);
    REQUIRE(run_cli("knockoffs --x nope.csv > /dev/null 2>&1") == 2); // missing required flags
}

TEST_CASE("cli knockoffs: copy construction, missing files, determinism", "[cli]") {
    const fs::path dir = temp_dir("cli_knockoffs");
    {
        std::ofstream out(dir / "x.csv");
        out << "x1,x2\n0.5,1.5\n-0.25,2\n1,0\n";
    }
    write_identity_model(dir / "model.json", 2);

    // s = 0: knockoffs equal the input design exactly.
    REQUIRE(run_cli("knockoffs --x " + (dir / "x.csv").string() + " --model " +
                    (dir / "model.json").string() + " --s zero --seed 5 --out " +
                    (dir / "copy").string() + " > /dev/null 2>&1") == 0);
    const CsvTable x = read_csv((dir / "x.csv").string());
    const CsvTable copy = read_csv((dir / "copy" / "x_tilde.csv").string());
    REQUIRE(copy.values == x.values);

    // Missing model file: exit code 2, message names the path.
    REQUIRE(run_cli("knockoffs --x " + (dir / "x.csv").string() + " --model " +
                    (dir / "missing.json").string() + " --out " + (dir / "o").string() +
                    " 2> " + (dir / "err.txt").string()) == 2);
    REQUIRE(slurp(dir / "err.txt").find("missing.json") != std::string::npos);

    // Same args + seed: byte-identical outputs.
    const std::string base = "knockoffs --x " + (dir / "x.csv").string() + " --model " +
                             (dir / "model.json").string() + " --s eq --seed 99 --out ";
    REQUIRE(run_cli(base + (dir / "r1").string() + " > /dev/null 2>&1") == 0);
    REQUIRE(run_cli(base + (dir / "r2").string() + " > /dev/null 2>&1") == 0);
    REQUIRE(slurp(dir / "r1" / "x_tilde.csv") == slurp(dir / "r2" / "x_tilde.csv"));
}

TEST_CASE("cli select: validation failures and the all-negative case", "[cli]") {
    const fs::path dir = temp_dir("cli_select");
    {
        std::ofstream out(dir / "x.csv");
        out << "x1,x2\n1,0\n0,1\n1,1\n0,0\n2,1\n1,2\n";
    }
    {
        std::ofstream out(dir / "xt.csv");
        out << "x1,x2\n0,1\n1,0\n1,1\n0,0\n1,2\n2,1\n";
    }
    {
        std::ofstream out(dir / "y.csv");
        out << "y\n1\n0\n1\n0\n1\n0\n";
    }
    REQUIRE(run_cli("select --x " + (dir / "x.csv").string() + " --xtilde " +
                    (dir / "xt.csv").string() + " --y " + (dir / "y.csv").string() +
                    " --q 1.5 --out " + (dir / "bad").string() + " > /dev/null 2>&1") == 2);

    // Well-formed run emits a result file with an inf sentinel when nothing
    // can be selected.
    REQUIRE(run_cli("select --x " + (dir / "x.csv").string() + " --xtilde " +
                    (dir / "xt.csv").string() + " --y " + (dir / "y.csv").string() +
                    " --statistic lsm --family gaussian --q 0.2 --out " +
                    (dir / "ok").string() + " > /dev/null 2>&1") == 0);
    const std::string result = slurp(dir / "ok" / "result.json");
    REQUIRE(result.find("threshold") != std::string::npos);

    // Dimension mismatch: exit 2.
    {
        std::ofstream out(dir / "short.csv");
        out << "y\n1\n0\n";
    }
    REQUIRE(run_cli("select --x " + (dir / "x.csv").string() + " --xtilde " +
                    (dir / "xt.csv").string() + " --y " + (dir / "short.csv").string() +
                    " --out " + (dir / "mismatch").string() + " > /dev/null 2>&1") == 2);
}

TEST_CASE("cli crt and simulate smoke runs", "[cli]") {
    const fs::path dir = temp_dir("cli_crt");
    {
        std::ofstream out(dir / "x.csv");
        Rng rng(5);
        out << "x1,x2,x3\n";
        for (int i = 0; i < 30; ++i) {
            out << format_numeric(rng.normal()) << ',' << format_numeric(rng.normal()) << ','
                << format_numeric(rng.normal()) << '\n';
        }
    }
    {
        std::ofstream out(dir / "y.csv");
        Rng rng(6);
        out << "y\n";
        for (int i = 0; i < 30; ++i) {
            out << format_numeric(rng.normal()) << '\n';
        }
    }
    write_identity_model(dir / "model.json", 3);
    REQUIRE(run_cli("crt --x " + (dir / "x.csv").string() + " --y " + (dir / "y.csv").string() +
                    " --model " + (dir / "model.json").string() +
                    " --k 19 --statistic corr --seed 4 --out " + (dir / "crt_out").string() +
                    " > /dev/null 2>&1") == 0);
    const CsvTable pvals = read_csv((dir / "crt_out" / "pvalues.csv").string());
    REQUIRE(pvals.values.rows() == 3);
    REQUIRE((pvals.values.col(1).array() > 0.0).all());
    REQUIRE((pvals.values.col(1).array() <= 1.0).all());

    {
        nlohmann::json scenario;
        scenario["experiment"] = "fdr_sweep";
        scenario["n"] = 50;
        scenario["p"] = 10;
        scenario["design"] = "iid";
        scenario["response"] = "gaussian";
        scenario["k_nonzero"] = 2;
        scenario["amplitude"] = 4.0;
        scenario["q"] = 0.2;
        scenario["reps"] = 3;
        scenario["seed"] = 7;
        scenario["statistic"] = "lcd";
        scenario["s_method"] = "eq";
        std::ofstream out(dir / "scenario.json");
        out << scenario.dump();
    }
    REQUIRE(run_cli("simulate --scenario " + (dir / "scenario.json").string() + " --out " +
                    (dir / "sim_out").string() + " > /dev/null 2>&1") == 0);
    const CsvTable reps = read_csv((dir / "sim_out" / "reps.csv").string());
    REQUIRE(reps.values.rows() == 3);
    REQUIRE(fs::exists(dir / "sim_out" / "summary.csv"));
    REQUIRE(fs::exists(dir / "sim_out" / "manifest.json"));
}
