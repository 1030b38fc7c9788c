#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "knockoffs/covariate_model.hpp"
#include "knockoffs/errors.hpp"

namespace knockoff {

// ---------------------------------------------------------------------------
// CSV (comma-separated, header row, UTF-8, '.' decimal, unquoted numerics)
// ---------------------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> headers;
    MatrixXd values;
};

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw validation_error("cannot open file: " + path);
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw validation_error(path + ": empty file (expected a header row)");
    }
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }

    CsvTable table;
    {
        std::stringstream header(line);
        std::string cell;
        while (std::getline(header, cell, ',')) {
            table.headers.push_back(cell);
        }
        if (!line.empty() && line.back() == ',') {
            table.headers.push_back("");
        }
    }
    const std::size_t cols = table.headers.size();
    if (cols == 0) {
        throw validation_error(path + ": header row has no columns");
    }

    std::vector<double> data;
    std::size_t rows = 0;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        std::size_t col = 0;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            const std::string cell = line.substr(start, comma == std::string::npos
                                                            ? std::string::npos
                                                            : comma - start);
            if (col >= cols) {
                throw validation_error(path + ": row " + std::to_string(line_no) +
                                       " has more than " + std::to_string(cols) + " columns");
            }
            try {
                std::size_t used = 0;
                const double value = std::stod(cell, &used);
                if (used != cell.size()) {
                    throw std::invalid_argument(cell);
                }
                data.push_back(value);
            } catch (const std::exception&) {
                throw validation_error(path + ": row " + std::to_string(line_no) + ", column " +
                                       std::to_string(col + 1) + ": non-numeric cell '" + cell +
                                       "'");
            }
            ++col;
            if (comma == std::string::npos) {
                break;
            }
            start = comma + 1;
        }
        if (col != cols) {
            throw validation_error(path + ": row " + std::to_string(line_no) + " has " +
                                   std::to_string(col) + " columns, expected " +
                                   std::to_string(cols));
        }
        ++rows;
    }

    table.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            table.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                data[r * cols + c];
        }
    }
    return table;
}

// 17 significant digits: doubles survive a write/read round trip losslessly.
inline std::string format_numeric(double value) {
    char buffer[40];
    std::snprintf(buffer, sizeof(buffer), "%.17g", value);
    return buffer;
}

inline void write_csv(const std::string& path, const MatrixXd& values,
                      const std::vector<std::string>& headers) {
    if (static_cast<Eigen::Index>(headers.size()) != values.cols()) {
        throw validation_error("write_csv: header count does not match columns");
    }
    std::ofstream out(path);
    if (!out) {
        throw validation_error("cannot write file: " + path);
    }
    for (std::size_t c = 0; c < headers.size(); ++c) {
        if (c > 0) out << ',';
        out << headers[c];
    }
    out << '\n';
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
        for (Eigen::Index c = 0; c < values.cols(); ++c) {
            if (c > 0) out << ',';
            out << format_numeric(values(r, c));
        }
        out << '\n';
    }
    if (!out) {
        throw validation_error("failed while writing: " + path);
    }
}

inline std::vector<std::string> default_headers(const std::string& prefix, Eigen::Index count) {
    std::vector<std::string> headers;
    headers.reserve(static_cast<std::size_t>(count));
    for (Eigen::Index i = 0; i < count; ++i) {
        headers.push_back(prefix + std::to_string(i + 1));
    }
    return headers;
}

// ---------------------------------------------------------------------------
// Run manifests
// ---------------------------------------------------------------------------

inline std::uint64_t content_hash_bytes(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw validation_error("cannot open file: " + path);
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return content_hash_bytes(buffer.str());
}

inline const char* library_version() { return "0.1.0"; }

// Everything needed to re-run a command and reproduce its outputs bit-exactly
// (the timestamp is informational and excluded from identity).
struct RunManifest {
    std::string command_line;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::string version = library_version();
    std::vector<std::pair<std::string, std::uint64_t>> input_digests;
    std::string timestamp;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["identity"]["command_line"] = command_line;
        j["identity"]["config_hash"] = config_hash;
        j["identity"]["seed"] = seed;
        j["identity"]["version"] = version;
        auto& inputs = j["identity"]["inputs"];
        inputs = nlohmann::json::array();
        for (const auto& [path, digest] : input_digests) {
            inputs.push_back({{"path", path}, {"digest", digest}});
        }
        j["timestamp"] = timestamp;
        return j;
    }
};

inline std::string now_iso8601() {
    std::time_t t = std::time(nullptr);
    char buffer[32];
    std::strftime(buffer, sizeof(buffer), "%FT%TZ", std::gmtime(&t));
    return buffer;
}

inline void write_manifest(const std::string& path, RunManifest manifest) {
    if (manifest.timestamp.empty()) {
        manifest.timestamp = now_iso8601();
    }
    std::ofstream out(path);
    if (!out) {
        throw validation_error("cannot write file: " + path);
    }
    out << manifest.to_json().dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Model config files (JSON)
// ---------------------------------------------------------------------------

// { "kind": "gaussian", "mean": [...], "sigma": [[...], ...] }
//   (or "sigma_csv": "path.csv"; mean defaults to zero)
// { "kind": "markov", "states": [..], "initial": [...], "transitions": [[[...]]] }
inline CovariateModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw validation_error("cannot open model file: " + path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw validation_error(path + ": invalid JSON (" + e.what() + ")");
    }

    const std::string kind = j.value("kind", "");
    if (kind == "gaussian") {
        MatrixXd sigma;
        if (j.contains("sigma_csv")) {
            sigma = read_csv(j["sigma_csv"].get<std::string>()).values;
        } else if (j.contains("sigma")) {
            const auto& rows = j["sigma"];
            const Eigen::Index p = static_cast<Eigen::Index>(rows.size());
            sigma.resize(p, p);
            for (Eigen::Index r = 0; r < p; ++r) {
                const auto& row = rows[static_cast<std::size_t>(r)];
                if (static_cast<Eigen::Index>(row.size()) != p) {
                    throw validation_error(path + ": sigma must be square");
                }
                for (Eigen::Index c = 0; c < p; ++c) {
                    sigma(r, c) = row[static_cast<std::size_t>(c)].get<double>();
                }
            }
        } else {
            throw validation_error(path + ": gaussian model needs 'sigma' or 'sigma_csv'");
        }
        VectorXd mean = VectorXd::Zero(sigma.rows());
        if (j.contains("mean")) {
            const auto& values = j["mean"];
            if (static_cast<Eigen::Index>(values.size()) != sigma.rows()) {
                throw validation_error(path + ": mean length does not match sigma");
            }
            for (Eigen::Index i = 0; i < mean.size(); ++i) {
                mean(i) = values[static_cast<std::size_t>(i)].get<double>();
            }
        }
        return GaussianModel::make(std::move(mean), std::move(sigma));
    }
    if (kind == "markov") {
        std::vector<int> states = j.at("states").get<std::vector<int>>();
        const auto& init = j.at("initial");
        VectorXd initial(static_cast<Eigen::Index>(init.size()));
        for (Eigen::Index i = 0; i < initial.size(); ++i) {
            initial(i) = init[static_cast<std::size_t>(i)].get<double>();
        }
        std::vector<MatrixXd> transitions;
        for (const auto& t : j.at("transitions")) {
            const Eigen::Index rows = static_cast<Eigen::Index>(t.size());
            const Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(t[0].size()) : 0;
            MatrixXd m(rows, cols);
            for (Eigen::Index r = 0; r < rows; ++r) {
                if (static_cast<Eigen::Index>(t[static_cast<std::size_t>(r)].size()) != cols) {
                    throw validation_error(path + ": ragged transition matrix");
                }
                for (Eigen::Index c = 0; c < cols; ++c) {
                    m(r, c) = t[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
                }
            }
            transitions.push_back(std::move(m));
        }
        return DiscreteMarkovModel::make(std::move(states), std::move(initial),
                                         std::move(transitions));
    }
    throw validation_error(path + ": model 'kind' must be 'gaussian' or 'markov'");
}

} // namespace knockoff
