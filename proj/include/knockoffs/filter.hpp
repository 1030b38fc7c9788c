#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <vector>

#include "knockoffs/errors.hpp"

namespace knockoff {

using Eigen::VectorXd;

struct SelectionResult {
    double threshold = std::numeric_limits<double>::infinity();
    std::vector<Eigen::Index> selected;
    double fdp_estimate = 0.0;
    double q = 0.0;
    bool plus = true;
};

// #{W <= -t} / #{W >= t} with the 0/0 = 0 convention.
inline double fdp_hat(const VectorXd& w, double t) {
    if (!(t > 0.0)) {
        throw validation_error("fdp_hat: t must be positive");
    }
    Eigen::Index negatives = 0, positives = 0;
    for (Eigen::Index j = 0; j < w.size(); ++j) {
        if (w(j) <= -t) ++negatives;
        if (w(j) >= t) ++positives;
    }
    if (positives == 0) {
        return negatives == 0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    return static_cast<double>(negatives) / static_cast<double>(positives);
}

// Data-dependent threshold: the smallest t in {|W_j| : |W_j| > 0} with
//   (plus: 1 + #{W <= -t}, else #{W <= -t}) / max(#{W >= t}, 1) <= q,
// or +infinity (empty selection) when no candidate qualifies.  W_j = 0 is
// never selected.
inline SelectionResult knockoff_threshold(const VectorXd& w, double q, bool plus) {
    if (!(q > 0.0 && q < 1.0)) {
        throw validation_error("knockoff_threshold: q must lie in (0, 1)");
    }
    if (!w.allFinite()) {
        throw validation_error("knockoff_threshold: W must be finite");
    }

    std::vector<double> candidates;
    candidates.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index j = 0; j < w.size(); ++j) {
        if (w(j) != 0.0) {
            candidates.push_back(std::abs(w(j)));
        }
    }
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    SelectionResult result;
    result.q = q;
    result.plus = plus;
    result.threshold = std::numeric_limits<double>::infinity();

    for (double t : candidates) {
        Eigen::Index negatives = 0, positives = 0;
        for (Eigen::Index j = 0; j < w.size(); ++j) {
            if (w(j) <= -t) ++negatives;
            if (w(j) >= t) ++positives;
        }
        const double numerator = static_cast<double>(negatives) + (plus ? 1.0 : 0.0);
        const double ratio = numerator / std::max<double>(positives, 1.0);
        if (ratio <= q) {
            result.threshold = t;
            break;
        }
    }

    if (std::isfinite(result.threshold)) {
        for (Eigen::Index j = 0; j < w.size(); ++j) {
            if (w(j) >= result.threshold) {
                result.selected.push_back(j);
            }
        }
        result.fdp_estimate = fdp_hat(w, result.threshold);
    }
    return result;
}

} // namespace knockoff
