#pragma once

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nlohmann/json.hpp"
#include "sklaw/nn/tape.hpp"

namespace sklaw {

// A frozen differentiable map from an n×K input batch to an n×1 output,
// built on a fresh tape per call.
using TeacherFn = std::function<TapeVar(Tape&, TapeVar)>;

struct ImportanceReport {
    std::vector<std::string> names;
    Eigen::VectorXd scores;     // normalized to sum 1 unless all_zero
    std::vector<int> rank;      // feature indices, highest score first
    std::vector<int> selected;  // top-k feature indices, ascending
    bool all_zero = false;
    int k = 0;
};

// Mean absolute gradient of the teacher output with respect to each input
// feature, averaged over the sample rows and normalized to sum 1.
ImportanceReport feature_importance(const TeacherFn& teacher, const Eigen::MatrixXd& samples,
                                    std::span<const std::string> names);

// The k highest-scoring features; ties broken by ascending feature index.
// Fills report.selected/report.k and returns the ascending index list.
std::vector<int> select_top_k(ImportanceReport& report, int k);

nlohmann::json importance_to_json(const ImportanceReport& report);
void save_importance(const ImportanceReport& report, const std::string& path);

}  // namespace sklaw
