#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "sklaw/data/dataset.hpp"

namespace sklaw {

// Column layout of the static feature vector SF = U ⊕ E ⊕ S. Families are
// laid out contiguously in that order regardless of schema file order;
// discrete features expand to one-hot blocks named "feature=value".
struct FeatureLayout {
    std::vector<std::string> names;
    int u_width = 0;
    int e_width = 0;
    int s_width = 0;

    int total() const { return u_width + e_width + s_width; }
    int u_start() const { return 0; }
    int e_start() const { return u_width; }
    int s_start() const { return u_width + e_width; }
    int index_of(const std::string& name) const;  // -1 when absent
};

FeatureLayout make_layout(const FeatureSchema& schema);

// One record's static features. `step` is the 1-based position inside the
// learner's sequence; history strictly before it feeds the S family.
Eigen::RowVectorXd build_static_features(const TrainingDataset& dataset, int learner, int step,
                                         const FeatureLayout& layout);

// Whole-dataset tensors in learner-major row order (learners as stored,
// steps ascending), shared by training, evaluation, and distillation.
struct DatasetTensors {
    Eigen::MatrixXd sf;                          // n × K static features
    std::vector<std::pair<int, int>> segments;   // per learner: (start row, length)
    std::vector<int> row_learner;                // n, index into dataset.learners
    std::vector<int> row_exercise;               // n, row in the Q-matrix
    Eigen::MatrixXd qrows;                       // n × k skill incidence
    Eigen::VectorXd scores;                      // n observed scores
    int num_rows() const { return static_cast<int>(sf.rows()); }
};

DatasetTensors build_tensors(const TrainingDataset& dataset, const FeatureLayout& layout);

// Per-exercise scoring parameters carried on the records as exercise
// attributes. known=false when any record lacks them (blind mode).
struct IrtTable {
    Eigen::MatrixXd params;  // E × 3: discrimination, difficulty, guessing
    bool known = false;
};

IrtTable irt_from_dataset(const TrainingDataset& dataset);

}  // namespace sklaw
