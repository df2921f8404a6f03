#pragma once

#include <Eigen/Dense>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "nlohmann/json.hpp"

namespace sklaw {

// Attribute payload carried on records; discrete features hold strings,
// continuous features numbers.
using AttrValue = std::variant<double, std::string>;
using AttrMap = std::map<std::string, AttrValue>;

struct TrainingRecord {
    std::string learner_id;
    int step = 0;  // 1-based ordinal within the learner's sequence
    std::string exercise_id;
    double score = 0.0;  // nominally [0,1]; may exceed under noise
    double time = 0.0;   // seconds since epoch, or ticks in simulation
    AttrMap user_attrs;
    AttrMap exercise_attrs;

    friend bool operator==(const TrainingRecord&, const TrainingRecord&) = default;
};

// Exercise-to-skill incidence. Every exercise row tags at least one skill.
struct QMatrix {
    std::vector<std::string> skills;
    std::vector<std::string> exercise_ids;
    Eigen::MatrixXd rows;  // n x k, entries 0/1
    std::map<std::string, int> index;

    int num_skills() const { return static_cast<int>(skills.size()); }
    int num_exercises() const { return static_cast<int>(exercise_ids.size()); }
    int row_of(const std::string& exercise_id) const;  // throws on unknown id
    Eigen::VectorXd skill_vector(const std::string& exercise_id) const;

    friend bool operator==(const QMatrix& a, const QMatrix& b) {
        return a.skills == b.skills && a.exercise_ids == b.exercise_ids && a.rows == b.rows;
    }
};

enum class FeatureFamily { U, E, S };
enum class FeatureKind { Discrete, Continuous };

struct FeatureSpec {
    std::string name;
    FeatureFamily family = FeatureFamily::U;
    FeatureKind kind = FeatureKind::Continuous;
    std::vector<std::string> vocabulary;  // one-hot categories for discrete features

    int width() const {
        return kind == FeatureKind::Discrete ? static_cast<int>(vocabulary.size()) : 1;
    }
    friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

struct FeatureSchema {
    std::vector<FeatureSpec> features;

    std::vector<FeatureSpec> family(FeatureFamily f) const;
    int width(FeatureFamily f) const;
    friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;
};

struct TrainingDataset {
    std::vector<std::string> learners;                 // first-appearance order
    std::vector<std::vector<TrainingRecord>> sequences;  // aligned with learners
    QMatrix qmatrix;
    FeatureSchema schema;

    std::size_t total_records() const;
    int learner_index(const std::string& id) const;  // -1 when absent
};

// Per-skill history summary strictly before a step: practice counts, time
// since each skill was last practiced (0 if never), and total practices.
struct PracticeCounts {
    Eigen::VectorXd per_skill;
    Eigen::VectorXd interval;
    double total = 0.0;
};

QMatrix load_qmatrix(const std::string& path);
void save_qmatrix(const QMatrix& q, const std::string& path);

FeatureSchema schema_from_json(const nlohmann::json& j);
nlohmann::json schema_to_json(const FeatureSchema& schema);
FeatureSchema load_schema(const std::string& path);
void save_schema(const FeatureSchema& schema, const std::string& path);

std::vector<TrainingRecord> load_records(const std::string& path);
void save_records(std::span<const TrainingRecord> records, const std::string& path);

// Groups records into per-learner sequences (sorted by time then step),
// validates contiguous 1-based steps and referential integrity against the
// Q-matrix, and drops learners shorter than min_sequence_length.
TrainingDataset build_dataset(std::vector<TrainingRecord> records, QMatrix qmatrix,
                              FeatureSchema schema, int min_sequence_length = 1);
TrainingDataset load_dataset(const std::string& records_path, const std::string& qmatrix_path,
                             const std::string& schema_path, int min_sequence_length = 1);
void save_dataset(const TrainingDataset& dataset, const std::string& records_path);

// Rescales scores into [0.01, 0.8]: per group, the full score is the
// top-10% raw score (nearest rank); scores min-max normalize against
// [min, full] and clamp above the full score. Zero spread maps the whole
// group to the 0.405 midpoint.
TrainingDataset normalize_scores(TrainingDataset dataset, bool per_exercise);

PracticeCounts practice_counts(const std::vector<TrainingRecord>& sequence, int upto_step,
                               const QMatrix& qmatrix);

}  // namespace sklaw
