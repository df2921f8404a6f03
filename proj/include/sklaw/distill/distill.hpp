#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nlohmann/json.hpp"
#include "sklaw/explain/importance.hpp"
#include "sklaw/model/regressor.hpp"
#include "sklaw/sym/expr.hpp"
#include "sklaw/sym/gp.hpp"

namespace sklaw {

struct DistillConfig {
    int sample_size = 2000;
    int top_k = 8;
    double alpha_threshold = 1e-4;      // recorded smoothness below this → α ≡ 1
    double attention_tolerance = 0.05;  // max surrogate MAE accepted on the symbolic-α path
    double law_margin = 0.1;            // parsimony margin handed to select_law
    GpConfig gp;
    std::uint64_t seed = 1;

    void validate() const;
};

// Row sample of one skill's mastery module: raw ω features, their
// batchnormed images, and the frozen mastery net's outputs (ψ excluded).
struct SampleSet {
    std::vector<int> rows;    // sampled record indices in dataset tensor order
    Eigen::MatrixXd omega;    // s × K
    Eigen::MatrixXd z;        // s × K batchnorm (eval mode) outputs
    Eigen::VectorXd teacher;  // s
    bool with_replacement = false;  // set when s exceeds the record count
};

// Frozen sub-network closures; the model must outlive the returned functor.
TeacherFn mastery_teacher(Regressor& model, int skill);
TeacherFn attention_teacher(Regressor& model, int skill);

SampleSet sample_inputs(Regressor& model, const TrainingDataset& dataset, int skill, int s,
                        std::uint64_t seed, bool unit_alpha = false);

// One module's distillation artifacts: gradient importance over the inputs,
// the screened columns, and the Pareto front fit against the teacher.
struct ModuleDistillation {
    ImportanceReport importance;
    std::vector<int> selected;       // input feature indices, ascending
    std::vector<std::string> names;  // names of the selected features
    Eigen::MatrixXd inputs;          // s × |selected| screened sample C(X)
    Eigen::VectorXd teacher_values;  // s
    ParetoFront front;               // expressions over the selected columns
    double teacher_mae = 0.0;        // best front entry vs the teacher
};

ModuleDistillation distill_module(const TeacherFn& teacher, const Eigen::MatrixXd& X,
                                  std::span<const std::string> names,
                                  const DistillConfig& config);

struct DiscoveredLaw {
    std::string skill;
    Expr expr;                           // over the ω feature space (encoded names)
    std::vector<std::string> variables;  // names of the variables the law uses
    double teacher_mae = 0.0;            // surrogate MAE of the chosen front entry
    std::string attention_mode;          // "substituted-1" or "symbolic"
    bool interpretable = true;
    std::string note;              // why not, when interpretable is false
    double psi_mean = 0.0;         // mean initial proficiency folded into expr
    std::string attention_text;    // α̂ rendering, symbolic path only
};

// ω feature names after encoding: U and S names pass through, E names become
// sums ("corr_X" → "Sum_X") because the α-weighted prefix totals are sums.
std::vector<std::string> omega_feature_names(const FeatureLayout& layout);

// Picks a law from the mastery front, rewrites its variables from batchnorm
// space back to ω features by inverting the frozen affine map, and folds the
// mean initial proficiency into the constant term.
DiscoveredLaw compose_law(const Regressor& model, int skill, const ModuleDistillation& mastery,
                          const DistillConfig& config, const std::string& attention_mode);

struct SkillExtraction {
    std::string skill;
    ModuleDistillation mastery;
    std::optional<ModuleDistillation> attention;  // symbolic-α path only
    std::optional<DiscoveredLaw> law;
    std::string error;  // set when this skill's pipeline failed
};

struct ExtractionResult {
    std::vector<std::string> feature_names;  // ω naming shared by all laws
    std::string attention_mode;  // decided once from the recorded smoothness value
    std::vector<SkillExtraction> skills;
};

// Full per-skill pipeline: sample → importance → symbolic fit → compose.
// A failure aborts only that skill; the others still run.
ExtractionResult extract_laws(Regressor& model, const TrainingDataset& dataset,
                              const DistillConfig& config);

// A law rewritten onto practice counts N1..Nk (skill order): per-skill sums
// and running counts collapse onto the same count variable and the global
// sum expands to N1+…+Nk. Unrecognized features keep their names.
struct CountLaw {
    Expr expr;
    std::vector<std::string> names;  // count names first, then extras
};

CountLaw to_count_space(const Expr& law, std::span<const std::string> feature_names,
                        std::span<const std::string> skills);

nlohmann::json laws_to_json(const ExtractionResult& result);
ExtractionResult laws_from_json(const nlohmann::json& j);
void save_laws(const ExtractionResult& result, const std::string& path);
ExtractionResult load_laws(const std::string& path);

}  // namespace sklaw
