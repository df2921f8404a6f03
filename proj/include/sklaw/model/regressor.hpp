#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "nlohmann/json.hpp"
#include "sklaw/data/dataset.hpp"
#include "sklaw/model/features.hpp"
#include "sklaw/nn/layers.hpp"
#include "sklaw/nn/tape.hpp"

namespace sklaw {

struct RegressorConfig {
    int hidden = 100;
    bool reg = true;    // smoothness term on (R1) or off (R0)
    double lambda = 1.0;
    double lr = 1e-3;
    int epochs = 5000;
    int batch = 0;      // learners per update; 0 = full batch
    std::uint64_t seed = 1;
    double irt_d = 1.702;
    // "cosine" anneals the rate to near zero across `epochs` (keeps late
    // training from orbiting the optimum); "constant" holds it fixed
    std::string lr_schedule = "cosine";

    void validate() const;
    std::string run_label() const;  // e.g. "H100+R1"
};

double scheduled_lr(const RegressorConfig& config, int epoch_index);

struct CurvePoint {
    int epoch = 0;
    double mae = 0.0;
    double reg = 0.0;
};

// The deep regressor: a shared input batchnorm feeding per-skill attention
// heads, per-skill mastery networks over ω = U ⊕ EE ⊕ S with learnable
// initial proficiency, and a three-parameter logistic scoring head.
struct Regressor {
    RegressorConfig config;
    FeatureLayout layout;
    std::vector<std::string> skills;
    std::vector<std::string> learner_ids;

    ParamStore store;
    BatchNorm bn_att;
    std::vector<Mlp> att;
    std::vector<BatchNorm> bn_msty;
    std::vector<Mlp> msty;
    std::vector<int> psi;  // per-skill m×1 parameter handles

    bool irt_known = true;
    Eigen::MatrixXd irt;  // E×3: discrimination, difficulty, guessing (known mode)
    int irt_disc_raw = -1, irt_diff = -1, irt_guess_raw = -1;  // blind mode

    Adam adam;
    std::vector<CurvePoint> curves;
    double final_mae = 0.0;
    double final_reg = 0.0;
};

// Differentiable graph over one batch of rows; exposes the intermediates
// tests and distillation need.
struct TapeForward {
    TapeVar mae, reg, total;      // 1×1 scalars
    TapeVar pred;                 // n×1
    TapeVar z_att;                // n × K batchnormed attention inputs
    std::vector<TapeVar> alpha;   // per skill, n×1
    std::vector<TapeVar> ee;      // per skill, n × e_width encoded features
    std::vector<TapeVar> omega;   // per skill, n × K mastery-net inputs
    std::vector<TapeVar> z_msty;  // per skill, n × K batchnormed mastery inputs
    std::vector<TapeVar> phi;     // per skill, n×1
};

// unit_alpha replaces every attention output with the constant 1, turning the
// encoded E-features into plain practice-count sums (the α-substitution view).
TapeForward forward_on_tape(Tape& tape, Regressor& model, const DatasetTensors& tensors,
                            bool train_mode, bool unit_alpha = false);

struct ForwardPass {
    Eigen::MatrixXd alpha;  // n×k
    Eigen::MatrixXd phi;    // n×k
    Eigen::VectorXd pred;   // n
    double mae = 0.0;
    double reg = 0.0;
};

Regressor init_regressor(const TrainingDataset& dataset, const RegressorConfig& config);
void train_more(Regressor& model, const TrainingDataset& dataset, int epochs);
Regressor train_regressor(const TrainingDataset& dataset, const RegressorConfig& config);
ForwardPass forward_pass(Regressor& model, const TrainingDataset& dataset,
                         bool train_mode = false, bool unit_alpha = false);

// guess + (1−guess)·σ(d·disc·(mastery_dot_q − beta_term))
double predict_score_3pl(double mastery_dot_q, double beta_term, double discrimination,
                         double guessing, double d);

void save_regressor(const Regressor& model, const std::string& path);
Regressor load_regressor(const std::string& path);

nlohmann::json curves_to_json(const std::vector<CurvePoint>& curves);
std::vector<CurvePoint> curves_from_json(const nlohmann::json& j);
void save_curves(const std::vector<CurvePoint>& curves, const std::string& path);
std::vector<CurvePoint> load_curves(const std::string& path);

}  // namespace sklaw
