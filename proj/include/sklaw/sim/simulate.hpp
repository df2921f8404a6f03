#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "sklaw/data/dataset.hpp"

namespace sklaw {

enum class LawFamily { Linear, Exponential, Power };

// Preset governing law: mastery as a function of practice counts, with an
// effective count M = (1-mu)*n_own + mu*n_other and count-based forgetting.
struct GoverningLaw {
    LawFamily family = LawFamily::Linear;
    double alpha = 1.0;  // exercise rate
    double beta = 1.0;   // scale
    double gamma = 0.0;  // forgetting rate
    double mu = 0.0;     // mutualism factor; 0 = no cross-skill transfer

    void validate() const;
};

// Linear:      beta * alpha * M - gamma * (n_own + n_other)
// Exponential: beta * exp(alpha * M) - gamma * (n_own + n_other)
// Power:       beta * M^alpha - gamma * (n_own + n_other), with 0^alpha := 0
double law_eval(const GoverningLaw& law, double n_own, double n_other);

// The three two-skill benchmark settings; skill 1 carries the mutualism term.
std::vector<GoverningLaw> preset_laws(int setting);

struct SimExercise {
    std::string exercise_id;
    int skill = 0;
    double difficulty = 0.0;
    double guessing = 0.0;
    double discrimination = 0.0;
};

// 3PL item response: guessing + (1-guessing) * sigmoid(d * disc * (mastery - difficulty))
double irt_response(double mastery, const SimExercise& exercise, double d);

struct SimConfig {
    int setting = 1;
    double noise_sigma = 0.0;
    int num_learners = 50;
    int exercises_per_skill = 20;
    int sequence_length = 20;
    std::uint64_t seed = 1;
    double irt_d = 1.702;

    void validate() const;
};

// Ground-truth mastery at one step (the value scores were generated from).
struct MasteryTruth {
    std::string learner_id;
    int step = 0;
    Eigen::VectorXd mastery;
};

struct SimResult {
    TrainingDataset dataset;
    std::vector<MasteryTruth> truth;
    std::vector<SimExercise> exercises;
    std::vector<GoverningLaw> laws;
};

SimResult simulate(const SimConfig& config);

void save_truth(const std::vector<MasteryTruth>& truth, const std::string& path);
std::vector<MasteryTruth> load_truth(const std::string& path);

}  // namespace sklaw
