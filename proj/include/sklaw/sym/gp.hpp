#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nlohmann/json.hpp"
#include "sklaw/sym/expr.hpp"

namespace sklaw {

struct GpConfig {
    int population = 100;
    int iterations = 2000;
    int max_length = 15;  // node-count budget per individual
    int tournament = 5;
    double p_crossover = 0.6;
    double p_subtree = 0.2;
    double p_point = 0.1;
    double p_const = 0.1;  // remainder after the four rates is reproduction
    bool nesting_restriction = true;
    bool refine = true;
    int refine_every = 100;
    std::uint64_t seed = 1;

    void validate() const;
};

struct FrontEntry {
    Expr expr;  // simplified, nesting-valid
    double mae = 0.0;
    int complexity = 0;
};

// Best expression per complexity budget: entries ascend in complexity with
// strictly decreasing MAE.
struct ParetoFront {
    std::vector<FrontEntry> entries;

    // Simplifies, evaluates, and inserts if the expression beats every
    // entry at its complexity or below; prunes dominated entries.
    void insert(const Expr& candidate, const Eigen::MatrixXd& X, const Eigen::VectorXd& y);
    const FrontEntry* best() const;  // lowest MAE (last entry), nullptr if empty
};

nlohmann::json front_to_json(const ParetoFront& front, std::span<const std::string> names);
ParetoFront front_from_json(const nlohmann::json& j, std::span<const std::string> names,
                            const Eigen::MatrixXd& X, const Eigen::VectorXd& y);
void save_front(const ParetoFront& front, std::span<const std::string> names,
                const std::string& path);

// Mean absolute error of the expression against the targets; expressions
// invalid on any sample score infinity.
double gp_fitness(const Expr& e, const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

// Derivative-free coordinate descent over the constant nodes (shrinking
// step, fixed budget). Never returns a worse MAE than the input.
Expr refine_constants(const Expr& e, const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

// Tournament-selection genetic programming over the expression grammar,
// under the length budget and nesting restriction. Deterministic given the
// config seed.
ParetoFront gp_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const GpConfig& config);

}  // namespace sklaw
