#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nlohmann/json.hpp"
#include "sklaw/sim/simulate.hpp"
#include "sklaw/sym/expr.hpp"
#include "sklaw/sym/gp.hpp"

namespace sklaw {

// 1 - SS_res/SS_tot. Lengths must match and be >= 2; constant actuals have
// no explainable variance and are rejected.
double r_squared(const Eigen::VectorXd& pred, const Eigen::VectorXd& actual);

// Gaussian-likelihood Bayesian information criterion with plugin variance:
// n*ln(sse/n) + k*ln(n). sse must be positive.
double bic(int n, int k_params, double sse);

enum class FitFamily { Power, Exponential };

// y ~ a + b*N^c (power) or a + b*exp(c*N) (exponential)
struct FitResult {
    FitFamily family = FitFamily::Power;
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
    double r2 = 0.0;
    double sse = 0.0;
};

// Coarse grid over c with (a, b) solved by least squares at each c, then
// local refinement of c with a shrinking step. Needs >= 10 points; power
// fits require counts >= 1.
FitResult fit_classical_law(FitFamily family, const Eigen::VectorXd& N, const Eigen::VectorXd& y);

nlohmann::json fit_to_json(const FitResult& fit);

// Canonical additive decomposition of a candidate law:
//   intercept + linear.x
//   + exp_scale * exp(exp_inner.x + exp_shift)
//   + pow_scale * (pow_inner.x + pow_shift)^pow_exponent
//   + log_scale * log(log_inner.x + log_shift)
// Expressions outside this grammar (products of variables, sin terms,
// repeated special terms) do not decompose.
struct TermDecomp {
    Eigen::VectorXd linear;
    double intercept = 0.0;
    bool has_exp = false;
    double exp_scale = 0.0;
    Eigen::VectorXd exp_inner;
    double exp_shift = 0.0;
    bool has_pow = false;
    double pow_scale = 0.0;
    Eigen::VectorXd pow_inner;
    double pow_shift = 0.0;
    double pow_exponent = 0.0;
    bool has_log = false;
    double log_scale = 0.0;
    Eigen::VectorXd log_inner;
    double log_shift = 0.0;
};

std::optional<TermDecomp> decompose_law(const Expr& e, int num_vars);

enum class LawTemplate { Linear, Exponential, Power, InversePower, Logarithmic, Unmatched };

LawTemplate classify_template(const std::optional<TermDecomp>& decomp);
std::string template_name(LawTemplate t);

// The collapsed count-space form of a preset law for one skill: mutualism
// and forgetting folded into per-count coefficients.
TermDecomp preset_decomp(const GoverningLaw& preset, int own_var, int other_var, int num_vars);

struct ConstantCheck {
    std::string name;
    double fitted = 0.0;
    double preset = 0.0;
    double error = 0.0;  // relative, or absolute when preset == 0
    bool pass = false;
};

struct RestorationVerdict {
    bool feature = false;
    bool structure = false;
    bool value = false;
    std::string matched_template;
    std::vector<ConstantCheck> constants;
    std::string canonical_text;
};

// Feature: the discovered variable set equals the preset's count set.
// Structure: feature holds and the decomposition matches the preset family.
// Value: structure holds and every canonical constant is within rel_tol
// relative error (abs_tol absolute when the preset constant is zero).
RestorationVerdict assess_restoration(const Expr& discovered, std::span<const std::string> var_names,
                                      const GoverningLaw& preset, int own_var, int other_var,
                                      double rel_tol = 0.01, double abs_tol = 0.01);

nlohmann::json verdict_to_json(const RestorationVerdict& verdict);

// Group front entries by distinct-variable count, take each group's best
// fit, and return the smallest group whose error is within `margin`
// relative of the global best (strict rule: exactly-at-margin keeps the
// smaller group).
const FrontEntry* select_law(const ParetoFront& front, double margin = 0.1);

}  // namespace sklaw
