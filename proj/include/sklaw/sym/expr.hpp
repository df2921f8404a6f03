#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nlohmann/json.hpp"

namespace sklaw {

// Operator vocabulary for symbolic laws. Neg is rendering sugar for a -1
// coefficient and is normalized away by simplify() wherever a sum or product
// can absorb the sign.
enum class Op : std::uint8_t { Const, Var, Neg, Exp, Log, Sin, Add, Sub, Mul, Pow };

constexpr int arity(Op op) {
    switch (op) {
        case Op::Const:
        case Op::Var: return 0;
        case Op::Neg:
        case Op::Exp:
        case Op::Log:
        case Op::Sin: return 1;
        default: return 2;
    }
}

// Operators whose subtrees may not contain further special operators when the
// nesting restriction is active.
constexpr bool is_special(Op op) {
    return op == Op::Exp || op == Op::Log || op == Op::Sin || op == Op::Pow;
}

struct ExprNode {
    Op op;
    double value = 0.0;  // Const payload
    int var = -1;        // Var payload

    friend bool operator==(const ExprNode&, const ExprNode&) = default;
};

// Expression tree stored as a preorder node vector. Subtrees are contiguous
// ranges, which keeps genetic operators (subtree pick, splice) cheap.
struct Expr {
    std::vector<ExprNode> nodes;

    bool empty() const { return nodes.empty(); }
    friend bool operator==(const Expr&, const Expr&) = default;

    static Expr constant(double v);
    static Expr variable(int index);
    static Expr unary(Op op, Expr child);
    static Expr binary(Op op, Expr lhs, Expr rhs);
};

// Index one past the subtree rooted at `root`.
std::size_t subtree_end(const Expr& e, std::size_t root);

// Node count; the complexity measure used for length budgets and fronts.
inline int complexity(const Expr& e) { return static_cast<int>(e.nodes.size()); }

// True iff no special operator (exp, log, sin, pow) sits inside the subtree
// of another special operator.
bool check_nesting(const Expr& e);

// Total order over expressions (lexicographic over nodes); canonical sort key
// for commutative chains.
int compare_expr(const Expr& a, const Expr& b);

// Scalar evaluation. Domain errors (log of non-positive, 0^negative,
// negative base with fractional exponent) and overflow yield nullopt rather
// than a crash; the invalid marker poisons every enclosing node.
std::optional<double> eval(const Expr& e, std::span<const double> x);

// Workspace for batch evaluation; reusing it across calls avoids per-call
// allocation in the GP inner loop. A deque so that growing it never
// invalidates buffers already handed out to outer recursion frames.
struct EvalScratch {
    std::deque<Eigen::ArrayXd> stack;
    Eigen::ArrayXd& at(int level, Eigen::Index n);
};

// Columnwise evaluation over a sample matrix (rows = samples, cols = feature
// values). Invalid samples come back as NaN.
void eval_batch(const Expr& e, const Eigen::MatrixXd& X, EvalScratch& scratch, Eigen::ArrayXd& out);
Eigen::ArrayXd eval_batch(const Expr& e, const Eigen::MatrixXd& X);

// Canonical simplification: constant folding, identity elimination (x+0,
// x*1, x^1, x^0), sign absorption, and flatten-and-sort of +/- and * chains.
// Semantics are preserved on inputs where both sides evaluate to a valid
// value; node count never increases.
Expr simplify(const Expr& e);

// Replaces every occurrence of variable `var` with `replacement`.
Expr substitute(const Expr& e, int var, const Expr& replacement);

// Distinct variable indices, ascending.
std::vector<int> variables_of(const Expr& e);

std::string to_infix(const Expr& e, std::span<const std::string> var_names);
Expr parse_infix(const std::string& text, std::span<const std::string> var_names);

nlohmann::json to_json_ast(const Expr& e, std::span<const std::string> var_names);
Expr from_json_ast(const nlohmann::json& j, std::span<const std::string> var_names);

// Shortest round-trip decimal rendering of a double.
std::string format_double(double v);

}  // namespace sklaw
