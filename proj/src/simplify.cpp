#include <algorithm>
#include <cmath>
#include <vector>

#include "sklaw/sym/expr.hpp"

namespace sklaw {

namespace {

Expr copy_subtree(const Expr& e, std::size_t root) {
    Expr out;
    const std::size_t end = subtree_end(e, root);
    out.nodes.assign(e.nodes.begin() + static_cast<std::ptrdiff_t>(root),
                     e.nodes.begin() + static_cast<std::ptrdiff_t>(end));
    return out;
}

bool is_const(const Expr& e) { return e.nodes.size() == 1 && e.nodes[0].op == Op::Const; }

// Product with a leading constant coefficient, i.e. Mul(Const, rest).
bool has_const_head(const Expr& e) {
    return e.nodes.size() > 1 && e.nodes[0].op == Op::Mul && e.nodes[1].op == Op::Const;
}

struct Term {
    double coeff;
    Expr core;
};

// Flattens a +/- chain into signed terms plus a folded constant.
void collect_sum(const Expr& e, double sign, std::vector<Term>& terms, double& const_acc) {
    const Op op = e.nodes[0].op;
    if (op == Op::Add || op == Op::Sub) {
        const std::size_t lhs = 1;
        const std::size_t rhs = subtree_end(e, lhs);
        collect_sum(copy_subtree(e, lhs), sign, terms, const_acc);
        collect_sum(copy_subtree(e, rhs), op == Op::Sub ? -sign : sign, terms, const_acc);
        return;
    }
    if (op == Op::Neg) {
        collect_sum(copy_subtree(e, 1), -sign, terms, const_acc);
        return;
    }
    if (op == Op::Const) {
        const_acc += sign * e.nodes[0].value;
        return;
    }
    if (has_const_head(e)) {
        const double c = e.nodes[1].value;
        if (c == 0.0) return;
        terms.push_back({sign * c, copy_subtree(e, 2)});
        return;
    }
    terms.push_back({sign, e});
}

// Flattens a * chain into a constant coefficient and sorted factors.
void collect_product(const Expr& e, double& coeff, std::vector<Expr>& factors) {
    const Op op = e.nodes[0].op;
    if (op == Op::Mul) {
        const std::size_t lhs = 1;
        const std::size_t rhs = subtree_end(e, lhs);
        collect_product(copy_subtree(e, lhs), coeff, factors);
        collect_product(copy_subtree(e, rhs), coeff, factors);
        return;
    }
    if (op == Op::Neg) {
        coeff = -coeff;
        collect_product(copy_subtree(e, 1), coeff, factors);
        return;
    }
    if (op == Op::Const) {
        coeff *= e.nodes[0].value;
        return;
    }
    factors.push_back(e);
}

Expr scaled_term(double coeff, Expr core) {
    if (coeff == 1.0) return core;
    if (coeff == -1.0) return Expr::unary(Op::Neg, std::move(core));
    return Expr::binary(Op::Mul, Expr::constant(coeff), std::move(core));
}

Expr rebuild_sum(std::vector<Term> terms, double const_acc) {
    std::sort(terms.begin(), terms.end(), [](const Term& a, const Term& b) {
        const int c = compare_expr(a.core, b.core);
        if (c != 0) return c < 0;
        return a.coeff < b.coeff;
    });
    std::vector<Term> positives, negatives;
    for (Term& t : terms) (t.coeff > 0 ? positives : negatives).push_back(std::move(t));
    // The folded constant joins its sign class last so sums read "x + 3".
    if (const_acc > 0) positives.push_back({const_acc, {}});
    if (const_acc < 0) negatives.push_back({const_acc, {}});
    if (positives.empty() && negatives.empty()) return Expr::constant(const_acc);
    if (positives.empty()) {
        // All-negative sum: lead with a term whose constant can absorb the
        // sign, so the head costs no Neg node.
        for (std::size_t i = 0; i < negatives.size(); ++i) {
            if (negatives[i].core.empty() || negatives[i].coeff != -1.0) {
                std::rotate(negatives.begin(), negatives.begin() + static_cast<std::ptrdiff_t>(i),
                            negatives.begin() + static_cast<std::ptrdiff_t>(i) + 1);
                break;
            }
        }
    }

    Expr out;
    bool have_head = false;
    for (Term& t : positives) {
        Expr piece = t.core.empty() ? Expr::constant(t.coeff) : scaled_term(t.coeff, std::move(t.core));
        out = have_head ? Expr::binary(Op::Add, std::move(out), std::move(piece)) : std::move(piece);
        have_head = true;
    }
    for (Term& t : negatives) {
        if (!have_head) {
            out = t.core.empty() ? Expr::constant(t.coeff) : scaled_term(t.coeff, std::move(t.core));
            have_head = true;
            continue;
        }
        Expr piece =
            t.core.empty() ? Expr::constant(-t.coeff) : scaled_term(-t.coeff, std::move(t.core));
        out = Expr::binary(Op::Sub, std::move(out), std::move(piece));
    }
    return out;
}

Expr rebuild_product(double coeff, std::vector<Expr> factors) {
    if (coeff == 0.0) return Expr::constant(0.0);
    if (factors.empty()) return Expr::constant(coeff);
    std::sort(factors.begin(), factors.end(),
              [](const Expr& a, const Expr& b) { return compare_expr(a, b) < 0; });
    Expr chain = std::move(factors[0]);
    for (std::size_t i = 1; i < factors.size(); ++i)
        chain = Expr::binary(Op::Mul, std::move(chain), std::move(factors[i]));
    return scaled_term(coeff, std::move(chain));
}

Expr simp_unary(Op op, Expr child) {
    if (is_const(child)) {
        const double v = child.nodes[0].value;
        double folded;
        switch (op) {
            case Op::Neg: folded = -v; break;
            case Op::Exp: folded = std::exp(v); break;
            case Op::Log: folded = std::log(v); break;
            default: folded = std::sin(v);
        }
        if (std::isfinite(folded)) return Expr::constant(folded);
        return Expr::unary(op, std::move(child));  // domain error stays symbolic
    }
    if (op == Op::Neg) {
        if (child.nodes[0].op == Op::Neg) return copy_subtree(child, 1);
        if (has_const_head(child)) {
            Expr out = child;
            out.nodes[1].value = -out.nodes[1].value;
            return out;
        }
    }
    return Expr::unary(op, std::move(child));
}

Expr simp_binary(Op op, Expr lhs, Expr rhs) {
    if (op == Op::Add || op == Op::Sub) {
        std::vector<Term> terms;
        double const_acc = 0.0;
        collect_sum(lhs, 1.0, terms, const_acc);
        collect_sum(rhs, op == Op::Sub ? -1.0 : 1.0, terms, const_acc);
        return rebuild_sum(std::move(terms), const_acc);
    }
    if (op == Op::Mul) {
        double coeff = 1.0;
        std::vector<Expr> factors;
        collect_product(lhs, coeff, factors);
        collect_product(rhs, coeff, factors);
        return rebuild_product(coeff, std::move(factors));
    }
    // Pow
    if (is_const(rhs)) {
        const double p = rhs.nodes[0].value;
        if (p == 1.0) return lhs;
        if (p == 0.0) return Expr::constant(1.0);
        if (is_const(lhs)) {
            const double folded = std::pow(lhs.nodes[0].value, p);
            if (std::isfinite(folded)) return Expr::constant(folded);
        }
    }
    if (is_const(lhs) && lhs.nodes[0].value == 1.0) return Expr::constant(1.0);
    return Expr::binary(Op::Pow, std::move(lhs), std::move(rhs));
}

Expr simplify_rec(const Expr& e, std::size_t& cursor) {
    const ExprNode node = e.nodes[cursor++];
    switch (arity(node.op)) {
        case 0: {
            Expr out;
            out.nodes.push_back(node);
            return out;
        }
        case 1: return simp_unary(node.op, simplify_rec(e, cursor));
        default: {
            Expr lhs = simplify_rec(e, cursor);
            Expr rhs = simplify_rec(e, cursor);
            return simp_binary(node.op, std::move(lhs), std::move(rhs));
        }
    }
}

}  // namespace

Expr simplify(const Expr& e) {
    std::size_t cursor = 0;
    return simplify_rec(e, cursor);
}

}  // namespace sklaw
