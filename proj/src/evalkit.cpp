#include "sklaw/eval/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "sklaw/core/error.hpp"

namespace sklaw {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kZeroCoef = 1e-12;  // below this a collapsed coefficient counts as absent
}

double r_squared(const Eigen::VectorXd& pred, const Eigen::VectorXd& actual) {
    const Eigen::Index n = actual.size();
    if (pred.size() != n) throw ValidationError("prediction and actual lengths differ");
    if (n < 2) throw ValidationError("r-squared needs at least two points");
    const double mean = actual.mean();
    const double sstot = (actual.array() - mean).square().sum();
    const double scale = std::max(1.0, actual.array().abs().maxCoeff());
    if (sstot <= 1e-28 * static_cast<double>(n) * scale * scale)
        throw ValidationError("actual values have no variance");
    const double ssres = (actual - pred).squaredNorm();
    return 1.0 - ssres / sstot;
}

double bic(int n, int k_params, double sse) {
    if (n <= 0) throw ValidationError("bic needs a positive sample count");
    if (k_params < 0) throw ValidationError("bic needs a non-negative parameter count");
    if (!(sse > 0.0)) throw ValidationError("bic needs a positive error sum (degenerate likelihood)");
    const double dn = static_cast<double>(n);
    return dn * std::log(sse / dn) + static_cast<double>(k_params) * std::log(dn);
}

namespace {

struct AbFit {
    double a = 0.0;
    double b = 0.0;
    double sse = kInf;
    bool ok = false;
};

AbFit solve_ab(const Eigen::ArrayXd& z, const Eigen::VectorXd& y) {
    AbFit fit;
    if (!z.isFinite().all()) return fit;
    const double zm = z.mean();
    const double ym = y.mean();
    const double var_z = (z - zm).square().sum();
    if (var_z <= 1e-28 * static_cast<double>(z.size()) *
                     std::pow(std::max(1.0, z.abs().maxCoeff()), 2))
        return fit;
    const double cov = ((z - zm) * (y.array() - ym)).sum();
    fit.b = cov / var_z;
    fit.a = ym - fit.b * zm;
    fit.sse = (fit.a + fit.b * z - y.array()).square().sum();
    fit.ok = std::isfinite(fit.sse);
    return fit;
}

}  // namespace

FitResult fit_classical_law(FitFamily family, const Eigen::VectorXd& N,
                            const Eigen::VectorXd& y) {
    if (N.size() != y.size()) throw ValidationError("count and value lengths differ");
    if (N.size() < 10) throw ValidationError("classical-law fit needs at least 10 points");
    if (family == FitFamily::Power && N.minCoeff() < 1.0)
        throw ValidationError("power fit needs counts >= 1");
    const double ym = y.mean();
    const double sstot = (y.array() - ym).square().sum();
    const double yscale = std::max(1.0, y.array().abs().maxCoeff());
    if (sstot <= 1e-28 * static_cast<double>(y.size()) * yscale * yscale)
        throw ValidationError("values have no variance");

    const auto basis = [&](double c) -> Eigen::ArrayXd {
        return family == FitFamily::Power ? N.array().pow(c).eval()
                                          : (c * N.array()).exp().eval();
    };

    FitResult best;
    best.family = family;
    double best_sse = kInf;
    bool found = false;
    for (int i = -60; i <= 60; ++i) {
        const double c = 0.05 * i;
        const AbFit fit = solve_ab(basis(c), y);
        if (fit.ok && fit.sse < best_sse) {
            best_sse = fit.sse;
            best.a = fit.a;
            best.b = fit.b;
            best.c = c;
            found = true;
        }
    }
    if (!found) throw ValidationError("degenerate data: no usable exponent");

    double step = 0.05;
    for (int iter = 0; step >= 1e-10 && iter < 10000; ++iter) {
        bool improved = false;
        for (const double dir : {1.0, -1.0}) {
            const double c = best.c + dir * step;
            const AbFit fit = solve_ab(basis(c), y);
            if (fit.ok && fit.sse < best_sse) {
                best_sse = fit.sse;
                best.a = fit.a;
                best.b = fit.b;
                best.c = c;
                improved = true;
                break;
            }
        }
        if (!improved) step *= 0.5;
    }
    best.sse = best_sse;
    best.r2 = 1.0 - best_sse / sstot;
    return best;
}

nlohmann::json fit_to_json(const FitResult& fit) {
    return {{"family", fit.family == FitFamily::Power ? "power" : "exponential"},
            {"a", fit.a},
            {"b", fit.b},
            {"c", fit.c},
            {"r2", fit.r2},
            {"sse", fit.sse}};
}

namespace {

// Recursive additive/multiplicative walker over the preorder node array.
struct Decomposer {
    const Expr& e;
    TermDecomp d;
    bool ok = true;

    Decomposer(const Expr& expr, int num_vars) : e(expr) {
        d.linear = Eigen::VectorXd::Zero(num_vars);
        d.exp_inner = Eigen::VectorXd::Zero(num_vars);
        d.pow_inner = Eigen::VectorXd::Zero(num_vars);
        d.log_inner = Eigen::VectorXd::Zero(num_vars);
    }

    std::size_t left(std::size_t i) const { return i + 1; }
    std::size_t right(std::size_t i) const { return subtree_end(e, i + 1); }

    void add(std::size_t root, double mult) {
        if (!ok) return;
        switch (e.nodes[root].op) {
            case Op::Add: add(left(root), mult); add(right(root), mult); return;
            case Op::Sub: add(left(root), mult); add(right(root), -mult); return;
            case Op::Neg: add(left(root), -mult); return;
            default: term(root, mult); return;
        }
    }

    void factors(std::size_t root, double& coef, std::vector<std::size_t>& subs) {
        switch (e.nodes[root].op) {
            case Op::Mul:
                factors(left(root), coef, subs);
                factors(right(root), coef, subs);
                return;
            case Op::Neg:
                coef = -coef;
                factors(left(root), coef, subs);
                return;
            case Op::Const: coef *= e.nodes[root].value; return;
            default: subs.push_back(root); return;
        }
    }

    // the subtree as coeffs.x + shift, if it is purely linear
    std::optional<std::pair<Eigen::VectorXd, double>> linear_form(std::size_t root) {
        Decomposer sub(e, static_cast<int>(d.linear.size()));
        sub.add(root, 1.0);
        if (!sub.ok || sub.d.has_exp || sub.d.has_pow || sub.d.has_log) return std::nullopt;
        return std::make_pair(sub.d.linear, sub.d.intercept);
    }

    // the subtree's value when it contains no variables
    std::optional<double> const_value(std::size_t root) const {
        const std::size_t end = subtree_end(e, root);
        for (std::size_t i = root; i < end; ++i)
            if (e.nodes[i].op == Op::Var) return std::nullopt;
        Expr sub;
        sub.nodes.assign(e.nodes.begin() + static_cast<std::ptrdiff_t>(root),
                         e.nodes.begin() + static_cast<std::ptrdiff_t>(end));
        return eval(sub, std::span<const double>{});
    }

    void term(std::size_t root, double mult) {
        double coef = mult;
        std::vector<std::size_t> subs;
        factors(root, coef, subs);
        if (subs.empty()) {
            d.intercept += coef;
            return;
        }
        if (subs.size() > 1) {
            ok = false;
            return;
        }
        const std::size_t f = subs[0];
        switch (e.nodes[f].op) {
            case Op::Var: d.linear[e.nodes[f].var] += coef; return;
            case Op::Add:
            case Op::Sub:
            case Op::Neg: add(f, coef); return;  // distribute the factor chain
            case Op::Exp: {
                const auto lin = linear_form(left(f));
                if (!lin) break;
                set_exp(coef, lin->first, lin->second);
                return;
            }
            case Op::Log: {
                const auto lin = linear_form(left(f));
                if (!lin || d.has_log) break;
                d.has_log = true;
                d.log_scale = coef;
                d.log_inner = lin->first;
                d.log_shift = lin->second;
                return;
            }
            case Op::Pow: {
                const std::size_t base = left(f);
                const std::size_t expo = right(f);
                const auto expo_c = const_value(expo);
                if (expo_c) {
                    const double p = *expo_c;
                    const auto lin = linear_form(base);
                    if (!lin || !std::isfinite(p)) break;
                    if (p == 0.0) {
                        d.intercept += coef;
                    } else if (p == 1.0) {
                        d.linear += coef * lin->first;
                        d.intercept += coef * lin->second;
                    } else {
                        if (d.has_pow) break;
                        d.has_pow = true;
                        d.pow_scale = coef;
                        d.pow_inner = lin->first;
                        d.pow_shift = lin->second;
                        d.pow_exponent = p;
                    }
                    return;
                }
                const auto base_c = const_value(base);
                if (base_c) {
                    const double b = *base_c;
                    const auto lin = linear_form(expo);
                    if (b <= 0.0 || !lin) break;
                    // b^L = exp(ln(b)·L): an exponential term in disguise
                    set_exp(coef, (std::log(b) * lin->first.array()).matrix(),
                            std::log(b) * lin->second);
                    return;
                }
                break;
            }
            default: break;
        }
        ok = false;
    }

    void set_exp(double scale, const Eigen::VectorXd& inner, double shift) {
        if (d.has_exp) {
            ok = false;
            return;
        }
        d.has_exp = true;
        d.exp_scale = scale;
        d.exp_inner = inner;
        d.exp_shift = shift;
    }
};

void canonicalize(TermDecomp& d, int own_var) {
    if (d.has_exp && d.exp_shift != 0.0) {
        d.exp_scale *= std::exp(d.exp_shift);
        d.exp_shift = 0.0;
    }
    if (d.has_pow) {
        const double k = d.pow_inner[own_var];
        if (k > 0.0 && k != 1.0) {
            const double factor = std::pow(k, d.pow_exponent);
            if (std::isfinite(factor)) {
                d.pow_scale *= factor;
                d.pow_inner /= k;
                d.pow_shift /= k;
            }
        }
    }
}

std::vector<int> decomp_variables(const TermDecomp& d) {
    std::vector<int> vars;
    for (int i = 0; i < d.linear.size(); ++i) {
        bool used = std::abs(d.linear[i]) > kZeroCoef;
        if (d.has_exp) used = used || std::abs(d.exp_inner[i]) > kZeroCoef;
        if (d.has_pow) used = used || std::abs(d.pow_inner[i]) > kZeroCoef;
        if (d.has_log) used = used || std::abs(d.log_inner[i]) > kZeroCoef;
        if (used) vars.push_back(i);
    }
    return vars;
}

}  // namespace

std::optional<TermDecomp> decompose_law(const Expr& e, int num_vars) {
    if (e.empty() || num_vars < 0) return std::nullopt;
    for (const ExprNode& nd : e.nodes)
        if (nd.op == Op::Var && nd.var >= num_vars) return std::nullopt;
    Decomposer walker(e, num_vars);
    walker.add(0, 1.0);
    if (!walker.ok) return std::nullopt;
    return walker.d;
}

LawTemplate classify_template(const std::optional<TermDecomp>& decomp) {
    if (!decomp) return LawTemplate::Unmatched;
    const TermDecomp& d = *decomp;
    const int specials = int(d.has_exp) + int(d.has_pow) + int(d.has_log);
    if (specials > 1) return LawTemplate::Unmatched;
    if (d.has_exp) return LawTemplate::Exponential;
    if (d.has_log) return LawTemplate::Logarithmic;
    if (d.has_pow) return d.pow_exponent > 0.0 ? LawTemplate::Power : LawTemplate::InversePower;
    return LawTemplate::Linear;
}

std::string template_name(LawTemplate t) {
    switch (t) {
        case LawTemplate::Linear: return "linear";
        case LawTemplate::Exponential: return "exponential";
        case LawTemplate::Power: return "power";
        case LawTemplate::InversePower: return "inverse-power";
        case LawTemplate::Logarithmic: return "logarithmic";
        default: return "unmatched";
    }
}

TermDecomp preset_decomp(const GoverningLaw& preset, int own_var, int other_var, int num_vars) {
    preset.validate();
    if (own_var < 0 || own_var >= num_vars || other_var < 0 || other_var >= num_vars ||
        own_var == other_var)
        throw ValidationError("bad own/other variable wiring");
    TermDecomp d;
    d.linear = Eigen::VectorXd::Zero(num_vars);
    d.exp_inner = Eigen::VectorXd::Zero(num_vars);
    d.pow_inner = Eigen::VectorXd::Zero(num_vars);
    d.log_inner = Eigen::VectorXd::Zero(num_vars);
    switch (preset.family) {
        case LawFamily::Linear:
            d.linear[own_var] += preset.beta * preset.alpha * (1.0 - preset.mu);
            d.linear[other_var] += preset.beta * preset.alpha * preset.mu;
            break;
        case LawFamily::Exponential:
            d.has_exp = true;
            d.exp_scale = preset.beta;
            d.exp_inner[own_var] = preset.alpha * (1.0 - preset.mu);
            d.exp_inner[other_var] = preset.alpha * preset.mu;
            break;
        case LawFamily::Power:
            d.has_pow = true;
            d.pow_scale = preset.beta;
            d.pow_inner[own_var] = 1.0 - preset.mu;
            d.pow_inner[other_var] = preset.mu;
            d.pow_exponent = preset.alpha;
            break;
    }
    d.linear[own_var] -= preset.gamma;
    d.linear[other_var] -= preset.gamma;
    return d;
}

namespace {

void add_check(std::vector<ConstantCheck>& checks, std::string name, double fitted, double preset,
               double rel_tol, double abs_tol) {
    ConstantCheck c;
    c.name = std::move(name);
    c.fitted = fitted;
    c.preset = preset;
    if (preset == 0.0) {
        c.error = std::abs(fitted);
        c.pass = c.error <= abs_tol;
    } else {
        c.error = std::abs(fitted - preset) / std::abs(preset);
        c.pass = c.error <= rel_tol;
    }
    checks.push_back(std::move(c));
}

std::vector<ConstantCheck> compare_decomps(const TermDecomp& disc, const TermDecomp& pre,
                                           std::span<const std::string> names, int own_var,
                                           double rel_tol, double abs_tol) {
    std::vector<ConstantCheck> checks;
    for (int i = 0; i < disc.linear.size(); ++i)
        add_check(checks, "coef(" + names[static_cast<std::size_t>(i)] + ")", disc.linear[i],
                  pre.linear[i], rel_tol, abs_tol);
    add_check(checks, "intercept", disc.intercept, pre.intercept, rel_tol, abs_tol);
    if (pre.has_exp) {
        add_check(checks, "scale", disc.exp_scale, pre.exp_scale, rel_tol, abs_tol);
        for (int i = 0; i < disc.exp_inner.size(); ++i)
            add_check(checks, "rate(" + names[static_cast<std::size_t>(i)] + ")",
                      disc.exp_inner[i], pre.exp_inner[i], rel_tol, abs_tol);
    }
    if (pre.has_pow) {
        add_check(checks, "scale", disc.pow_scale, pre.pow_scale, rel_tol, abs_tol);
        add_check(checks, "exponent", disc.pow_exponent, pre.pow_exponent, rel_tol, abs_tol);
        for (int i = 0; i < disc.pow_inner.size(); ++i)
            if (i != own_var)
                add_check(checks, "base(" + names[static_cast<std::size_t>(i)] + ")",
                          disc.pow_inner[i], pre.pow_inner[i], rel_tol, abs_tol);
        add_check(checks, "shift", disc.pow_shift, pre.pow_shift, rel_tol, abs_tol);
    }
    return checks;
}

}  // namespace

RestorationVerdict assess_restoration(const Expr& discovered,
                                      std::span<const std::string> var_names,
                                      const GoverningLaw& preset, int own_var, int other_var,
                                      double rel_tol, double abs_tol) {
    if (rel_tol <= 0.0 || abs_tol <= 0.0) throw ValidationError("tolerances must be positive");
    const int num_vars = static_cast<int>(var_names.size());

    RestorationVerdict v;
    const Expr s = simplify(discovered);
    v.canonical_text = to_infix(s, var_names);

    const auto disc = decompose_law(s, num_vars);
    const LawTemplate disc_t = classify_template(disc);
    v.matched_template = template_name(disc_t);

    TermDecomp pre = preset_decomp(preset, own_var, other_var, num_vars);
    const LawTemplate pre_t = classify_template(std::optional<TermDecomp>(pre));

    v.feature = variables_of(s) == decomp_variables(pre);
    v.structure = v.feature && disc.has_value() && disc_t != LawTemplate::Unmatched &&
                  disc_t == pre_t;
    if (v.structure) {
        TermDecomp dc = *disc;
        canonicalize(dc, own_var);
        canonicalize(pre, own_var);
        v.constants = compare_decomps(dc, pre, var_names, own_var, rel_tol, abs_tol);
        v.value = std::all_of(v.constants.begin(), v.constants.end(),
                              [](const ConstantCheck& c) { return c.pass; });
    }
    return v;
}

nlohmann::json verdict_to_json(const RestorationVerdict& verdict) {
    nlohmann::json consts = nlohmann::json::array();
    for (const ConstantCheck& c : verdict.constants)
        consts.push_back({{"name", c.name},
                          {"fitted", c.fitted},
                          {"preset", c.preset},
                          {"error", c.error},
                          {"pass", c.pass}});
    return {{"feature", verdict.feature},
            {"structure", verdict.structure},
            {"value", verdict.value},
            {"template", verdict.matched_template},
            {"canonical", verdict.canonical_text},
            {"constants", consts}};
}

const FrontEntry* select_law(const ParetoFront& front, double margin) {
    if (margin < 0.0) throw ValidationError("margin must be non-negative");
    if (front.entries.empty()) return nullptr;
    std::map<int, const FrontEntry*> groups;
    double best_all = kInf;
    for (const FrontEntry& e : front.entries) {
        const int v = static_cast<int>(variables_of(e.expr).size());
        const auto it = groups.find(v);
        if (it == groups.end() || e.mae < it->second->mae) groups[v] = &e;
        best_all = std::min(best_all, e.mae);
    }
    for (const auto& [v, entry] : groups)
        if (entry->mae - best_all <= margin * entry->mae) return entry;
    return front.best();
}

}  // namespace sklaw
