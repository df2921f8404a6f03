#include "sklaw/sym/gp.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <fstream>
#include <limits>

#include "sklaw/core/error.hpp"
#include "sklaw/core/rng.hpp"

namespace sklaw {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

void GpConfig::validate() const {
    if (population < 2) throw ValidationError("population must be at least 2");
    if (iterations < 1) throw ValidationError("iterations must be positive");
    if (max_length < 1) throw ValidationError("max_length must be positive");
    if (tournament < 1 || tournament > population)
        throw ValidationError("tournament size must lie in [1, population]");
    double sum = 0.0;
    for (const double p : {p_crossover, p_subtree, p_point, p_const}) {
        if (p < 0.0) throw ValidationError("operator probabilities must be non-negative");
        sum += p;
    }
    if (sum > 1.0 + 1e-12) throw ValidationError("operator probabilities must sum to at most 1");
    if (refine_every < 1) throw ValidationError("refine_every must be positive");
}

double gp_fitness(const Expr& e, const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    EvalScratch scratch;
    Eigen::ArrayXd out;
    eval_batch(e, X, scratch, out);
    if (!out.isFinite().all()) return kInf;
    return (out - y.array()).abs().mean();
}

void ParetoFront::insert(const Expr& candidate, const Eigen::MatrixXd& X,
                         const Eigen::VectorXd& y) {
    if (candidate.empty()) return;
    Expr s = simplify(candidate);
    if (!check_nesting(s)) return;
    const double mae = gp_fitness(s, X, y);
    if (!std::isfinite(mae)) return;
    const int c = complexity(s);
    for (const FrontEntry& e : entries)
        if (e.complexity <= c && e.mae <= mae) return;
    std::erase_if(entries,
                  [&](const FrontEntry& e) { return e.complexity >= c && e.mae >= mae; });
    FrontEntry ne{std::move(s), mae, c};
    const auto pos = std::upper_bound(
        entries.begin(), entries.end(), ne,
        [](const FrontEntry& a, const FrontEntry& b) { return a.complexity < b.complexity; });
    entries.insert(pos, std::move(ne));
}

const FrontEntry* ParetoFront::best() const {
    return entries.empty() ? nullptr : &entries.back();
}

nlohmann::json front_to_json(const ParetoFront& front, std::span<const std::string> names) {
    nlohmann::json arr = nlohmann::json::array();
    for (const FrontEntry& e : front.entries)
        arr.push_back({{"complexity", e.complexity},
                       {"mae", e.mae},
                       {"expression_text", to_infix(e.expr, names)},
                       {"expression_ast", to_json_ast(e.expr, names)}});
    return {{"front", arr}};
}

ParetoFront front_from_json(const nlohmann::json& j, std::span<const std::string> names,
                            const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    ParetoFront front;
    try {
        for (const auto& entry : j.at("front"))
            front.insert(from_json_ast(entry.at("expression_ast"), names), X, y);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad front payload: ") + e.what());
    }
    return front;
}

void save_front(const ParetoFront& front, std::span<const std::string> names,
                const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open file for writing: " + path);
    out << front_to_json(front, names).dump(2) << '\n';
}

Expr refine_constants(const Expr& e, const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    std::vector<std::size_t> cpos;
    for (std::size_t i = 0; i < e.nodes.size(); ++i)
        if (e.nodes[i].op == Op::Const) cpos.push_back(i);
    if (cpos.empty()) return e;

    Expr best = e;
    double best_mae = gp_fitness(best, X, y);
    if (!std::isfinite(best_mae)) return e;

    EvalScratch scratch;
    Eigen::ArrayXd out;
    const auto mae_of = [&](const Expr& trial) {
        eval_batch(trial, X, scratch, out);
        if (!out.isFinite().all()) return kInf;
        return (out - y.array()).abs().mean();
    };

    std::vector<double> step(cpos.size());
    for (std::size_t j = 0; j < cpos.size(); ++j)
        step[j] = 0.25 * (1.0 + std::abs(e.nodes[cpos[j]].value));

    for (int round = 0; round < 70; ++round) {
        bool improved = false;
        for (std::size_t j = 0; j < cpos.size(); ++j) {
            for (const double dir : {1.0, -1.0}) {
                Expr trial = best;
                trial.nodes[cpos[j]].value += dir * step[j];
                double m = mae_of(trial);
                if (m < best_mae) {
                    // ride the descent direction while it keeps paying off
                    int extend = 0;
                    while (extend++ < 25) {
                        Expr more = trial;
                        more.nodes[cpos[j]].value += dir * step[j];
                        const double m2 = mae_of(more);
                        if (m2 >= m) break;
                        trial = std::move(more);
                        m = m2;
                    }
                    best = std::move(trial);
                    best_mae = m;
                    improved = true;
                    break;
                }
            }
        }
        if (!improved) {
            double widest = 0.0;
            for (double& s : step) {
                s *= 0.5;
                widest = std::max(widest, s);
            }
            if (widest < 1e-10) break;
        }
    }
    return best;
}

namespace {

// Levenberg-Marquardt polish of the constant nodes with a forward-difference
// Jacobian. Coordinate descent stalls on curved parameter ridges (the scale
// and exponent of a*exp(c*x) trade off along a narrow valley); a damped
// Gauss-Newton step follows them. Never returns a worse fit than the input.
Expr refine_lm(const Expr& e, const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    std::vector<std::size_t> cpos;
    for (std::size_t i = 0; i < e.nodes.size(); ++i)
        if (e.nodes[i].op == Op::Const) cpos.push_back(i);
    if (cpos.empty()) return e;
    const int p = static_cast<int>(cpos.size());

    EvalScratch scratch;
    Eigen::ArrayXd out;
    const auto resid = [&](const Expr& t, Eigen::VectorXd& r) {
        eval_batch(t, X, scratch, out);
        if (!out.isFinite().all()) return false;
        r = out.matrix() - y;
        return true;
    };

    Expr cur = e;
    Eigen::VectorXd r;
    if (!resid(cur, r)) return e;
    double sse = r.squaredNorm();
    const double mae_in = r.cwiseAbs().mean();
    double lambda = 1e-3;
    Eigen::MatrixXd J(X.rows(), p);
    bool done = false;
    for (int iter = 0; iter < 60 && !done; ++iter) {
        const Eigen::VectorXd r0 = r;
        bool jac_ok = true;
        for (int jp = 0; jp < p; ++jp) {
            Expr t = cur;
            double& v = t.nodes[cpos[static_cast<std::size_t>(jp)]].value;
            const double h = 1e-6 * (1.0 + std::abs(v));
            v += h;
            Eigen::VectorXd rj;
            if (!resid(t, rj)) {
                jac_ok = false;
                break;
            }
            J.col(jp) = (rj - r0) / h;
        }
        if (!jac_ok) break;
        const Eigen::MatrixXd jtj = J.transpose() * J;
        const Eigen::VectorXd g = J.transpose() * r0;
        bool stepped = false;
        for (int tries = 0; tries < 8 && !stepped; ++tries) {
            Eigen::MatrixXd m = jtj;
            m.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
            const Eigen::VectorXd delta = m.ldlt().solve(-g);
            if (delta.allFinite()) {
                Expr t = cur;
                for (int jp = 0; jp < p; ++jp)
                    t.nodes[cpos[static_cast<std::size_t>(jp)]].value += delta(jp);
                Eigen::VectorXd rt;
                if (resid(t, rt)) {
                    const double s2 = rt.squaredNorm();
                    if (s2 < sse) {
                        if (sse - s2 < 1e-13 * (sse + 1e-300)) done = true;
                        cur = std::move(t);
                        r = std::move(rt);
                        sse = s2;
                        lambda = std::max(lambda / 3.0, 1e-12);
                        stepped = true;
                    }
                }
            }
            if (!stepped) lambda *= 5.0;
        }
        if (!stepped) break;
    }
    return r.cwiseAbs().mean() <= mae_in ? cur : e;
}

struct Individual {
    Expr expr;
    double mae = kInf;
    int complexity = 0;
};

bool better(const Individual& a, const Individual& b) {
    if (a.mae != b.mae) return a.mae < b.mae;
    return a.complexity < b.complexity;
}

// True when an expression of raw complexity c would extend the front.
bool would_improve(const ParetoFront& front, int c, double mae) {
    if (!std::isfinite(mae)) return false;
    const FrontEntry* last = nullptr;
    for (const FrontEntry& e : front.entries) {
        if (e.complexity > c) break;
        last = &e;
    }
    return last == nullptr || last->mae > mae;
}

class GpRun {
  public:
    GpRun(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const GpConfig& config)
        : x_(X), y_(y), cfg_(config), rng_(config.seed),
          num_vars_(static_cast<int>(X.cols())) {}

    ParetoFront run() {
        std::vector<Individual> pop;
        pop.reserve(static_cast<std::size_t>(cfg_.population));
        for (int i = 0; i < cfg_.population; ++i) {
            Expr e = i < num_vars_ ? Expr::variable(i)
                                   : random_expr(pick_int(1, cfg_.max_length), true);
            pop.push_back(make_individual(std::move(e)));
            front_.insert(pop.back().expr, x_, y_);
        }
        if (cfg_.refine) seed_templates(pop);

        for (int gen = 1; gen <= cfg_.iterations; ++gen) {
            std::vector<Individual> next;
            next.reserve(pop.size());
            next.push_back(*std::min_element(pop.begin(), pop.end(), better));  // elite
            while (next.size() < pop.size()) {
                const double r = rng_.uniform();
                const Individual* parent = &tournament(pop);
                Expr child;
                if (r < cfg_.p_crossover) {
                    child = crossover(parent->expr, tournament(pop).expr);
                } else if (r < cfg_.p_crossover + cfg_.p_subtree) {
                    child = subtree_mutation(parent->expr);
                } else if (r < cfg_.p_crossover + cfg_.p_subtree + cfg_.p_point) {
                    child = point_mutation(parent->expr);
                } else if (r < cfg_.p_crossover + cfg_.p_subtree + cfg_.p_point + cfg_.p_const) {
                    child = perturb_constant(parent->expr);
                } else {
                    next.push_back(*parent);  // reproduction keeps the cached fitness
                    continue;
                }
                Individual ind = make_individual(std::move(child));
                if (would_improve(front_, ind.complexity, ind.mae))
                    front_.insert(ind.expr, x_, y_);
                if (std::isfinite(ind.mae) && is_special(ind.expr.nodes.front().op)) {
                    // out_ still holds this child's values
                    if (auto wrapped = calibrate(ind.expr, out_)) {
                        Individual cal = make_individual(std::move(*wrapped));
                        if (would_improve(front_, cal.complexity, cal.mae))
                            front_.insert(cal.expr, x_, y_);
                    }
                }
                next.push_back(std::move(ind));
            }
            pop.swap(next);
            if (cfg_.refine && gen % cfg_.refine_every == 0) refine_front(pop);
        }
        if (cfg_.refine) refine_front(pop, true);
        return std::move(front_);
    }

  private:
    std::size_t pick_index(std::size_t n) {
        return static_cast<std::size_t>(rng_.uniform_int(0, static_cast<std::int64_t>(n) - 1));
    }

    int pick_int(int lo, int hi) { return static_cast<int>(rng_.uniform_int(lo, hi)); }

    double fitness(const Expr& e) {
        eval_batch(e, x_, scratch_, out_);
        if (!out_.isFinite().all()) return kInf;
        return (out_ - y_.array()).abs().mean();
    }

    Individual make_individual(Expr e) {
        Individual ind;
        ind.mae = fitness(e);
        ind.complexity = complexity(e);
        ind.expr = std::move(e);
        return ind;
    }

    const Individual& tournament(const std::vector<Individual>& pop) {
        std::size_t winner = pick_index(pop.size());
        for (int i = 1; i < cfg_.tournament; ++i) {
            const std::size_t c = pick_index(pop.size());
            if (better(pop[c], pop[winner])) winner = c;
        }
        return pop[winner];
    }

    bool admissible(const Expr& e) const {
        if (complexity(e) > cfg_.max_length) return false;
        return !cfg_.nesting_restriction || check_nesting(e);
    }

    Expr random_terminal() {
        if (num_vars_ > 0 && rng_.uniform() < 0.6)
            return Expr::variable(pick_int(0, num_vars_ - 1));
        return Expr::constant(rng_.uniform(-2.0, 2.0));
    }

    Op pick_unary(bool allow_special) {
        if (!allow_special || rng_.uniform() < 0.4) return Op::Neg;
        switch (pick_int(0, 2)) {
            case 0: return Op::Exp;
            case 1: return Op::Log;
            default: return Op::Sin;
        }
    }

    Op pick_binary(bool allow_special) {
        switch (pick_int(0, allow_special ? 3 : 2)) {
            case 0: return Op::Add;
            case 1: return Op::Sub;
            case 2: return Op::Mul;
            default: return Op::Pow;
        }
    }

    Expr random_expr(int budget, bool allow_special) {
        allow_special = allow_special || !cfg_.nesting_restriction;
        if (budget < 2) return random_terminal();
        if (budget < 3 || rng_.uniform() < 0.25) {
            if (rng_.uniform() < 0.55) return random_terminal();
            const Op op = pick_unary(allow_special);
            return Expr::unary(op, random_expr(budget - 1, allow_special && !is_special(op)));
        }
        const Op op = pick_binary(allow_special);
        const bool inner = allow_special && !is_special(op);
        const int left = pick_int(1, budget - 2);
        return Expr::binary(op, random_expr(left, inner), random_expr(budget - 1 - left, inner));
    }

    Expr crossover(const Expr& a, const Expr& b) {
        for (int tries = 0; tries < 8; ++tries) {
            const std::size_t ia = pick_index(a.nodes.size());
            const std::size_t ea = subtree_end(a, ia);
            const std::size_t ib = pick_index(b.nodes.size());
            const std::size_t eb = subtree_end(b, ib);
            Expr child;
            child.nodes.reserve(a.nodes.size() - (ea - ia) + (eb - ib));
            child.nodes.insert(child.nodes.end(), a.nodes.begin(),
                               a.nodes.begin() + static_cast<std::ptrdiff_t>(ia));
            child.nodes.insert(child.nodes.end(),
                               b.nodes.begin() + static_cast<std::ptrdiff_t>(ib),
                               b.nodes.begin() + static_cast<std::ptrdiff_t>(eb));
            child.nodes.insert(child.nodes.end(),
                               a.nodes.begin() + static_cast<std::ptrdiff_t>(ea), a.nodes.end());
            if (admissible(child)) return child;
        }
        return a;
    }

    Expr subtree_mutation(const Expr& a) {
        for (int tries = 0; tries < 8; ++tries) {
            const std::size_t ia = pick_index(a.nodes.size());
            const std::size_t ea = subtree_end(a, ia);
            const int rest = static_cast<int>(a.nodes.size() - (ea - ia));
            const int room = cfg_.max_length - rest;
            if (room < 1) continue;
            const int budget = std::min(room, pick_int(1, 6));
            const Expr sub = random_expr(budget, true);
            Expr child;
            child.nodes.reserve(static_cast<std::size_t>(rest) + sub.nodes.size());
            child.nodes.insert(child.nodes.end(), a.nodes.begin(),
                               a.nodes.begin() + static_cast<std::ptrdiff_t>(ia));
            child.nodes.insert(child.nodes.end(), sub.nodes.begin(), sub.nodes.end());
            child.nodes.insert(child.nodes.end(),
                               a.nodes.begin() + static_cast<std::ptrdiff_t>(ea), a.nodes.end());
            if (admissible(child)) return child;
        }
        return a;
    }

    Expr point_mutation(const Expr& a) {
        for (int tries = 0; tries < 8; ++tries) {
            Expr child = a;
            ExprNode& nd = child.nodes[pick_index(child.nodes.size())];
            switch (arity(nd.op)) {
                case 0:
                    if (nd.op == Op::Const)
                        nd.value = rng_.uniform(-2.0, 2.0);
                    else if (num_vars_ > 0)
                        nd.var = pick_int(0, num_vars_ - 1);
                    break;
                case 1: nd.op = pick_unary(true); break;
                default: nd.op = pick_binary(true); break;
            }
            if (admissible(child)) return child;
        }
        return a;
    }

    Expr perturb_constant(const Expr& a) {
        std::vector<std::size_t> cpos;
        for (std::size_t i = 0; i < a.nodes.size(); ++i)
            if (a.nodes[i].op == Op::Const) cpos.push_back(i);
        if (cpos.empty()) return point_mutation(a);
        Expr child = a;
        double& c = child.nodes[cpos[pick_index(cpos.size())]].value;
        c += rng_.normal(0.0, 0.1 * (1.0 + std::abs(c)));
        return child;
    }

    // L2-optimal output scale and shift: the cheap analytic calibration that
    // lets special-op shapes compete before their surrounding constants exist.
    std::optional<Expr> calibrate(const Expr& e, const Eigen::ArrayXd& f) {
        if (complexity(e) + 4 > cfg_.max_length) return std::nullopt;
        const double n = static_cast<double>(f.size());
        const double fm = f.mean();
        const double ym = y_.mean();
        const double var = ((f - fm) * (f - fm)).sum();
        if (!(var > 1e-12 * n * (1.0 + fm * fm))) return std::nullopt;
        const double a = ((f - fm) * (y_.array() - ym)).sum() / var;
        const double b = ym - a * fm;
        if (!std::isfinite(a) || !std::isfinite(b)) return std::nullopt;
        return Expr::binary(Op::Add, Expr::binary(Op::Mul, Expr::constant(a), e),
                            Expr::constant(b));
    }

    void refine_front(std::vector<Individual>& pop, bool final_polish = false) {
        // promote the current elite individuals: simplification may land
        // them at a lower complexity than the raw-length improvement test saw
        std::vector<const Individual*> elite;
        for (const Individual& ind : pop) elite.push_back(&ind);
        std::partial_sort(elite.begin(), elite.begin() + std::min<std::size_t>(5, elite.size()),
                          elite.end(),
                          [](const Individual* a, const Individual* b) { return better(*a, *b); });
        for (std::size_t i = 0; i < std::min<std::size_t>(5, elite.size()); ++i)
            front_.insert(elite[i]->expr, x_, y_);

        // rescue right-structure/wrong-constant candidates: the best member of
        // each special root-op class is refined even when its raw fitness is
        // hopeless, otherwise e.g. pow(c, x) with a bad base can never compete.
        // Its calibrated copy a*f+b is polished too and injected back into the
        // population, so crossover can build on the shape (a bare exp only
        // fits after output calibration, and additive terms need breeding)
        for (const Op root : {Op::Exp, Op::Log, Op::Sin, Op::Pow}) {
            const Individual* pick = nullptr;
            for (const Individual& ind : pop)
                if (ind.expr.nodes.front().op == root && (!pick || better(ind, *pick)))
                    pick = &ind;
            if (pick) rescue_shape(pick->expr, pop);
        }

        const std::vector<FrontEntry> snapshot = front_.entries;
        for (const FrontEntry& e : snapshot) {
            Expr r = refine_constants(e.expr, x_, y_);
            if (final_polish) r = refine_lm(r, x_, y_);
            front_.insert(r, x_, y_);
        }
    }

    void inject(std::vector<Individual>& pop, Individual cand) {
        auto worst = std::max_element(pop.begin(), pop.end(), better);
        if (better(cand, *worst)) *worst = std::move(cand);
    }

    // polish constants, then offer the shape to the front three ways: as-is,
    // output-calibrated, and with one fitted additive linear term
    void rescue_shape(const Expr& base, std::vector<Individual>& pop) {
        const Expr refined = refine_lm(refine_constants(base, x_, y_), x_, y_);
        front_.insert(refined, x_, y_);
        eval_batch(refined, x_, scratch_, out_);
        if (!out_.isFinite().all()) return;
        if (auto wrapped = calibrate(refined, out_)) {
            Individual cand = make_individual(refine_lm(*wrapped, x_, y_));
            front_.insert(cand.expr, x_, y_);
            inject(pop, std::move(cand));
        }
        boost_with_linear(refined, pop);
    }

    // deterministic shape seeding: every special op over every single variable,
    // so curved families compete from the start instead of waiting for a lucky
    // mutation to both pick the op and survive selection long enough to breed.
    // Inner nonlinear parameters come from a grid with the outer linear ones
    // solved in closed form per grid point, because coordinate descent cannot
    // cross the curved scale/exponent ridge of e.g. a*exp(c*x) on its own.
    void seed_templates(std::vector<Individual>& pop) {
        for (int j = 0; j < num_vars_; ++j)
            for (const Op family : {Op::Exp, Op::Sin, Op::Log, Op::Pow}) grid_seed(family, j, pop);
    }

    void grid_seed(Op family, int j, std::vector<Individual>& pop) {
        const double lo = x_.col(j).minCoeff();
        const double hi = x_.col(j).maxCoeff();
        if (!std::isfinite(lo) || !std::isfinite(hi) || !(hi - lo > 0)) return;
        const Expr x = Expr::variable(j);

        std::vector<Expr> bases;
        switch (family) {
            case Op::Exp:
                for (const double c : {0.05, 0.1, 0.2, 0.4, 0.7, 1.0, 1.5, 2.0, 3.0})
                    for (const double s : {1.0, -1.0})
                        bases.push_back(Expr::unary(
                            Op::Exp, Expr::binary(Op::Mul, Expr::constant(s * c), x)));
                break;
            case Op::Sin:
                for (const double c : {0.25, 0.5, 1.0, 2.0, 4.0})
                    for (const double d : {0.0, 1.05, 2.09})
                        bases.push_back(Expr::unary(
                            Op::Sin,
                            Expr::binary(Op::Add, Expr::binary(Op::Mul, Expr::constant(c), x),
                                         Expr::constant(d))));
                break;
            case Op::Log:
                for (const double t : {0.05, 0.2, 0.5, 1.0, 3.0})
                    bases.push_back(Expr::unary(
                        Op::Log,
                        Expr::binary(Op::Add, x, Expr::constant(-lo + t * (hi - lo)))));
                break;
            default:  // Pow
                for (const double t : {0.05, 0.2, 0.5, 1.0, 3.0})
                    for (const double e : {-2.0, -1.0, -0.5, 0.3, 0.5, 0.8, 1.5, 2.0, 3.0})
                        bases.push_back(Expr::binary(
                            Op::Pow,
                            Expr::binary(Op::Add, x, Expr::constant(-lo + t * (hi - lo))),
                            Expr::constant(e)));
                break;
        }

        const Eigen::Index n = x_.rows();
        Eigen::MatrixXd A2(n, 2), A3(n, 3);
        A2.col(1).setOnes();
        A3.col(2).setOnes();
        double cal_sse = kInf;
        std::size_t cal_base = 0;
        Eigen::Vector2d cal_w = Eigen::Vector2d::Zero();
        // best grid point per additive variable, not one global winner: the
        // coarse-grid ranking across k is unreliable near the optimum, and a
        // wrong k here locks the local search into the wrong basin
        std::vector<double> boost_sse(static_cast<std::size_t>(num_vars_), kInf);
        std::vector<std::size_t> boost_base(static_cast<std::size_t>(num_vars_), 0);
        std::vector<Eigen::Vector3d> boost_w(static_cast<std::size_t>(num_vars_),
                                             Eigen::Vector3d::Zero());
        for (std::size_t b = 0; b < bases.size(); ++b) {
            eval_batch(bases[b], x_, scratch_, out_);
            if (!out_.isFinite().all()) continue;
            A2.col(0) = out_.matrix();
            A3.col(0) = out_.matrix();
            const Eigen::Vector2d w2 =
                (A2.transpose() * A2).ldlt().solve(A2.transpose() * y_);
            if (w2.allFinite()) {
                const double sse = (A2 * w2 - y_).squaredNorm();
                if (std::isfinite(sse) && sse < cal_sse) {
                    cal_sse = sse;
                    cal_base = b;
                    cal_w = w2;
                }
            }
            for (int k = 0; k < num_vars_; ++k) {
                A3.col(1) = x_.col(k);
                const Eigen::Vector3d w3 =
                    (A3.transpose() * A3).ldlt().solve(A3.transpose() * y_);
                if (!w3.allFinite()) continue;
                const double sse = (A3 * w3 - y_).squaredNorm();
                if (std::isfinite(sse) && sse < boost_sse[static_cast<std::size_t>(k)]) {
                    boost_sse[static_cast<std::size_t>(k)] = sse;
                    boost_base[static_cast<std::size_t>(k)] = b;
                    boost_w[static_cast<std::size_t>(k)] = w3;
                }
            }
        }

        if (std::isfinite(cal_sse)) {
            const Expr cal = Expr::binary(
                Op::Add, Expr::binary(Op::Mul, Expr::constant(cal_w(0)), bases[cal_base]),
                Expr::constant(cal_w(1)));
            Individual cand = make_individual(refine_lm(cal, x_, y_));
            if (std::isfinite(cand.mae)) {
                front_.insert(cand.expr, x_, y_);
                inject(pop, std::move(cand));
            }
        }
        // polish every per-k winner into the front; only the best of them
        // enters the population, so template mass cannot crowd out diversity
        std::optional<Individual> best_boost;
        for (int k = 0; k < num_vars_; ++k) {
            const auto ki = static_cast<std::size_t>(k);
            if (!std::isfinite(boost_sse[ki])) continue;
            Expr polished =
                refine_lm(make_boosted(bases[boost_base[ki]], boost_w[ki], k), x_, y_);
            if (complexity(polished) > cfg_.max_length) continue;
            Individual cand = make_individual(std::move(polished));
            if (!std::isfinite(cand.mae)) continue;
            front_.insert(cand.expr, x_, y_);
            if (!best_boost || better(cand, *best_boost)) best_boost = std::move(cand);
        }
        if (best_boost) inject(pop, std::move(*best_boost));
    }

    static Expr make_boosted(const Expr& base, const Eigen::Vector3d& w, int k) {
        return Expr::binary(
            Op::Add,
            Expr::binary(Op::Add, Expr::binary(Op::Mul, Expr::constant(w(0)), base),
                         Expr::binary(Op::Mul, Expr::constant(w(1)), Expr::variable(k))),
            Expr::constant(w(2)));
    }

    // One stagewise-additive step on top of a rescued shape: fit a*f + e*x_j + b
    // by least squares for every variable, keep the best. A lone special-op term
    // can rarely outrank the front until its additive remainder exists, and
    // waiting for crossover to assemble that remainder is hopeless when the
    // bare shape also loses every tournament.
    void boost_with_linear(const Expr& base, std::vector<Individual>& pop) {
        if (complexity(base) + 8 > cfg_.max_length) return;
        eval_batch(base, x_, scratch_, out_);
        if (!out_.isFinite().all()) return;
        Eigen::MatrixXd A(x_.rows(), 3);
        A.col(0) = out_.matrix();
        A.col(2).setOnes();
        double best_sse = std::numeric_limits<double>::infinity();
        int best_j = -1;
        Eigen::Vector3d best_w = Eigen::Vector3d::Zero();
        for (int j = 0; j < num_vars_; ++j) {
            A.col(1) = x_.col(j);
            const Eigen::Vector3d w = (A.transpose() * A).ldlt().solve(A.transpose() * y_);
            if (!w.allFinite()) continue;
            const double sse = (A * w - y_).squaredNorm();
            if (std::isfinite(sse) && sse < best_sse) {
                best_sse = sse;
                best_j = j;
                best_w = w;
            }
        }
        if (best_j < 0) return;
        Expr boosted = Expr::binary(
            Op::Add,
            Expr::binary(Op::Add, Expr::binary(Op::Mul, Expr::constant(best_w(0)), base),
                         Expr::binary(Op::Mul, Expr::constant(best_w(1)), Expr::variable(best_j))),
            Expr::constant(best_w(2)));
        Individual cand = make_individual(refine_lm(boosted, x_, y_));
        if (!std::isfinite(cand.mae)) return;
        front_.insert(cand.expr, x_, y_);
        inject(pop, std::move(cand));
    }

    const Eigen::MatrixXd& x_;
    const Eigen::VectorXd& y_;
    GpConfig cfg_;
    Rng rng_;
    int num_vars_;
    ParetoFront front_;
    EvalScratch scratch_;
    Eigen::ArrayXd out_;
};

}  // namespace

ParetoFront gp_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const GpConfig& config) {
    config.validate();
    if (X.rows() < 1) throw ValidationError("need at least one sample");
    if (X.cols() < 1) throw ValidationError("need at least one feature");
    if (X.rows() != y.size()) throw ValidationError("sample and target counts differ");
    if (!y.allFinite()) throw ValidationError("targets must be finite");
    return GpRun(X, y, config).run();
}

}  // namespace sklaw
