#include "sklaw/distill/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <utility>

#include "sklaw/core/error.hpp"
#include "sklaw/core/rng.hpp"
#include "sklaw/eval/evalkit.hpp"

namespace sklaw {

using Mat = Eigen::MatrixXd;

void DistillConfig::validate() const {
    if (sample_size < 1) throw ValidationError("sample size must be positive");
    if (top_k < 1) throw ValidationError("top-k must be positive");
    if (sample_size < top_k) throw ValidationError("sample size must be at least top-k");
    if (!(alpha_threshold > 0.0))
        throw ValidationError("attention-substitution threshold must be positive");
    if (!(attention_tolerance > 0.0)) throw ValidationError("attention tolerance must be positive");
    if (!(law_margin >= 0.0)) throw ValidationError("law margin must be non-negative");
    gp.validate();
}

namespace {

// Uniform rows: partial Fisher-Yates without replacement while s fits (a full
// permutation at s == n), with replacement beyond that.
std::vector<int> sample_rows(int n, int s, Rng& rng, bool& with_replacement) {
    std::vector<int> rows;
    rows.reserve(static_cast<std::size_t>(s));
    if (s <= n) {
        with_replacement = false;
        std::vector<int> idx(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
        for (int i = 0; i < s; ++i) {
            const int j = static_cast<int>(rng.uniform_int(i, n - 1));
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
            rows.push_back(idx[static_cast<std::size_t>(i)]);
        }
    } else {
        with_replacement = true;
        for (int i = 0; i < s; ++i) rows.push_back(static_cast<int>(rng.uniform_int(0, n - 1)));
    }
    return rows;
}

// Replaces every Var node with the corresponding expression; a preorder
// splice, so simultaneous substitution with no ordering hazards.
Expr substitute_vars(const Expr& e, const std::vector<Expr>& repl) {
    Expr out;
    for (const ExprNode& n : e.nodes) {
        if (n.op == Op::Var) {
            if (n.var < 0 || n.var >= static_cast<int>(repl.size()))
                throw ValidationError("expression variable outside the replacement table");
            const Expr& r = repl[static_cast<std::size_t>(n.var)];
            out.nodes.insert(out.nodes.end(), r.nodes.begin(), r.nodes.end());
        } else {
            out.nodes.push_back(n);
        }
    }
    return out;
}

// The eval-mode batchnorm of feature j as z = a·x + b.
std::pair<double, double> bn_affine(const Regressor& model, const BatchNorm& bn, int j) {
    const double a = model.store.value(bn.gamma)(0, j) / std::sqrt(bn.running_var(0, j) + bn.eps);
    const double b = model.store.value(bn.beta)(0, j) - bn.running_mean(0, j) * a;
    return {a, b};
}

void check_model_dataset(const Regressor& model, const TrainingDataset& dataset) {
    if (dataset.learners.empty() || dataset.total_records() == 0)
        throw ValidationError("dataset is empty");
    if (dataset.learners != model.learner_ids)
        throw ValidationError("dataset learners do not match the trained model");
    if (dataset.qmatrix.skills != model.skills)
        throw ValidationError("dataset skills do not match the trained model");
}

}  // namespace

TeacherFn mastery_teacher(Regressor& model, int skill) {
    if (skill < 0 || skill >= static_cast<int>(model.skills.size()))
        throw ValidationError("skill index out of range");
    return [&model, skill](Tape& tape, TapeVar z) {
        return model.msty[static_cast<std::size_t>(skill)].forward(tape, model.store, z);
    };
}

TeacherFn attention_teacher(Regressor& model, int skill) {
    if (skill < 0 || skill >= static_cast<int>(model.skills.size()))
        throw ValidationError("skill index out of range");
    return [&model, skill](Tape& tape, TapeVar z) {
        return model.att[static_cast<std::size_t>(skill)].forward(tape, model.store, z);
    };
}

SampleSet sample_inputs(Regressor& model, const TrainingDataset& dataset, int skill, int s,
                        std::uint64_t seed, bool unit_alpha) {
    check_model_dataset(model, dataset);
    if (skill < 0 || skill >= static_cast<int>(model.skills.size()))
        throw ValidationError("skill index out of range");
    if (s < 1) throw ValidationError("sample size must be positive");

    const DatasetTensors tensors = build_tensors(dataset, model.layout);
    Tape tape;
    const TapeForward f = forward_on_tape(tape, model, tensors, false, unit_alpha);
    const Mat& omega = tape.value(f.omega[static_cast<std::size_t>(skill)]);
    const Mat& z = tape.value(f.z_msty[static_cast<std::size_t>(skill)]);

    SampleSet out;
    Rng rng(seed);
    out.rows = sample_rows(tensors.num_rows(), s, rng, out.with_replacement);
    out.omega.resize(s, omega.cols());
    out.z.resize(s, z.cols());
    for (int i = 0; i < s; ++i) {
        out.omega.row(i) = omega.row(out.rows[static_cast<std::size_t>(i)]);
        out.z.row(i) = z.row(out.rows[static_cast<std::size_t>(i)]);
    }
    Tape teacher_tape;
    const TapeVar delta = mastery_teacher(model, skill)(teacher_tape, teacher_tape.leaf(out.z));
    out.teacher = teacher_tape.value(delta).col(0);
    return out;
}

ModuleDistillation distill_module(const TeacherFn& teacher, const Eigen::MatrixXd& X,
                                  std::span<const std::string> names,
                                  const DistillConfig& config) {
    config.validate();
    if (X.rows() < 1 || X.cols() < 1) throw ValidationError("sample matrix is empty");
    if (static_cast<Eigen::Index>(names.size()) != X.cols())
        throw ValidationError("feature name count does not match the sample width");

    ModuleDistillation md;
    md.importance = feature_importance(teacher, X, names);
    const int k = std::min<int>(config.top_k, static_cast<int>(X.cols()));
    md.selected = select_top_k(md.importance, k);
    md.inputs.resize(X.rows(), k);
    for (int i = 0; i < k; ++i) {
        md.inputs.col(i) = X.col(md.selected[static_cast<std::size_t>(i)]);
        md.names.push_back(names[static_cast<std::size_t>(md.selected[static_cast<std::size_t>(i)])]);
    }
    {
        Tape tape;
        const TapeVar out = teacher(tape, tape.leaf(X));
        md.teacher_values = tape.value(out).col(0);
    }
    md.front = gp_fit(md.inputs, md.teacher_values, config.gp);
    const FrontEntry* best = md.front.best();
    if (!best) throw Error("symbolic fit produced an empty front");
    md.teacher_mae = best->mae;
    return md;
}

std::vector<std::string> omega_feature_names(const FeatureLayout& layout) {
    std::vector<std::string> names = layout.names;
    for (int j = layout.e_start(); j < layout.e_start() + layout.e_width; ++j) {
        std::string& n = names[static_cast<std::size_t>(j)];
        n = n.rfind("corr_", 0) == 0 ? "Sum_" + n.substr(5) : "Sum_" + n;
    }
    return names;
}

DiscoveredLaw compose_law(const Regressor& model, int skill, const ModuleDistillation& mastery,
                          const DistillConfig& config, const std::string& attention_mode) {
    if (skill < 0 || skill >= static_cast<int>(model.skills.size()))
        throw ValidationError("skill index out of range");
    const FrontEntry* entry = select_law(mastery.front, config.law_margin);
    if (!entry)
        throw Error("mastery front is empty for skill " +
                    model.skills[static_cast<std::size_t>(skill)]);

    const BatchNorm& bn = model.bn_msty[static_cast<std::size_t>(skill)];
    std::vector<Expr> repl;
    repl.reserve(mastery.selected.size());
    for (const int j : mastery.selected) {
        const auto [a, b] = bn_affine(model, bn, j);
        repl.push_back(Expr::binary(Op::Add,
                                    Expr::binary(Op::Mul, Expr::constant(a), Expr::variable(j)),
                                    Expr::constant(b)));
    }
    const Expr composed = simplify(substitute_vars(entry->expr, repl));

    const Mat& psi = model.store.value(model.psi[static_cast<std::size_t>(skill)]);
    const double psi_mean = psi.mean();

    DiscoveredLaw law;
    law.skill = model.skills[static_cast<std::size_t>(skill)];
    law.expr = simplify(Expr::binary(Op::Add, composed, Expr::constant(psi_mean)));
    law.teacher_mae = entry->mae;
    law.attention_mode = attention_mode;
    law.psi_mean = psi_mean;
    const std::vector<std::string> names = omega_feature_names(model.layout);
    for (const int v : variables_of(law.expr))
        law.variables.push_back(names.at(static_cast<std::size_t>(v)));
    return law;
}

namespace {

// Rebuilds each skill's encoded features with the symbolic attention
// surrogate: exclusive α̂-weighted prefix sums per learner segment.
Mat encode_with_alpha(const Eigen::ArrayXd& alpha_hat, const Mat& eblock,
                      std::span<const std::pair<int, int>> segments) {
    Mat out = Mat::Zero(eblock.rows(), eblock.cols());
    for (const auto& [start, len] : segments) {
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(eblock.cols());
        for (int r = start; r < start + len; ++r) {
            out.row(r) = acc;
            acc += alpha_hat[r] * eblock.row(r);
        }
    }
    return out;
}

}  // namespace

ExtractionResult extract_laws(Regressor& model, const TrainingDataset& dataset,
                              const DistillConfig& config) {
    config.validate();
    check_model_dataset(model, dataset);

    ExtractionResult result;
    result.feature_names = omega_feature_names(model.layout);
    const bool substituted = model.final_reg < config.alpha_threshold;
    result.attention_mode = substituted ? "substituted-1" : "symbolic";

    const int num_skills = static_cast<int>(model.skills.size());
    for (int s = 0; s < num_skills; ++s) {
        SkillExtraction ske;
        ske.skill = model.skills[static_cast<std::size_t>(s)];
        try {
            const std::uint64_t skill_seed =
                derive_seed(config.seed, "skill", static_cast<std::uint64_t>(s));
            DistillConfig local = config;
            local.gp.seed = derive_seed(skill_seed, "gp");
            const TeacherFn teacher = mastery_teacher(model, s);

            if (substituted) {
                const SampleSet sample = sample_inputs(model, dataset, s, config.sample_size,
                                                       derive_seed(skill_seed, "sample"), true);
                ske.mastery = distill_module(teacher, sample.z, result.feature_names, local);
                ske.law = compose_law(model, s, ske.mastery, config, result.attention_mode);
            } else {
                // distill the attention head first; its surrogate decides
                // whether the encoded sums have a closed form at all
                const DatasetTensors tensors = build_tensors(dataset, model.layout);
                Mat z_att, eblock;
                {
                    Tape tape;
                    const TapeForward f = forward_on_tape(tape, model, tensors, false, false);
                    z_att = tape.value(f.z_att);
                    eblock = tensors.sf.middleCols(model.layout.e_start(), model.layout.e_width);
                }
                const int n = static_cast<int>(z_att.rows());
                Rng att_rng(derive_seed(skill_seed, "att_sample"));
                bool att_repl = false;
                const std::vector<int> att_rows =
                    sample_rows(n, config.sample_size, att_rng, att_repl);
                Mat za(static_cast<int>(att_rows.size()), z_att.cols());
                for (std::size_t i = 0; i < att_rows.size(); ++i)
                    za.row(static_cast<Eigen::Index>(i)) = z_att.row(att_rows[i]);

                DistillConfig att_local = config;
                att_local.gp.seed = derive_seed(skill_seed, "att_gp");
                ske.attention =
                    distill_module(attention_teacher(model, s), za, model.layout.names, att_local);
                const FrontEntry* att_entry = select_law(ske.attention->front, config.law_margin);
                if (!att_entry) throw Error("attention front is empty");

                Mat ca(n, static_cast<int>(ske.attention->selected.size()));
                for (std::size_t i = 0; i < ske.attention->selected.size(); ++i)
                    ca.col(static_cast<Eigen::Index>(i)) =
                        z_att.col(ske.attention->selected[i]);
                const Eigen::ArrayXd alpha_hat = eval_batch(att_entry->expr, ca);

                std::string reject;
                if (!(att_entry->mae < config.attention_tolerance))
                    reject = "attention surrogate MAE " + format_double(att_entry->mae) +
                             " is not below tolerance " + format_double(config.attention_tolerance);
                else if (!alpha_hat.allFinite())
                    reject = "attention surrogate is invalid on some records";

                if (!reject.empty()) {
                    // fall back to the net's own α for the mastery fit and
                    // flag the law: the encoded sums stay sub-symbolic
                    const SampleSet sample =
                        sample_inputs(model, dataset, s, config.sample_size,
                                      derive_seed(skill_seed, "sample"), false);
                    ske.mastery = distill_module(teacher, sample.z, result.feature_names, local);
                    ske.law = compose_law(model, s, ske.mastery, config, result.attention_mode);
                    ske.law->interpretable = false;
                    ske.law->note = reject;
                } else {
                    // recompute the encodings under α̂, renormalize with the
                    // frozen affine map, and distill mastery on the result
                    const FeatureLayout& layout = model.layout;
                    const Mat ee_hat = encode_with_alpha(alpha_hat, eblock, tensors.segments);
                    Mat omega_hat(n, layout.total());
                    if (layout.u_width > 0)
                        omega_hat.leftCols(layout.u_width) =
                            tensors.sf.leftCols(layout.u_width);
                    omega_hat.middleCols(layout.e_start(), layout.e_width) = ee_hat;
                    if (layout.s_width > 0)
                        omega_hat.middleCols(layout.s_start(), layout.s_width) =
                            tensors.sf.middleCols(layout.s_start(), layout.s_width);
                    Mat z_hat(n, layout.total());
                    const BatchNorm& bn = model.bn_msty[static_cast<std::size_t>(s)];
                    for (int j = 0; j < layout.total(); ++j) {
                        const auto [a, b] = bn_affine(model, bn, j);
                        z_hat.col(j) = a * omega_hat.col(j).array() + b;
                    }

                    Rng m_rng(derive_seed(skill_seed, "sample"));
                    bool m_repl = false;
                    const std::vector<int> m_rows =
                        sample_rows(n, config.sample_size, m_rng, m_repl);
                    Mat zs(static_cast<int>(m_rows.size()), z_hat.cols());
                    for (std::size_t i = 0; i < m_rows.size(); ++i)
                        zs.row(static_cast<Eigen::Index>(i)) = z_hat.row(m_rows[i]);

                    ske.mastery = distill_module(teacher, zs, result.feature_names, local);
                    ske.law = compose_law(model, s, ske.mastery, config, result.attention_mode);
                    ske.law->attention_text = to_infix(att_entry->expr, ske.attention->names);
                }
            }
        } catch (const std::exception& e) {
            ske.error = e.what();
        }
        result.skills.push_back(std::move(ske));
    }
    return result;
}

CountLaw to_count_space(const Expr& law, std::span<const std::string> feature_names,
                        std::span<const std::string> skills) {
    const int k = static_cast<int>(skills.size());
    CountLaw out;
    for (int i = 0; i < k; ++i) out.names.push_back("N" + std::to_string(i + 1));

    const auto skill_index = [&](const std::string& name, const std::string& prefix) -> int {
        if (name.rfind(prefix, 0) != 0) return -1;
        const std::string suffix = name.substr(prefix.size());
        for (int i = 0; i < k; ++i)
            if (skills[static_cast<std::size_t>(i)] == suffix) return i;
        return -1;
    };

    std::vector<Expr> repl(feature_names.size());
    for (const int v : variables_of(law)) {
        if (v < 0 || v >= static_cast<int>(feature_names.size()))
            throw ValidationError("law variable outside the feature space");
        const std::string& name = feature_names[static_cast<std::size_t>(v)];
        int si;
        if (name == "Sum_G" && k > 0) {
            Expr sum = Expr::variable(0);
            for (int i = 1; i < k; ++i) sum = Expr::binary(Op::Add, sum, Expr::variable(i));
            repl[static_cast<std::size_t>(v)] = sum;
        } else if ((si = skill_index(name, "Sum_")) >= 0 || (si = skill_index(name, "N_")) >= 0) {
            repl[static_cast<std::size_t>(v)] = Expr::variable(si);
        } else {
            repl[static_cast<std::size_t>(v)] =
                Expr::variable(static_cast<int>(out.names.size()));
            out.names.push_back(name);
        }
    }
    out.expr = simplify(substitute_vars(law, repl));
    return out;
}

nlohmann::json laws_to_json(const ExtractionResult& result) {
    nlohmann::json laws = nlohmann::json::array();
    for (const SkillExtraction& ske : result.skills) {
        nlohmann::json j{{"skill", ske.skill}};
        if (!ske.error.empty() || !ske.law) {
            j["ok"] = false;
            j["error"] = ske.error.empty() ? "no law produced" : ske.error;
        } else {
            const DiscoveredLaw& law = *ske.law;
            j["ok"] = true;
            j["expression_text"] = to_infix(law.expr, result.feature_names);
            j["expression_ast"] = to_json_ast(law.expr, result.feature_names);
            j["variables"] = law.variables;
            j["teacher_mae"] = law.teacher_mae;
            j["attention_mode"] = law.attention_mode;
            j["interpretable"] = law.interpretable;
            j["note"] = law.note;
            j["psi_mean"] = law.psi_mean;
            j["attention_text"] = law.attention_text;
            j["front_ref"] = "front_" + ske.skill + ".json";
        }
        laws.push_back(std::move(j));
    }
    return {{"feature_names", result.feature_names},
            {"attention_mode", result.attention_mode},
            {"laws", std::move(laws)}};
}

ExtractionResult laws_from_json(const nlohmann::json& j) {
    ExtractionResult result;
    try {
        result.feature_names = j.at("feature_names").get<std::vector<std::string>>();
        result.attention_mode = j.at("attention_mode").get<std::string>();
        for (const auto& lj : j.at("laws")) {
            SkillExtraction ske;
            ske.skill = lj.at("skill").get<std::string>();
            if (!lj.at("ok").get<bool>()) {
                ske.error = lj.at("error").get<std::string>();
            } else {
                DiscoveredLaw law;
                law.skill = ske.skill;
                law.expr = from_json_ast(lj.at("expression_ast"), result.feature_names);
                law.variables = lj.at("variables").get<std::vector<std::string>>();
                law.teacher_mae = lj.at("teacher_mae").get<double>();
                law.attention_mode = lj.at("attention_mode").get<std::string>();
                law.interpretable = lj.at("interpretable").get<bool>();
                law.note = lj.at("note").get<std::string>();
                law.psi_mean = lj.at("psi_mean").get<double>();
                law.attention_text = lj.at("attention_text").get<std::string>();
                ske.law = std::move(law);
            }
            result.skills.push_back(std::move(ske));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad laws payload: ") + e.what());
    }
    return result;
}

void save_laws(const ExtractionResult& result, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open file for writing: " + path);
    out << laws_to_json(result).dump(2) << '\n';
}

ExtractionResult load_laws(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad laws payload: ") + e.what());
    }
    return laws_from_json(j);
}

}  // namespace sklaw
