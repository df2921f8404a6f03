#include "sklaw/sim/simulate.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "sklaw/core/error.hpp"
#include "sklaw/core/rng.hpp"

namespace sklaw {

void GoverningLaw::validate() const {
    if (!(beta > 0.0)) throw ValidationError("governing law: beta must be positive");
    if (!(gamma >= 0.0)) throw ValidationError("governing law: gamma must be non-negative");
    if (!(mu >= 0.0 && mu <= 1.0)) throw ValidationError("governing law: mu must be in [0,1]");
}

double law_eval(const GoverningLaw& law, double n_own, double n_other) {
    const double m = (1.0 - law.mu) * n_own + law.mu * n_other;
    const double forget = law.gamma * (n_own + n_other);
    double value;
    switch (law.family) {
        case LawFamily::Linear: value = law.beta * law.alpha * m - forget; break;
        case LawFamily::Exponential: value = law.beta * std::exp(law.alpha * m) - forget; break;
        case LawFamily::Power:
            // M^alpha pinned to 0 at M=0: no singularity before the first practice
            value = law.beta * (m > 0.0 ? std::pow(m, law.alpha) : 0.0) - forget;
            break;
        default: throw Error("unknown law family");
    }
    if (!std::isfinite(value))
        throw Error("governing law produced a non-finite mastery value");
    return value;
}

namespace {

GoverningLaw make_law(LawFamily family, double mu) {
    GoverningLaw law;
    law.family = family;
    law.mu = mu;
    switch (family) {
        case LawFamily::Linear:
            law.alpha = 1.0;
            law.beta = 0.3;
            law.gamma = 0.1;
            break;
        case LawFamily::Exponential:
            law.alpha = 0.1;
            law.beta = 1.0;
            law.gamma = 0.1;
            break;
        case LawFamily::Power:
            law.alpha = 0.8;
            law.beta = 1.0;
            law.gamma = 0.2;
            break;
    }
    return law;
}

}  // namespace

std::vector<GoverningLaw> preset_laws(int setting) {
    constexpr double kMu = 0.5;
    switch (setting) {
        case 1: return {make_law(LawFamily::Linear, kMu), make_law(LawFamily::Exponential, 0.0)};
        case 2: return {make_law(LawFamily::Exponential, kMu), make_law(LawFamily::Power, 0.0)};
        case 3: return {make_law(LawFamily::Power, kMu), make_law(LawFamily::Linear, 0.0)};
        default: throw ValidationError("setting must be 1, 2, or 3");
    }
}

double irt_response(double mastery, const SimExercise& exercise, double d) {
    const double z = d * exercise.discrimination * (mastery - exercise.difficulty);
    return exercise.guessing + (1.0 - exercise.guessing) / (1.0 + std::exp(-z));
}

void SimConfig::validate() const {
    if (setting < 1 || setting > 3) throw ValidationError("setting must be 1, 2, or 3");
    if (!(noise_sigma >= 0.0)) throw ValidationError("noise_sigma must be non-negative");
    if (num_learners < 1) throw ValidationError("num_learners must be positive");
    if (exercises_per_skill < 1) throw ValidationError("exercises_per_skill must be positive");
    if (sequence_length < 1) throw ValidationError("sequence_length must be positive");
    if (!(irt_d > 0.0)) throw ValidationError("irt_d must be positive");
}

SimResult simulate(const SimConfig& config) {
    config.validate();
    SimResult result;
    result.laws = preset_laws(config.setting);
    for (const GoverningLaw& law : result.laws) law.validate();
    const int num_skills = static_cast<int>(result.laws.size());

    // exercise bank: difficulty/guessing/discrimination all U(0,1)
    Rng ex_rng(derive_seed(config.seed, "exercises"));
    QMatrix q;
    for (int s = 0; s < num_skills; ++s) q.skills.push_back("S" + std::to_string(s + 1));
    for (int s = 0; s < num_skills; ++s) {
        for (int i = 0; i < config.exercises_per_skill; ++i) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "E_S%d_%02d", s + 1, i);
            SimExercise ex;
            ex.exercise_id = buf;
            ex.skill = s;
            ex.difficulty = ex_rng.uniform();
            ex.guessing = ex_rng.uniform();
            ex.discrimination = ex_rng.uniform();
            q.index[ex.exercise_id] = static_cast<int>(result.exercises.size());
            q.exercise_ids.push_back(ex.exercise_id);
            result.exercises.push_back(std::move(ex));
        }
    }
    q.rows = Eigen::MatrixXd::Zero(q.num_exercises(), num_skills);
    for (int e = 0; e < q.num_exercises(); ++e)
        q.rows(e, result.exercises[static_cast<std::size_t>(e)].skill) = 1.0;

    // correctness-indicator exercise features: a general factor plus one
    // per-skill indicator, so attention-encoded sums recover practice counts
    FeatureSchema schema;
    schema.features.push_back({"corr_G", FeatureFamily::E, FeatureKind::Continuous, {}});
    for (int s = 0; s < num_skills; ++s)
        schema.features.push_back(
            {"corr_S" + std::to_string(s + 1), FeatureFamily::E, FeatureKind::Continuous, {}});
    for (int s = 0; s < num_skills; ++s)
        schema.features.push_back(
            {"N_S" + std::to_string(s + 1), FeatureFamily::S, FeatureKind::Continuous, {}});
    for (int s = 0; s < num_skills; ++s)
        schema.features.push_back(
            {"dt_S" + std::to_string(s + 1), FeatureFamily::S, FeatureKind::Continuous, {}});

    std::vector<TrainingRecord> records;
    records.reserve(static_cast<std::size_t>(config.num_learners * config.sequence_length));
    const int bank = q.num_exercises();
    for (int u = 0; u < config.num_learners; ++u) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "L%03d", u + 1);
        const std::string learner_id = buf;
        Rng path_rng(derive_seed(config.seed, "path", static_cast<std::uint64_t>(u)));
        Rng noise_rng(derive_seed(config.seed, "noise", static_cast<std::uint64_t>(u)));
        Eigen::VectorXd counts = Eigen::VectorXd::Zero(num_skills);
        for (int step = 1; step <= config.sequence_length; ++step) {
            const SimExercise& ex =
                result.exercises[static_cast<std::size_t>(path_rng.uniform_int(0, bank - 1))];

            // mastery from the counts accumulated strictly before this step
            Eigen::VectorXd mastery(num_skills);
            for (int s = 0; s < num_skills; ++s)
                mastery[s] = law_eval(result.laws[static_cast<std::size_t>(s)], counts[s],
                                      counts.sum() - counts[s]);

            TrainingRecord rec;
            rec.learner_id = learner_id;
            rec.step = step;
            rec.exercise_id = ex.exercise_id;
            rec.time = static_cast<double>(step);
            // noise drawn unconditionally so paths and noise streams line up
            // across sigma levels for the same seed
            rec.score = irt_response(mastery[ex.skill], ex, config.irt_d) +
                        noise_rng.normal(0.0, config.noise_sigma);
            rec.exercise_attrs["corr_G"] = 1.0;
            for (int s = 0; s < num_skills; ++s)
                rec.exercise_attrs["corr_S" + std::to_string(s + 1)] =
                    ex.skill == s ? 1.0 : 0.0;
            // ground-truth item parameters travel with the records so the
            // scoring head can run in known-parameter mode
            rec.exercise_attrs["difficulty"] = ex.difficulty;
            rec.exercise_attrs["guessing"] = ex.guessing;
            rec.exercise_attrs["discrimination"] = ex.discrimination;
            records.push_back(std::move(rec));

            result.truth.push_back({learner_id, step, mastery});
            counts[ex.skill] += 1.0;
        }
    }

    result.dataset = build_dataset(std::move(records), std::move(q), std::move(schema));
    return result;
}

void save_truth(const std::vector<MasteryTruth>& truth, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open file for writing: " + path);
    for (const MasteryTruth& t : truth) {
        nlohmann::json j;
        j["learner_id"] = t.learner_id;
        j["step"] = t.step;
        std::vector<double> mastery(t.mastery.begin(), t.mastery.end());
        j["mastery"] = mastery;
        out << j.dump() << '\n';
    }
}

std::vector<MasteryTruth> load_truth(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open file: " + path);
    std::vector<MasteryTruth> truth;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(std::string("bad JSON: ") + e.what(), line_no);
        }
        MasteryTruth t;
        try {
            t.learner_id = j.at("learner_id").get<std::string>();
            t.step = j.at("step").get<int>();
            const auto values = j.at("mastery").get<std::vector<double>>();
            t.mastery = Eigen::Map<const Eigen::VectorXd>(values.data(),
                                                          static_cast<Eigen::Index>(values.size()));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("bad truth record: ") + e.what(), line_no);
        }
        truth.push_back(std::move(t));
    }
    return truth;
}

}  // namespace sklaw
