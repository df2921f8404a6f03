#include "sklaw/model/features.hpp"

#include <algorithm>
#include <cmath>

#include "sklaw/core/error.hpp"

namespace sklaw {

int FeatureLayout::index_of(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

FeatureLayout make_layout(const FeatureSchema& schema) {
    FeatureLayout layout;
    for (const FeatureFamily family : {FeatureFamily::U, FeatureFamily::E, FeatureFamily::S}) {
        int width = 0;
        for (const FeatureSpec& spec : schema.family(family)) {
            if (spec.kind == FeatureKind::Discrete) {
                if (spec.vocabulary.empty())
                    throw ValidationError("discrete feature '" + spec.name +
                                          "' has an empty vocabulary");
                for (const std::string& value : spec.vocabulary)
                    layout.names.push_back(spec.name + "=" + value);
            } else {
                layout.names.push_back(spec.name);
            }
            width += spec.width();
        }
        switch (family) {
            case FeatureFamily::U: layout.u_width = width; break;
            case FeatureFamily::E: layout.e_width = width; break;
            case FeatureFamily::S: layout.s_width = width; break;
        }
    }
    return layout;
}

namespace {

const AttrValue* find_attr(const AttrMap& attrs, const std::string& name) {
    const auto it = attrs.find(name);
    return it == attrs.end() ? nullptr : &it->second;
}

double continuous_attr(const TrainingRecord& rec, const std::string& name) {
    const AttrValue* v = find_attr(rec.user_attrs, name);
    if (!v) v = find_attr(rec.exercise_attrs, name);
    if (!v)
        throw ValidationError("record " + rec.learner_id + "/step " + std::to_string(rec.step) +
                              " is missing attribute '" + name + "'");
    if (const double* d = std::get_if<double>(v)) return *d;
    throw ValidationError("attribute '" + name + "' must be numeric");
}

// Fill the one-hot block for a discrete feature; unknown categories reject.
void fill_discrete(const TrainingRecord& rec, const FeatureSpec& spec, Eigen::RowVectorXd& out,
                   int offset) {
    const AttrValue* v = find_attr(spec.family == FeatureFamily::U ? rec.user_attrs
                                                                   : rec.exercise_attrs,
                                   spec.name);
    if (!v && spec.family != FeatureFamily::U) v = find_attr(rec.user_attrs, spec.name);
    if (!v)
        throw ValidationError("record " + rec.learner_id + "/step " + std::to_string(rec.step) +
                              " is missing attribute '" + spec.name + "'");
    const std::string* s = std::get_if<std::string>(v);
    if (!s) throw ValidationError("attribute '" + spec.name + "' must be a category string");
    const auto it = std::find(spec.vocabulary.begin(), spec.vocabulary.end(), *s);
    if (it == spec.vocabulary.end())
        throw ValidationError("unknown value '" + *s + "' for discrete feature '" + spec.name +
                              "'");
    out[offset + static_cast<int>(it - spec.vocabulary.begin())] = 1.0;
}

}  // namespace

Eigen::RowVectorXd build_static_features(const TrainingDataset& dataset, int learner, int step,
                                         const FeatureLayout& layout) {
    if (learner < 0 || learner >= static_cast<int>(dataset.sequences.size()))
        throw ValidationError("learner index out of range");
    const auto& sequence = dataset.sequences[static_cast<std::size_t>(learner)];
    if (step < 1 || step > static_cast<int>(sequence.size()))
        throw ValidationError("step out of range for learner sequence");
    const TrainingRecord& rec = sequence[static_cast<std::size_t>(step - 1)];
    const QMatrix& q = dataset.qmatrix;
    const PracticeCounts counts = practice_counts(sequence, step, q);

    Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(layout.total());
    int col = 0;
    for (const FeatureFamily family : {FeatureFamily::U, FeatureFamily::E, FeatureFamily::S}) {
        for (const FeatureSpec& spec : dataset.schema.family(family)) {
            if (spec.kind == FeatureKind::Discrete) {
                fill_discrete(rec, spec, out, col);
                col += spec.width();
                continue;
            }
            double value = 0.0;
            // reserved names: the general factor is always on, per-skill
            // correctness indicators come from the Q-matrix, and the S-family
            // count/interval features come from the practice history
            const auto skill_suffix = [&](const std::string& prefix) -> int {
                if (spec.name.rfind(prefix, 0) != 0) return -1;
                const std::string skill = spec.name.substr(prefix.size());
                const auto it = std::find(q.skills.begin(), q.skills.end(), skill);
                return it == q.skills.end() ? -1 : static_cast<int>(it - q.skills.begin());
            };
            int si;
            if (family == FeatureFamily::E && spec.name == "corr_G") {
                value = 1.0;
            } else if (family == FeatureFamily::E && (si = skill_suffix("corr_")) >= 0) {
                value = q.rows(q.row_of(rec.exercise_id), si);
            } else if (family == FeatureFamily::S && (si = skill_suffix("N_")) >= 0) {
                value = counts.per_skill[si];
            } else if (family == FeatureFamily::S && (si = skill_suffix("dt_")) >= 0) {
                value = counts.interval[si];
            } else {
                value = continuous_attr(rec, spec.name);
            }
            out[col++] = value;
        }
    }
    return out;
}

DatasetTensors build_tensors(const TrainingDataset& dataset, const FeatureLayout& layout) {
    DatasetTensors t;
    const int n = static_cast<int>(dataset.total_records());
    const int k = dataset.qmatrix.num_skills();
    t.sf.resize(n, layout.total());
    t.qrows.resize(n, k);
    t.scores.resize(n);
    t.row_learner.reserve(static_cast<std::size_t>(n));
    t.row_exercise.reserve(static_cast<std::size_t>(n));

    int row = 0;
    for (int u = 0; u < static_cast<int>(dataset.learners.size()); ++u) {
        const auto& sequence = dataset.sequences[static_cast<std::size_t>(u)];
        t.segments.emplace_back(row, static_cast<int>(sequence.size()));
        for (int step = 1; step <= static_cast<int>(sequence.size()); ++step, ++row) {
            const TrainingRecord& rec = sequence[static_cast<std::size_t>(step - 1)];
            t.sf.row(row) = build_static_features(dataset, u, step, layout);
            const int e = dataset.qmatrix.row_of(rec.exercise_id);
            t.qrows.row(row) = dataset.qmatrix.rows.row(e);
            t.scores[row] = rec.score;
            t.row_learner.push_back(u);
            t.row_exercise.push_back(e);
        }
    }
    return t;
}

IrtTable irt_from_dataset(const TrainingDataset& dataset) {
    static const char* kKeys[3] = {"discrimination", "difficulty", "guessing"};
    IrtTable table;
    const int num_exercises = dataset.qmatrix.num_exercises();
    table.params = Eigen::MatrixXd::Zero(num_exercises, 3);
    Eigen::VectorXd seen = Eigen::VectorXd::Zero(num_exercises);
    table.known = true;
    for (const auto& sequence : dataset.sequences) {
        for (const TrainingRecord& rec : sequence) {
            double vals[3];
            for (int j = 0; j < 3; ++j) {
                const AttrValue* v = find_attr(rec.exercise_attrs, kKeys[j]);
                const double* d = v ? std::get_if<double>(v) : nullptr;
                if (!d) return IrtTable{Eigen::MatrixXd(), false};
                vals[j] = *d;
            }
            const int e = dataset.qmatrix.row_of(rec.exercise_id);
            if (seen[e] == 0.0) {
                for (int j = 0; j < 3; ++j) table.params(e, j) = vals[j];
                seen[e] = 1.0;
            } else {
                for (int j = 0; j < 3; ++j)
                    if (table.params(e, j) != vals[j])
                        throw ValidationError("inconsistent " + std::string(kKeys[j]) +
                                              " for exercise " + rec.exercise_id);
            }
        }
    }
    return table;
}

}  // namespace sklaw
