#include "sklaw/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "sklaw/core/error.hpp"

namespace sklaw {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return {};
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open file: " + path);
    return in;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open file for writing: " + path);
    return out;
}

nlohmann::json attrs_to_json(const AttrMap& attrs) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, value] : attrs)
        std::visit([&](const auto& v) { j[name] = v; }, value);
    return j;
}

AttrMap attrs_from_json(const nlohmann::json& j, int line_no) {
    AttrMap attrs;
    for (const auto& [name, value] : j.items()) {
        if (value.is_string()) {
            attrs[name] = value.get<std::string>();
        } else if (value.is_number()) {
            attrs[name] = value.get<double>();
        } else {
            throw ParseError("attribute '" + name + "' must be a string or number", line_no);
        }
    }
    return attrs;
}

}  // namespace

int QMatrix::row_of(const std::string& exercise_id) const {
    const auto it = index.find(exercise_id);
    if (it == index.end()) throw ValidationError("unknown exercise_id: " + exercise_id);
    return it->second;
}

Eigen::VectorXd QMatrix::skill_vector(const std::string& exercise_id) const {
    return rows.row(row_of(exercise_id)).transpose();
}

std::vector<FeatureSpec> FeatureSchema::family(FeatureFamily f) const {
    std::vector<FeatureSpec> out;
    for (const FeatureSpec& spec : features)
        if (spec.family == f) out.push_back(spec);
    return out;
}

int FeatureSchema::width(FeatureFamily f) const {
    int w = 0;
    for (const FeatureSpec& spec : features)
        if (spec.family == f) w += spec.width();
    return w;
}

std::size_t TrainingDataset::total_records() const {
    std::size_t n = 0;
    for (const auto& seq : sequences) n += seq.size();
    return n;
}

int TrainingDataset::learner_index(const std::string& id) const {
    for (std::size_t i = 0; i < learners.size(); ++i)
        if (learners[i] == id) return static_cast<int>(i);
    return -1;
}

QMatrix load_qmatrix(const std::string& path) {
    std::ifstream in = open_in(path);
    std::string line;
    int line_no = 0;
    QMatrix q;
    std::vector<Eigen::VectorXd> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::vector<std::string> cells = split_csv(line);
        if (q.skills.empty()) {
            if (cells.size() < 2) throw ParseError("Q-matrix header needs at least one skill", line_no);
            q.skills.assign(cells.begin() + 1, cells.end());
            continue;
        }
        if (cells.size() != q.skills.size() + 1)
            throw ParseError("expected " + std::to_string(q.skills.size() + 1) + " cells, got " +
                                 std::to_string(cells.size()),
                             line_no);
        const std::string& id = cells[0];
        if (q.index.count(id)) throw ParseError("duplicate exercise_id: " + id, line_no);
        Eigen::VectorXd row(static_cast<Eigen::Index>(q.skills.size()));
        double sum = 0.0;
        for (std::size_t j = 1; j < cells.size(); ++j) {
            if (cells[j] != "0" && cells[j] != "1")
                throw ParseError("Q-matrix entries must be 0 or 1, got '" + cells[j] + "'", line_no);
            row[static_cast<Eigen::Index>(j - 1)] = cells[j] == "1" ? 1.0 : 0.0;
            sum += row[static_cast<Eigen::Index>(j - 1)];
        }
        if (sum == 0.0) throw ParseError("exercise '" + id + "' tags no skill", line_no);
        q.index[id] = static_cast<int>(q.exercise_ids.size());
        q.exercise_ids.push_back(id);
        rows.push_back(std::move(row));
    }
    if (q.skills.empty()) throw ValidationError("Q-matrix file is empty: " + path);
    q.rows.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(q.skills.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) q.rows.row(static_cast<Eigen::Index>(i)) = rows[i];
    return q;
}

void save_qmatrix(const QMatrix& q, const std::string& path) {
    std::ofstream out = open_out(path);
    out << "exercise_id";
    for (const std::string& s : q.skills) out << ',' << s;
    out << '\n';
    for (int i = 0; i < q.num_exercises(); ++i) {
        out << q.exercise_ids[static_cast<std::size_t>(i)];
        for (int j = 0; j < q.num_skills(); ++j) out << ',' << (q.rows(i, j) != 0.0 ? '1' : '0');
        out << '\n';
    }
}

FeatureSchema schema_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("features") || !j["features"].is_array())
        throw ValidationError("feature schema must be an object with a 'features' array");
    FeatureSchema schema;
    for (const auto& f : j["features"]) {
        FeatureSpec spec;
        spec.name = f.at("name").get<std::string>();
        const std::string family = f.at("family").get<std::string>();
        if (family == "U") {
            spec.family = FeatureFamily::U;
        } else if (family == "E") {
            spec.family = FeatureFamily::E;
        } else if (family == "S") {
            spec.family = FeatureFamily::S;
        } else {
            throw ValidationError("feature '" + spec.name + "': family must be U, E, or S");
        }
        const std::string kind = f.at("kind").get<std::string>();
        if (kind == "discrete") {
            spec.kind = FeatureKind::Discrete;
            spec.vocabulary = f.at("vocabulary").get<std::vector<std::string>>();
            if (spec.vocabulary.empty())
                throw ValidationError("feature '" + spec.name + "': empty vocabulary");
        } else if (kind == "continuous") {
            spec.kind = FeatureKind::Continuous;
        } else {
            throw ValidationError("feature '" + spec.name + "': kind must be discrete or continuous");
        }
        schema.features.push_back(std::move(spec));
    }
    return schema;
}

nlohmann::json schema_to_json(const FeatureSchema& schema) {
    nlohmann::json features = nlohmann::json::array();
    for (const FeatureSpec& spec : schema.features) {
        nlohmann::json f;
        f["name"] = spec.name;
        f["family"] = spec.family == FeatureFamily::U ? "U" : spec.family == FeatureFamily::E ? "E" : "S";
        f["kind"] = spec.kind == FeatureKind::Discrete ? "discrete" : "continuous";
        if (spec.kind == FeatureKind::Discrete) f["vocabulary"] = spec.vocabulary;
        features.push_back(std::move(f));
    }
    return nlohmann::json{{"features", std::move(features)}};
}

FeatureSchema load_schema(const std::string& path) {
    std::ifstream in = open_in(path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("feature schema " + path + ": " + e.what());
    }
    return schema_from_json(j);
}

void save_schema(const FeatureSchema& schema, const std::string& path) {
    std::ofstream out = open_out(path);
    out << schema_to_json(schema).dump(2) << '\n';
}

std::vector<TrainingRecord> load_records(const std::string& path) {
    std::ifstream in = open_in(path);
    std::vector<TrainingRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(std::string("bad JSON: ") + e.what(), line_no);
        }
        TrainingRecord rec;
        try {
            rec.learner_id = j.at("learner_id").get<std::string>();
            rec.step = j.at("step").get<int>();
            rec.exercise_id = j.at("exercise_id").get<std::string>();
            rec.score = j.at("score").get<double>();
            rec.time = j.at("time").get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("bad record: ") + e.what(), line_no);
        }
        if (j.contains("user_attrs")) rec.user_attrs = attrs_from_json(j["user_attrs"], line_no);
        if (j.contains("exercise_attrs"))
            rec.exercise_attrs = attrs_from_json(j["exercise_attrs"], line_no);
        records.push_back(std::move(rec));
    }
    return records;
}

void save_records(std::span<const TrainingRecord> records, const std::string& path) {
    std::ofstream out = open_out(path);
    for (const TrainingRecord& rec : records) {
        nlohmann::json j;
        j["learner_id"] = rec.learner_id;
        j["step"] = rec.step;
        j["exercise_id"] = rec.exercise_id;
        j["score"] = rec.score;
        j["time"] = rec.time;
        j["user_attrs"] = attrs_to_json(rec.user_attrs);
        j["exercise_attrs"] = attrs_to_json(rec.exercise_attrs);
        out << j.dump() << '\n';
    }
}

TrainingDataset build_dataset(std::vector<TrainingRecord> records, QMatrix qmatrix,
                              FeatureSchema schema, int min_sequence_length) {
    TrainingDataset ds;
    ds.qmatrix = std::move(qmatrix);
    ds.schema = std::move(schema);

    std::map<std::string, std::size_t> learner_slot;
    for (TrainingRecord& rec : records) {
        if (!std::isfinite(rec.score))
            throw ValidationError("non-finite score for learner " + rec.learner_id);
        if (!std::isfinite(rec.time))
            throw ValidationError("non-finite time for learner " + rec.learner_id);
        ds.qmatrix.row_of(rec.exercise_id);  // referential integrity
        const auto [it, inserted] = learner_slot.try_emplace(rec.learner_id, ds.learners.size());
        if (inserted) {
            ds.learners.push_back(rec.learner_id);
            ds.sequences.emplace_back();
        }
        ds.sequences[it->second].push_back(std::move(rec));
    }

    for (std::size_t u = 0; u < ds.learners.size(); ++u) {
        auto& seq = ds.sequences[u];
        std::stable_sort(seq.begin(), seq.end(), [](const TrainingRecord& a, const TrainingRecord& b) {
            if (a.time != b.time) return a.time < b.time;
            return a.step < b.step;
        });
        for (std::size_t i = 0; i < seq.size(); ++i) {
            if (seq[i].step != static_cast<int>(i) + 1)
                throw ValidationError("learner " + ds.learners[u] +
                                      ": steps must be contiguous from 1, found step " +
                                      std::to_string(seq[i].step) + " at position " +
                                      std::to_string(i + 1));
        }
    }

    if (min_sequence_length > 1) {
        std::size_t kept = 0;
        for (std::size_t u = 0; u < ds.learners.size(); ++u) {
            if (ds.sequences[u].size() >= static_cast<std::size_t>(min_sequence_length)) {
                if (kept != u) {
                    ds.learners[kept] = std::move(ds.learners[u]);
                    ds.sequences[kept] = std::move(ds.sequences[u]);
                }
                ++kept;
            }
        }
        ds.learners.resize(kept);
        ds.sequences.resize(kept);
    }
    return ds;
}

TrainingDataset load_dataset(const std::string& records_path, const std::string& qmatrix_path,
                             const std::string& schema_path, int min_sequence_length) {
    return build_dataset(load_records(records_path), load_qmatrix(qmatrix_path),
                         load_schema(schema_path), min_sequence_length);
}

void save_dataset(const TrainingDataset& dataset, const std::string& records_path) {
    std::vector<TrainingRecord> flat;
    flat.reserve(dataset.total_records());
    for (const auto& seq : dataset.sequences) flat.insert(flat.end(), seq.begin(), seq.end());
    save_records(flat, records_path);
}

TrainingDataset normalize_scores(TrainingDataset dataset, bool per_exercise) {
    std::map<std::string, std::vector<TrainingRecord*>> groups;
    for (auto& seq : dataset.sequences)
        for (TrainingRecord& rec : seq)
            groups[per_exercise ? rec.exercise_id : std::string("*")].push_back(&rec);
    if (groups.empty()) throw ValidationError("cannot normalize an empty dataset");

    for (auto& [key, recs] : groups) {
        if (per_exercise && recs.size() < 10)
            throw ValidationError("exercise '" + key + "' has only " + std::to_string(recs.size()) +
                                  " records; need at least 10 to estimate a full score");
        std::vector<double> sorted;
        sorted.reserve(recs.size());
        for (const TrainingRecord* r : recs) sorted.push_back(r->score);
        std::sort(sorted.begin(), sorted.end());
        const std::size_t n = sorted.size();
        // nearest-rank 90th percentile: the top 10% of raw scores count as full
        const std::size_t rank = static_cast<std::size_t>(
            std::ceil(0.9 * static_cast<double>(n)));
        const double full = sorted[rank == 0 ? 0 : rank - 1];
        const double lo = sorted.front();
        for (TrainingRecord* r : recs) {
            if (full == lo) {
                r->score = 0.405;  // zero spread: park the group at the midpoint
            } else {
                const double t = std::min((r->score - lo) / (full - lo), 1.0);
                r->score = 0.01 + 0.79 * t;
            }
        }
    }
    return dataset;
}

PracticeCounts practice_counts(const std::vector<TrainingRecord>& sequence, int upto_step,
                               const QMatrix& qmatrix) {
    if (upto_step < 1 || static_cast<std::size_t>(upto_step) > sequence.size())
        throw ValidationError("upto_step " + std::to_string(upto_step) +
                              " outside sequence of length " + std::to_string(sequence.size()));
    const int k = qmatrix.num_skills();
    PracticeCounts out;
    out.per_skill = Eigen::VectorXd::Zero(k);
    out.interval = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd last_time =
        Eigen::VectorXd::Constant(k, -std::numeric_limits<double>::infinity());
    for (int i = 0; i + 1 < upto_step; ++i) {
        const TrainingRecord& rec = sequence[static_cast<std::size_t>(i)];
        const Eigen::VectorXd row = qmatrix.skill_vector(rec.exercise_id);
        out.per_skill += row;
        out.total += 1.0;
        for (int j = 0; j < k; ++j)
            if (row[j] != 0.0) last_time[j] = rec.time;
    }
    const double now = sequence[static_cast<std::size_t>(upto_step - 1)].time;
    for (int j = 0; j < k; ++j)
        if (std::isfinite(last_time[j])) out.interval[j] = now - last_time[j];
    return out;
}

}  // namespace sklaw
