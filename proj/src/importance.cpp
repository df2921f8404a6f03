#include "sklaw/explain/importance.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "sklaw/core/error.hpp"

namespace sklaw {

ImportanceReport feature_importance(const TeacherFn& teacher, const Eigen::MatrixXd& samples,
                                    std::span<const std::string> names) {
    if (samples.rows() < 1) throw ValidationError("importance needs at least one sample");
    if (static_cast<Eigen::Index>(names.size()) != samples.cols())
        throw ValidationError("feature name count does not match sample width");

    Tape tape;
    const TapeVar z = tape.input(samples, true);
    const TapeVar out = teacher(tape, z);
    if (tape.value(out).rows() != samples.rows() || tape.value(out).cols() != 1)
        throw ValidationError("teacher must map the batch to one output per row");
    // summing decouples rows: each row of d(sum)/dz is that sample's gradient
    tape.backward(tape.sum(out));
    const Eigen::MatrixXd grads = tape.grad(z);

    ImportanceReport report;
    report.names.assign(names.begin(), names.end());
    Eigen::VectorXd mean_abs = grads.cwiseAbs().colwise().mean();
    const double total = mean_abs.sum();
    if (total <= 0.0) {
        report.all_zero = true;
        report.scores = Eigen::VectorXd::Zero(samples.cols());
    } else {
        report.scores = mean_abs / total;
    }

    report.rank.resize(static_cast<std::size_t>(samples.cols()));
    std::iota(report.rank.begin(), report.rank.end(), 0);
    std::stable_sort(report.rank.begin(), report.rank.end(), [&](int a, int b) {
        if (report.scores[a] != report.scores[b]) return report.scores[a] > report.scores[b];
        return a < b;
    });
    return report;
}

std::vector<int> select_top_k(ImportanceReport& report, int k) {
    const int width = static_cast<int>(report.scores.size());
    if (k < 1 || k > width) throw ValidationError("top-k must lie in [1, feature count]");
    std::vector<int> selected(report.rank.begin(), report.rank.begin() + k);
    std::sort(selected.begin(), selected.end());
    report.selected = selected;
    report.k = k;
    return selected;
}

nlohmann::json importance_to_json(const ImportanceReport& report) {
    nlohmann::json arr = nlohmann::json::array();
    for (int j = 0; j < static_cast<int>(report.scores.size()); ++j) {
        const auto pos = std::find(report.rank.begin(), report.rank.end(), j);
        const bool selected =
            std::find(report.selected.begin(), report.selected.end(), j) != report.selected.end();
        arr.push_back({{"feature", report.names[static_cast<std::size_t>(j)]},
                       {"score", report.scores[j]},
                       {"rank", static_cast<int>(pos - report.rank.begin())},
                       {"selected", selected}});
    }
    return {{"all_zero", report.all_zero}, {"scores", arr}};
}

void save_importance(const ImportanceReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open file for writing: " + path);
    out << importance_to_json(report).dump(2) << '\n';
}

}  // namespace sklaw
