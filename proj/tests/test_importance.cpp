#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "nlohmann/json.hpp"
#include "sklaw/core/error.hpp"
#include "sklaw/core/rng.hpp"
#include "sklaw/explain/importance.hpp"

using namespace sklaw;

namespace {

std::vector<std::string> feature_names(int k) {
    std::vector<std::string> names;
    for (int j = 0; j < k; ++j) names.push_back("f" + std::to_string(j));
    return names;
}

// y = X·w, so every sample's gradient row is w itself
TeacherFn linear_teacher(Eigen::MatrixXd w) {
    return [w = std::move(w)](Tape& tape, TapeVar z) { return tape.matmul(z, tape.leaf(w)); };
}

// y = sigmoid(X)·w: gradients vary per sample
TeacherFn saturating_teacher(Eigen::MatrixXd w) {
    return [w = std::move(w)](Tape& tape, TapeVar z) {
        return tape.matmul(tape.sigmoid(z), tape.leaf(w));
    };
}

Eigen::MatrixXd random_samples(int n, int k, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd m(n, k);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) m(i, j) = rng.uniform(-3.0, 3.0);
    return m;
}

}  // namespace

TEST_CASE("linear teachers have analytic importance") {
    SUBCASE("weights 3 and 1 split importance 0.75 / 0.25") {
        Eigen::MatrixXd w(2, 1);
        w << 3.0, 1.0;
        const auto report =
            feature_importance(linear_teacher(w), random_samples(40, 2, 5), feature_names(2));
        CHECK(report.scores[0] == 0.75);
        CHECK(report.scores[1] == 0.25);
        CHECK(report.scores.sum() == 1.0);
        CHECK(report.rank == std::vector<int>{0, 1});
        CHECK_FALSE(report.all_zero);
    }

    SUBCASE("zero fan-out weight means zero importance") {
        Eigen::MatrixXd w(3, 1);
        w << 2.0, 0.0, -1.0;
        const auto report =
            feature_importance(linear_teacher(w), random_samples(25, 3, 6), feature_names(3));
        CHECK(report.scores[1] == 0.0);
        CHECK(report.scores[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
        CHECK(report.scores[2] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
        CHECK(report.rank == std::vector<int>{0, 2, 1});
    }

    SUBCASE("duplicated features with symmetric weights tie exactly") {
        Eigen::MatrixXd w(4, 1);
        w << 1.3, 0.7, 1.3, 0.7;
        const auto report =
            feature_importance(linear_teacher(w), random_samples(30, 4, 7), feature_names(4));
        CHECK(report.scores[0] == report.scores[2]);
        CHECK(report.scores[1] == report.scores[3]);
        CHECK(report.rank == std::vector<int>{0, 2, 1, 3});  // ties fall back to index order
    }
}

TEST_CASE("importance ignores sample order and duplication") {
    Eigen::MatrixXd w(3, 1);
    w << 1.0, -2.0, 0.5;
    const Eigen::MatrixXd samples = random_samples(60, 3, 11);
    const auto names = feature_names(3);
    const auto base = feature_importance(saturating_teacher(w), samples, names);

    const Eigen::MatrixXd reversed = samples.colwise().reverse();
    const auto rev = feature_importance(saturating_teacher(w), reversed, names);

    Eigen::MatrixXd doubled(120, 3);
    doubled << samples, samples;
    const auto dup = feature_importance(saturating_teacher(w), doubled, names);

    for (int j = 0; j < 3; ++j) {
        CHECK(rev.scores[j] == doctest::Approx(base.scores[j]).epsilon(1e-12));
        CHECK(dup.scores[j] == doctest::Approx(base.scores[j]).epsilon(1e-12));
    }
    CHECK(rev.rank == base.rank);
    CHECK(dup.rank == base.rank);
}

TEST_CASE("an ignored extra feature leaves the other ranks alone") {
    Eigen::MatrixXd w3(3, 1);
    w3 << 0.5, 2.0, 1.0;
    const Eigen::MatrixXd samples3 = random_samples(40, 3, 13);
    const auto base = feature_importance(saturating_teacher(w3), samples3, feature_names(3));

    Eigen::MatrixXd w4(4, 1);
    w4 << 0.5, 2.0, 1.0, 0.0;
    Eigen::MatrixXd samples4(40, 4);
    samples4 << samples3, random_samples(40, 1, 17);
    const auto wide = feature_importance(saturating_teacher(w4), samples4, feature_names(4));

    // the dead feature ranks last; the live features keep their relative order
    CHECK(wide.scores[3] == 0.0);
    CHECK(wide.rank.back() == 3);
    std::vector<int> live(wide.rank.begin(), wide.rank.end() - 1);
    CHECK(live == base.rank);
    for (int j = 0; j < 3; ++j)
        CHECK(wide.scores[j] == doctest::Approx(base.scores[j]).epsilon(1e-12));
}

TEST_CASE("all-zero gradients are flagged instead of normalized") {
    const auto report = feature_importance(linear_teacher(Eigen::MatrixXd::Zero(2, 1)),
                                           random_samples(10, 2, 19), feature_names(2));
    CHECK(report.all_zero);
    CHECK(report.scores[0] == 0.0);
    CHECK(report.scores[1] == 0.0);
    CHECK(report.rank == std::vector<int>{0, 1});
}

TEST_CASE("teacher shape and name mismatches are rejected") {
    const auto two_cols = [](Tape& tape, TapeVar z) { return tape.mul(z, z); };
    CHECK_THROWS_AS(feature_importance(two_cols, random_samples(5, 2, 3), feature_names(2)),
                    ValidationError);
    Eigen::MatrixXd w(2, 1);
    w << 1.0, 1.0;
    CHECK_THROWS_AS(
        feature_importance(linear_teacher(w), random_samples(5, 2, 3), feature_names(3)),
        ValidationError);
    CHECK_THROWS_AS(
        feature_importance(linear_teacher(w), Eigen::MatrixXd(0, 2), feature_names(2)),
        ValidationError);
}

TEST_CASE("top-k selection") {
    Eigen::MatrixXd w(3, 1);

    SUBCASE("k equal to the feature count keeps everything") {
        w << 5.0, 3.0, 2.0;
        auto report =
            feature_importance(linear_teacher(w), random_samples(10, 3, 23), feature_names(3));
        CHECK(select_top_k(report, 3) == std::vector<int>{0, 1, 2});
        CHECK(report.k == 3);
    }

    SUBCASE("scores 0.5/0.3/0.2 with k=2 keep the first two") {
        w << 5.0, 3.0, 2.0;
        auto report =
            feature_importance(linear_teacher(w), random_samples(10, 3, 23), feature_names(3));
        CHECK(report.scores[0] == 0.5);
        CHECK(report.scores[1] == 0.3);
        CHECK(report.scores[2] == 0.2);
        CHECK(select_top_k(report, 2) == std::vector<int>{0, 1});
        CHECK(report.selected == std::vector<int>{0, 1});
    }

    SUBCASE("ties resolve to the lower feature index") {
        w << 4.0, 4.0, 2.0;
        auto report =
            feature_importance(linear_teacher(w), random_samples(10, 3, 23), feature_names(3));
        CHECK(select_top_k(report, 1) == std::vector<int>{0});
    }

    SUBCASE("k outside [1, K] is rejected") {
        w << 1.0, 2.0, 3.0;
        auto report =
            feature_importance(linear_teacher(w), random_samples(10, 3, 23), feature_names(3));
        CHECK_THROWS_AS(select_top_k(report, 0), ValidationError);
        CHECK_THROWS_AS(select_top_k(report, 4), ValidationError);
    }
}

TEST_CASE("report serialization") {
    Eigen::MatrixXd w(3, 1);
    w << 5.0, 3.0, 2.0;
    auto report =
        feature_importance(linear_teacher(w), random_samples(10, 3, 29), feature_names(3));
    select_top_k(report, 2);

    const nlohmann::json j = importance_to_json(report);
    CHECK_FALSE(j.at("all_zero").get<bool>());
    const auto& arr = j.at("scores");
    REQUIRE(arr.size() == 3);
    CHECK(arr[0].at("feature") == "f0");
    CHECK(arr[0].at("score").get<double>() == 0.5);
    CHECK(arr[0].at("rank") == 0);
    CHECK(arr[0].at("selected") == true);
    CHECK(arr[2].at("rank") == 2);
    CHECK(arr[2].at("selected") == false);

    const auto dir = std::filesystem::temp_directory_path() / "sklaw_test_importance";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "importance.json").string();
    save_importance(report, path);
    std::ifstream in(path);
    nlohmann::json back;
    in >> back;
    CHECK(back == j);
}
