#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "sklaw/core/error.hpp"
#include "sklaw/eval/evalkit.hpp"

using namespace sklaw;

namespace {

const std::vector<std::string> kCounts = {"N1", "N2"};

Eigen::VectorXd vec(std::initializer_list<double> xs) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (const double x : xs) v[i++] = x;
    return v;
}

Expr law(const std::string& text) { return parse_infix(text, kCounts); }

FrontEntry entry(const std::string& text, double mae) {
    Expr e = law(text);
    const int c = complexity(e);
    return {std::move(e), mae, c};
}

}  // namespace

TEST_CASE("r-squared") {
    const Eigen::VectorXd actual = vec({1.0, 2.0, 3.0});

    CHECK(r_squared(actual, actual) == 1.0);
    CHECK(r_squared(Eigen::VectorXd::Constant(3, 2.0), actual) == 0.0);
    // residual 1 against total variance 2
    CHECK(r_squared(vec({1.0, 2.0, 4.0}), actual) == 0.5);

    SUBCASE("permutation invariance") {
        const Eigen::VectorXd pred = vec({1.1, 1.9, 3.2, 4.1});
        const Eigen::VectorXd act = vec({1.0, 2.0, 3.0, 4.0});
        const double forward = r_squared(pred, act);
        const double backward = r_squared(pred.reverse(), act.reverse());
        CHECK(forward == doctest::Approx(backward).epsilon(1e-14));
    }

    SUBCASE("errors") {
        CHECK_THROWS_AS(r_squared(vec({1.0, 2.0}), actual), ValidationError);
        CHECK_THROWS_AS(r_squared(vec({1.0}), vec({1.0})), ValidationError);
        CHECK_THROWS_AS(r_squared(vec({1.0, 2.0, 3.0}), Eigen::VectorXd::Constant(3, 2.0)),
                        ValidationError);
        // constant-to-machine-precision counts as constant
        CHECK_THROWS_AS(r_squared(vec({0.1, 0.1, 0.1}), vec({0.1, 0.1, 0.1})), ValidationError);
    }
}

TEST_CASE("bayesian information criterion") {
    CHECK(bic(100, 3, 1.0) == doctest::Approx(-446.70150804084483).epsilon(1e-14));
    CHECK(bic(4, 1, 2.0) == doctest::Approx(-1.3862943611198906).epsilon(1e-14));

    CHECK(bic(50, 2, 3.0) > bic(50, 2, 2.0));
    CHECK(bic(50, 3, 2.0) > bic(50, 2, 2.0));

    CHECK_THROWS_AS(bic(0, 2, 1.0), ValidationError);
    CHECK_THROWS_AS(bic(10, -1, 1.0), ValidationError);
    CHECK_THROWS_AS(bic(10, 2, 0.0), ValidationError);
    CHECK_THROWS_AS(bic(10, 2, -1.0), ValidationError);
}

TEST_CASE("classical-law fitting") {
    Eigen::VectorXd N(40);
    for (int i = 0; i < 40; ++i) N[i] = i + 1.0;

    SUBCASE("power data round-trips") {
        const Eigen::VectorXd y = (0.34 - 0.821 * N.array().pow(-0.114)).matrix();
        const FitResult fit = fit_classical_law(FitFamily::Power, N, y);
        CHECK(fit.a == doctest::Approx(0.34).epsilon(1e-3));
        CHECK(fit.b == doctest::Approx(-0.821).epsilon(1e-3));
        CHECK(fit.c == doctest::Approx(-0.114).epsilon(1e-3));
        CHECK(fit.r2 > 0.9999);
        CHECK(fit.r2 <= 1.0);
    }

    SUBCASE("exponential data round-trips") {
        const Eigen::VectorXd y = (0.2 + 0.5 * (-0.3 * N.array()).exp()).matrix();
        const FitResult fit = fit_classical_law(FitFamily::Exponential, N, y);
        CHECK(fit.a == doctest::Approx(0.2).epsilon(1e-3));
        CHECK(fit.b == doctest::Approx(0.5).epsilon(1e-3));
        CHECK(fit.c == doctest::Approx(-0.3).epsilon(1e-3));
        CHECK(fit.r2 > 0.9999);
    }

    SUBCASE("wrong family fits strictly worse") {
        const Eigen::VectorXd y = (0.2 + 0.5 * (-0.3 * N.array()).exp()).matrix();
        const FitResult right = fit_classical_law(FitFamily::Exponential, N, y);
        const FitResult wrong = fit_classical_law(FitFamily::Power, N, y);
        CHECK(wrong.r2 < right.r2);
        CHECK(wrong.r2 <= 1.0);
    }

    SUBCASE("repeated fits are identical") {
        const Eigen::VectorXd y = (0.1 * N.array() + (0.05 * N.array()).sin()).matrix();
        const FitResult a = fit_classical_law(FitFamily::Power, N, y);
        const FitResult b = fit_classical_law(FitFamily::Power, N, y);
        CHECK(a.a == b.a);
        CHECK(a.b == b.b);
        CHECK(a.c == b.c);
        CHECK(a.r2 == b.r2);
        CHECK(a.r2 <= 1.0);
    }

    SUBCASE("errors") {
        const Eigen::VectorXd short_n = N.head(9);
        CHECK_THROWS_AS(fit_classical_law(FitFamily::Power, short_n, short_n), ValidationError);
        Eigen::VectorXd below_one = N;
        below_one[0] = 0.5;
        CHECK_THROWS_AS(fit_classical_law(FitFamily::Power, below_one, N), ValidationError);
        CHECK_THROWS_AS(
            fit_classical_law(FitFamily::Power, N, Eigen::VectorXd::Constant(40, 0.7)),
            ValidationError);
        CHECK_THROWS_AS(fit_classical_law(FitFamily::Power, N, N.head(20)), ValidationError);
    }

    SUBCASE("serialization") {
        const Eigen::VectorXd y = (0.2 + 0.5 * (-0.3 * N.array()).exp()).matrix();
        const nlohmann::json j = fit_to_json(fit_classical_law(FitFamily::Exponential, N, y));
        CHECK(j.at("family") == "exponential");
        CHECK(j.at("r2").get<double>() > 0.9999);
    }
}

TEST_CASE("term decomposition") {
    SUBCASE("linear forms") {
        const auto d = decompose_law(law("0.05*N1 + 0.05*N2"), 2);
        REQUIRE(d.has_value());
        CHECK(d->linear[0] == doctest::Approx(0.05).epsilon(1e-15));
        CHECK(d->linear[1] == doctest::Approx(0.05).epsilon(1e-15));
        CHECK(d->intercept == 0.0);
        CHECK_FALSE(d->has_exp);
        CHECK(classify_template(d) == LawTemplate::Linear);
    }

    SUBCASE("scale distributes over sums and negation") {
        const auto d = decompose_law(law("0.3*(N1 + N2) - (N1 - 0.5*N2)"), 2);
        REQUIRE(d.has_value());
        CHECK(d->linear[0] == doctest::Approx(-0.7).epsilon(1e-15));
        CHECK(d->linear[1] == doctest::Approx(0.8).epsilon(1e-15));
    }

    SUBCASE("exponential with forgetting") {
        const auto d = decompose_law(law("exp(0.1*N2) - 0.1*(N1 + N2)"), 2);
        REQUIRE(d.has_value());
        CHECK(d->has_exp);
        CHECK(d->exp_scale == 1.0);
        CHECK(d->exp_inner[0] == 0.0);
        CHECK(d->exp_inner[1] == doctest::Approx(0.1).epsilon(1e-15));
        CHECK(d->linear[0] == doctest::Approx(-0.1).epsilon(1e-15));
        CHECK(classify_template(d) == LawTemplate::Exponential);
    }

    SUBCASE("constant-base power is an exponential in disguise") {
        const auto d = decompose_law(law("pow(1.1051709180756477, N2)"), 2);
        REQUIRE(d.has_value());
        CHECK(d->has_exp);
        CHECK(d->exp_inner[1] == doctest::Approx(0.1).epsilon(1e-12));
        CHECK(classify_template(d) == LawTemplate::Exponential);
    }

    SUBCASE("power and inverse-power") {
        const auto pos = decompose_law(law("0.57*pow(N1 + N2, 0.8) - 0.2*(N1 + N2)"), 2);
        REQUIRE(pos.has_value());
        CHECK(pos->has_pow);
        CHECK(pos->pow_scale == doctest::Approx(0.57).epsilon(1e-15));
        CHECK(pos->pow_inner[0] == 1.0);
        CHECK(pos->pow_inner[1] == 1.0);
        CHECK(pos->pow_exponent == doctest::Approx(0.8).epsilon(1e-15));
        CHECK(classify_template(pos) == LawTemplate::Power);

        const auto neg = decompose_law(law("0.34 - 0.821*pow(N1, 0.0 - 0.114)"), 2);
        REQUIRE(neg.has_value());
        CHECK(neg->intercept == doctest::Approx(0.34).epsilon(1e-15));
        CHECK(classify_template(neg) == LawTemplate::InversePower);
    }

    SUBCASE("logarithmic") {
        const auto d = decompose_law(law("0.2 + 0.3*log(N1)"), 2);
        REQUIRE(d.has_value());
        CHECK(d->has_log);
        CHECK(d->log_scale == doctest::Approx(0.3).epsilon(1e-15));
        CHECK(classify_template(d) == LawTemplate::Logarithmic);
    }

    SUBCASE("outside the template grammar") {
        CHECK_FALSE(decompose_law(law("N1*N2"), 2).has_value());
        CHECK_FALSE(decompose_law(law("sin(N1)"), 2).has_value());
        CHECK_FALSE(decompose_law(law("exp(N1) + exp(N2)"), 2).has_value());
        CHECK_FALSE(decompose_law(law("pow(N1, N2)"), 2).has_value());
        CHECK_FALSE(decompose_law(law("N1"), 0).has_value());  // variable out of range
        CHECK(classify_template(decompose_law(law("N1*N2"), 2)) == LawTemplate::Unmatched);
    }
}

TEST_CASE("preset collapse") {
    const std::vector<GoverningLaw> setting1 = preset_laws(1);

    // mutualism and forgetting fold into two count coefficients
    const TermDecomp lin = preset_decomp(setting1[0], 0, 1, 2);
    CHECK(lin.linear[0] == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(lin.linear[1] == doctest::Approx(0.05).epsilon(1e-12));
    CHECK_FALSE(lin.has_exp);

    const TermDecomp expd = preset_decomp(setting1[1], 1, 0, 2);
    CHECK(expd.has_exp);
    CHECK(expd.exp_scale == 1.0);
    CHECK(expd.exp_inner[1] == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(expd.exp_inner[0] == 0.0);
    CHECK(expd.linear[0] == doctest::Approx(-0.1).epsilon(1e-15));

    CHECK_THROWS_AS(preset_decomp(setting1[0], 0, 0, 2), ValidationError);
    CHECK_THROWS_AS(preset_decomp(setting1[0], 0, 2, 2), ValidationError);
}

TEST_CASE("restoration assessment") {
    const std::vector<GoverningLaw> setting1 = preset_laws(1);
    const std::vector<GoverningLaw> setting3 = preset_laws(3);

    SUBCASE("exact linear law restores on all three axes") {
        const auto v = assess_restoration(law("0.05*N1 + 0.05*N2"), kCounts, setting1[0], 0, 1);
        CHECK(v.feature);
        CHECK(v.structure);
        CHECK(v.value);
        CHECK(v.matched_template == "linear");
        REQUIRE_FALSE(v.constants.empty());
        for (const ConstantCheck& c : v.constants) CHECK(c.pass);
    }

    SUBCASE("missing count fails the feature axis") {
        const auto v = assess_restoration(law("0.1*N2"), kCounts, setting1[0], 0, 1);
        CHECK_FALSE(v.feature);
        CHECK_FALSE(v.structure);
        CHECK_FALSE(v.value);
    }

    SUBCASE("five percent slope error keeps structure but fails value") {
        const auto v =
            assess_restoration(law("0.0525*N1 + 0.05*N2"), kCounts, setting1[0], 0, 1);
        CHECK(v.feature);
        CHECK(v.structure);
        CHECK_FALSE(v.value);
        bool found = false;
        for (const ConstantCheck& c : v.constants)
            if (c.name == "coef(N1)") {
                found = true;
                CHECK_FALSE(c.pass);
                CHECK(c.error == doctest::Approx(0.05).epsilon(1e-9));
            }
        CHECK(found);
    }

    SUBCASE("pow-form exponential law restores against the exponential preset") {
        const Expr e = law("pow(1.1051709180756477, N2) - 0.1*(N1 + N2)");
        const auto v = assess_restoration(e, kCounts, setting1[1], 1, 0);
        CHECK(v.feature);
        CHECK(v.structure);
        CHECK(v.value);
        CHECK(v.matched_template == "exponential");
    }

    SUBCASE("constant inside the exponential folds into the scale") {
        const Expr e =
            law("0.7788007830714049*exp(0.1*N2 + 0.25) - 0.1*(N1 + N2)");
        const auto v = assess_restoration(e, kCounts, setting1[1], 1, 0);
        CHECK(v.structure);
        CHECK(v.value);
    }

    SUBCASE("power law with mutualism canonicalizes to a matched scale") {
        const Expr e = Expr::binary(
            Op::Sub,
            Expr::binary(Op::Mul, Expr::constant(std::pow(0.5, 0.8)),
                         Expr::binary(Op::Pow,
                                      Expr::binary(Op::Add, Expr::variable(0), Expr::variable(1)),
                                      Expr::constant(0.8))),
            Expr::binary(Op::Mul, Expr::constant(0.2),
                         Expr::binary(Op::Add, Expr::variable(0), Expr::variable(1))));
        const auto v = assess_restoration(e, kCounts, setting3[0], 0, 1);
        CHECK(v.feature);
        CHECK(v.structure);
        CHECK(v.value);
        CHECK(v.matched_template == "power");
    }

    SUBCASE("wrong exponent fails only the value axis") {
        const Expr e = Expr::binary(
            Op::Sub,
            Expr::binary(Op::Mul, Expr::constant(std::pow(0.5, 0.8)),
                         Expr::binary(Op::Pow,
                                      Expr::binary(Op::Add, Expr::variable(0), Expr::variable(1)),
                                      Expr::constant(0.7))),
            Expr::binary(Op::Mul, Expr::constant(0.2),
                         Expr::binary(Op::Add, Expr::variable(0), Expr::variable(1))));
        const auto v = assess_restoration(e, kCounts, setting3[0], 0, 1);
        CHECK(v.structure);
        CHECK_FALSE(v.value);
    }

    SUBCASE("family mismatch fails structure but not feature") {
        const auto v = assess_restoration(law("0.2*N2 - 0.1*N1"), kCounts, setting1[1], 1, 0);
        CHECK(v.feature);
        CHECK_FALSE(v.structure);
        CHECK_FALSE(v.value);
        CHECK(v.matched_template == "linear");
    }

    SUBCASE("zero-preset constants use the absolute rule") {
        const auto near =
            assess_restoration(law("0.05*N1 + 0.05*N2 + 0.005"), kCounts, setting1[0], 0, 1);
        CHECK(near.value);
        const auto far =
            assess_restoration(law("0.05*N1 + 0.05*N2 + 0.02"), kCounts, setting1[0], 0, 1);
        CHECK(far.structure);
        CHECK_FALSE(far.value);
    }

    SUBCASE("unmatched structures report the canonical text for review") {
        const auto v = assess_restoration(law("sin(N1)*N2 + N1"), kCounts, setting1[0], 0, 1);
        CHECK_FALSE(v.structure);
        CHECK(v.matched_template == "unmatched");
        CHECK_FALSE(v.canonical_text.empty());
    }

    SUBCASE("verdict serialization") {
        const auto v = assess_restoration(law("0.05*N1 + 0.05*N2"), kCounts, setting1[0], 0, 1);
        const nlohmann::json j = verdict_to_json(v);
        CHECK(j.at("feature") == true);
        CHECK(j.at("structure") == true);
        CHECK(j.at("value") == true);
        CHECK(j.at("template") == "linear");
        CHECK(j.at("constants").size() == v.constants.size());
    }
}

TEST_CASE("law selection over the front") {
    SUBCASE("a one-variable entry holding the global best wins outright") {
        ParetoFront front;
        front.entries.push_back(entry("0.5", 2.0));
        front.entries.push_back(entry("0.9*N1", 0.5));
        const FrontEntry* pick = select_law(front);
        REQUIRE(pick != nullptr);
        CHECK(variables_of(pick->expr) == std::vector<int>{0});
    }

    SUBCASE("small gains do not buy extra features") {
        ParetoFront front;
        front.entries.push_back(entry("N1", 1.0));
        front.entries.push_back(entry("0.9*N1 + 0.01*N2", 0.95));
        const FrontEntry* pick = select_law(front);
        REQUIRE(pick != nullptr);
        CHECK(pick->expr == law("N1"));
    }

    SUBCASE("a much better two-variable law is preferred") {
        ParetoFront front;
        front.entries.push_back(entry("N1", 1.0));
        front.entries.push_back(entry("0.9*N1 + 0.5*N2", 0.5));
        const FrontEntry* pick = select_law(front);
        REQUIRE(pick != nullptr);
        CHECK(variables_of(pick->expr).size() == 2);
    }

    SUBCASE("exactly-at-margin keeps the fewer-feature law") {
        ParetoFront front;
        front.entries.push_back(entry("N1", 1.0));
        front.entries.push_back(entry("0.9*N1 + 0.5*N2", 0.9));
        const FrontEntry* pick = select_law(front);
        REQUIRE(pick != nullptr);
        CHECK(pick->expr == law("N1"));
    }

    SUBCASE("a constant within margin beats variable laws") {
        ParetoFront front;
        front.entries.push_back(entry("0.5", 1.0));
        front.entries.push_back(entry("N1 + 0.0001*N2", 0.999));
        const FrontEntry* pick = select_law(front);
        REQUIRE(pick != nullptr);
        CHECK(variables_of(pick->expr).empty());
    }

    SUBCASE("edge cases") {
        ParetoFront empty;
        CHECK(select_law(empty) == nullptr);
        ParetoFront front;
        front.entries.push_back(entry("N1", 1.0));
        CHECK_THROWS_AS(select_law(front, -0.1), ValidationError);
    }
}
