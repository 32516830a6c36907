#include "abpm/dataio.hpp"
#include "abpm/inference.hpp"
#include "helpers.hpp"
#include "instances.hpp"

#include <doctest.h>

#include <cmath>

using namespace abpm;
using namespace testing_helpers;

namespace {

FittedModel random_intercept_fit(std::size_t n, std::uint64_t seed) {
    const auto spec = orthonormal_spec(0, 0);
    const auto cohort = simulate_cohort(simulation(spec, Eigen::VectorXd::Constant(1, 600.0),
                                                   Eigen::VectorXd::Constant(1, 900.0), 50.0, n, seed));
    return fit(spec, cohort);
}

Contrast unit_contrast(int q, int j) {
    Contrast c;
    c.C = Eigen::MatrixXd::Zero(1, q);
    c.C(0, j) = 1.0;
    c.label = "e" + std::to_string(j);
    return c;
}

Cohort scaled(const Cohort& cohort, double k) {
    auto subjects = cohort.subjects();
    for (auto& s : subjects) s.y *= k;
    return Cohort(subjects, cohort.outcome());
}

}  // namespace

TEST_SUITE("inference") {

TEST_CASE("information criteria arithmetic") {
    const auto ic = information_criteria(-100.0, 3, 50);
    CHECK(ic.aic == doctest::Approx(206.0).epsilon(1e-15));
    CHECK(ic.bic == doctest::Approx(200.0 + 3.0 * std::log(50.0)).epsilon(1e-15));
    CHECK(ic.bic == doctest::Approx(211.736).epsilon(1e-5));
}

TEST_CASE("R2 from F") {
    CHECK(r2_from_f(0.0, 3, 40.0) == 0.0);
    CHECK(r2_from_f(25.0, 1, 25.0) == doctest::Approx(0.5));
    double prev = -1;
    for (double f : {0.0, 0.1, 1.0, 5.0, 50.0, 1e6}) {
        const double r = r2_from_f(f, 2, 30.0);
        CHECK(r >= 0.0);
        CHECK(r < 1.0);
        CHECK(r > prev);
        prev = r;
    }
    CHECK(r2_from_f(10.0, 1, std::numeric_limits<double>::infinity()) == 0.0);
}

TEST_CASE("balanced random intercept: intercept ddf is N-1") {
    for (std::size_t n : {5u, 20u, 50u}) {
        const auto fitted = random_intercept_fit(n, 40 + n);
        REQUIRE(fitted.converged);
        const auto t = f_test(fitted, unit_contrast(1, 0));
        CHECK(std::abs(t.ddf - static_cast<double>(n - 1)) <= 1e-6);
    }
}

TEST_CASE("contrast validation") {
    const auto fitted = random_intercept_fit(10, 3);
    Contrast zero{Eigen::MatrixXd::Zero(1, 1), "zero"};
    CHECK_THROWS_AS_KIND((void)f_test(fitted, zero), ErrorKind::contrast);
    Contrast wide{Eigen::MatrixXd::Ones(1, 2), "wide"};
    CHECK_THROWS_AS_KIND((void)f_test(fitted, wide), ErrorKind::contrast);
    Contrast dup{Eigen::MatrixXd::Ones(2, 1), "dup"};
    CHECK_THROWS_AS_KIND((void)f_test(fitted, dup), ErrorKind::contrast);
}

TEST_CASE("tests on a fit that did not converge are refused") {
    const auto spec = orthonormal_spec(3, 3);
    const auto cohort = simulate_cohort(simulation(spec, Eigen::Vector4d(600, -30, 10, 5),
                                                   Eigen::Vector4d(900, 80, 50, 30), 40, 30, 12, 0.1, 0.1));
    FitOptions opt;
    opt.max_iter = 1;
    const auto fitted = fit(spec, cohort, opt);
    REQUIRE_FALSE(fitted.converged);
    CHECK_THROWS_AS_KIND((void)f_test(fitted, unit_contrast(4, 1)), ErrorKind::state);
}

TEST_CASE("larger F gives a smaller p at fixed df") {
    const auto spec = orthonormal_spec(3, 3);
    const auto cohort = simulate_cohort(simulation(spec, Eigen::Vector4d(600, -30, 10, 5),
                                                   Eigen::Vector4d(900, 80, 50, 30), 40, 30, 13));
    auto fitted = fit(spec, cohort);
    REQUIRE(fitted.converged);
    double prev_f = -1, prev_p = 2;
    const double base_ddf = f_test(fitted, model_contrast(fitted)).ddf;
    for (double k : {0.05, 0.2, 0.5, 1.0, 1.5}) {
        auto f2 = fitted;
        f2.beta_hat = fitted.beta_hat * k;
        const auto t = f_test(f2, model_contrast(f2));
        CHECK(t.ddf == base_ddf);
        CHECK(t.F > prev_f);
        CHECK(t.p_value < prev_p);
        CHECK(t.p_value >= 0.0);
        CHECK(t.p_value <= 1.0);
        prev_f = t.F;
        prev_p = t.p_value;
    }
}

TEST_CASE("scale equivariance of tests and criteria") {
    const auto small = orthonormal_spec(3, 1);
    const auto large = orthonormal_spec(3, 2);
    const auto cohort = simulate_cohort(simulation(orthonormal_spec(3, 3), Eigen::Vector4d(600, -30, 10, 5),
                                                   Eigen::Vector4d(900, 80, 50, 30), 40, 40, 14, 0.2, 0.1));
    const auto big = scaled(cohort, 3.0);
    const auto a = fit(small, cohort), b = fit(large, cohort);
    const auto as = fit(small, big), bs = fit(large, big);
    REQUIRE(a.converged);
    REQUIRE(as.converged);
    for (int j = 0; j < 4; ++j) {
        const auto t = f_test(a, j == 0 ? model_contrast(a) : unit_contrast(4, j));
        const auto ts = f_test(as, j == 0 ? model_contrast(as) : unit_contrast(4, j));
        CHECK(ts.F == doctest::Approx(t.F).epsilon(1e-6));
        CHECK(ts.ddf == doctest::Approx(t.ddf).epsilon(1e-5));
        CHECK(ts.p_value == doctest::Approx(t.p_value).epsilon(1e-5));
    }
    CHECK(r2_statistics(as, {}).model_r2 == doctest::Approx(r2_statistics(a, {}).model_r2).epsilon(1e-6));
    const double gap = information_criteria(a).aic - information_criteria(b).aic;
    const double gap_s = information_criteria(as).aic - information_criteria(bs).aic;
    CHECK(gap_s == doctest::Approx(gap).epsilon(1e-6));
}

TEST_CASE("semi-partial R2 follows the size of the true coefficients") {
    const auto spec = orthonormal_spec(4, 4);
    const Eigen::VectorXd beta = (Eigen::VectorXd(5) << 600, 24, 12, 6, 3).finished();
    const Eigen::VectorXd d = (Eigen::VectorXd(5) << 900, 30, 30, 30, 30).finished();
    int agree = 0;
    for (int rep = 0; rep < 50; ++rep) {
        const auto cohort = simulate_cohort(simulation(spec, beta, d, 40, 40, 500 + rep));
        const auto fitted = fit(spec, cohort);
        const auto r2 = r2_statistics(fitted, single_column_contrasts(fitted));
        REQUIRE(r2.semi_partial.size() == 4);
        if (r2.semi_partial[0] > r2.semi_partial[1] && r2.semi_partial[1] > r2.semi_partial[2]) ++agree;
    }
    CHECK(agree >= 45);
}

TEST_CASE("degree six truth: AIC prefers degree six over degree four") {
    const Eigen::VectorXd beta = (Eigen::VectorXd(7) << 612, -40, -22, 15, 12, 6, -5).finished();
    const Eigen::VectorXd d = (Eigen::VectorXd(7) << 1800, 220, 160, 90, 80, 50, 30).finished();
    int wins = 0;
    FitOptions opt;
    opt.compute_inference = false;
    for (int rep = 0; rep < 50; ++rep) {
        const auto cohort = simulate_cohort(simulation(orthonormal_spec(6, 6), beta, d, 60, 100, 900 + rep));
        const auto f6 = fit(orthonormal_spec(6, 6), cohort, opt);
        const auto f4 = fit(orthonormal_spec(4, 4), cohort, opt);
        if (information_criteria(f6).aic < information_criteria(f4).aic) ++wins;
    }
    CHECK(wins >= 48);
}

TEST_CASE("parameter counting in criteria") {
    const auto fitted = random_intercept_fit(12, 8);
    CHECK(information_criteria(fitted).parameters == 2);
    CHECK(information_criteria(fitted).n_subjects == 12);
    FitOptions ml;
    ml.method = Method::ml;
    const auto spec = orthonormal_spec(0, 0);
    const auto cohort = simulate_cohort(simulation(spec, Eigen::VectorXd::Constant(1, 600.0),
                                                   Eigen::VectorXd::Constant(1, 900.0), 50.0, 12, 8));
    CHECK(information_criteria(fit(spec, cohort, ml)).parameters == 3);
}

TEST_CASE("REML comparison guard") {
    const auto cohort = simulate_cohort(simulation(orthonormal_spec(3, 3), Eigen::Vector4d(600, -30, 10, 5),
                                                   Eigen::Vector4d(900, 80, 50, 30), 40, 25, 15));
    FitOptions opt;
    opt.compute_inference = false;
    const auto a = fit(orthonormal_spec(3, 3), cohort, opt);
    const auto b = fit(orthonormal_spec(2, 2), cohort, opt);
    const auto c = fit(orthonormal_spec(3, 1), cohort, opt);
    CHECK_THROWS_AS_KIND(check_comparable({&a, &b}, false), ErrorKind::state);
    CHECK_NOTHROW(check_comparable({&a, &b}, true));
    CHECK_NOTHROW(check_comparable({&a, &c}, false));
    opt.method = Method::ml;
    const auto am = fit(orthonormal_spec(3, 3), cohort, opt);
    const auto bm = fit(orthonormal_spec(2, 2), cohort, opt);
    CHECK_NOTHROW(check_comparable({&am, &bm}, false));
}

TEST_CASE("tables") {
    const auto spec = orthonormal_spec(3, 3);
    const auto cohort = simulate_cohort(simulation(spec, Eigen::Vector4d(600, -30, 10, 5),
                                                   Eigen::Vector4d(900, 80, 50, 30), 40, 40, 16));
    const auto fitted = fit(spec, cohort);
    const auto fe = fixed_effects_table(fitted);
    REQUIRE(fe.size() == 4);
    CHECK(std::isnan(fe[0].semi_partial_r2));
    for (std::size_t j = 0; j < 4; ++j) {
        CHECK(fe[j].degree == static_cast<int>(j));
        CHECK(fe[j].estimate == fitted.beta_hat(static_cast<Eigen::Index>(j)));
        CHECK(fe[j].se == doctest::Approx(std::sqrt(fitted.cov_beta(static_cast<Eigen::Index>(j),
                                                                     static_cast<Eigen::Index>(j)))));
        CHECK(fe[j].p_value >= 0.0);
        CHECK(fe[j].p_value <= 1.0);
    }
    const auto vc = variance_components_table(fitted);
    CHECK(vc.size() == 5);
    for (const auto& row : vc) {
        CHECK(row.estimate > 0.0);
        CHECK(row.se > 0.0);
    }
}

}  // TEST_SUITE
