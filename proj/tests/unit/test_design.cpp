#include "abpm/design.hpp"
#include "abpm/error.hpp"
#include "helpers.hpp"

#include <doctest.h>

using namespace abpm;
using namespace testing_helpers;

TEST_SUITE("design") {

TEST_CASE("degree nine complete subject gives X equal to Z") {
    const auto spec = orthonormal_spec(9, 9, RandomCovariance::diagonal, TimeGrid::hourly_midpoints());
    const Subject s = make_subject("a", TimeGrid::hourly_midpoints().points(), Eigen::VectorXd::Ones(24));
    const Cohort cohort({s}, OutcomeChannel::sbp);
    const DesignContext ctx(spec, cohort);
    const auto d = build_design(ctx, s);
    CHECK(d.X.rows() == 24);
    CHECK(d.X.cols() == 10);
    CHECK(d.Z.cols() == 10);
    CHECK(d.X == d.Z);
}

TEST_CASE("diet indicators and interactions widen X only") {
    auto spec = orthonormal_spec(9, 9, RandomCovariance::diagonal, TimeGrid::hourly_midpoints());
    spec.group_terms.push_back(GroupTerm{"diet", CovariateType::categorical, "control", {"control", "dash", "fv"}});
    spec.interaction_terms.push_back(InteractionTerm{"diet", {}});
    Subject s = make_subject("a", TimeGrid::hourly_midpoints().points(), Eigen::VectorXd::Ones(24));
    s.covariates["diet"] = "dash";
    const DesignContext ctx(spec, Cohort({s}, OutcomeChannel::sbp));
    const auto d = build_design(ctx, s);
    CHECK(d.X.rows() == 24);
    CHECK(d.X.cols() == 30);
    CHECK(d.Z.cols() == 10);
    // intercept, 9 time columns, dash indicator, fv indicator, then interactions
    CHECK(d.X.leftCols(10) == d.Z);
    CHECK(d.X.col(10).isConstant(1.0));
    CHECK(d.X.col(11).isZero());
    const auto labels = ctx.fixed_labels();
    CHECK(labels.size() == 30);

    const auto with = parameter_count(ctx);
    spec.interaction_terms.clear();
    const auto without = parameter_count(DesignContext(spec, Cohort({s}, OutcomeChannel::sbp)));
    CHECK(with.fixed - without.fixed == 18);
    CHECK(with.covariance == without.covariance);
}

TEST_CASE("subject without observations is a spec error") {
    Subject s;
    s.id = "empty";
    CHECK_THROWS_AS_KIND(s.validate(), ErrorKind::spec);
}

TEST_CASE("missing covariate and out-of-domain times") {
    auto spec = orthonormal_spec(2, 2);
    spec.group_terms.push_back(GroupTerm{"diet", CovariateType::categorical, "control", {"control", "dash"}});
    const Subject s = make_subject("a", {1, 2, 3, 4}, Eigen::VectorXd::Ones(4));
    const DesignContext ctx(spec, make_codings(spec));
    CHECK_THROWS_AS_KIND((void)ctx.design(s), ErrorKind::spec);
    const std::vector<double> bad{30.0};
    CHECK_THROWS_AS_KIND((void)ctx.design_at(bad, {{"diet", "dash"}}), ErrorKind::domain);
}

TEST_CASE("parameter counts") {
    const auto d9 = orthonormal_spec(9, 9, RandomCovariance::diagonal);
    CHECK(parameter_count(d9).fixed == 10);
    CHECK(parameter_count(d9).covariance == 11);
    const auto u9 = orthonormal_spec(9, 9, RandomCovariance::unstructured);
    CHECK(parameter_count(u9).covariance == 56);
    const auto rcs = spline_spec();
    CHECK(parameter_count(rcs).fixed == 9);
    CHECK(parameter_count(rcs).covariance == 11);
}

TEST_CASE("pooled X'X of complete orthonormal subjects is N I") {
    const auto spec = orthonormal_spec(6, 6, RandomCovariance::diagonal, TimeGrid::hourly_midpoints());
    std::vector<Subject> subjects;
    for (int i = 0; i < 7; ++i) {
        subjects.push_back(make_subject("s" + std::to_string(i), TimeGrid::hourly_midpoints().points(),
                                        Eigen::VectorXd::Constant(24, i)));
    }
    const Cohort cohort(subjects, OutcomeChannel::sbp);
    const DesignContext ctx(spec, cohort);
    Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(7, 7);
    for (const auto& s : cohort.subjects()) {
        const auto d = ctx.design(s);
        xtx += d.X.transpose() * d.X;
    }
    CHECK((xtx - 7.0 * Eigen::MatrixXd::Identity(7, 7)).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("designs are bitwise reproducible") {
    auto spec = spline_spec();
    const Subject s = make_subject("a", {0.7, 3.2, 9.9, 15.1, 22.4}, Eigen::VectorXd::Ones(5));
    const Cohort cohort({s}, OutcomeChannel::sbp);
    const auto a = DesignContext(spec, cohort).design(s);
    const auto b = DesignContext(spec, cohort).design(s);
    CHECK(a.X == b.X);
    CHECK(a.Z == b.Z);
}

TEST_CASE("reference level defaults to the alphabetically first") {
    GroupTerm g{"diet", CovariateType::categorical, std::nullopt, {}};
    std::vector<Subject> subjects;
    for (const char* lvl : {"fv", "control", "dash"}) {
        auto s = make_subject(lvl, {1.0}, Eigen::VectorXd::Ones(1));
        s.covariates["diet"] = lvl;
        subjects.push_back(s);
    }
    const Cohort cohort(subjects, OutcomeChannel::sbp);
    const auto c = make_coding(g, &cohort);
    CHECK(c.reference == "control");
    CHECK(c.indicator_levels() == std::vector<std::string>{"dash", "fv"});
}

TEST_CASE("random degree above fixed degree is rejected") {
    auto spec = orthonormal_spec(2, 3);
    CHECK_THROWS_AS_KIND(spec.validate(), ErrorKind::spec);
}

}  // TEST_SUITE
