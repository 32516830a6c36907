#include "abpm/blup.hpp"
#include "abpm/model_io.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <json.hpp>

using namespace abpm;
using namespace testing_helpers;

namespace {

const std::filesystem::path kData = ABPM_DATA_DIR;

}  // namespace

TEST_SUITE("model_io") {

TEST_CASE("model specs survive a dump and parse") {
    for (const char* name : {"poly4.json", "poly9.json", "rcs9.json"}) {
        const auto spec = load_model_spec(kData / "models" / name);
        const auto text = dump_model_spec(spec);
        const auto back = parse_model_spec(text);
        CHECK(dump_model_spec(back) == text);
        CHECK(back.fixed_basis == spec.fixed_basis);
        CHECK(back.random_basis == spec.random_basis);
        CHECK(back.reference_grid == spec.reference_grid);
    }
    const auto rcs = load_model_spec(kData / "models" / "rcs9.json");
    CHECK(rcs.fixed_basis.knots == clock_to_elapsed(default_clock_knots(), 12.0));

    auto spec = orthonormal_spec(6, 6);
    GroupTerm diet;
    diet.name = "diet";
    diet.reference = "control";
    diet.levels = {"control", "dash", "fruitveg"};
    spec.group_terms.push_back(diet);
    spec.interaction_terms.push_back({"diet", {1, 2}});
    const auto back = parse_model_spec(dump_model_spec(spec));
    CHECK(back.group_terms == spec.group_terms);
    CHECK(back.interaction_terms == spec.interaction_terms);
}

TEST_CASE("schema violations") {
    const std::string good = read_text_file(kData / "models" / "poly4.json");
    auto j = nlohmann::json::parse(good);
    CHECK_NOTHROW((void)parse_model_spec(j.dump()));

    auto extra = j;
    extra["colour"] = "red";
    CHECK_THROWS_AS_KIND((void)parse_model_spec(extra.dump()), ErrorKind::schema);
    auto nested = j;
    nested["fixed"]["shape"] = 1;
    CHECK_THROWS_AS_KIND((void)parse_model_spec(nested.dump()), ErrorKind::schema);
    auto version = j;
    version["schema_version"] = 2;
    CHECK_THROWS_AS_KIND((void)parse_model_spec(version.dump()), ErrorKind::schema);
    auto unversioned = j;
    unversioned.erase("schema_version");
    CHECK_THROWS_AS_KIND((void)parse_model_spec(unversioned.dump()), ErrorKind::schema);
    auto kind = j;
    kind["fixed"]["kind"] = "fourier";
    CHECK_THROWS_AS_KIND((void)parse_model_spec(kind.dump()), ErrorKind::schema);
    CHECK_THROWS_AS_KIND((void)parse_model_spec("{not json"), ErrorKind::parse);
    CHECK_THROWS_AS_KIND((void)load_model_spec(kData / "missing.json"), ErrorKind::io);
}

TEST_CASE("fitted model file reproduces predictions") {
    const auto spec = load_model_spec(kData / "models" / "poly4.json");
    const auto cohort = simulate_cohort(simulation(spec, (Eigen::VectorXd(5) << 600, -30, 10, 5, 2).finished(),
                                                   (Eigen::VectorXd(5) << 900, 80, 50, 30, 20).finished(), 40, 30, 3,
                                                   0.15, 0.1));
    const auto fitted = fit(spec, cohort);
    REQUIRE(fitted.converged);
    const auto text = dump_fitted_model(fitted);
    const auto back = parse_fitted_model(text);
    CHECK(dump_fitted_model(back) == text);
    CHECK(back.beta_hat == fitted.beta_hat);
    CHECK(back.sigma_d_hat == fitted.sigma_d_hat);
    CHECK(back.sigma2_hat == fitted.sigma2_hat);
    CHECK(back.loglik == fitted.loglik);
    CHECK(back.converged);

    const auto grid = TimeGrid::equispaced(0.0, 24.0, 97);
    const auto a = population_curve(fitted, grid).values;
    const auto b = population_curve(back, grid).values;
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12 * a.cwiseAbs().maxCoeff());
    const auto& s = cohort.subjects()[4];
    const auto pa = subject_profile(fitted, s, grid).values;
    const auto pb = subject_profile(back, s, grid).values;
    CHECK((pa - pb).cwiseAbs().maxCoeff() <= 1e-12 * pa.cwiseAbs().maxCoeff());
    const auto ba = prediction_band(fitted, grid, 0.9);
    const auto bb = prediction_band(back, grid, 0.9);
    CHECK((ba.upper - bb.upper).cwiseAbs().maxCoeff() <= 1e-12 * ba.upper.cwiseAbs().maxCoeff());

    auto j = nlohmann::json::parse(text);
    j["schema_version"] = 7;
    CHECK_THROWS_AS_KIND((void)parse_fitted_model(j.dump()), ErrorKind::schema);
    CHECK_THROWS_AS_KIND((void)parse_fitted_model(read_text_file(kData / "models" / "poly4.json")), ErrorKind::schema);
}

TEST_CASE("simulation configs and thresholds") {
    const auto cfg = load_simulation_config(kData / "simulate_sample.json");
    CHECK(cfg.n_subjects == 60);
    CHECK(cfg.beta.size() == 9);
    CHECK(cfg.sigma_d.rows() == 7);
    CHECK(cfg.sigma_d(1, 1) == 220.0);
    CHECK(cfg.sigma_d(0, 1) == 0.0);
    const auto again = parse_simulation_config(dump_simulation_config(cfg));
    CHECK(dump_simulation_config(again) == dump_simulation_config(cfg));

    const auto t = load_thresholds(kData / "thresholds_sbp.json");
    REQUIRE(t.hours[3].has_value());
    CHECK(t.hours[3]->upper == 150.0);
    CHECK(t.hours[20]->upper == 135.0);
    CHECK(std::isinf(t.hours[20]->lower));
    const auto all = parse_thresholds(R"({"schema_version": 1, "all": {"lower": 90, "upper": 140}})");
    CHECK(all.hours[0]->lower == 90.0);
    CHECK_THROWS_AS_KIND((void)parse_thresholds(R"({"schema_version": 1})"), ErrorKind::config);
    CHECK_THROWS_AS_KIND((void)parse_thresholds(R"({"schema_version": 1, "all": {"lower": 150, "upper": 140}})"),
                         ErrorKind::config);
    const auto hours = parse_thresholds(
        R"({"schema_version": 1, "hours": [null,null,null,null,null,null,null,null,null,null,null,null,)"
        R"({"upper": 1},null,null,null,null,null,null,null,null,null,null,null]})");
    CHECK_FALSE(hours.hours[0].has_value());
    CHECK(hours.hours[12]->upper == 1.0);
}

TEST_CASE("text files are written byte for byte") {
    const auto dir = temp_dir("io");
    const std::string bytes = "a,b\r\n1,2\n\n";
    write_text_file(dir / "x.txt", bytes);
    CHECK(read_text_file(dir / "x.txt") == bytes);
    std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
