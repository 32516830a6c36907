#pragma once

// Small builders shared by the unit tests and the acceptance runner.

#include "abpm/dataio.hpp"
#include "abpm/design.hpp"
#include "abpm/error.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#define CHECK_THROWS_AS_KIND(expr, expected_kind)                  \
    do {                                                           \
        bool thrown_ = false;                                      \
        try {                                                      \
            expr;                                                  \
        } catch (const ::abpm::Error& e_) {                        \
            thrown_ = true;                                        \
            CHECK_MESSAGE(e_.kind() == (expected_kind), e_.what()); \
        }                                                          \
        CHECK_MESSAGE(thrown_, "expected abpm::Error");            \
    } while (0)

namespace testing_helpers {

inline abpm::ModelSpec orthonormal_spec(int fixed_degree, int random_degree,
                                        abpm::RandomCovariance cov = abpm::RandomCovariance::diagonal,
                                        abpm::TimeGrid grid = abpm::TimeGrid::hourly_midpoints()) {
    abpm::ModelSpec spec;
    spec.name = "poly" + std::to_string(fixed_degree);
    spec.fixed_basis.kind = abpm::BasisKind::orthonormal_poly;
    spec.fixed_basis.degree = fixed_degree;
    if (random_degree >= 0) {
        abpm::BasisDescriptor r;
        r.kind = abpm::BasisKind::orthonormal_poly;
        r.degree = random_degree;
        spec.random_basis = r;
    }
    spec.random_cov = cov;
    spec.reference_grid = std::move(grid);
    return spec;
}

/// 9-knot spline fixed part, orthogonalized cubic random part, unstructured.
inline abpm::ModelSpec spline_spec(abpm::TimeGrid grid = abpm::TimeGrid::hourly_midpoints()) {
    abpm::ModelSpec spec;
    spec.name = "rcs9";
    spec.fixed_basis.kind = abpm::BasisKind::restricted_cubic_spline;
    spec.fixed_basis.knots = abpm::clock_to_elapsed(abpm::default_clock_knots(), 12.0);
    spec.fixed_basis.orthogonalize = true;
    abpm::BasisDescriptor r;
    r.kind = abpm::BasisKind::natural_poly;
    r.degree = 3;
    r.orthogonalize = true;
    spec.random_basis = r;
    spec.random_cov = abpm::RandomCovariance::unstructured;
    spec.reference_grid = std::move(grid);
    return spec;
}

inline abpm::Subject make_subject(std::string id, std::vector<double> times, Eigen::VectorXd y) {
    abpm::Subject s;
    s.id = std::move(id);
    s.times = abpm::TimeGrid(std::move(times));
    s.y = std::move(y);
    return s;
}

inline std::vector<abpm::CovariateCoding> make_codings(const abpm::ModelSpec& spec) {
    std::vector<abpm::CovariateCoding> out;
    for (const auto& g : spec.group_terms) out.push_back(abpm::make_coding(g, nullptr));
    return out;
}

/// Simulation config with a diagonal truth on the hourly grid.
inline abpm::SimulationConfig simulation(const abpm::ModelSpec& spec, Eigen::VectorXd beta,
                                         const Eigen::VectorXd& sigma_d_diag, double sigma2, std::size_t n,
                                         std::uint64_t seed, double missing = 0.0, double jitter = 0.0) {
    abpm::SimulationConfig c;
    c.spec = spec;
    c.beta = std::move(beta);
    c.sigma_d = sigma_d_diag.asDiagonal();
    c.sigma2 = sigma2;
    c.n_subjects = n;
    c.seed = seed;
    c.missing_rate = missing;
    c.time_jitter_sd = jitter;
    return c;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    auto dir = std::filesystem::temp_directory_path() / ("abpm_test_" + tag + "_" + std::to_string(rng()));
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testing_helpers
