#pragma once

#include "abpm/design.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace abpm {

struct ReadOptions {
    std::string subject_column = "subject_id";
    std::string time_column = "time";
    /// Defaults to "sbp" or "dbp" from the outcome channel.
    std::optional<std::string> outcome_column;
    /// Pressure columns that are validated but never treated as covariates.
    std::vector<std::string> pressure_columns{"sbp", "dbp"};
};

/// One Subject per id in order of first appearance; times sorted (stable);
/// remaining columns become static covariates.
Cohort read_cohort(const std::filesystem::path& path, OutcomeChannel outcome, const ReadOptions& options = {});
Cohort parse_cohort(const std::string& text, OutcomeChannel outcome, const ReadOptions& options = {});

/// Writes subject_id,time,<outcome>[,covariates...] with 17 significant digits.
void write_cohort_csv(const Cohort& cohort, const std::filesystem::path& path);
std::string format_cohort_csv(const Cohort& cohort);

/// Bins readings by floor(time) clamped to 0..23 and replaces each nonempty
/// bin by its mean at the bin midpoint.
Cohort hourly_aggregate(const Cohort& cohort);

struct Bounds {
    double lower = -std::numeric_limits<double>::infinity();
    double upper = std::numeric_limits<double>::infinity();
};

/// Per-hour acceptance bounds for the "normal" reference cohort. Hours
/// without bounds are an error only if an observation falls into them.
struct Thresholds {
    std::array<std::optional<Bounds>, 24> hours;

    static Thresholds uniform(Bounds bounds);
    /// Day bounds for elapsed hours in [day_start, day_end), night otherwise.
    static Thresholds day_night(Bounds day, Bounds night, int day_start, int day_end);
};

/// Keeps subjects whose every measurement lies inside its hour's bounds.
Cohort filter_normals(const Cohort& cohort, const Thresholds& thresholds);

struct SimulationConfig {
    ModelSpec spec;
    Eigen::VectorXd beta;
    Eigen::MatrixXd sigma_d;
    double sigma2 = 0.0;
    std::size_t n_subjects = 0;
    double missing_rate = 0.0;
    double time_jitter_sd = 0.0;
    std::uint64_t seed = 0;
    TimeGrid times = TimeGrid::hourly_midpoints();
    OutcomeChannel outcome = OutcomeChannel::sbp;
    /// Values assigned to subjects cyclically, one list per group term.
    std::map<std::string, std::vector<std::string>> covariate_levels;

    /// Throws config error on any violated invariant.
    void validate() const;
    [[nodiscard]] DesignContext design() const;
};

/// Draws d_i ~ N(0, Sigma_d) and e ~ N(0, sigma^2 I) per subject with an RNG
/// seeded from (seed, subject index), so the result does not depend on the
/// thread count.
Cohort simulate_cohort(const SimulationConfig& config);

}  // namespace abpm
