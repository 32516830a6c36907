#pragma once

#include "abpm/estimation.hpp"

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <string>

namespace abpm {

enum class CurveKind { subject, population };

struct ProfileCurve {
    TimeGrid times;
    Eigen::VectorXd values;
    std::optional<std::string> subject_id;
    CurveKind kind = CurveKind::population;
};

struct PredictionBand {
    TimeGrid times;
    Eigen::VectorXd center;
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
    double level = 0.9;
    double multiplier = 0.0;  // quantile actually applied
};

/// Sigma_d Z^T V^-1 (y - X beta), evaluated as L (sigma^2 I + W^T W)^-1 W^T r
/// with W = Z L and L a symmetric square root of the fitted Sigma_d.
Eigen::VectorXd random_effects_blup(const FittedModel& fitted, const Subject& subject);

ProfileCurve subject_profile(const FittedModel& fitted, const Subject& subject, const TimeGrid& eval_times);

/// Fixed-effect curve for the given covariates (the reference cell by default).
ProfileCurve population_curve(const FittedModel& fitted, const TimeGrid& eval_times,
                              const std::optional<std::map<std::string, std::string>>& covariates = std::nullopt);

/// Pointwise band center +/- z sqrt(s^T cov_beta s + u^T Sigma_d u + sigma^2)
/// for a new subject. z is the normal quantile for `level` unless a
/// multiplier is given.
PredictionBand prediction_band(const FittedModel& fitted, const TimeGrid& eval_times, double level,
                               std::optional<double> multiplier = std::nullopt,
                               const std::optional<std::map<std::string, std::string>>& covariates = std::nullopt);

}  // namespace abpm
