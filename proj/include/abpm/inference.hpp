#pragma once

#include "abpm/estimation.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace abpm {

struct Contrast {
    Eigen::MatrixXd C;  // c x q
    std::string label;
};

struct TestResult {
    double F = 0.0;
    int ndf = 0;
    /// Satterthwaite denominator df; +inf when the contrast variance is known
    /// (the test then falls back to chi-square on ndf).
    double ddf = 0.0;
    double p_value = 1.0;
};

/// Wald F-test of C beta = 0 with Satterthwaite denominator degrees of freedom.
TestResult f_test(const FittedModel& fitted, const Contrast& contrast);

struct InformationCriteria {
    double aic = 0.0;
    double bic = 0.0;
    int parameters = 0;  // r (covariance parameters incl. sigma^2; plus q under ML)
    std::size_t n_subjects = 0;
};

InformationCriteria information_criteria(double loglik, int parameters, std::size_t n_subjects);
InformationCriteria information_criteria(const FittedModel& fitted);

/// Refuses REML criteria comparisons across different fixed structures unless
/// forced. Throws a state error naming the first mismatching pair.
void check_comparable(const std::vector<const FittedModel*>& fits, bool force_reml_compare);

/// (c F / nu) / (1 + c F / nu)
double r2_from_f(double F, int ndf, double ddf);

/// Every fixed column except the intercept.
Contrast model_contrast(const FittedModel& fitted);
/// One single-column contrast per non-intercept fixed column.
std::vector<Contrast> single_column_contrasts(const FittedModel& fitted);

struct R2Statistics {
    double model_r2 = 0.0;
    TestResult model_test;
    std::vector<double> semi_partial;
    std::vector<TestResult> term_tests;
};

R2Statistics r2_statistics(const FittedModel& fitted, const std::vector<Contrast>& terms);

struct FixedEffectRow {
    std::string parameter;
    int degree = -1;
    double estimate = 0.0;
    double se = 0.0;
    double p_value = 0.0;       // NaN when unavailable
    double semi_partial_r2 = 0.0;  // NaN for the intercept or when unavailable
};

std::vector<FixedEffectRow> fixed_effects_table(const FittedModel& fitted);

struct VarianceComponentRow {
    std::string parameter;
    double estimate = 0.0;
    double se = 0.0;       // NaN at a boundary or when unavailable
    double z = 0.0;
    double p_value = 0.0;  // one-sided Wald
};

std::vector<VarianceComponentRow> variance_components_table(const FittedModel& fitted);

}  // namespace abpm
