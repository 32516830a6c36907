#pragma once

#include "abpm/basis.hpp"

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace abpm {

enum class OutcomeChannel { sbp, dbp, other };

struct Subject {
    std::string id;
    TimeGrid times;  // elapsed hours
    Eigen::VectorXd y;
    std::map<std::string, std::string> covariates;

    /// Throws spec error when lengths disagree, there are no observations or
    /// y is not finite.
    void validate() const;
};

class Cohort {
public:
    Cohort() = default;
    Cohort(std::vector<Subject> subjects, OutcomeChannel outcome);

    [[nodiscard]] const std::vector<Subject>& subjects() const noexcept { return subjects_; }
    [[nodiscard]] std::size_t size() const noexcept { return subjects_.size(); }
    [[nodiscard]] OutcomeChannel outcome() const noexcept { return outcome_; }
    [[nodiscard]] std::size_t observation_count() const;
    [[nodiscard]] const Subject* find(const std::string& id) const;

private:
    std::vector<Subject> subjects_;
    OutcomeChannel outcome_ = OutcomeChannel::sbp;
};

struct BasisDescriptor {
    BasisKind kind = BasisKind::orthonormal_poly;
    int degree = 0;
    std::vector<double> knots;  // elapsed hours, spline only
    bool orthogonalize = true;  // spline and natural_poly only

    /// Number of columns including the intercept.
    [[nodiscard]] int columns() const;
    void validate() const;

    friend bool operator==(const BasisDescriptor&, const BasisDescriptor&) = default;
};

enum class RandomCovariance { diagonal, unstructured };
enum class CovariateType { categorical, numeric };

struct GroupTerm {
    std::string name;
    CovariateType type = CovariateType::categorical;
    std::optional<std::string> reference;
    std::vector<std::string> levels;  // optional; derived from the cohort when empty

    friend bool operator==(const GroupTerm&, const GroupTerm&) = default;
};

struct InteractionTerm {
    std::string covariate;
    std::vector<int> columns;  // time-basis column indices (>= 1); empty means all but the intercept

    friend bool operator==(const InteractionTerm&, const InteractionTerm&) = default;
};

struct ModelSpec {
    std::string name;
    BasisDescriptor fixed_basis;
    std::optional<BasisDescriptor> random_basis;
    RandomCovariance random_cov = RandomCovariance::diagonal;
    TimeGrid reference_grid = TimeGrid::half_hourly();
    std::vector<GroupTerm> group_terms;
    std::vector<InteractionTerm> interaction_terms;

    void validate() const;
    /// Same fixed-effect column space construction (bases, covariates and
    /// interactions), regardless of the random part.
    [[nodiscard]] bool same_fixed_structure(const ModelSpec& other) const;
};

/// Evaluates one basis descriptor at arbitrary times using state derived once
/// from the reference grid (coefficient table or Gram-Schmidt transform).
class TimeBasis {
public:
    TimeBasis() = default;
    TimeBasis(const BasisDescriptor& descriptor, const TimeGrid& reference);
    /// Restore from serialized state.
    TimeBasis(BasisDescriptor descriptor, std::optional<PolynomialCoefficients> coefficients,
              Eigen::MatrixXd transform);

    [[nodiscard]] Eigen::MatrixXd evaluate(std::span<const double> times) const;
    [[nodiscard]] int columns() const { return descriptor_.columns(); }
    [[nodiscard]] const BasisDescriptor& descriptor() const noexcept { return descriptor_; }
    [[nodiscard]] const std::optional<PolynomialCoefficients>& coefficients() const noexcept { return coefficients_; }
    [[nodiscard]] const Eigen::MatrixXd& transform() const noexcept { return transform_; }

private:
    [[nodiscard]] Eigen::MatrixXd raw_columns(std::span<const double> times) const;

    BasisDescriptor descriptor_;
    std::optional<PolynomialCoefficients> coefficients_;
    Eigen::MatrixXd transform_;  // empty when the raw columns are used directly
};

struct CovariateCoding {
    std::string name;
    CovariateType type = CovariateType::categorical;
    std::vector<std::string> levels;  // categorical: all levels, sorted unless declared
    std::string reference;

    /// Non-reference levels in column order.
    [[nodiscard]] std::vector<std::string> indicator_levels() const;
    [[nodiscard]] int width() const;
};

/// Coding of one group term: declared levels, else the levels seen in the
/// cohort (cohort may be null when every level is declared).
CovariateCoding make_coding(const GroupTerm& term, const Cohort* cohort);

struct DesignPair {
    Eigen::MatrixXd X;
    Eigen::MatrixXd Z;
};

/// Everything needed to turn any subject (or any set of evaluation times)
/// into design matrices under one ModelSpec.
class DesignContext {
public:
    DesignContext() = default;
    /// Covariate levels are taken from the spec when declared, otherwise from
    /// the cohort.
    DesignContext(const ModelSpec& spec, const Cohort& cohort);
    /// Explicit covariate levels (simulation, deserialization).
    DesignContext(const ModelSpec& spec, std::vector<CovariateCoding> codings);
    DesignContext(ModelSpec spec, TimeBasis fixed, std::optional<TimeBasis> random,
                  std::vector<CovariateCoding> codings);

    [[nodiscard]] DesignPair design(const Subject& subject) const;
    /// Design rows at `times` for a subject with the given covariates.
    [[nodiscard]] DesignPair design_at(std::span<const double> times,
                                       const std::map<std::string, std::string>& covariates) const;

    [[nodiscard]] const ModelSpec& spec() const noexcept { return spec_; }
    [[nodiscard]] const TimeBasis& fixed_basis() const noexcept { return fixed_; }
    [[nodiscard]] const std::optional<TimeBasis>& random_basis() const noexcept { return random_; }
    [[nodiscard]] const std::vector<CovariateCoding>& codings() const noexcept { return codings_; }

    [[nodiscard]] int fixed_columns() const;
    [[nodiscard]] int random_columns() const;
    [[nodiscard]] std::vector<std::string> fixed_labels() const;
    /// Polynomial degree of each fixed column, -1 where not applicable.
    [[nodiscard]] std::vector<int> fixed_degrees() const;
    /// Covariate values that select the reference cell (indicators all zero,
    /// numeric covariates zero).
    [[nodiscard]] std::map<std::string, std::string> reference_covariates() const;

private:
    void build_bases();
    [[nodiscard]] std::vector<int> interaction_columns(const InteractionTerm& term) const;
    [[nodiscard]] const CovariateCoding& coding(const std::string& name) const;

    ModelSpec spec_;
    TimeBasis fixed_;
    std::optional<TimeBasis> random_;
    std::vector<CovariateCoding> codings_;
};

DesignPair build_design(const DesignContext& context, const Subject& subject);

struct ParameterCount {
    int fixed = 0;       // q
    int covariance = 0;  // r, including sigma^2
};

ParameterCount parameter_count(const DesignContext& context);
/// Requires declared levels for every categorical group term.
ParameterCount parameter_count(const ModelSpec& spec);

std::string_view to_string(BasisKind kind);
std::string_view to_string(OutcomeChannel channel);

}  // namespace abpm
