#pragma once

#include "abpm/design.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace abpm {

/// Lower bound of a log-variance. A diagonal variance whose log reaches this
/// floor is reported as exactly zero.
inline constexpr double kLogVarianceFloor = -30.0;
/// Same floor expressed for a log-Cholesky diagonal entry (half the log-variance).
inline constexpr double kLogCholeskyFloor = kLogVarianceFloor / 2.0;

/// Unconstrained covariance parameters.
///
/// diagonal:     tau_d(j) = log Sigma_d(j, j)
/// unstructured: tau_d walks the lower triangle of the Cholesky factor L row by
///               row; diagonal entries are stored as log L(i, i).
struct CovarianceParams {
    Eigen::VectorXd tau_d;
    double log_sigma2 = 0.0;

    [[nodiscard]] Eigen::VectorXd packed() const;
    static CovarianceParams unpack(const Eigen::VectorXd& theta);
};

class CovarianceModel {
public:
    CovarianceModel() = default;
    CovarianceModel(RandomCovariance structure, int m);

    [[nodiscard]] RandomCovariance structure() const noexcept { return structure_; }
    [[nodiscard]] int random_dim() const noexcept { return m_; }
    /// Length of tau_d.
    [[nodiscard]] int random_parameters() const noexcept;
    /// Length of the packed vector, sigma^2 included.
    [[nodiscard]] int size() const noexcept { return random_parameters() + 1; }

    /// Factor with Sigma_d = L L^T. Floors are applied.
    [[nodiscard]] Eigen::MatrixXd factor(const Eigen::VectorXd& theta) const;
    [[nodiscard]] Eigen::MatrixXd sigma_d(const Eigen::VectorXd& theta) const;
    [[nodiscard]] double sigma2(const Eigen::VectorXd& theta) const;
    /// dSigma_d / dtheta_k for each random parameter k.
    [[nodiscard]] std::vector<Eigen::MatrixXd> sigma_d_derivatives(const Eigen::VectorXd& theta) const;

    /// Lower bound of each packed entry.
    [[nodiscard]] Eigen::VectorXd lower_bounds() const;
    /// Entries sitting on their floor.
    [[nodiscard]] std::vector<bool> at_floor(const Eigen::VectorXd& theta) const;
    /// Sigma_d with floored components reported as exact zeros.
    [[nodiscard]] Eigen::MatrixXd reported_sigma_d(const Eigen::VectorXd& theta) const;

    /// Variance-scale parameters: diagonal variances (or the row-wise lower
    /// triangle of Sigma_d) followed by sigma^2.
    [[nodiscard]] Eigen::VectorXd variance_scale(const Eigen::VectorXd& theta) const;
    /// d variance_scale / d theta.
    [[nodiscard]] Eigen::MatrixXd variance_jacobian(const Eigen::VectorXd& theta) const;
    [[nodiscard]] std::vector<std::string> variance_labels() const;

    /// Packed parameters for a given Sigma_d (must be positive definite in the
    /// unstructured case) and sigma^2.
    [[nodiscard]] Eigen::VectorXd pack(const Eigen::MatrixXd& sigma_d, double sigma2) const;

private:
    RandomCovariance structure_ = RandomCovariance::diagonal;
    int m_ = 0;
};

}  // namespace abpm
