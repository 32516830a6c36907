#pragma once

#include "abpm/covariance.hpp"
#include "abpm/design.hpp"
#include "abpm/kernels.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace abpm {

enum class Method { reml, ml };

std::string_view to_string(Method method);

/// Profiled (REML or ML) log-likelihood of the linear mixed model
///   y_i = X_i beta + Z_i d_i + e_i,  d_i ~ N(0, Sigma_d),  e_i ~ N(0, sigma^2 I)
/// with beta profiled out by generalized least squares. Subjects are kept in
/// id order and every sum over subjects runs in that order.
class LikelihoodEvaluator {
public:
    enum class Need { value, gradient, information };

    struct Result {
        double loglik = 0.0;
        Eigen::VectorXd beta;
        Eigen::MatrixXd cov_beta;  // (sum X^T V^-1 X)^-1
        Eigen::VectorXd gradient;  // d loglik / d theta
        /// Expected information in theta coordinates.
        Eigen::MatrixXd information;
        /// sum_i X_i^T V_i^-1 (dV_i/dtheta_k) V_i^-1 X_i, one per parameter.
        std::vector<Eigen::MatrixXd> b_matrices;
    };

    LikelihoodEvaluator(std::vector<SubjectBlock> blocks, CovarianceModel covariance, Method method);
    static LikelihoodEvaluator from_cohort(const DesignContext& design, const Cohort& cohort, Method method);

    [[nodiscard]] Result evaluate(const Eigen::VectorXd& theta, Need need = Need::value) const;
    [[nodiscard]] double loglik(const Eigen::VectorXd& theta) const { return evaluate(theta).loglik; }
    [[nodiscard]] Eigen::VectorXd gradient(const Eigen::VectorXd& theta) const {
        return evaluate(theta, Need::gradient).gradient;
    }

    [[nodiscard]] const CovarianceModel& covariance() const noexcept { return covariance_; }
    [[nodiscard]] const std::vector<SubjectBlock>& blocks() const noexcept { return blocks_; }
    [[nodiscard]] Method method() const noexcept { return method_; }
    [[nodiscard]] int fixed_dim() const noexcept { return q_; }
    [[nodiscard]] std::size_t observations() const noexcept { return n_; }

private:
    std::vector<SubjectBlock> blocks_;
    CovarianceModel covariance_;
    Method method_;
    int q_ = 0;
    std::size_t n_ = 0;
};

struct FitOptions {
    Method method = Method::reml;
    int max_iter = 500;
    double tol = 1e-6;
    double rel_loglik_tol = 1e-10;
    int fisher_steps = 3;
    /// Optional starting points; the default initialization is used when empty
    /// and the best converged (else best) result wins.
    std::vector<CovarianceParams> starts;
    bool compute_inference = true;
};

/// Large-sample quantities needed for Satterthwaite tests and variance
/// component standard errors.
struct InferenceState {
    bool available = false;
    std::string reason;
    /// Parameters off their boundary, indices into theta.
    std::vector<int> free_parameters;
    /// Inverse observed information (finite-difference Hessian) over the free
    /// parameters, theta scale.
    Eigen::MatrixXd theta_covariance;
    /// d cov_beta / d theta_k for each free parameter.
    std::vector<Eigen::MatrixXd> cov_beta_derivatives;
    /// Variance-scale estimates and their delta-method covariance.
    Eigen::VectorXd variance_estimates;
    Eigen::MatrixXd variance_covariance;
    std::vector<std::string> variance_labels;
};

struct FittedModel {
    DesignContext design;
    Method method = Method::reml;
    Eigen::VectorXd theta;
    Eigen::VectorXd beta_hat;
    Eigen::MatrixXd cov_beta;
    Eigen::MatrixXd sigma_d_hat;
    double sigma2_hat = 0.0;
    double loglik = 0.0;
    bool converged = false;
    int iterations = 0;
    double gradient_norm = 0.0;
    std::size_t n_subjects = 0;
    std::size_t n_observations = 0;
    std::vector<double> loglik_trace;
    InferenceState inference;

    [[nodiscard]] const ModelSpec& spec() const noexcept { return design.spec(); }
    [[nodiscard]] CovarianceModel covariance_model() const;
    [[nodiscard]] CovarianceParams params() const { return CovarianceParams::unpack(theta); }
};

double marginal_loglikelihood(const CovarianceParams& params, const Cohort& cohort, const ModelSpec& spec,
                              Method method = Method::reml);

struct GlsResult {
    Eigen::VectorXd beta_hat;
    Eigen::MatrixXd cov_beta;
};

GlsResult gls_beta(const CovarianceParams& params, const Cohort& cohort, const ModelSpec& spec);

FittedModel fit(const ModelSpec& spec, const Cohort& cohort, const FitOptions& options = {});
FittedModel fit(const DesignContext& design, const Cohort& cohort, const FitOptions& options = {});

/// Model quantities at given covariance parameters, without optimizing.
FittedModel fitted_at(const DesignContext& design, const Cohort& cohort, const CovarianceParams& params,
                      Method method = Method::reml, bool compute_inference = false);

/// Default starting point: sigma^2 takes half of the pooled OLS residual
/// variance, the random effects share the other half equally.
CovarianceParams default_start(const LikelihoodEvaluator& evaluator);

}  // namespace abpm
