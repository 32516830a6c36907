#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <exception>
#include <string>
#include <vector>

namespace abpm {

/// One subject's data in design form.
struct SubjectBlock {
    std::string id;
    Eigen::MatrixXd X;
    Eigen::MatrixXd Z;
    Eigen::VectorXd y;
};

/// Per-subject pieces of the marginal likelihood at fixed covariance
/// parameters: V_i = Z_i Sigma_d Z_i^T + sigma^2 I.
struct SubjectTerms {
    Eigen::MatrixXd v_inv;
    double log_det = 0.0;
    Eigen::MatrixXd xt_vinv_x;
    Eigen::VectorXd xt_vinv_y;
    double yt_vinv_y = 0.0;
    bool jittered = false;
};

struct TermTotals {
    double log_det = 0.0;
    Eigen::MatrixXd xt_vinv_x;
    Eigen::VectorXd xt_vinv_y;
    double yt_vinv_y = 0.0;
};

/// Woodbury evaluation through the m x m system sigma^2 I + W^T W with
/// W = Z L and Sigma_d = L L^T. On a failed factorization the diagonal of V_i
/// is inflated once by 1e-10 * trace(V_i) / p_i; a second failure is a
/// conditioning error naming the subject.
SubjectTerms subject_terms(const SubjectBlock& block, const Eigen::MatrixXd& factor, double sigma2);

/// Parallel (OpenMP) evaluation of every subject with the Woodbury kernel.
std::vector<SubjectTerms> evaluate_terms(const std::vector<SubjectBlock>& blocks, const Eigen::MatrixXd& factor,
                                         double sigma2);

/// Sum in block order; the result does not depend on how the terms were
/// computed or on the thread count.
TermTotals reduce_terms(const std::vector<SubjectTerms>& terms);

namespace reference {

/// Direct p_i x p_i Cholesky of the materialized V_i.
SubjectTerms subject_terms(const SubjectBlock& block, const Eigen::MatrixXd& sigma_d, double sigma2);

/// Single-threaded loop over subject_terms above.
std::vector<SubjectTerms> evaluate_terms(const std::vector<SubjectBlock>& blocks, const Eigen::MatrixXd& sigma_d,
                                         double sigma2);

}  // namespace reference

/// Runs compute(i) for i in [0, n) across threads, chunk by chunk, and feeds
/// the results to accumulate() strictly in index order. An exception thrown by
/// compute() is rethrown for the lowest failing index.
template <class Compute, class Accumulate>
void ordered_reduce(std::size_t n, Compute&& compute, Accumulate&& accumulate, std::size_t chunk = 128) {
    using Result = decltype(compute(std::size_t{0}));
    std::vector<Result> slots(chunk);
    std::vector<std::exception_ptr> errors(chunk);
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t count = std::min(chunk, n - start);
#pragma omp parallel for schedule(dynamic, 1)
        for (long long k = 0; k < static_cast<long long>(count); ++k) {
            const auto idx = static_cast<std::size_t>(k);
            try {
                slots[idx] = compute(start + idx);
                errors[idx] = nullptr;
            } catch (...) {
                errors[idx] = std::current_exception();
            }
        }
        for (std::size_t k = 0; k < count; ++k) {
            if (errors[k]) std::rethrow_exception(errors[k]);
        }
        for (std::size_t k = 0; k < count; ++k) accumulate(start + k, slots[k]);
    }
}

/// Number of threads OpenMP will use for the next parallel region.
int max_threads();
void set_threads(int threads);

}  // namespace abpm
