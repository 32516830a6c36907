#include "abpm/kernels.hpp"

#include "abpm/error.hpp"

#include <omp.h>

#include <cmath>

namespace abpm {

namespace {

void fill_fixed_terms(const SubjectBlock& block, SubjectTerms& t) {
    const Eigen::MatrixXd vx = t.v_inv * block.X;
    t.xt_vinv_x = block.X.transpose() * vx;
    t.xt_vinv_x = 0.5 * (t.xt_vinv_x + t.xt_vinv_x.transpose()).eval();
    t.xt_vinv_y = vx.transpose() * block.y;
    t.yt_vinv_y = block.y.dot(t.v_inv * block.y);
}

bool woodbury_attempt(const Eigen::MatrixXd& w, double s2, SubjectTerms& t) {
    const Eigen::Index p = w.rows();
    const Eigen::Index m = w.cols();
    if (!(s2 > 0.0) || !std::isfinite(s2)) return false;
    if (m == 0) {
        t.log_det = static_cast<double>(p) * std::log(s2);
        t.v_inv = Eigen::MatrixXd::Identity(p, p) / s2;
        return true;
    }
    Eigen::MatrixXd small = w.transpose() * w;
    small.diagonal().array() += s2;
    Eigen::LLT<Eigen::MatrixXd> llt(small);
    if (llt.info() != Eigen::Success) return false;
    const Eigen::MatrixXd l = llt.matrixL();
    if (!l.allFinite() || (l.diagonal().array() <= 0.0).any()) return false;
    t.log_det = static_cast<double>(p - m) * std::log(s2) + 2.0 * l.diagonal().array().log().sum();
    const Eigen::MatrixXd solved = llt.solve(w.transpose());  // m x p
    t.v_inv = -(w * solved);
    t.v_inv.diagonal().array() += 1.0;
    t.v_inv /= s2;
    t.v_inv = 0.5 * (t.v_inv + t.v_inv.transpose()).eval();
    return std::isfinite(t.log_det) && t.v_inv.allFinite();
}

}  // namespace

SubjectTerms subject_terms(const SubjectBlock& block, const Eigen::MatrixXd& factor, double sigma2) {
    SubjectTerms t;
    const Eigen::MatrixXd w = block.Z * factor;
    if (!woodbury_attempt(w, sigma2, t)) {
        const auto p = static_cast<double>(block.y.size());
        const double trace = p * sigma2 + w.squaredNorm();
        const double jitter = 1e-10 * trace / p;
        t.jittered = true;
        if (!woodbury_attempt(w, sigma2 + jitter, t)) {
            throw Error(ErrorKind::conditioning, "covariance of subject " + block.id + " is not positive definite");
        }
    }
    fill_fixed_terms(block, t);
    return t;
}

std::vector<SubjectTerms> evaluate_terms(const std::vector<SubjectBlock>& blocks, const Eigen::MatrixXd& factor,
                                         double sigma2) {
    std::vector<SubjectTerms> out(blocks.size());
    ordered_reduce(
        blocks.size(), [&](std::size_t i) { return subject_terms(blocks[i], factor, sigma2); },
        [&](std::size_t i, SubjectTerms& t) { out[i] = std::move(t); });
    return out;
}

TermTotals reduce_terms(const std::vector<SubjectTerms>& terms) {
    TermTotals total;
    if (terms.empty()) return total;
    total.xt_vinv_x = Eigen::MatrixXd::Zero(terms.front().xt_vinv_x.rows(), terms.front().xt_vinv_x.cols());
    total.xt_vinv_y = Eigen::VectorXd::Zero(terms.front().xt_vinv_y.size());
    for (const auto& t : terms) {
        total.log_det += t.log_det;
        total.xt_vinv_x += t.xt_vinv_x;
        total.xt_vinv_y += t.xt_vinv_y;
        total.yt_vinv_y += t.yt_vinv_y;
    }
    return total;
}

namespace reference {

SubjectTerms subject_terms(const SubjectBlock& block, const Eigen::MatrixXd& sigma_d, double sigma2) {
    const Eigen::Index p = block.y.size();
    Eigen::MatrixXd v = block.Z * sigma_d * block.Z.transpose();
    v.diagonal().array() += sigma2;
    SubjectTerms t;
    Eigen::LLT<Eigen::MatrixXd> llt(v);
    if (llt.info() != Eigen::Success) {
        v.diagonal().array() += 1e-10 * v.trace() / static_cast<double>(p);
        llt.compute(v);
        t.jittered = true;
        if (llt.info() != Eigen::Success) {
            throw Error(ErrorKind::conditioning, "covariance of subject " + block.id + " is not positive definite");
        }
    }
    const Eigen::MatrixXd l = llt.matrixL();
    t.log_det = 2.0 * l.diagonal().array().log().sum();
    t.v_inv = llt.solve(Eigen::MatrixXd::Identity(p, p));
    t.v_inv = 0.5 * (t.v_inv + t.v_inv.transpose()).eval();
    fill_fixed_terms(block, t);
    return t;
}

std::vector<SubjectTerms> evaluate_terms(const std::vector<SubjectBlock>& blocks, const Eigen::MatrixXd& sigma_d,
                                         double sigma2) {
    std::vector<SubjectTerms> out;
    out.reserve(blocks.size());
    for (const auto& b : blocks) out.push_back(reference::subject_terms(b, sigma_d, sigma2));
    return out;
}

}  // namespace reference

int max_threads() { return omp_get_max_threads(); }

void set_threads(int threads) {
    if (threads < 1) throw Error(ErrorKind::argument, "thread count must be positive");
    omp_set_num_threads(threads);
}

}  // namespace abpm
