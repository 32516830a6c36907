#include "abpm/covariance.hpp"

#include "abpm/error.hpp"

#include <algorithm>
#include <cmath>

namespace abpm {

Eigen::VectorXd CovarianceParams::packed() const {
    Eigen::VectorXd theta(tau_d.size() + 1);
    theta.head(tau_d.size()) = tau_d;
    theta(tau_d.size()) = log_sigma2;
    return theta;
}

CovarianceParams CovarianceParams::unpack(const Eigen::VectorXd& theta) {
    CovarianceParams p;
    p.tau_d = theta.head(theta.size() - 1);
    p.log_sigma2 = theta(theta.size() - 1);
    return p;
}

CovarianceModel::CovarianceModel(RandomCovariance structure, int m) : structure_(structure), m_(m) {
    if (m < 0) throw Error(ErrorKind::argument, "negative random-effect dimension");
}

int CovarianceModel::random_parameters() const noexcept {
    return structure_ == RandomCovariance::diagonal ? m_ : m_ * (m_ + 1) / 2;
}

Eigen::MatrixXd CovarianceModel::factor(const Eigen::VectorXd& theta) const {
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(m_, m_);
    if (structure_ == RandomCovariance::diagonal) {
        for (int j = 0; j < m_; ++j) l(j, j) = std::exp(0.5 * std::max(theta(j), kLogVarianceFloor));
        return l;
    }
    int k = 0;
    for (int i = 0; i < m_; ++i) {
        for (int j = 0; j <= i; ++j, ++k) {
            l(i, j) = i == j ? std::exp(std::max(theta(k), kLogCholeskyFloor)) : theta(k);
        }
    }
    return l;
}

Eigen::MatrixXd CovarianceModel::sigma_d(const Eigen::VectorXd& theta) const {
    if (structure_ == RandomCovariance::diagonal) {
        Eigen::MatrixXd d = Eigen::MatrixXd::Zero(m_, m_);
        for (int j = 0; j < m_; ++j) d(j, j) = std::exp(std::max(theta(j), kLogVarianceFloor));
        return d;
    }
    const Eigen::MatrixXd l = factor(theta);
    return l * l.transpose();
}

double CovarianceModel::sigma2(const Eigen::VectorXd& theta) const {
    return std::exp(std::max(theta(size() - 1), kLogVarianceFloor));
}

std::vector<Eigen::MatrixXd> CovarianceModel::sigma_d_derivatives(const Eigen::VectorXd& theta) const {
    std::vector<Eigen::MatrixXd> out;
    out.reserve(static_cast<std::size_t>(random_parameters()));
    if (structure_ == RandomCovariance::diagonal) {
        for (int j = 0; j < m_; ++j) {
            Eigen::MatrixXd k = Eigen::MatrixXd::Zero(m_, m_);
            k(j, j) = std::exp(std::max(theta(j), kLogVarianceFloor));
            out.push_back(std::move(k));
        }
        return out;
    }
    const Eigen::MatrixXd l = factor(theta);
    for (int a = 0; a < m_; ++a) {
        for (int b = 0; b <= a; ++b) {
            // d(L L^T)/dL(a,b) = E_ab L^T + L E_ba
            Eigen::MatrixXd k = Eigen::MatrixXd::Zero(m_, m_);
            k.row(a) += l.col(b).transpose();
            k.col(a) += l.col(b);
            if (a == b) k *= l(a, a);
            out.push_back(std::move(k));
        }
    }
    return out;
}

Eigen::VectorXd CovarianceModel::lower_bounds() const {
    Eigen::VectorXd lb = Eigen::VectorXd::Constant(size(), -std::numeric_limits<double>::infinity());
    if (structure_ == RandomCovariance::diagonal) {
        lb.head(m_).setConstant(kLogVarianceFloor);
    } else {
        int k = 0;
        for (int i = 0; i < m_; ++i) {
            for (int j = 0; j <= i; ++j, ++k) {
                if (i == j) lb(k) = kLogCholeskyFloor;
            }
        }
    }
    lb(size() - 1) = kLogVarianceFloor;
    return lb;
}

std::vector<bool> CovarianceModel::at_floor(const Eigen::VectorXd& theta) const {
    const Eigen::VectorXd lb = lower_bounds();
    std::vector<bool> out(static_cast<std::size_t>(size()));
    for (int k = 0; k < size(); ++k) out[static_cast<std::size_t>(k)] = theta(k) <= lb(k);
    return out;
}

Eigen::MatrixXd CovarianceModel::reported_sigma_d(const Eigen::VectorXd& theta) const {
    const auto floor = at_floor(theta);
    if (structure_ == RandomCovariance::diagonal) {
        Eigen::MatrixXd d = sigma_d(theta);
        for (int j = 0; j < m_; ++j) {
            if (floor[static_cast<std::size_t>(j)]) d(j, j) = 0.0;
        }
        return d;
    }
    Eigen::MatrixXd l = factor(theta);
    int k = 0;
    for (int i = 0; i < m_; ++i) {
        for (int j = 0; j <= i; ++j, ++k) {
            if (i == j && floor[static_cast<std::size_t>(k)]) l(i, i) = 0.0;
        }
    }
    return l * l.transpose();
}

Eigen::VectorXd CovarianceModel::variance_scale(const Eigen::VectorXd& theta) const {
    Eigen::VectorXd phi(size());
    const Eigen::MatrixXd d = reported_sigma_d(theta);
    if (structure_ == RandomCovariance::diagonal) {
        phi.head(m_) = d.diagonal();
    } else {
        int k = 0;
        for (int i = 0; i < m_; ++i) {
            for (int j = 0; j <= i; ++j) phi(k++) = d(i, j);
        }
    }
    phi(size() - 1) = sigma2(theta);
    return phi;
}

Eigen::MatrixXd CovarianceModel::variance_jacobian(const Eigen::VectorXd& theta) const {
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(size(), size());
    const auto derivs = sigma_d_derivatives(theta);
    for (int k = 0; k < random_parameters(); ++k) {
        const auto& dk = derivs[static_cast<std::size_t>(k)];
        if (structure_ == RandomCovariance::diagonal) {
            jac(k, k) = dk(k, k);
        } else {
            int row = 0;
            for (int i = 0; i < m_; ++i) {
                for (int j = 0; j <= i; ++j) jac(row++, k) = dk(i, j);
            }
        }
    }
    jac(size() - 1, size() - 1) = sigma2(theta);
    return jac;
}

std::vector<std::string> CovarianceModel::variance_labels() const {
    std::vector<std::string> labels;
    if (structure_ == RandomCovariance::diagonal) {
        for (int j = 0; j < m_; ++j) labels.push_back("d" + std::to_string(j));
    } else {
        for (int i = 0; i < m_; ++i) {
            for (int j = 0; j <= i; ++j) labels.push_back("d" + std::to_string(i) + "," + std::to_string(j));
        }
    }
    labels.emplace_back("sigma2");
    return labels;
}

Eigen::VectorXd CovarianceModel::pack(const Eigen::MatrixXd& sigma_d, double sigma2) const {
    if (sigma_d.rows() != m_ || sigma_d.cols() != m_) throw Error(ErrorKind::argument, "Sigma_d has the wrong shape");
    if (!(sigma2 > 0.0)) throw Error(ErrorKind::argument, "sigma^2 must be positive");
    Eigen::VectorXd theta(size());
    auto safe_log = [](double v) { return v > 0.0 ? std::max(std::log(v), kLogVarianceFloor) : kLogVarianceFloor; };
    if (structure_ == RandomCovariance::diagonal) {
        for (int j = 0; j < m_; ++j) theta(j) = safe_log(sigma_d(j, j));
    } else {
        Eigen::LLT<Eigen::MatrixXd> llt(sigma_d);
        if (llt.info() != Eigen::Success) {
            throw Error(ErrorKind::argument, "unstructured Sigma_d must be positive definite");
        }
        const Eigen::MatrixXd l = llt.matrixL();
        int k = 0;
        for (int i = 0; i < m_; ++i) {
            for (int j = 0; j <= i; ++j, ++k) {
                theta(k) = i == j ? std::max(std::log(l(i, i)), kLogCholeskyFloor) : l(i, j);
            }
        }
    }
    theta(size() - 1) = safe_log(sigma2);
    return theta;
}

}  // namespace abpm
