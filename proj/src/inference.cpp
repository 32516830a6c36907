#include "abpm/inference.hpp"

#include "abpm/error.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <limits>

namespace abpm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Satterthwaite df for the variance of one linear combination c^T beta.
double single_df(const FittedModel& fitted, const Eigen::RowVectorXd& c) {
    const auto& inf = fitted.inference;
    const double var = c * fitted.cov_beta * c.transpose();
    const auto nf = static_cast<Eigen::Index>(inf.cov_beta_derivatives.size());
    Eigen::VectorXd g(nf);
    for (Eigen::Index k = 0; k < nf; ++k) {
        g(k) = c * inf.cov_beta_derivatives[static_cast<std::size_t>(k)] * c.transpose();
    }
    const double vv = nf > 0 ? g.dot(inf.theta_covariance * g) : 0.0;
    if (!(vv > 0.0)) return kInf;
    return 2.0 * var * var / vv;
}

double p_value(double F, int ndf, double ddf) {
    if (!(F > 0.0)) return 1.0;
    if (std::isinf(ddf)) {
        const boost::math::chi_squared chi(ndf);
        return boost::math::cdf(boost::math::complement(chi, F * ndf));
    }
    const boost::math::fisher_f dist(ndf, ddf);
    return boost::math::cdf(boost::math::complement(dist, F));
}

}  // namespace

TestResult f_test(const FittedModel& fitted, const Contrast& contrast) {
    const auto q = fitted.beta_hat.size();
    const Eigen::MatrixXd& c = contrast.C;
    if (c.rows() < 1 || c.cols() != q) {
        throw Error(ErrorKind::contrast, "contrast " + contrast.label + " must have " + std::to_string(q) + " columns");
    }
    if (!fitted.converged) throw Error(ErrorKind::state, "cannot test a fit that did not converge");
    if (!fitted.inference.available) {
        throw Error(ErrorKind::state, "covariance-parameter information unavailable: " + fitted.inference.reason);
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(c);
    const auto& sv = svd.singularValues();
    const double top = sv.size() > 0 ? sv(0) : 0.0;
    if (!(top > 0.0)) throw Error(ErrorKind::contrast, "contrast " + contrast.label + " is zero");
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
        if (sv(i) <= 1e-10 * top) throw Error(ErrorKind::contrast, "contrast " + contrast.label + " is rank deficient");
    }

    const auto ndf = static_cast<int>(c.rows());
    const Eigen::MatrixXd ccov = c * fitted.cov_beta * c.transpose();
    const Eigen::VectorXd cb = c * fitted.beta_hat;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (ccov + ccov.transpose()));
    if (eig.info() != Eigen::Success || !(eig.eigenvalues().array() > 0.0).all()) {
        throw Error(ErrorKind::contrast, "contrast " + contrast.label + " has a singular variance");
    }
    TestResult out;
    out.ndf = ndf;
    out.F = std::max(cb.dot(ccov.ldlt().solve(cb)) / static_cast<double>(ndf), 0.0);

    if (ndf == 1) {
        out.ddf = single_df(fitted, c.row(0));
    } else {
        // Rotate to uncorrelated single-df pieces and pool their df.
        const Eigen::MatrixXd rotated = eig.eigenvectors().transpose() * c;
        double e = 0.0;
        double sum_nu = 0.0;
        bool any_finite = false;
        for (Eigen::Index j = 0; j < rotated.rows(); ++j) {
            const double nu = single_df(fitted, rotated.row(j));
            if (std::isfinite(nu)) {
                any_finite = true;
                sum_nu += nu;
            }
            if (nu > 2.0) e += std::isinf(nu) ? 1.0 : nu / (nu - 2.0);
        }
        if (!any_finite) {
            out.ddf = kInf;
        } else if (e > ndf) {
            out.ddf = 2.0 * e / (e - ndf);
        } else {
            out.ddf = sum_nu / static_cast<double>(ndf);
        }
    }
    out.p_value = p_value(out.F, ndf, out.ddf);
    return out;
}

InformationCriteria information_criteria(double loglik, int parameters, std::size_t n_subjects) {
    if (n_subjects == 0) throw Error(ErrorKind::argument, "no subjects");
    InformationCriteria ic;
    ic.parameters = parameters;
    ic.n_subjects = n_subjects;
    ic.aic = -2.0 * loglik + 2.0 * parameters;
    ic.bic = -2.0 * loglik + parameters * std::log(static_cast<double>(n_subjects));
    return ic;
}

InformationCriteria information_criteria(const FittedModel& fitted) {
    int r = fitted.covariance_model().size();
    if (fitted.method == Method::ml) r += static_cast<int>(fitted.beta_hat.size());
    return information_criteria(fitted.loglik, r, fitted.n_subjects);
}

void check_comparable(const std::vector<const FittedModel*>& fits, bool force_reml_compare) {
    for (std::size_t i = 1; i < fits.size(); ++i) {
        if (fits[i]->method != fits[0]->method) {
            throw Error(ErrorKind::state, "models were fitted by different methods");
        }
    }
    if (force_reml_compare || fits.empty() || fits[0]->method != Method::reml) return;
    for (std::size_t i = 1; i < fits.size(); ++i) {
        if (!fits[0]->spec().same_fixed_structure(fits[i]->spec())) {
            throw Error(ErrorKind::state, "REML likelihoods of '" + fits[0]->spec().name + "' and '" +
                                              fits[i]->spec().name +
                                              "' have different fixed effects and are not comparable; refit with "
                                              "--method ml or pass --force-reml-compare");
        }
    }
}

double r2_from_f(double F, int ndf, double ddf) {
    if (!(F > 0.0) || std::isinf(ddf)) return 0.0;
    const double x = ndf * F / ddf;
    return x / (1.0 + x);
}

Contrast model_contrast(const FittedModel& fitted) {
    const auto q = fitted.beta_hat.size();
    if (q < 2) throw Error(ErrorKind::contrast, "model has no terms beyond the intercept");
    Contrast c{Eigen::MatrixXd::Zero(q - 1, q), "model"};
    for (Eigen::Index j = 1; j < q; ++j) c.C(j - 1, j) = 1.0;
    return c;
}

std::vector<Contrast> single_column_contrasts(const FittedModel& fitted) {
    const auto q = fitted.beta_hat.size();
    const auto labels = fitted.design.fixed_labels();
    std::vector<Contrast> out;
    for (Eigen::Index j = 1; j < q; ++j) {
        Contrast c{Eigen::MatrixXd::Zero(1, q), labels[static_cast<std::size_t>(j)]};
        c.C(0, j) = 1.0;
        out.push_back(std::move(c));
    }
    return out;
}

R2Statistics r2_statistics(const FittedModel& fitted, const std::vector<Contrast>& terms) {
    R2Statistics out;
    out.model_test = f_test(fitted, model_contrast(fitted));
    out.model_r2 = r2_from_f(out.model_test.F, out.model_test.ndf, out.model_test.ddf);
    for (const auto& t : terms) {
        auto res = f_test(fitted, t);
        out.semi_partial.push_back(r2_from_f(res.F, res.ndf, res.ddf));
        out.term_tests.push_back(res);
    }
    return out;
}

std::vector<FixedEffectRow> fixed_effects_table(const FittedModel& fitted) {
    const auto labels = fitted.design.fixed_labels();
    const auto degrees = fitted.design.fixed_degrees();
    const bool testable = fitted.converged && fitted.inference.available;
    std::vector<FixedEffectRow> rows;
    const auto q = fitted.beta_hat.size();
    for (Eigen::Index j = 0; j < q; ++j) {
        FixedEffectRow row;
        row.parameter = labels[static_cast<std::size_t>(j)];
        row.degree = degrees[static_cast<std::size_t>(j)];
        row.estimate = fitted.beta_hat(j);
        row.se = std::sqrt(std::max(fitted.cov_beta(j, j), 0.0));
        row.p_value = kNaN;
        row.semi_partial_r2 = kNaN;
        if (testable) {
            Contrast c{Eigen::MatrixXd::Zero(1, q), row.parameter};
            c.C(0, j) = 1.0;
            const auto t = f_test(fitted, c);
            row.p_value = t.p_value;
            if (j > 0) row.semi_partial_r2 = r2_from_f(t.F, t.ndf, t.ddf);
        }
        rows.push_back(row);
    }
    return rows;
}

std::vector<VarianceComponentRow> variance_components_table(const FittedModel& fitted) {
    const auto cov = fitted.covariance_model();
    const Eigen::VectorXd est = cov.variance_scale(fitted.theta);
    const auto labels = cov.variance_labels();
    const auto& inf = fitted.inference;
    const auto floor = cov.at_floor(fitted.theta);
    std::vector<VarianceComponentRow> rows;
    const boost::math::normal standard;
    for (Eigen::Index k = 0; k < est.size(); ++k) {
        VarianceComponentRow row;
        row.parameter = labels[static_cast<std::size_t>(k)];
        row.estimate = est(k);
        row.se = kNaN;
        row.z = kNaN;
        row.p_value = kNaN;
        const bool boundary = floor[static_cast<std::size_t>(k)];
        if (inf.available && !boundary && inf.variance_covariance.rows() == est.size()) {
            const double v = inf.variance_covariance(k, k);
            if (v > 0.0) {
                row.se = std::sqrt(v);
                row.z = row.estimate / row.se;
                row.p_value = boost::math::cdf(boost::math::complement(standard, row.z));
            }
        }
        rows.push_back(row);
    }
    return rows;
}

}  // namespace abpm
