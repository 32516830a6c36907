#include "abpm/blup.hpp"

#include "abpm/error.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>

namespace abpm {

namespace {

// Square root of a PSD matrix through its eigendecomposition; tiny negative
// eigenvalues from rounding are clipped.
Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& d) {
    if (d.size() == 0) return d;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (d + d.transpose()));
    const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * root.asDiagonal();
}

bool solve_small(const Eigen::MatrixXd& w, double s2, const Eigen::VectorXd& rhs, Eigen::VectorXd& out) {
    Eigen::MatrixXd small = w.transpose() * w;
    small.diagonal().array() += s2;
    Eigen::LLT<Eigen::MatrixXd> llt(small);
    if (llt.info() != Eigen::Success) return false;
    out = llt.solve(rhs);
    return out.allFinite();
}

std::map<std::string, std::string> pick_covariates(const FittedModel& fitted,
                                                   const std::optional<std::map<std::string, std::string>>& given) {
    return given ? *given : fitted.design.reference_covariates();
}

}  // namespace

Eigen::VectorXd random_effects_blup(const FittedModel& fitted, const Subject& subject) {
    const DesignPair d = fitted.design.design(subject);
    const Eigen::MatrixXd l = psd_factor(fitted.sigma_d_hat);
    const Eigen::MatrixXd w = d.Z * l;
    const Eigen::VectorXd r = subject.y - d.X * fitted.beta_hat;
    const Eigen::VectorXd wr = w.transpose() * r;
    Eigen::VectorXd u;
    if (!solve_small(w, fitted.sigma2_hat, wr, u)) {
        const auto p = static_cast<double>(subject.y.size());
        const double jitter = 1e-10 * (p * fitted.sigma2_hat + w.squaredNorm()) / p;
        if (!solve_small(w, fitted.sigma2_hat + jitter, wr, u)) {
            throw Error(ErrorKind::conditioning, "covariance of subject " + subject.id + " is not positive definite");
        }
    }
    return l * u;
}

ProfileCurve subject_profile(const FittedModel& fitted, const Subject& subject, const TimeGrid& eval_times) {
    const Eigen::VectorXd dhat = random_effects_blup(fitted, subject);
    const DesignPair d = fitted.design.design_at(eval_times.points(), subject.covariates);
    ProfileCurve out;
    out.times = eval_times;
    out.values = d.X * fitted.beta_hat + d.Z * dhat;
    out.subject_id = subject.id;
    out.kind = CurveKind::subject;
    return out;
}

ProfileCurve population_curve(const FittedModel& fitted, const TimeGrid& eval_times,
                              const std::optional<std::map<std::string, std::string>>& covariates) {
    const DesignPair d = fitted.design.design_at(eval_times.points(), pick_covariates(fitted, covariates));
    ProfileCurve out;
    out.times = eval_times;
    out.values = d.X * fitted.beta_hat;
    out.kind = CurveKind::population;
    return out;
}

PredictionBand prediction_band(const FittedModel& fitted, const TimeGrid& eval_times, double level,
                               std::optional<double> multiplier,
                               const std::optional<std::map<std::string, std::string>>& covariates) {
    if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::argument, "band level must lie in (0, 1)");
    if (multiplier && !(*multiplier > 0.0 && std::isfinite(*multiplier))) {
        throw Error(ErrorKind::argument, "band multiplier must be positive");
    }
    const DesignPair d = fitted.design.design_at(eval_times.points(), pick_covariates(fitted, covariates));
    const double z =
        multiplier ? *multiplier : boost::math::quantile(boost::math::normal(), 0.5 * (1.0 + level));

    PredictionBand band;
    band.times = eval_times;
    band.level = level;
    band.multiplier = z;
    band.center = d.X * fitted.beta_hat;
    const auto p = d.X.rows();
    band.lower.resize(p);
    band.upper.resize(p);
    for (Eigen::Index t = 0; t < p; ++t) {
        const Eigen::RowVectorXd s = d.X.row(t);
        const Eigen::RowVectorXd u = d.Z.row(t);
        double var = s * fitted.cov_beta * s.transpose();
        if (u.size() > 0) var += u * fitted.sigma_d_hat * u.transpose();
        var += fitted.sigma2_hat;
        const double half = z * std::sqrt(std::max(var, 0.0));
        // Mirroring upper through the center keeps both half-widths bitwise
        // equal whenever the half-width is below half the center.
        band.upper(t) = band.center(t) + half;
        band.lower(t) = 2.0 * band.center(t) - band.upper(t);
    }
    return band;
}

}  // namespace abpm
