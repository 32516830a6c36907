#include "abpm/basis.hpp"

#include "abpm/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace abpm {

namespace {

// Ties (within 1e-9 relative) go to the later entry so that odd polynomials on
// symmetric grids come out increasing.
double sign_of_dominant_entry(const Eigen::Ref<const Eigen::VectorXd>& column) {
    const double largest = column.cwiseAbs().maxCoeff();
    if (largest == 0.0) return 1.0;
    for (Eigen::Index i = column.size() - 1; i >= 0; --i) {
        if (std::abs(column(i)) >= largest * (1.0 - 1e-9)) return column(i) < 0.0 ? -1.0 : 1.0;
    }
    return 1.0;
}

}  // namespace

void validate_knots(std::span<const double> knots) {
    if (knots.size() < 3) {
        throw Error(ErrorKind::knot, "restricted cubic spline needs at least 3 knots, got " +
                                         std::to_string(knots.size()));
    }
    for (std::size_t i = 0; i < knots.size(); ++i) {
        if (!std::isfinite(knots[i]) || knots[i] < kDayStart || knots[i] > kDayEnd) {
            throw Error(ErrorKind::knot, "knot " + std::to_string(i + 1) + " outside [0, 24]");
        }
        if (i > 0 && !(knots[i] > knots[i - 1])) {
            throw Error(ErrorKind::knot, "knots must be strictly increasing (knot " + std::to_string(i + 1) + ")");
        }
    }
}

namespace {

double cube_plus(double u) { return u > 0.0 ? u * u * u : 0.0; }

}  // namespace

// ---------------------------------------------------------------------------
// TimeGrid
// ---------------------------------------------------------------------------

TimeGrid::TimeGrid(std::vector<double> points) : points_(std::move(points)) {
    for (std::size_t i = 0; i < points_.size(); ++i) {
        const double t = points_[i];
        if (!std::isfinite(t) || t < kDayStart || t > kDayEnd) {
            std::ostringstream os;
            os << "time " << t << " outside [0, 24]";
            throw Error(ErrorKind::domain, os.str());
        }
        if (i > 0 && !(t > points_[i - 1])) {
            std::ostringstream os;
            os << (t == points_[i - 1] ? "duplicate time point " : "time points not increasing at ") << t;
            throw Error(ErrorKind::grid, os.str());
        }
    }
    spacing_ = SpacingKind::equispaced;
    if (points_.size() > 2) {
        const double gap = points_[1] - points_[0];
        for (std::size_t i = 2; i < points_.size(); ++i) {
            if (std::abs((points_[i] - points_[i - 1]) - gap) > 1e-12) {
                spacing_ = SpacingKind::irregular;
                break;
            }
        }
    }
}

TimeGrid TimeGrid::equispaced(double first, double last, std::size_t count) {
    if (count == 0) throw Error(ErrorKind::grid, "equispaced grid needs at least one point");
    std::vector<double> pts(count);
    const double step = count > 1 ? (last - first) / static_cast<double>(count - 1) : 0.0;
    for (std::size_t i = 0; i < count; ++i) pts[i] = first + step * static_cast<double>(i);
    if (count > 1) pts.back() = last;
    return TimeGrid(std::move(pts));
}

TimeGrid TimeGrid::hourly_midpoints() {
    std::vector<double> pts(24);
    for (int h = 0; h < 24; ++h) pts[h] = h + 0.5;
    return TimeGrid(std::move(pts));
}

TimeGrid TimeGrid::half_hourly() { return equispaced(0.0, 24.0, 49); }

// ---------------------------------------------------------------------------
// Orthonormal polynomials
// ---------------------------------------------------------------------------

Eigen::RowVectorXd PolynomialCoefficients::evaluate(double t) const {
    const double x = rescale(t);
    Eigen::RowVectorXd row(degree + 1);
    for (int j = 0; j <= degree; ++j) {
        double acc = coeffs(j, j);
        for (int k = j - 1; k >= 0; --k) acc = acc * x + coeffs(j, k);
        row(j) = acc;
    }
    return row;
}

Eigen::MatrixXd evaluate_polynomial_rows(const PolynomialCoefficients& coeffs, std::span<const double> times) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(times.size()), coeffs.degree + 1);
    for (std::size_t i = 0; i < times.size(); ++i) {
        const double t = times[i];
        if (!std::isfinite(t) || t < kDayStart || t > kDayEnd) {
            std::ostringstream os;
            os << "cannot evaluate polynomial basis at " << t << " (outside [0, 24])";
            throw Error(ErrorKind::domain, os.str());
        }
        out.row(static_cast<Eigen::Index>(i)) = coeffs.evaluate(t);
    }
    return out;
}

OrthonormalBasis orthonormal_polynomial_basis(const TimeGrid& grid, int degree) {
    if (degree < 0) throw Error(ErrorKind::argument, "polynomial degree must be non-negative");
    const auto p = static_cast<Eigen::Index>(grid.size());
    if (p == 0) throw Error(ErrorKind::grid, "empty grid");
    if (degree >= p) {
        throw Error(ErrorKind::rank, "degree " + std::to_string(degree) + " needs more than " + std::to_string(p) +
                                         " distinct time points");
    }

    PolynomialCoefficients pc;
    pc.degree = degree;
    pc.generating_grid = grid;
    const double lo = grid.points().front();
    const double hi = grid.points().back();
    if (p > 1) {
        pc.rescale.scale = 2.0 / (hi - lo);
        pc.rescale.shift = -(hi + lo) / (hi - lo);
    } else {
        pc.rescale.scale = 1.0;
        pc.rescale.shift = -lo;
    }

    Eigen::VectorXd x(p);
    for (Eigen::Index i = 0; i < p; ++i) x(i) = pc.rescale(grid[static_cast<std::size_t>(i)]);

    const int c = degree + 1;
    Eigen::MatrixXd q(p, c);
    Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(c, c);
    q.col(0).setConstant(1.0 / std::sqrt(static_cast<double>(p)));
    coef(0, 0) = 1.0 / std::sqrt(static_cast<double>(p));

    for (int j = 1; j < c; ++j) {
        Eigen::VectorXd v = x.cwiseProduct(q.col(j - 1));
        Eigen::RowVectorXd cj = Eigen::RowVectorXd::Zero(c);
        cj.segment(1, j) = coef.row(j - 1).head(j);
        for (int pass = 0; pass < 2; ++pass) {
            for (int k = 0; k < j; ++k) {
                const double h = q.col(k).dot(v);
                v -= h * q.col(k);
                cj -= h * coef.row(k);
            }
        }
        const double norm = v.norm();
        if (!(norm > 1e-10)) {
            throw Error(ErrorKind::rank, "polynomial column " + std::to_string(j) + " is numerically dependent");
        }
        q.col(j) = v / norm;
        coef.row(j) = cj / norm;
    }

    pc.coeffs = std::move(coef);
    OrthonormalBasis out;
    out.basis.values = evaluate_polynomial_rows(pc, grid.points());
    for (int j = 0; j < c; ++j) {
        if (sign_of_dominant_entry(out.basis.values.col(j)) < 0.0) pc.coeffs.row(j) *= -1.0;
    }
    out.basis.values = evaluate_polynomial_rows(pc, grid.points());
    out.basis.kind = BasisKind::orthonormal_poly;
    out.basis.degree = degree;
    out.basis.times = grid;
    out.coefficients = std::move(pc);
    return out;
}

BasisMatrix evaluate_polynomial_basis(const PolynomialCoefficients& coeffs, const TimeGrid& times) {
    BasisMatrix out;
    out.values = evaluate_polynomial_rows(coeffs, times.points());
    out.kind = times == coeffs.generating_grid ? BasisKind::orthonormal_poly : BasisKind::approx_orthonormal_poly;
    out.degree = coeffs.degree;
    out.times = times;
    return out;
}

// ---------------------------------------------------------------------------
// Restricted cubic splines
// ---------------------------------------------------------------------------

double restricted_cubic_spline_term(double t, std::span<const double> knots, std::size_t i) {
    const std::size_t k = knots.size();
    const double tk = knots[k - 1];
    const double tk1 = knots[k - 2];
    const double ti = knots[i];
    const double span = tk - tk1;
    return cube_plus(t - ti) - cube_plus(t - tk1) * (tk - ti) / span + cube_plus(t - tk) * (tk1 - ti) / span;
}

BasisMatrix restricted_cubic_spline_basis(const TimeGrid& times, std::span<const double> knots) {
    validate_knots(knots);
    if (times.empty()) throw Error(ErrorKind::grid, "no time points for spline basis");
    const std::size_t k = knots.size();
    BasisMatrix out;
    out.values.resize(static_cast<Eigen::Index>(times.size()), static_cast<Eigen::Index>(k - 1));
    for (std::size_t r = 0; r < times.size(); ++r) {
        const double t = times[r];
        const auto row = static_cast<Eigen::Index>(r);
        out.values(row, 0) = t;
        for (std::size_t i = 0; i + 2 < k; ++i) {
            out.values(row, static_cast<Eigen::Index>(i + 1)) = restricted_cubic_spline_term(t, knots, i);
        }
    }
    out.kind = BasisKind::restricted_cubic_spline;
    out.knots.assign(knots.begin(), knots.end());
    out.times = times;
    return out;
}

BasisMatrix natural_polynomial_basis(const TimeGrid& times, int degree) {
    if (degree < 0) throw Error(ErrorKind::argument, "polynomial degree must be non-negative");
    BasisMatrix out;
    out.values.resize(static_cast<Eigen::Index>(times.size()), degree + 1);
    for (std::size_t r = 0; r < times.size(); ++r) {
        double power = 1.0;
        for (int j = 0; j <= degree; ++j) {
            out.values(static_cast<Eigen::Index>(r), j) = power;
            power *= times[r];
        }
    }
    out.kind = BasisKind::natural_poly;
    out.degree = degree;
    out.times = times;
    return out;
}

// ---------------------------------------------------------------------------
// Gram-Schmidt
// ---------------------------------------------------------------------------

namespace {

bool is_constant_column(const Eigen::Ref<const Eigen::VectorXd>& col) {
    if (col.size() == 0 || col(0) == 0.0) return false;
    const double scale = std::abs(col(0));
    return ((col.array() - col(0)).abs() <= 1e-12 * scale).all();
}

// Modified Gram-Schmidt with one re-orthogonalization pass. Returns T with
// A * T orthonormal, or throws naming the failing column of A (0-based).
Eigen::MatrixXd gram_schmidt_transform(const Eigen::MatrixXd& a, double rank_tol, Eigen::Index* failed) {
    const Eigen::Index c = a.cols();
    Eigen::MatrixXd q(a.rows(), c);
    Eigen::MatrixXd r = Eigen::MatrixXd::Zero(c, c);
    for (Eigen::Index j = 0; j < c; ++j) {
        Eigen::VectorXd v = a.col(j);
        for (int pass = 0; pass < 2; ++pass) {
            for (Eigen::Index k = 0; k < j; ++k) {
                const double h = q.col(k).dot(v);
                v -= h * q.col(k);
                r(k, j) += h;
            }
        }
        const double norm = v.norm();
        if (!(norm > rank_tol)) {
            *failed = j;
            return {};
        }
        r(j, j) = norm;
        q.col(j) = v / norm;
    }
    return r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(c, c));
}

}  // namespace

OrthonormalizedBasis gram_schmidt_orthonormalize(const BasisMatrix& basis) {
    const Eigen::MatrixXd& input = basis.values;
    if (input.cols() == 0) throw Error(ErrorKind::argument, "no columns to orthonormalize");
    if (!input.allFinite()) throw Error(ErrorKind::argument, "basis contains non-finite entries");

    OrthonormalizedBasis out;
    out.intercept_prepended = !is_constant_column(input.col(0));
    Eigen::MatrixXd a(input.rows(), input.cols() + (out.intercept_prepended ? 1 : 0));
    if (out.intercept_prepended) {
        a.col(0).setOnes();
        a.rightCols(input.cols()) = input;
    } else {
        a = input;
    }
    if (a.cols() > a.rows()) {
        throw Error(ErrorKind::rank, "more columns (" + std::to_string(a.cols()) + ") than rows (" +
                                         std::to_string(a.rows()) + ")");
    }

    // Equilibrate first: raw spline and natural-polynomial columns differ in
    // scale by several orders of magnitude.
    const Eigen::VectorXd norms = a.colwise().norm().transpose();
    Eigen::MatrixXd scaled = a * norms.cwiseInverse().asDiagonal();

    Eigen::Index failed = -1;
    const double tol = 1e-10 * a.norm();
    Eigen::MatrixXd t = gram_schmidt_transform(a, tol, &failed);
    if (failed >= 0) {
        const Eigen::Index input_col = out.intercept_prepended ? failed : failed + 1;
        throw Error(ErrorKind::rank, "column " + std::to_string(input_col) +
                                         " is linearly dependent on the preceding columns");
    }
    t = gram_schmidt_transform(scaled, 0.0, &failed);
    if (failed >= 0) throw Error(ErrorKind::rank, "Gram-Schmidt lost rank after equilibration");
    t = norms.cwiseInverse().asDiagonal() * t;
    // Second sweep on the product cleans up the residual non-orthogonality
    // left by an ill-conditioned input.
    Eigen::MatrixXd refine = gram_schmidt_transform(a * t, 0.5, &failed);
    if (failed >= 0) throw Error(ErrorKind::rank, "Gram-Schmidt refinement lost rank");
    t = (t * refine).eval();
    t.triangularView<Eigen::StrictlyLower>().setZero();

    Eigen::MatrixXd values = a * t;
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
        if (sign_of_dominant_entry(values.col(j)) < 0.0) t.col(j) *= -1.0;
    }
    out.transform = t;
    out.basis.values = a * t;
    out.basis.kind = basis.kind;
    out.basis.degree = basis.degree;
    out.basis.knots = basis.knots;
    out.basis.times = basis.times;
    return out;
}

double orthonormality_deviation(const Eigen::MatrixXd& basis) {
    const Eigen::MatrixXd gram = basis.transpose() * basis;
    return (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
}

std::vector<double> default_clock_knots() { return {13.0, 15.0, 18.0, 21.0, 0.0, 3.0, 6.0, 9.0, 11.0}; }

std::vector<double> clock_to_elapsed(std::span<const double> clock_hours, double start_hour) {
    std::vector<double> out;
    out.reserve(clock_hours.size());
    for (double h : clock_hours) {
        double e = std::fmod(h - start_hour, 24.0);
        if (e < 0.0) e += 24.0;
        out.push_back(e);
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace abpm
