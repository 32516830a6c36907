#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace abpm {

inline constexpr double kDayStart = 0.0;
inline constexpr double kDayEnd = 24.0;

enum class SpacingKind { equispaced, irregular };

/// Strictly increasing time points (elapsed hours) inside [0, 24].
class TimeGrid {
public:
    TimeGrid() = default;
    explicit TimeGrid(std::vector<double> points);

    /// `count` points from `first` to `last` inclusive.
    static TimeGrid equispaced(double first, double last, std::size_t count);
    /// 0.5, 1.5, ..., 23.5: the timestamps produced by hourly aggregation.
    static TimeGrid hourly_midpoints();
    /// 0, 0.5, ..., 24: a half-hourly schedule including both ends (49 points).
    static TimeGrid half_hourly();

    [[nodiscard]] const std::vector<double>& points() const noexcept { return points_; }
    [[nodiscard]] std::size_t size() const noexcept { return points_.size(); }
    [[nodiscard]] bool empty() const noexcept { return points_.empty(); }
    [[nodiscard]] double operator[](std::size_t i) const { return points_[i]; }
    [[nodiscard]] SpacingKind spacing_kind() const noexcept { return spacing_; }

    friend bool operator==(const TimeGrid& a, const TimeGrid& b) { return a.points_ == b.points_; }

private:
    std::vector<double> points_;
    SpacingKind spacing_ = SpacingKind::irregular;
};

/// x = scale * t + shift
struct AffineMap {
    double scale = 1.0;
    double shift = 0.0;
    [[nodiscard]] double operator()(double t) const noexcept { return scale * t + shift; }
};

/// Monomial coefficient table of an orthonormal polynomial family.
///
/// Row j holds the coefficients of s_j in the rescaled variable x = rescale(t),
/// lowest power first; entries above the diagonal are zero. The table is
/// generated once on a reference grid and then evaluated at arbitrary times,
/// which is how subjects with missing or irregular readings get their
/// (approximately orthonormal) design columns.
struct PolynomialCoefficients {
    int degree = 0;
    Eigen::MatrixXd coeffs;
    AffineMap rescale;
    TimeGrid generating_grid;

    /// Row (s_0(t), ..., s_degree(t)). No domain check.
    [[nodiscard]] Eigen::RowVectorXd evaluate(double t) const;
};

enum class BasisKind { orthonormal_poly, approx_orthonormal_poly, restricted_cubic_spline, natural_poly };

struct BasisMatrix {
    Eigen::MatrixXd values;
    BasisKind kind = BasisKind::orthonormal_poly;
    int degree = -1;            // polynomial kinds
    std::vector<double> knots;  // spline kind
    TimeGrid times;
};

struct OrthonormalBasis {
    BasisMatrix basis;
    PolynomialCoefficients coefficients;
};

/// Exact orthonormal polynomials of degree 0..`degree` on `grid`.
///
/// Built by a three-term style recurrence (multiply the previous column by
/// the rescaled time) with two full re-orthogonalization passes against all
/// earlier columns; the monomial coefficients are carried along with every
/// column operation. The returned matrix is the coefficient table evaluated
/// on the grid, so evaluate_polynomial_basis(coefficients, grid) reproduces it
/// bitwise. Each column's largest-magnitude entry is positive.
OrthonormalBasis orthonormal_polynomial_basis(const TimeGrid& grid, int degree);

/// Evaluate a stored coefficient table at `times`.
BasisMatrix evaluate_polynomial_basis(const PolynomialCoefficients& coeffs, const TimeGrid& times);
Eigen::MatrixXd evaluate_polynomial_rows(const PolynomialCoefficients& coeffs, std::span<const double> times);

/// Throws knot error unless there are >= 3 strictly increasing knots in [0, 24].
void validate_knots(std::span<const double> knots);

/// Covariate x_i(t) of a restricted cubic spline, i in [0, k-2), without any
/// domain restriction on t.
double restricted_cubic_spline_term(double t, std::span<const double> knots, std::size_t i);

/// Columns (t, x_1, ..., x_{k-2}); no intercept.
BasisMatrix restricted_cubic_spline_basis(const TimeGrid& times, std::span<const double> knots);

/// Natural polynomial columns (1, t, ..., t^degree) in raw hours.
BasisMatrix natural_polynomial_basis(const TimeGrid& times, int degree);

struct OrthonormalizedBasis {
    BasisMatrix basis;          // values == [intercept?, input] * transform
    Eigen::MatrixXd transform;  // upper triangular
    bool intercept_prepended = false;
};

/// Gram-Schmidt orthonormalization with an intercept column in front.
///
/// A column of ones is prepended unless the first input column is already
/// constant. Rank deficiency (residual norm below 1e-10 * ||B||_F) is reported
/// naming the 1-based input column.
OrthonormalizedBasis gram_schmidt_orthonormalize(const BasisMatrix& basis);

/// max |B^T B - I|
double orthonormality_deviation(const Eigen::MatrixXd& basis);

/// Knot hours of the 9-knot restricted cubic spline on a 24-hour clock.
std::vector<double> default_clock_knots();

/// Map clock hours onto the elapsed-time axis of a recording started at
/// `start_hour`, returned in increasing order.
std::vector<double> clock_to_elapsed(std::span<const double> clock_hours, double start_hour);

}  // namespace abpm
