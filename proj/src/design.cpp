#include "abpm/design.hpp"

#include "abpm/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

namespace abpm {

std::string_view to_string(BasisKind kind) {
    switch (kind) {
        case BasisKind::orthonormal_poly: return "orthonormal_poly";
        case BasisKind::approx_orthonormal_poly: return "approx_orthonormal_poly";
        case BasisKind::restricted_cubic_spline: return "restricted_cubic_spline";
        case BasisKind::natural_poly: return "natural_poly";
    }
    return "unknown";
}

std::string_view to_string(OutcomeChannel channel) {
    switch (channel) {
        case OutcomeChannel::sbp: return "sbp";
        case OutcomeChannel::dbp: return "dbp";
        case OutcomeChannel::other: return "other";
    }
    return "other";
}

// ---------------------------------------------------------------------------
// Subject / Cohort
// ---------------------------------------------------------------------------

void Subject::validate() const {
    if (times.empty()) throw Error(ErrorKind::spec, "subject " + id + " has no observations");
    if (static_cast<Eigen::Index>(times.size()) != y.size()) {
        throw Error(ErrorKind::spec, "subject " + id + ": times and outcome differ in length");
    }
    if (!y.allFinite()) throw Error(ErrorKind::spec, "subject " + id + " has non-finite outcome values");
}

Cohort::Cohort(std::vector<Subject> subjects, OutcomeChannel outcome)
    : subjects_(std::move(subjects)), outcome_(outcome) {
    if (subjects_.empty()) throw Error(ErrorKind::spec, "cohort has no subjects");
    std::set<std::string> seen;
    for (const auto& s : subjects_) {
        s.validate();
        if (!seen.insert(s.id).second) throw Error(ErrorKind::duplicate, "duplicate subject id " + s.id);
    }
}

std::size_t Cohort::observation_count() const {
    std::size_t n = 0;
    for (const auto& s : subjects_) n += s.times.size();
    return n;
}

const Subject* Cohort::find(const std::string& id) const {
    for (const auto& s : subjects_) {
        if (s.id == id) return &s;
    }
    return nullptr;
}

// ---------------------------------------------------------------------------
// Descriptors
// ---------------------------------------------------------------------------

int BasisDescriptor::columns() const {
    switch (kind) {
        case BasisKind::orthonormal_poly:
        case BasisKind::approx_orthonormal_poly:
        case BasisKind::natural_poly: return degree + 1;
        case BasisKind::restricted_cubic_spline: return static_cast<int>(knots.size());
    }
    return 0;
}

void BasisDescriptor::validate() const {
    switch (kind) {
        case BasisKind::orthonormal_poly:
        case BasisKind::natural_poly:
            if (degree < 0) throw Error(ErrorKind::spec, "basis degree must be non-negative");
            break;
        case BasisKind::restricted_cubic_spline: validate_knots(knots); break;
        case BasisKind::approx_orthonormal_poly:
            throw Error(ErrorKind::spec, "use orthonormal_poly; approximate columns follow from the subject's times");
    }
}

void ModelSpec::validate() const {
    fixed_basis.validate();
    if (reference_grid.empty()) throw Error(ErrorKind::spec, "reference grid is empty");
    if (random_basis) {
        random_basis->validate();
        const bool same_family = random_basis->kind == fixed_basis.kind &&
                                 fixed_basis.kind != BasisKind::restricted_cubic_spline;
        if (same_family && random_basis->degree > fixed_basis.degree) {
            throw Error(ErrorKind::spec, "random basis degree exceeds fixed basis degree");
        }
        if (random_basis->columns() > fixed_basis.columns()) {
            throw Error(ErrorKind::spec, "random basis has more columns than the fixed basis");
        }
    }
    std::set<std::string> names;
    for (const auto& g : group_terms) {
        if (g.name.empty()) throw Error(ErrorKind::spec, "group term without a name");
        if (!names.insert(g.name).second) throw Error(ErrorKind::spec, "group term " + g.name + " listed twice");
        if (g.type == CovariateType::numeric && (!g.levels.empty() || g.reference)) {
            throw Error(ErrorKind::spec, "numeric covariate " + g.name + " cannot declare levels");
        }
    }
    for (const auto& it : interaction_terms) {
        if (!names.count(it.covariate)) {
            throw Error(ErrorKind::spec, "interaction covariate " + it.covariate + " is not a group term");
        }
        for (int c : it.columns) {
            if (c < 1 || c >= fixed_basis.columns()) {
                throw Error(ErrorKind::spec, "interaction column " + std::to_string(c) + " out of range");
            }
        }
    }
}

bool ModelSpec::same_fixed_structure(const ModelSpec& other) const {
    return fixed_basis == other.fixed_basis && group_terms == other.group_terms &&
           interaction_terms == other.interaction_terms && reference_grid == other.reference_grid;
}

// ---------------------------------------------------------------------------
// TimeBasis
// ---------------------------------------------------------------------------

TimeBasis::TimeBasis(const BasisDescriptor& descriptor, const TimeGrid& reference) : descriptor_(descriptor) {
    descriptor_.validate();
    switch (descriptor_.kind) {
        case BasisKind::orthonormal_poly:
        case BasisKind::approx_orthonormal_poly:
            coefficients_ = orthonormal_polynomial_basis(reference, descriptor_.degree).coefficients;
            break;
        case BasisKind::restricted_cubic_spline:
            if (descriptor_.orthogonalize) {
                transform_ = gram_schmidt_orthonormalize(restricted_cubic_spline_basis(reference, descriptor_.knots))
                                 .transform;
            }
            break;
        case BasisKind::natural_poly:
            if (descriptor_.orthogonalize) {
                transform_ = gram_schmidt_orthonormalize(natural_polynomial_basis(reference, descriptor_.degree))
                                 .transform;
            }
            break;
    }
}

TimeBasis::TimeBasis(BasisDescriptor descriptor, std::optional<PolynomialCoefficients> coefficients,
                     Eigen::MatrixXd transform)
    : descriptor_(std::move(descriptor)), coefficients_(std::move(coefficients)), transform_(std::move(transform)) {
    descriptor_.validate();
    const bool poly = descriptor_.kind == BasisKind::orthonormal_poly;
    if (poly != coefficients_.has_value()) throw Error(ErrorKind::schema, "basis state does not match its kind");
    if (transform_.size() != 0 && (transform_.rows() != columns() || transform_.cols() != columns())) {
        throw Error(ErrorKind::schema, "basis transform has the wrong shape");
    }
}

Eigen::MatrixXd TimeBasis::raw_columns(std::span<const double> times) const {
    const auto p = static_cast<Eigen::Index>(times.size());
    const int c = columns();
    Eigen::MatrixXd raw(p, c);
    for (Eigen::Index r = 0; r < p; ++r) {
        const double t = times[static_cast<std::size_t>(r)];
        if (!std::isfinite(t) || t < kDayStart || t > kDayEnd) {
            throw Error(ErrorKind::domain, "time " + std::to_string(t) + " outside [0, 24]");
        }
        if (descriptor_.kind == BasisKind::restricted_cubic_spline) {
            raw(r, 0) = 1.0;
            raw(r, 1) = t;
            for (int i = 0; i + 2 < c; ++i) {
                raw(r, i + 2) = restricted_cubic_spline_term(t, descriptor_.knots, static_cast<std::size_t>(i));
            }
        } else {
            double power = 1.0;
            for (int j = 0; j < c; ++j) {
                raw(r, j) = power;
                power *= t;
            }
        }
    }
    return raw;
}

Eigen::MatrixXd TimeBasis::evaluate(std::span<const double> times) const {
    if (coefficients_) return evaluate_polynomial_rows(*coefficients_, times);
    Eigen::MatrixXd raw = raw_columns(times);
    if (transform_.size() == 0) return raw;
    return raw * transform_;
}

// ---------------------------------------------------------------------------
// Covariate codings
// ---------------------------------------------------------------------------

std::vector<std::string> CovariateCoding::indicator_levels() const {
    std::vector<std::string> out;
    for (const auto& l : levels) {
        if (l != reference) out.push_back(l);
    }
    return out;
}

int CovariateCoding::width() const {
    return type == CovariateType::numeric ? 1 : static_cast<int>(levels.size()) - 1;
}

namespace {

double parse_numeric_covariate(const std::string& name, const std::string& text) {
    double v = 0.0;
    const auto* begin = text.data();
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
        throw Error(ErrorKind::spec, "covariate " + name + " value '" + text + "' is not a number");
    }
    return v;
}

std::string basis_column_label(const BasisDescriptor& d, int j) {
    if (j == 0) return "intercept";
    switch (d.kind) {
        case BasisKind::orthonormal_poly:
        case BasisKind::approx_orthonormal_poly: return "poly" + std::to_string(j);
        case BasisKind::restricted_cubic_spline: return "rcs" + std::to_string(j);
        case BasisKind::natural_poly: return "t" + std::to_string(j);
    }
    return "col" + std::to_string(j);
}

}  // namespace

CovariateCoding make_coding(const GroupTerm& term, const Cohort* cohort) {
    CovariateCoding c;
    c.name = term.name;
    c.type = term.type;
    if (term.type == CovariateType::numeric) {
        if (cohort) {
            for (const auto& s : cohort->subjects()) {
                auto it = s.covariates.find(term.name);
                if (it == s.covariates.end()) {
                    throw Error(ErrorKind::spec, "subject " + s.id + " lacks covariate " + term.name);
                }
                parse_numeric_covariate(term.name, it->second);
            }
        }
        return c;
    }
    if (!term.levels.empty()) {
        c.levels = term.levels;
        std::set<std::string> uniq(c.levels.begin(), c.levels.end());
        if (uniq.size() != c.levels.size()) throw Error(ErrorKind::spec, "duplicate levels for " + term.name);
    } else {
        if (!cohort) throw Error(ErrorKind::spec, "levels of covariate " + term.name + " are not declared");
        std::set<std::string> uniq;
        for (const auto& s : cohort->subjects()) {
            auto it = s.covariates.find(term.name);
            if (it == s.covariates.end()) {
                throw Error(ErrorKind::spec, "subject " + s.id + " lacks covariate " + term.name);
            }
            uniq.insert(it->second);
        }
        c.levels.assign(uniq.begin(), uniq.end());
    }
    c.reference = term.reference ? *term.reference : *std::min_element(c.levels.begin(), c.levels.end());
    if (std::find(c.levels.begin(), c.levels.end(), c.reference) == c.levels.end()) {
        throw Error(ErrorKind::spec, "reference level " + c.reference + " of " + term.name + " is not a level");
    }
    return c;
}

// ---------------------------------------------------------------------------
// DesignContext
// ---------------------------------------------------------------------------

DesignContext::DesignContext(const ModelSpec& spec, const Cohort& cohort) : spec_(spec) {
    spec_.validate();
    for (const auto& g : spec_.group_terms) codings_.push_back(make_coding(g, &cohort));
    build_bases();
}

DesignContext::DesignContext(const ModelSpec& spec, std::vector<CovariateCoding> codings)
    : spec_(spec), codings_(std::move(codings)) {
    spec_.validate();
    if (codings_.size() != spec_.group_terms.size()) {
        throw Error(ErrorKind::spec, "covariate codings do not match the group terms");
    }
    build_bases();
}

DesignContext::DesignContext(ModelSpec spec, TimeBasis fixed, std::optional<TimeBasis> random,
                             std::vector<CovariateCoding> codings)
    : spec_(std::move(spec)), fixed_(std::move(fixed)), random_(std::move(random)), codings_(std::move(codings)) {
    spec_.validate();
    if (!(fixed_.descriptor() == spec_.fixed_basis) || random_.has_value() != spec_.random_basis.has_value() ||
        (random_ && !(random_->descriptor() == *spec_.random_basis))) {
        throw Error(ErrorKind::schema, "stored bases do not match the model spec");
    }
    if (codings_.size() != spec_.group_terms.size()) {
        throw Error(ErrorKind::schema, "covariate codings do not match the group terms");
    }
}

void DesignContext::build_bases() {
    for (std::size_t i = 0; i < codings_.size(); ++i) {
        const auto& c = codings_[i];
        if (c.name != spec_.group_terms[i].name || c.type != spec_.group_terms[i].type) {
            throw Error(ErrorKind::spec, "covariate coding order does not match the group terms");
        }
        if (c.type == CovariateType::categorical && c.levels.empty()) {
            throw Error(ErrorKind::spec, "covariate " + c.name + " has no levels");
        }
    }
    fixed_ = TimeBasis(spec_.fixed_basis, spec_.reference_grid);
    if (spec_.random_basis) {
        // Reuse the fixed-effect state when the bases coincide so that X = Z
        // holds exactly.
        random_ = *spec_.random_basis == spec_.fixed_basis ? fixed_
                                                            : TimeBasis(*spec_.random_basis, spec_.reference_grid);
    }
}

const CovariateCoding& DesignContext::coding(const std::string& name) const {
    for (const auto& c : codings_) {
        if (c.name == name) return c;
    }
    throw Error(ErrorKind::spec, "unknown covariate " + name);
}

std::vector<int> DesignContext::interaction_columns(const InteractionTerm& term) const {
    if (!term.columns.empty()) return term.columns;
    std::vector<int> cols;
    for (int j = 1; j < fixed_.columns(); ++j) cols.push_back(j);
    return cols;
}

int DesignContext::fixed_columns() const {
    int q = fixed_.columns();
    for (const auto& c : codings_) q += c.width();
    for (const auto& it : spec_.interaction_terms) {
        q += coding(it.covariate).width() * static_cast<int>(interaction_columns(it).size());
    }
    return q;
}

int DesignContext::random_columns() const { return random_ ? random_->columns() : 0; }

std::vector<std::string> DesignContext::fixed_labels() const {
    std::vector<std::string> labels;
    for (int j = 0; j < fixed_.columns(); ++j) labels.push_back(basis_column_label(spec_.fixed_basis, j));
    auto covariate_labels = [](const CovariateCoding& c) {
        std::vector<std::string> out;
        if (c.type == CovariateType::numeric) {
            out.push_back(c.name);
        } else {
            for (const auto& l : c.indicator_levels()) out.push_back(c.name + "[" + l + "]");
        }
        return out;
    };
    for (const auto& c : codings_) {
        for (auto& l : covariate_labels(c)) labels.push_back(std::move(l));
    }
    for (const auto& it : spec_.interaction_terms) {
        for (const auto& l : covariate_labels(coding(it.covariate))) {
            for (int j : interaction_columns(it)) labels.push_back(l + ":" + basis_column_label(spec_.fixed_basis, j));
        }
    }
    return labels;
}

std::vector<int> DesignContext::fixed_degrees() const {
    std::vector<int> degrees(static_cast<std::size_t>(fixed_columns()), -1);
    if (spec_.fixed_basis.kind != BasisKind::restricted_cubic_spline) {
        for (int j = 0; j < fixed_.columns(); ++j) degrees[static_cast<std::size_t>(j)] = j;
    }
    return degrees;
}

std::map<std::string, std::string> DesignContext::reference_covariates() const {
    std::map<std::string, std::string> out;
    for (const auto& c : codings_) out[c.name] = c.type == CovariateType::numeric ? "0" : c.reference;
    return out;
}

DesignPair DesignContext::design_at(std::span<const double> times,
                                    const std::map<std::string, std::string>& covariates) const {
    const auto p = static_cast<Eigen::Index>(times.size());
    const Eigen::MatrixXd basis = fixed_.evaluate(times);

    // Per-covariate value columns (indicators or the numeric value).
    std::vector<Eigen::MatrixXd> values;
    values.reserve(codings_.size());
    for (const auto& c : codings_) {
        auto it = covariates.find(c.name);
        if (it == covariates.end()) throw Error(ErrorKind::spec, "missing covariate " + c.name);
        Eigen::RowVectorXd v(c.width());
        if (c.type == CovariateType::numeric) {
            v(0) = parse_numeric_covariate(c.name, it->second);
        } else {
            if (std::find(c.levels.begin(), c.levels.end(), it->second) == c.levels.end()) {
                throw Error(ErrorKind::spec, "covariate " + c.name + " has unknown level '" + it->second + "'");
            }
            const auto ind = c.indicator_levels();
            for (std::size_t k = 0; k < ind.size(); ++k) v(static_cast<Eigen::Index>(k)) = ind[k] == it->second;
        }
        values.emplace_back(v);
    }

    DesignPair out;
    out.X.resize(p, fixed_columns());
    Eigen::Index col = 0;
    out.X.leftCols(basis.cols()) = basis;
    col += basis.cols();
    for (const auto& v : values) {
        for (Eigen::Index k = 0; k < v.cols(); ++k) out.X.col(col++).setConstant(v(0, k));
    }
    for (const auto& it : spec_.interaction_terms) {
        std::size_t idx = 0;
        while (codings_[idx].name != it.covariate) ++idx;
        const auto& v = values[idx];
        const auto cols = interaction_columns(it);
        for (Eigen::Index k = 0; k < v.cols(); ++k) {
            for (int j : cols) out.X.col(col++) = v(0, k) * basis.col(j);
        }
    }
    if (!random_) {
        out.Z.resize(p, 0);
    } else if (*spec_.random_basis == spec_.fixed_basis) {
        out.Z = basis;
    } else {
        out.Z = random_->evaluate(times);
    }
    return out;
}

DesignPair DesignContext::design(const Subject& subject) const {
    subject.validate();
    return design_at(subject.times.points(), subject.covariates);
}

DesignPair build_design(const DesignContext& context, const Subject& subject) { return context.design(subject); }

// ---------------------------------------------------------------------------
// Parameter counts
// ---------------------------------------------------------------------------

namespace {

int covariance_count(RandomCovariance cov, int m) {
    return (cov == RandomCovariance::diagonal ? m : m * (m + 1) / 2) + 1;
}

}  // namespace

ParameterCount parameter_count(const DesignContext& context) {
    return {context.fixed_columns(), covariance_count(context.spec().random_cov, context.random_columns())};
}

ParameterCount parameter_count(const ModelSpec& spec) {
    spec.validate();
    int q = spec.fixed_basis.columns();
    std::map<std::string, int> widths;
    for (const auto& g : spec.group_terms) {
        const int w = make_coding(g, nullptr).width();
        widths[g.name] = w;
        q += w;
    }
    for (const auto& it : spec.interaction_terms) {
        const int ncols = it.columns.empty() ? spec.fixed_basis.columns() - 1 : static_cast<int>(it.columns.size());
        q += widths.at(it.covariate) * ncols;
    }
    const int m = spec.random_basis ? spec.random_basis->columns() : 0;
    return {q, covariance_count(spec.random_cov, m)};
}

}  // namespace abpm
