#include "abpm/model_io.hpp"

#include "abpm/error.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace abpm {

using Json = nlohmann::ordered_json;

namespace {

Json parse_json(const std::string& text, const std::string& what) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw Error(ErrorKind::parse, what + ": " + e.what());
    }
}

void require_object(const Json& j, const std::string& where) {
    if (!j.is_object()) throw Error(ErrorKind::schema, where + " must be an object");
}

void allow_keys(const Json& j, std::initializer_list<std::string_view> keys, const std::string& where) {
    require_object(j, where);
    for (const auto& [k, v] : j.items()) {
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
            throw Error(ErrorKind::schema, "unknown key '" + k + "' in " + where);
        }
    }
}

const Json& field(const Json& j, const std::string& key, const std::string& where) {
    const auto it = j.find(key);
    if (it == j.end()) throw Error(ErrorKind::schema, where + " lacks '" + key + "'");
    return *it;
}

void check_version(const Json& j, const std::string& where) {
    const Json& v = field(j, "schema_version", where);
    if (!v.is_number_integer() || v.get<int>() != kSchemaVersion) {
        throw Error(ErrorKind::schema, where + ": unsupported schema_version " + v.dump());
    }
}

template <class T>
T get(const Json& j, const std::string& where) {
    try {
        return j.get<T>();
    } catch (const Json::exception&) {
        throw Error(ErrorKind::schema, where + " has the wrong type");
    }
}

// Non-finite doubles are stored as null.
double get_double(const Json& j, const std::string& where) {
    if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
    if (!j.is_number()) throw Error(ErrorKind::schema, where + " must be a number");
    return j.get<double>();
}

Json put_double(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json put_vector(const Eigen::VectorXd& v) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(put_double(v(i)));
    return a;
}

Json put_matrix(const Eigen::MatrixXd& m) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(put_vector(m.row(i).transpose()));
    return a;
}

Eigen::VectorXd get_vector(const Json& j, const std::string& where) {
    if (!j.is_array()) throw Error(ErrorKind::schema, where + " must be an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = get_double(j[i], where);
    return v;
}

Eigen::MatrixXd get_matrix(const Json& j, const std::string& where) {
    if (!j.is_array()) throw Error(ErrorKind::schema, where + " must be an array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Eigen::VectorXd r = get_vector(j[static_cast<std::size_t>(i)], where);
        if (r.size() != cols) throw Error(ErrorKind::schema, where + " has ragged rows");
        m.row(i) = r.transpose();
    }
    return m;
}

std::vector<double> get_points(const Json& j, const std::string& where) {
    const Eigen::VectorXd v = get_vector(j, where);
    return {v.data(), v.data() + v.size()};
}

// ---------------------------------------------------------------------------
// ModelSpec
// ---------------------------------------------------------------------------

BasisKind basis_kind(const std::string& s) {
    if (s == "orthonormal_poly") return BasisKind::orthonormal_poly;
    if (s == "restricted_cubic_spline") return BasisKind::restricted_cubic_spline;
    if (s == "natural_poly") return BasisKind::natural_poly;
    throw Error(ErrorKind::schema, "unknown basis kind '" + s + "'");
}

BasisDescriptor basis_from_json(const Json& j, const std::string& where) {
    require_object(j, where);
    BasisDescriptor d;
    d.kind = basis_kind(get<std::string>(field(j, "kind", where), where + ".kind"));
    switch (d.kind) {
        case BasisKind::orthonormal_poly:
            allow_keys(j, {"kind", "degree"}, where);
            d.degree = get<int>(field(j, "degree", where), where + ".degree");
            break;
        case BasisKind::natural_poly:
            allow_keys(j, {"kind", "degree", "orthogonalize"}, where);
            d.degree = get<int>(field(j, "degree", where), where + ".degree");
            if (j.contains("orthogonalize")) d.orthogonalize = get<bool>(j["orthogonalize"], where + ".orthogonalize");
            break;
        case BasisKind::restricted_cubic_spline: {
            allow_keys(j, {"kind", "knots", "clock_knots", "start_hour", "orthogonalize"}, where);
            if (j.contains("orthogonalize")) d.orthogonalize = get<bool>(j["orthogonalize"], where + ".orthogonalize");
            const double start = j.contains("start_hour") ? get_double(j["start_hour"], where + ".start_hour") : 12.0;
            const bool has_knots = j.contains("knots");
            if (has_knots == j.contains("clock_knots")) {
                throw Error(ErrorKind::schema, where + " needs exactly one of 'knots' and 'clock_knots'");
            }
            if (has_knots && j["knots"].is_string()) {
                if (j["knots"].get<std::string>() != "default") {
                    throw Error(ErrorKind::schema, where + ".knots must be a list or \"default\"");
                }
                d.knots = clock_to_elapsed(default_clock_knots(), start);
            } else if (has_knots) {
                if (j.contains("start_hour")) {
                    throw Error(ErrorKind::schema, where + ": start_hour applies only to clock or default knots");
                }
                d.knots = get_points(j["knots"], where + ".knots");
            } else {
                const auto clock = get_points(j["clock_knots"], where + ".clock_knots");
                d.knots = clock_to_elapsed(clock, start);
            }
            break;
        }
        case BasisKind::approx_orthonormal_poly: break;
    }
    return d;
}

Json basis_to_json(const BasisDescriptor& d) {
    Json j;
    j["kind"] = std::string(to_string(d.kind));
    switch (d.kind) {
        case BasisKind::orthonormal_poly:
        case BasisKind::approx_orthonormal_poly: j["degree"] = d.degree; break;
        case BasisKind::natural_poly:
            j["degree"] = d.degree;
            j["orthogonalize"] = d.orthogonalize;
            break;
        case BasisKind::restricted_cubic_spline:
            j["knots"] = d.knots;
            j["orthogonalize"] = d.orthogonalize;
            break;
    }
    return j;
}

TimeGrid grid_from_json(const Json& j, const std::string& where) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "half_hourly") return TimeGrid::half_hourly();
        if (s == "hourly") return TimeGrid::hourly_midpoints();
        throw Error(ErrorKind::schema, where + ": unknown grid '" + s + "'");
    }
    return TimeGrid(get_points(j, where));
}

Json grid_to_json(const TimeGrid& g) {
    if (g == TimeGrid::half_hourly()) return "half_hourly";
    if (g == TimeGrid::hourly_midpoints()) return "hourly";
    return g.points();
}

CovariateType covariate_type(const std::string& s, const std::string& where) {
    if (s == "categorical") return CovariateType::categorical;
    if (s == "numeric") return CovariateType::numeric;
    throw Error(ErrorKind::schema, where + ": unknown covariate type '" + s + "'");
}

std::string_view to_string(CovariateType t) { return t == CovariateType::numeric ? "numeric" : "categorical"; }

ModelSpec spec_from_json(const Json& j) {
    allow_keys(j, {"schema_version", "name", "fixed", "random", "random_cov", "reference_grid", "group_terms",
                   "interaction_terms"},
               "model");
    check_version(j, "model");
    ModelSpec s;
    if (j.contains("name")) s.name = get<std::string>(j["name"], "model.name");
    s.fixed_basis = basis_from_json(field(j, "fixed", "model"), "model.fixed");
    if (j.contains("random") && !j["random"].is_null()) s.random_basis = basis_from_json(j["random"], "model.random");
    if (j.contains("random_cov")) {
        const auto rc = get<std::string>(j["random_cov"], "model.random_cov");
        if (rc == "diagonal") {
            s.random_cov = RandomCovariance::diagonal;
        } else if (rc == "unstructured") {
            s.random_cov = RandomCovariance::unstructured;
        } else {
            throw Error(ErrorKind::schema, "model.random_cov must be diagonal or unstructured");
        }
    }
    if (j.contains("reference_grid")) s.reference_grid = grid_from_json(j["reference_grid"], "model.reference_grid");
    if (j.contains("group_terms")) {
        for (const auto& g : j["group_terms"]) {
            allow_keys(g, {"name", "type", "reference", "levels"}, "group term");
            GroupTerm t;
            t.name = get<std::string>(field(g, "name", "group term"), "group term name");
            if (g.contains("type")) t.type = covariate_type(get<std::string>(g["type"], "group term type"), t.name);
            if (g.contains("reference") && !g["reference"].is_null()) {
                t.reference = get<std::string>(g["reference"], "group term reference");
            }
            if (g.contains("levels")) t.levels = get<std::vector<std::string>>(g["levels"], "group term levels");
            s.group_terms.push_back(std::move(t));
        }
    }
    if (j.contains("interaction_terms")) {
        for (const auto& it : j["interaction_terms"]) {
            allow_keys(it, {"covariate", "columns"}, "interaction term");
            InteractionTerm t;
            t.covariate = get<std::string>(field(it, "covariate", "interaction term"), "interaction covariate");
            if (it.contains("columns")) t.columns = get<std::vector<int>>(it["columns"], "interaction columns");
            s.interaction_terms.push_back(std::move(t));
        }
    }
    s.validate();
    return s;
}

Json spec_to_json(const ModelSpec& s) {
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["name"] = s.name;
    j["fixed"] = basis_to_json(s.fixed_basis);
    if (s.random_basis) j["random"] = basis_to_json(*s.random_basis);
    j["random_cov"] = s.random_cov == RandomCovariance::diagonal ? "diagonal" : "unstructured";
    j["reference_grid"] = grid_to_json(s.reference_grid);
    Json groups = Json::array();
    for (const auto& g : s.group_terms) {
        Json t;
        t["name"] = g.name;
        t["type"] = std::string(to_string(g.type));
        if (g.reference) t["reference"] = *g.reference;
        if (!g.levels.empty()) t["levels"] = g.levels;
        groups.push_back(std::move(t));
    }
    j["group_terms"] = std::move(groups);
    Json inter = Json::array();
    for (const auto& it : s.interaction_terms) {
        Json t;
        t["covariate"] = it.covariate;
        if (!it.columns.empty()) t["columns"] = it.columns;
        inter.push_back(std::move(t));
    }
    j["interaction_terms"] = std::move(inter);
    return j;
}

// ---------------------------------------------------------------------------
// Fitted model
// ---------------------------------------------------------------------------

Json basis_state_to_json(const TimeBasis& b) {
    Json j;
    if (b.coefficients()) {
        const auto& c = *b.coefficients();
        j["degree"] = c.degree;
        j["rescale"] = {{"scale", c.rescale.scale}, {"shift", c.rescale.shift}};
        j["generating_grid"] = c.generating_grid.points();
        j["coefficients"] = put_matrix(c.coeffs);
    }
    if (b.transform().size() > 0) j["transform"] = put_matrix(b.transform());
    return j;
}

TimeBasis basis_state_from_json(const Json& j, const BasisDescriptor& d, const std::string& where) {
    allow_keys(j, {"degree", "rescale", "generating_grid", "coefficients", "transform"}, where);
    std::optional<PolynomialCoefficients> coeffs;
    if (j.contains("coefficients")) {
        PolynomialCoefficients c;
        c.degree = get<int>(field(j, "degree", where), where + ".degree");
        const Json& r = field(j, "rescale", where);
        allow_keys(r, {"scale", "shift"}, where + ".rescale");
        c.rescale.scale = get_double(field(r, "scale", where), where + ".rescale.scale");
        c.rescale.shift = get_double(field(r, "shift", where), where + ".rescale.shift");
        c.generating_grid = TimeGrid(get_points(field(j, "generating_grid", where), where + ".generating_grid"));
        c.coeffs = get_matrix(j["coefficients"], where + ".coefficients");
        if (c.coeffs.rows() != c.degree + 1 || c.coeffs.cols() != c.degree + 1) {
            throw Error(ErrorKind::schema, where + ": coefficient table does not match the degree");
        }
        coeffs = std::move(c);
    }
    Eigen::MatrixXd transform;
    if (j.contains("transform")) transform = get_matrix(j["transform"], where + ".transform");
    return {d, std::move(coeffs), std::move(transform)};
}

}  // namespace

// ---------------------------------------------------------------------------
// Public API
// ---------------------------------------------------------------------------

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    out << text;
    if (!out) throw Error(ErrorKind::io, "failed writing " + path.string());
}

ModelSpec parse_model_spec(const std::string& text) { return spec_from_json(parse_json(text, "model")); }

ModelSpec load_model_spec(const std::filesystem::path& path) {
    try {
        return parse_model_spec(read_text_file(path));
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::io) throw;
        throw Error(e.kind(), path.filename().string() + ": " + e.what());
    }
}

std::string dump_model_spec(const ModelSpec& spec) { return spec_to_json(spec).dump(2) + "\n"; }

std::string dump_fitted_model(const FittedModel& f) {
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["kind"] = "fitted_model";
    j["model"] = spec_to_json(f.spec());
    j["fixed_basis_state"] = basis_state_to_json(f.design.fixed_basis());
    if (f.design.random_basis()) j["random_basis_state"] = basis_state_to_json(*f.design.random_basis());
    Json codings = Json::array();
    for (const auto& c : f.design.codings()) {
        Json cj;
        cj["name"] = c.name;
        cj["type"] = std::string(to_string(c.type));
        cj["levels"] = c.levels;
        cj["reference"] = c.reference;
        codings.push_back(std::move(cj));
    }
    j["codings"] = std::move(codings);
    j["method"] = std::string(to_string(f.method));
    j["converged"] = f.converged;
    j["iterations"] = f.iterations;
    j["gradient_norm"] = put_double(f.gradient_norm);
    j["loglik"] = put_double(f.loglik);
    j["n_subjects"] = f.n_subjects;
    j["n_observations"] = f.n_observations;
    j["fixed_labels"] = f.design.fixed_labels();
    j["theta"] = put_vector(f.theta);
    j["beta_hat"] = put_vector(f.beta_hat);
    j["cov_beta"] = put_matrix(f.cov_beta);
    j["sigma_d_hat"] = put_matrix(f.sigma_d_hat);
    j["sigma2_hat"] = put_double(f.sigma2_hat);
    Json trace = Json::array();
    for (double v : f.loglik_trace) trace.push_back(put_double(v));
    j["loglik_trace"] = std::move(trace);
    const auto& inf = f.inference;
    Json ij;
    ij["available"] = inf.available;
    ij["reason"] = inf.reason;
    ij["free_parameters"] = inf.free_parameters;
    ij["theta_covariance"] = put_matrix(inf.theta_covariance);
    Json derivs = Json::array();
    for (const auto& d : inf.cov_beta_derivatives) derivs.push_back(put_matrix(d));
    ij["cov_beta_derivatives"] = std::move(derivs);
    ij["variance_labels"] = inf.variance_labels;
    ij["variance_estimates"] = put_vector(inf.variance_estimates);
    ij["variance_covariance"] = put_matrix(inf.variance_covariance);
    j["inference"] = std::move(ij);
    return j.dump(2) + "\n";
}

FittedModel parse_fitted_model(const std::string& text) {
    const Json j = parse_json(text, "fit");
    const std::string w = "fit";
    allow_keys(j, {"schema_version", "kind", "model", "fixed_basis_state", "random_basis_state", "codings", "method",
                   "converged", "iterations", "gradient_norm", "loglik", "n_subjects", "n_observations",
                   "fixed_labels", "theta", "beta_hat", "cov_beta", "sigma_d_hat", "sigma2_hat", "loglik_trace",
                   "inference"},
               w);
    check_version(j, w);
    if (get<std::string>(field(j, "kind", w), "fit.kind") != "fitted_model") {
        throw Error(ErrorKind::schema, "not a fitted model file");
    }
    ModelSpec spec = spec_from_json(field(j, "model", w));
    TimeBasis fixed = basis_state_from_json(field(j, "fixed_basis_state", w), spec.fixed_basis, "fixed_basis_state");
    std::optional<TimeBasis> random;
    if (spec.random_basis) {
        random = basis_state_from_json(field(j, "random_basis_state", w), *spec.random_basis, "random_basis_state");
    }
    std::vector<CovariateCoding> codings;
    for (const auto& cj : field(j, "codings", w)) {
        allow_keys(cj, {"name", "type", "levels", "reference"}, "coding");
        CovariateCoding c;
        c.name = get<std::string>(field(cj, "name", "coding"), "coding.name");
        c.type = covariate_type(get<std::string>(field(cj, "type", "coding"), "coding.type"), c.name);
        c.levels = get<std::vector<std::string>>(field(cj, "levels", "coding"), "coding.levels");
        c.reference = get<std::string>(field(cj, "reference", "coding"), "coding.reference");
        codings.push_back(std::move(c));
    }

    FittedModel f;
    f.design = DesignContext(std::move(spec), std::move(fixed), std::move(random), std::move(codings));
    const auto method = get<std::string>(field(j, "method", w), "fit.method");
    if (method != "reml" && method != "ml") throw Error(ErrorKind::schema, "fit.method must be reml or ml");
    f.method = method == "reml" ? Method::reml : Method::ml;
    f.converged = get<bool>(field(j, "converged", w), "fit.converged");
    f.iterations = get<int>(field(j, "iterations", w), "fit.iterations");
    f.gradient_norm = get_double(field(j, "gradient_norm", w), "fit.gradient_norm");
    f.loglik = get_double(field(j, "loglik", w), "fit.loglik");
    f.n_subjects = get<std::size_t>(field(j, "n_subjects", w), "fit.n_subjects");
    f.n_observations = get<std::size_t>(field(j, "n_observations", w), "fit.n_observations");
    f.theta = get_vector(field(j, "theta", w), "fit.theta");
    f.beta_hat = get_vector(field(j, "beta_hat", w), "fit.beta_hat");
    f.cov_beta = get_matrix(field(j, "cov_beta", w), "fit.cov_beta");
    f.sigma_d_hat = get_matrix(field(j, "sigma_d_hat", w), "fit.sigma_d_hat");
    f.sigma2_hat = get_double(field(j, "sigma2_hat", w), "fit.sigma2_hat");
    const Eigen::VectorXd trace = get_vector(field(j, "loglik_trace", w), "fit.loglik_trace");
    f.loglik_trace.assign(trace.data(), trace.data() + trace.size());

    const Json& ij = field(j, "inference", w);
    allow_keys(ij, {"available", "reason", "free_parameters", "theta_covariance", "cov_beta_derivatives",
                    "variance_labels", "variance_estimates", "variance_covariance"},
               "inference");
    auto& inf = f.inference;
    inf.available = get<bool>(field(ij, "available", "inference"), "inference.available");
    inf.reason = get<std::string>(field(ij, "reason", "inference"), "inference.reason");
    inf.free_parameters = get<std::vector<int>>(field(ij, "free_parameters", "inference"), "inference.free_parameters");
    inf.theta_covariance = get_matrix(field(ij, "theta_covariance", "inference"), "inference.theta_covariance");
    for (const auto& d : field(ij, "cov_beta_derivatives", "inference")) {
        inf.cov_beta_derivatives.push_back(get_matrix(d, "inference.cov_beta_derivatives"));
    }
    inf.variance_labels = get<std::vector<std::string>>(field(ij, "variance_labels", "inference"), "inference.variance_labels");
    inf.variance_estimates = get_vector(field(ij, "variance_estimates", "inference"), "inference.variance_estimates");
    inf.variance_covariance = get_matrix(field(ij, "variance_covariance", "inference"), "inference.variance_covariance");

    const auto q = f.design.fixed_columns();
    const auto m = f.design.random_columns();
    if (f.beta_hat.size() != q || f.cov_beta.rows() != q || f.cov_beta.cols() != q || f.sigma_d_hat.rows() != m ||
        f.sigma_d_hat.cols() != m || f.theta.size() != f.covariance_model().size()) {
        throw Error(ErrorKind::schema, "fitted estimates do not match the model dimensions");
    }
    if (inf.cov_beta_derivatives.size() != inf.free_parameters.size()) {
        throw Error(ErrorKind::schema, "inference state is inconsistent");
    }
    return f;
}

FittedModel load_fitted_model(const std::filesystem::path& path) { return parse_fitted_model(read_text_file(path)); }

SimulationConfig parse_simulation_config(const std::string& text) {
    const Json j = parse_json(text, "simulation config");
    const std::string w = "simulation config";
    allow_keys(j, {"schema_version", "model", "beta", "sigma_d", "sigma_d_diagonal", "sigma2", "n_subjects",
                   "missing_rate", "time_jitter_sd", "seed", "times", "outcome", "covariate_levels"},
               w);
    check_version(j, w);
    SimulationConfig c;
    c.spec = spec_from_json(field(j, "model", w));
    c.beta = get_vector(field(j, "beta", w), "beta");
    if (j.contains("sigma_d") == j.contains("sigma_d_diagonal")) {
        throw Error(ErrorKind::schema, w + " needs exactly one of sigma_d and sigma_d_diagonal");
    }
    if (j.contains("sigma_d")) {
        c.sigma_d = get_matrix(j["sigma_d"], "sigma_d");
    } else {
        c.sigma_d = get_vector(j["sigma_d_diagonal"], "sigma_d_diagonal").asDiagonal();
    }
    c.sigma2 = get_double(field(j, "sigma2", w), "sigma2");
    c.n_subjects = get<std::size_t>(field(j, "n_subjects", w), "n_subjects");
    if (j.contains("missing_rate")) c.missing_rate = get_double(j["missing_rate"], "missing_rate");
    if (j.contains("time_jitter_sd")) c.time_jitter_sd = get_double(j["time_jitter_sd"], "time_jitter_sd");
    if (j.contains("seed")) c.seed = get<std::uint64_t>(j["seed"], "seed");
    if (j.contains("times")) c.times = grid_from_json(j["times"], "times");
    if (j.contains("outcome")) {
        const auto o = get<std::string>(j["outcome"], "outcome");
        if (o == "sbp") {
            c.outcome = OutcomeChannel::sbp;
        } else if (o == "dbp") {
            c.outcome = OutcomeChannel::dbp;
        } else {
            throw Error(ErrorKind::schema, "outcome must be sbp or dbp");
        }
    }
    if (j.contains("covariate_levels")) {
        c.covariate_levels =
            get<std::map<std::string, std::vector<std::string>>>(j["covariate_levels"], "covariate_levels");
    }
    return c;
}

SimulationConfig load_simulation_config(const std::filesystem::path& path) {
    return parse_simulation_config(read_text_file(path));
}

std::string dump_simulation_config(const SimulationConfig& c) {
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["model"] = spec_to_json(c.spec);
    j["beta"] = put_vector(c.beta);
    j["sigma_d"] = put_matrix(c.sigma_d);
    j["sigma2"] = c.sigma2;
    j["n_subjects"] = c.n_subjects;
    j["missing_rate"] = c.missing_rate;
    j["time_jitter_sd"] = c.time_jitter_sd;
    j["seed"] = c.seed;
    j["times"] = grid_to_json(c.times);
    j["outcome"] = c.outcome == OutcomeChannel::dbp ? "dbp" : "sbp";
    Json levels = Json::object();
    for (const auto& [k, v] : c.covariate_levels) levels[k] = v;
    j["covariate_levels"] = std::move(levels);
    return j.dump(2) + "\n";
}

namespace {

Bounds bounds_from_json(const Json& j, const std::string& where) {
    allow_keys(j, {"lower", "upper"}, where);
    Bounds b;
    if (j.contains("lower") && !j["lower"].is_null()) b.lower = get_double(j["lower"], where + ".lower");
    if (j.contains("upper") && !j["upper"].is_null()) b.upper = get_double(j["upper"], where + ".upper");
    if (!(b.lower <= b.upper)) throw Error(ErrorKind::config, where + ": lower bound exceeds upper bound");
    return b;
}

}  // namespace

Thresholds parse_thresholds(const std::string& text) {
    const Json j = parse_json(text, "thresholds");
    allow_keys(j, {"schema_version", "hours", "all", "day", "night", "day_start", "day_end"}, "thresholds");
    check_version(j, "thresholds");
    const bool hours = j.contains("hours");
    const bool all = j.contains("all");
    const bool day = j.contains("day") || j.contains("night");
    if (static_cast<int>(hours) + static_cast<int>(all) + static_cast<int>(day) != 1) {
        throw Error(ErrorKind::config, "thresholds need exactly one of 'hours', 'all' or 'day'/'night'");
    }
    if (all) return Thresholds::uniform(bounds_from_json(j["all"], "all"));
    if (day) {
        for (const char* key : {"day", "night", "day_start", "day_end"}) {
            if (!j.contains(key)) throw Error(ErrorKind::config, std::string("thresholds lack '") + key + "'");
        }
        return Thresholds::day_night(bounds_from_json(j["day"], "day"), bounds_from_json(j["night"], "night"),
                                     get<int>(j["day_start"], "day_start"), get<int>(j["day_end"], "day_end"));
    }
    const Json& h = j["hours"];
    if (!h.is_array() || h.size() != 24) throw Error(ErrorKind::config, "'hours' must list 24 entries (null = none)");
    Thresholds t;
    for (std::size_t k = 0; k < 24; ++k) {
        if (!h[k].is_null()) t.hours[k] = bounds_from_json(h[k], "hours[" + std::to_string(k) + "]");
    }
    return t;
}

Thresholds load_thresholds(const std::filesystem::path& path) { return parse_thresholds(read_text_file(path)); }

}  // namespace abpm
