#include "abpm/dataio.hpp"

#include "abpm/error.hpp"
#include "abpm/kernels.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace abpm {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_fields(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

double parse_number(const std::string& text, std::size_t line, const std::string& column) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
        throw Error(ErrorKind::parse,
                    "row " + std::to_string(line) + ": column " + column + " value '" + text + "' is not a number");
    }
    return v;
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

int hour_bin(double t) { return std::clamp(static_cast<int>(std::floor(t)), 0, 23); }

struct RawSubject {
    std::string id;
    std::vector<std::pair<double, double>> readings;  // (time, outcome)
    std::map<std::string, std::string> covariates;
};

}  // namespace

Cohort parse_cohort(const std::string& text, OutcomeChannel outcome, const ReadOptions& options) {
    std::string outcome_col;
    if (options.outcome_column) {
        outcome_col = *options.outcome_column;
    } else if (outcome == OutcomeChannel::other) {
        throw Error(ErrorKind::argument, "an outcome column is required for outcome 'other'");
    } else {
        outcome_col = std::string(to_string(outcome));
    }

    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (!trim(line).empty()) {
            header = split_fields(line);
            break;
        }
    }
    if (header.empty()) throw Error(ErrorKind::schema, "missing header row");
    auto column = [&](const std::string& name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw Error(ErrorKind::schema, "missing column " + name);
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t id_col = column(options.subject_column);
    const std::size_t time_col = column(options.time_column);
    const std::size_t y_col = column(outcome_col);
    std::vector<std::size_t> pressure_cols;
    std::vector<std::pair<std::size_t, std::string>> covariate_cols;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (c == id_col || c == time_col) continue;
        const bool pressure = c == y_col || std::find(options.pressure_columns.begin(), options.pressure_columns.end(),
                                                      header[c]) != options.pressure_columns.end();
        if (pressure) {
            pressure_cols.push_back(c);
        } else {
            covariate_cols.emplace_back(c, header[c]);
        }
    }

    std::vector<RawSubject> raw;
    std::map<std::string, std::size_t> index;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != header.size()) {
            throw Error(ErrorKind::parse, "row " + std::to_string(line_no) + ": expected " +
                                              std::to_string(header.size()) + " fields, found " +
                                              std::to_string(fields.size()));
        }
        const std::string& id = fields[id_col];
        if (id.empty()) throw Error(ErrorKind::parse, "row " + std::to_string(line_no) + ": empty subject id");
        const double t = parse_number(fields[time_col], line_no, options.time_column);
        if (!(t >= kDayStart && t <= kDayEnd)) {
            throw Error(ErrorKind::domain, "row " + std::to_string(line_no) + ": time " + fields[time_col] +
                                               " outside [0, 24]");
        }
        double y = 0.0;
        for (std::size_t c : pressure_cols) {
            if (c != y_col && fields[c].empty()) continue;
            const double v = parse_number(fields[c], line_no, header[c]);
            if (!(v > 0.0) || !std::isfinite(v)) {
                throw Error(ErrorKind::parse,
                            "row " + std::to_string(line_no) + ": " + header[c] + " must be positive and finite");
            }
            if (c == y_col) y = v;
        }
        auto [it, inserted] = index.try_emplace(id, raw.size());
        if (inserted) {
            RawSubject s;
            s.id = id;
            for (const auto& [c, name] : covariate_cols) s.covariates[name] = fields[c];
            raw.push_back(std::move(s));
        } else {
            auto& s = raw[it->second];
            for (const auto& [c, name] : covariate_cols) {
                if (s.covariates[name] != fields[c]) {
                    throw Error(ErrorKind::parse, "row " + std::to_string(line_no) + ": covariate " + name +
                                                      " changes within subject " + id);
                }
            }
        }
        raw[it->second].readings.emplace_back(t, y);
    }
    if (raw.empty()) throw Error(ErrorKind::spec, "no data rows");

    std::vector<Subject> subjects;
    subjects.reserve(raw.size());
    for (auto& r : raw) {
        std::stable_sort(r.readings.begin(), r.readings.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        for (std::size_t k = 1; k < r.readings.size(); ++k) {
            if (r.readings[k].first == r.readings[k - 1].first) {
                throw Error(ErrorKind::duplicate,
                            "subject " + r.id + " has two readings at time " + format_double(r.readings[k].first));
            }
        }
        Subject s;
        s.id = r.id;
        std::vector<double> times;
        s.y.resize(static_cast<Eigen::Index>(r.readings.size()));
        for (std::size_t k = 0; k < r.readings.size(); ++k) {
            times.push_back(r.readings[k].first);
            s.y(static_cast<Eigen::Index>(k)) = r.readings[k].second;
        }
        s.times = TimeGrid(std::move(times));
        s.covariates = std::move(r.covariates);
        subjects.push_back(std::move(s));
    }
    return {std::move(subjects), outcome};
}

Cohort read_cohort(const std::filesystem::path& path, OutcomeChannel outcome, const ReadOptions& options) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_cohort(buf.str(), outcome, options);
}

std::string format_cohort_csv(const Cohort& cohort) {
    std::vector<std::string> cov_names;
    for (const auto& s : cohort.subjects()) {
        for (const auto& [k, v] : s.covariates) {
            if (std::find(cov_names.begin(), cov_names.end(), k) == cov_names.end()) cov_names.push_back(k);
        }
    }
    std::sort(cov_names.begin(), cov_names.end());
    const std::string y_name = cohort.outcome() == OutcomeChannel::other ? "value" : std::string(to_string(cohort.outcome()));
    std::string out = "subject_id,time," + y_name;
    for (const auto& c : cov_names) out += "," + c;
    out += "\n";
    for (const auto& s : cohort.subjects()) {
        for (std::size_t k = 0; k < s.times.size(); ++k) {
            out += s.id + "," + format_double(s.times[k]) + "," + format_double(s.y(static_cast<Eigen::Index>(k)));
            for (const auto& c : cov_names) {
                const auto it = s.covariates.find(c);
                out += ",";
                if (it != s.covariates.end()) out += it->second;
            }
            out += "\n";
        }
    }
    return out;
}

void write_cohort_csv(const Cohort& cohort, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    out << format_cohort_csv(cohort);
    if (!out) throw Error(ErrorKind::io, "failed writing " + path.string());
}

Cohort hourly_aggregate(const Cohort& cohort) {
    std::vector<Subject> out;
    out.reserve(cohort.size());
    for (const auto& s : cohort.subjects()) {
        std::array<double, 24> sum{};
        std::array<int, 24> count{};
        for (std::size_t k = 0; k < s.times.size(); ++k) {
            const int h = hour_bin(s.times[k]);
            sum[static_cast<std::size_t>(h)] += s.y(static_cast<Eigen::Index>(k));
            ++count[static_cast<std::size_t>(h)];
        }
        Subject a;
        a.id = s.id;
        a.covariates = s.covariates;
        std::vector<double> times;
        std::vector<double> values;
        for (std::size_t h = 0; h < 24; ++h) {
            if (count[h] == 0) continue;
            times.push_back(static_cast<double>(h) + 0.5);
            values.push_back(sum[h] / count[h]);
        }
        a.times = TimeGrid(std::move(times));
        a.y = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
        out.push_back(std::move(a));
    }
    return {std::move(out), cohort.outcome()};
}

Thresholds Thresholds::uniform(Bounds bounds) {
    Thresholds t;
    t.hours.fill(bounds);
    return t;
}

Thresholds Thresholds::day_night(Bounds day, Bounds night, int day_start, int day_end) {
    if (day_start < 0 || day_start > 24 || day_end < 0 || day_end > 24) {
        throw Error(ErrorKind::config, "day hours must lie in [0, 24]");
    }
    Thresholds t;
    for (int h = 0; h < 24; ++h) {
        const bool is_day = day_start <= day_end ? (h >= day_start && h < day_end) : (h >= day_start || h < day_end);
        t.hours[static_cast<std::size_t>(h)] = is_day ? day : night;
    }
    return t;
}

Cohort filter_normals(const Cohort& cohort, const Thresholds& thresholds) {
    std::vector<Subject> kept;
    for (const auto& s : cohort.subjects()) {
        bool normal = true;
        for (std::size_t k = 0; k < s.times.size(); ++k) {
            const int h = hour_bin(s.times[k]);
            const auto& b = thresholds.hours[static_cast<std::size_t>(h)];
            if (!b) throw Error(ErrorKind::config, "no threshold for hour " + std::to_string(h));
            const double y = s.y(static_cast<Eigen::Index>(k));
            if (y < b->lower || y > b->upper) normal = false;
        }
        if (normal) kept.push_back(s);
    }
    if (kept.empty()) throw Error(ErrorKind::config, "no subject lies within the thresholds");
    return {std::move(kept), cohort.outcome()};
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

DesignContext SimulationConfig::design() const {
    std::vector<CovariateCoding> codings;
    for (const auto& g : spec.group_terms) {
        GroupTerm term = g;
        if (term.levels.empty() && term.type == CovariateType::categorical) {
            const auto it = covariate_levels.find(g.name);
            if (it == covariate_levels.end()) throw Error(ErrorKind::config, "no values for covariate " + g.name);
            std::vector<std::string> lv = it->second;
            std::sort(lv.begin(), lv.end());
            lv.erase(std::unique(lv.begin(), lv.end()), lv.end());
            term.levels = lv;
        }
        codings.push_back(make_coding(term, nullptr));
    }
    return {spec, std::move(codings)};
}

void SimulationConfig::validate() const {
    if (n_subjects == 0) throw Error(ErrorKind::config, "n_subjects must be positive");
    if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw Error(ErrorKind::config, "missing_rate must lie in [0, 1)");
    if (!(time_jitter_sd >= 0.0) || !std::isfinite(time_jitter_sd)) {
        throw Error(ErrorKind::config, "time_jitter_sd must be non-negative");
    }
    if (!(sigma2 >= 0.0) || !std::isfinite(sigma2)) throw Error(ErrorKind::config, "sigma2 must be non-negative");
    for (const auto& g : spec.group_terms) {
        const auto it = covariate_levels.find(g.name);
        if (it == covariate_levels.end() || it->second.empty()) {
            throw Error(ErrorKind::config, "no values for covariate " + g.name);
        }
    }
    DesignContext ctx = [&] {
        try {
            return design();
        } catch (const Error& e) {
            throw Error(ErrorKind::config, e.what());
        }
    }();
    if (beta.size() != ctx.fixed_columns()) {
        throw Error(ErrorKind::config, "beta has " + std::to_string(beta.size()) + " entries, the design has " +
                                           std::to_string(ctx.fixed_columns()) + " fixed columns");
    }
    const int m = ctx.random_columns();
    if (sigma_d.rows() != m || sigma_d.cols() != m) {
        throw Error(ErrorKind::config, "sigma_d must be " + std::to_string(m) + " x " + std::to_string(m));
    }
    if (!beta.allFinite() || !sigma_d.allFinite()) throw Error(ErrorKind::config, "non-finite true parameters");
    if ((sigma_d - sigma_d.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, sigma_d.cwiseAbs().maxCoeff())) {
        throw Error(ErrorKind::config, "sigma_d must be symmetric");
    }
    if (m > 0) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma_d);
        if (eig.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, sigma_d.cwiseAbs().maxCoeff())) {
            throw Error(ErrorKind::config, "sigma_d must be positive semidefinite");
        }
    }
    const double expected = static_cast<double>(times.size()) * (1.0 - missing_rate);
    const int needed = std::max(spec.fixed_basis.degree, spec.random_basis ? spec.random_basis->degree : 0) + 2;
    if (expected < needed) {
        throw Error(ErrorKind::config, "missing_rate leaves fewer than " + std::to_string(needed) +
                                           " expected observations per subject");
    }
}

Cohort simulate_cohort(const SimulationConfig& config) {
    config.validate();
    const DesignContext ctx = config.design();
    const int m = ctx.random_columns();
    Eigen::MatrixXd root = Eigen::MatrixXd::Zero(m, m);
    if (m > 0) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(config.sigma_d);
        root = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    }
    const double sigma = std::sqrt(config.sigma2);
    const auto& grid = config.times.points();
    const std::size_t p = grid.size();
    // Jittered times stay inside the cell around their scheduled time.
    std::vector<double> lo(p);
    std::vector<double> hi(p);
    constexpr double kGap = 1e-9;
    for (std::size_t k = 0; k < p; ++k) {
        lo[k] = k == 0 ? kDayStart : 0.5 * (grid[k - 1] + grid[k]) + kGap;
        hi[k] = k + 1 == p ? kDayEnd : 0.5 * (grid[k] + grid[k + 1]) - kGap;
    }
    const auto seed_lo = static_cast<std::uint32_t>(config.seed & 0xffffffffu);
    const auto seed_hi = static_cast<std::uint32_t>(config.seed >> 32);
    const std::size_t width = std::to_string(config.n_subjects).size();
    const std::size_t pad = std::max<std::size_t>(4, width);

    std::vector<Subject> subjects(config.n_subjects);
    auto compute = [&](std::size_t i) {
        std::seed_seq seq{seed_lo, seed_hi, static_cast<std::uint32_t>(i & 0xffffffffu),
                          static_cast<std::uint32_t>(i >> 32)};
        std::mt19937_64 rng(seq);
        std::normal_distribution<double> normal(0.0, 1.0);
        std::uniform_real_distribution<double> unif(0.0, 1.0);

        Subject s;
        std::string num = std::to_string(i + 1);
        s.id = "S" + std::string(pad - std::min(pad, num.size()), '0') + num;
        for (const auto& [name, values] : config.covariate_levels) s.covariates[name] = values[i % values.size()];

        Eigen::VectorXd z(m);
        for (int j = 0; j < m; ++j) z(j) = normal(rng);
        const Eigen::VectorXd d = root * z;
        std::vector<double> times;
        do {
            times.clear();
            for (std::size_t k = 0; k < p; ++k) {
                double t = grid[k];
                if (config.time_jitter_sd > 0.0) t = std::clamp(t + config.time_jitter_sd * normal(rng), lo[k], hi[k]);
                const bool keep = config.missing_rate == 0.0 || unif(rng) >= config.missing_rate;
                if (keep) times.push_back(t);
            }
        } while (times.empty());
        const DesignPair dp = ctx.design_at(times, s.covariates);
        Eigen::VectorXd e(static_cast<Eigen::Index>(times.size()));
        for (Eigen::Index k = 0; k < e.size(); ++k) e(k) = sigma * normal(rng);
        s.y = dp.X * config.beta + e;
        if (m > 0) s.y += dp.Z * d;
        s.times = TimeGrid(std::move(times));
        return s;
    };
    ordered_reduce(
        config.n_subjects, compute, [&](std::size_t i, Subject& s) { subjects[i] = std::move(s); });
    return {std::move(subjects), config.outcome};
}

}  // namespace abpm
