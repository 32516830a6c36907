#include "abpm/cli.hpp"

#include "abpm/blup.hpp"
#include "abpm/dataio.hpp"
#include "abpm/error.hpp"
#include "abpm/estimation.hpp"
#include "abpm/inference.hpp"
#include "abpm/kernels.hpp"
#include "abpm/model_io.hpp"
#include "abpm/plot.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace abpm {

namespace {

struct Options {
    std::vector<std::string> models;
    std::string data;
    std::string outcome = "sbp";
    std::string out = ".";
    std::string method = "reml";
    double tol = 1e-6;
    int max_iter = 500;
    std::optional<std::uint64_t> seed;
    double band_level = 0.9;
    std::optional<double> band_multiplier;
    std::string thresholds;
    std::optional<int> start_hour;
    bool force_reml_compare = false;
    bool hourly = false;
    std::string fit;
    std::vector<std::string> subjects;
    bool svg = false;
    std::optional<int> threads;
    std::string config;
};

OutcomeChannel outcome_of(const std::string& s) { return s == "dbp" ? OutcomeChannel::dbp : OutcomeChannel::sbp; }

Method method_of(const std::string& s) { return s == "ml" ? Method::ml : Method::reml; }

std::string csv_int(int v) { return v < 0 ? "" : std::to_string(v); }

fs::path prepare_out(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw Error(ErrorKind::io, "cannot create output directory " + dir);
    return fs::path(dir);
}

Cohort load_data(const Options& o, OutcomeChannel outcome) {
    if (o.data.empty()) throw Error(ErrorKind::argument, "--data is required");
    Cohort c = read_cohort(o.data, outcome);
    return o.hourly ? hourly_aggregate(c) : c;
}

FitOptions fit_options(const Options& o) {
    FitOptions f;
    f.method = method_of(o.method);
    f.tol = o.tol;
    f.max_iter = o.max_iter;
    return f;
}

std::string fixed_effects_csv(const FittedModel& fm) {
    std::string s = "parameter,degree,estimate,se,p_value,semi_partial_r2\n";
    for (const auto& r : fixed_effects_table(fm)) {
        s += r.parameter + "," + csv_int(r.degree) + "," + format_number(r.estimate) + "," + format_number(r.se) +
             "," + format_number(r.p_value) + "," + format_number(r.semi_partial_r2) + "\n";
    }
    return s;
}

std::string variance_components_csv(const FittedModel& fm) {
    std::string s = "parameter,estimate,se,z,p_value\n";
    for (const auto& r : variance_components_table(fm)) {
        s += r.parameter + "," + format_number(r.estimate) + "," + format_number(r.se) + "," + format_number(r.z) +
             "," + format_number(r.p_value) + "\n";
    }
    return s;
}

void print_summary(const FittedModel& fm, std::ostream& out) {
    char line[256];
    std::snprintf(line, sizeof line, "%s fit of '%s': %zu subjects, %zu observations\n",
                  fm.method == Method::reml ? "REML" : "ML", fm.spec().name.c_str(), fm.n_subjects,
                  fm.n_observations);
    out << line;
    std::snprintf(line, sizeof line, "log-likelihood %.6f, %s after %d iterations (|grad| %.3g)\n", fm.loglik,
                  fm.converged ? "converged" : "NOT converged", fm.iterations, fm.gradient_norm);
    out << line;
    const auto ic = information_criteria(fm);
    std::snprintf(line, sizeof line, "AIC %.1f  BIC %.1f  (r = %d)\n\n", ic.aic, ic.bic, ic.parameters);
    out << line;
    std::snprintf(line, sizeof line, "%-22s %6s %12s %10s %10s %8s\n", "parameter", "degree", "estimate", "SE",
                  "p", "R2");
    out << line;
    for (const auto& r : fixed_effects_table(fm)) {
        std::snprintf(line, sizeof line, "%-22s %6s %12.4f %10.4f %10.4g %8.4f\n", r.parameter.c_str(),
                      csv_int(r.degree).c_str(), r.estimate, r.se, r.p_value, r.semi_partial_r2);
        out << line;
    }
    out << "\n";
    std::snprintf(line, sizeof line, "%-22s %12s %10s\n", "variance", "estimate", "SE");
    out << line;
    for (const auto& r : variance_components_table(fm)) {
        std::snprintf(line, sizeof line, "%-22s %12.4f %10.4f\n", r.parameter.c_str(), r.estimate, r.se);
        out << line;
    }
}

int run_fit(const Options& o, std::ostream& out) {
    if (o.models.size() != 1) throw Error(ErrorKind::argument, "fit takes exactly one --model");
    const ModelSpec spec = load_model_spec(o.models.front());
    const Cohort cohort = load_data(o, outcome_of(o.outcome));
    const fs::path dir = prepare_out(o.out);
    const FittedModel fm = fit(spec, cohort, fit_options(o));
    write_text_file(dir / "fit.json", dump_fitted_model(fm));
    write_text_file(dir / "fixed_effects.csv", fixed_effects_csv(fm));
    write_text_file(dir / "variance_components.csv", variance_components_csv(fm));
    print_summary(fm, out);
    return fm.converged ? kExitOk : kExitNotConverged;
}

struct CompareRow {
    std::string name;
    bool fitted = false;
    bool converged = false;
    double loglik = 0.0;
    InformationCriteria ic;
    double model_r2 = std::numeric_limits<double>::quiet_NaN();
    std::string error;
};

int run_compare(const Options& o, std::ostream& out) {
    if (o.models.size() < 2) throw Error(ErrorKind::argument, "need ≥ 2 models");
    std::vector<ModelSpec> specs;
    for (const auto& m : o.models) specs.push_back(load_model_spec(m));
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (specs[i].name.empty()) specs[i].name = fs::path(o.models[i]).stem().string();
    }
    const Method method = method_of(o.method);
    if (method == Method::reml && !o.force_reml_compare) {
        for (std::size_t i = 1; i < specs.size(); ++i) {
            if (!specs[0].same_fixed_structure(specs[i])) {
                throw Error(ErrorKind::state, "REML likelihoods of '" + specs[0].name + "' and '" + specs[i].name +
                                                  "' have different fixed effects and are not comparable; use "
                                                  "--method ml or pass --force-reml-compare");
            }
        }
    }
    const Cohort cohort = load_data(o, outcome_of(o.outcome));
    const fs::path dir = prepare_out(o.out);

    std::vector<CompareRow> rows;
    for (const auto& spec : specs) {
        CompareRow row;
        row.name = spec.name;
        try {
            const FittedModel fm = fit(spec, cohort, fit_options(o));
            row.fitted = true;
            row.converged = fm.converged;
            row.loglik = fm.loglik;
            row.ic = information_criteria(fm);
            if (fm.converged && fm.inference.available && fm.beta_hat.size() > 1) {
                const auto t = f_test(fm, model_contrast(fm));
                row.model_r2 = r2_from_f(t.F, t.ndf, t.ddf);
            }
        } catch (const Error& e) {
            row.error = std::string(to_string(e.kind())) + ": " + e.what();
        }
        rows.push_back(std::move(row));
    }
    std::stable_sort(rows.begin(), rows.end(), [](const CompareRow& a, const CompareRow& b) {
        if (a.fitted != b.fitted) return a.fitted;
        if (!a.fitted) return false;
        if (a.ic.aic != b.ic.aic) return a.ic.aic < b.ic.aic;
        return a.ic.parameters < b.ic.parameters;
    });

    std::string csv = "model,method,converged,loglik,parameters,aic,bic,model_r2,error\n";
    char line[256];
    std::snprintf(line, sizeof line, "%-24s %5s %14s %4s %12s %12s %8s\n", "model", "conv", "loglik", "r", "AIC",
                  "BIC", "R2");
    out << line;
    for (const auto& r : rows) {
        csv += r.name + "," + std::string(to_string(method)) + "," + (r.converged ? "true" : "false") + ",";
        if (r.fitted) {
            csv += format_number(r.loglik) + "," + std::to_string(r.ic.parameters) + "," + format_number(r.ic.aic) +
                   "," + format_number(r.ic.bic) + "," + format_number(r.model_r2) + ",";
            std::snprintf(line, sizeof line, "%-24s %5s %14.2f %4d %12.1f %12.1f %8.4f\n", r.name.c_str(),
                          r.converged ? "yes" : "no", r.loglik, r.ic.parameters, r.ic.aic, r.ic.bic, r.model_r2);
        } else {
            csv += ",,,,,";
            std::snprintf(line, sizeof line, "%-24s failed: %s\n", r.name.c_str(), r.error.c_str());
        }
        std::string err = r.error;
        std::replace(err.begin(), err.end(), ',', ';');
        csv += err + "\n";
        out << line;
    }
    write_text_file(dir / "comparison.csv", csv);
    const bool any_converged = std::any_of(rows.begin(), rows.end(), [](const auto& r) { return r.converged; });
    const bool any_fitted = std::any_of(rows.begin(), rows.end(), [](const auto& r) { return r.fitted; });
    if (any_converged) return kExitOk;
    return any_fitted ? kExitNotConverged : kExitUsage;
}

TimeGrid plot_grid() { return TimeGrid::equispaced(0.0, 24.0, 97); }

std::vector<PlotSeries> curves(const FittedModel& fm, const Cohort* cohort, const std::vector<std::string>& ids,
                               const Options& o) {
    const TimeGrid grid = plot_grid();
    std::vector<PlotSeries> series;
    for (const auto& id : ids) {
        const Subject* s = cohort ? cohort->find(id) : nullptr;
        if (!s) throw Error(ErrorKind::argument, "unknown subject " + id);
        series.push_back(to_series(subject_profile(fm, *s, grid)));
    }
    series.push_back(to_series(population_curve(fm, grid)));
    series.push_back(to_series(prediction_band(fm, grid, o.band_level, o.band_multiplier)));
    return series;
}

void write_plot(const fs::path& dir, const std::string& stem, const std::vector<PlotSeries>& series,
                const Options& o, const std::string& title) {
    write_text_file(dir / (stem + ".csv"), format_plot_csv(series));
    if (o.svg) {
        const std::optional<double> start =
            o.start_hour ? std::optional<double>(static_cast<double>(*o.start_hour)) : std::nullopt;
        write_text_file(dir / (stem + ".svg"), render_svg(series, start, title));
    }
}

int run_profiles(const Options& o, std::ostream& out) {
    if (o.fit.empty()) throw Error(ErrorKind::argument, "--fit is required");
    const FittedModel fm = load_fitted_model(o.fit);
    std::optional<Cohort> cohort;
    if (!o.subjects.empty()) cohort = load_data(o, outcome_of(o.outcome));
    const fs::path dir = prepare_out(o.out);
    const auto series = curves(fm, cohort ? &*cohort : nullptr, o.subjects, o);
    write_plot(dir, "profiles", series, o, "Subject profiles and prediction band");
    out << "wrote " << series.size() << " series to " << (dir / "profiles.csv").string() << "\n";
    return kExitOk;
}

int run_band(const Options& o, std::ostream& out) {
    if (o.models.size() != 1) throw Error(ErrorKind::argument, "band takes exactly one --model");
    if (o.thresholds.empty()) throw Error(ErrorKind::argument, "--thresholds is required");
    const ModelSpec spec = load_model_spec(o.models.front());
    const Thresholds thresholds = load_thresholds(o.thresholds);
    const Cohort cohort = load_data(o, outcome_of(o.outcome));
    const Cohort normals = filter_normals(cohort, thresholds);
    const fs::path dir = prepare_out(o.out);
    const FittedModel fm = fit(spec, normals, fit_options(o));
    write_text_file(dir / "band_fit.json", dump_fitted_model(fm));
    const auto series = curves(fm, &cohort, o.subjects, o);
    write_plot(dir, "band", series, o, "Prediction band from normal subjects");
    out << normals.size() << " of " << cohort.size() << " subjects within thresholds; band written to "
        << (dir / "band.csv").string() << "\n";
    return fm.converged ? kExitOk : kExitNotConverged;
}

int run_simulate(const Options& o, std::ostream& out) {
    if (o.config.empty()) throw Error(ErrorKind::argument, "--config is required");
    SimulationConfig cfg = load_simulation_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    const Cohort cohort = simulate_cohort(cfg);
    const fs::path dir = prepare_out(o.out);
    write_cohort_csv(cohort, dir / "simulated.csv");
    out << "simulated " << cohort.size() << " subjects, " << cohort.observation_count() << " observations\n";
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Mixed-model analysis of 24-hour ambulatory blood pressure"};
    app.require_subcommand(1);
    Options o;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--data", o.data, "Readings CSV (subject_id,time,sbp,dbp[,covariates])")->check(CLI::ExistingFile);
        sub->add_option("--outcome", o.outcome, "Outcome column")->check(CLI::IsMember({"sbp", "dbp"}));
        sub->add_option("--out", o.out, "Output directory");
        sub->add_flag("--hourly", o.hourly, "Aggregate readings to hourly means first");
        sub->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
    };
    auto add_fitting = [&](CLI::App* sub) {
        sub->add_option("--method", o.method, "reml or ml")->check(CLI::IsMember({"reml", "ml"}));
        sub->add_option("--tol", o.tol, "Gradient tolerance")->check(CLI::PositiveNumber);
        sub->add_option("--max-iter", o.max_iter, "Iteration cap")->check(CLI::PositiveNumber);
    };
    auto add_band = [&](CLI::App* sub) {
        sub->add_option("--band-level", o.band_level, "Prediction band coverage")->check(CLI::Range(0.0, 1.0));
        sub->add_option("--band-multiplier", o.band_multiplier, "Fixed half-width multiplier (e.g. 2)")
            ->check(CLI::PositiveNumber);
        sub->add_option("--subjects", o.subjects, "Subject ids to profile")->delimiter(',');
        sub->add_option("--start-hour", o.start_hour, "Clock hour at recording start, for plot labels")
            ->check(CLI::Range(0, 23));
        sub->add_flag("--svg", o.svg, "Also write an SVG plot");
    };

    auto* fit_cmd = app.add_subcommand("fit", "Fit one model");
    fit_cmd->add_option("--model", o.models, "Model JSON")->required()->check(CLI::ExistingFile);
    add_common(fit_cmd);
    add_fitting(fit_cmd);
    fit_cmd->get_option("--data")->required();

    auto* compare_cmd = app.add_subcommand("compare", "Fit several models and rank them by AIC");
    compare_cmd->add_option("--model", o.models, "Model JSON (repeat)")->check(CLI::ExistingFile);
    add_common(compare_cmd);
    add_fitting(compare_cmd);
    compare_cmd->add_flag("--force-reml-compare", o.force_reml_compare,
                          "Compare REML criteria across different fixed effects");
    compare_cmd->get_option("--data")->required();

    auto* profiles_cmd = app.add_subcommand("profiles", "Subject profiles, population curve and band from a fit");
    profiles_cmd->add_option("--fit", o.fit, "fit.json")->required()->check(CLI::ExistingFile);
    add_common(profiles_cmd);
    add_band(profiles_cmd);

    auto* band_cmd = app.add_subcommand("band", "Fit the normal subjects and emit the prediction band");
    band_cmd->add_option("--model", o.models, "Model JSON")->required()->check(CLI::ExistingFile);
    band_cmd->add_option("--thresholds", o.thresholds, "Per-hour normal bounds JSON")->required()->check(
        CLI::ExistingFile);
    add_common(band_cmd);
    add_fitting(band_cmd);
    add_band(band_cmd);
    band_cmd->get_option("--data")->required();

    auto* sim_cmd = app.add_subcommand("simulate", "Simulate a cohort");
    sim_cmd->add_option("--config", o.config, "Simulation config JSON")->required()->check(CLI::ExistingFile);
    sim_cmd->add_option("--seed", o.seed, "Override the config seed");
    sim_cmd->add_option("--out", o.out, "Output directory");
    sim_cmd->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: usage: " << e.what() << "\n" << app.help();
        return kExitUsage;
    }

    // "--subjects ''" is an empty request, not a subject with an empty id
    std::erase(o.subjects, std::string());

    try {
        if (o.threads) set_threads(*o.threads);
        if (fit_cmd->parsed()) return run_fit(o, out);
        if (compare_cmd->parsed()) return run_compare(o, out);
        if (profiles_cmd->parsed()) return run_profiles(o, out);
        if (band_cmd->parsed()) return run_band(o, out);
        if (sim_cmd->parsed()) return run_simulate(o, out);
    } catch (const Error& e) {
        err << "error: " << to_string(e.kind()) << ": " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: internal: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}

}  // namespace abpm
