// Acceptance runner: one line per criterion, non-zero exit if any fails.

#include "abpm/basis.hpp"
#include "abpm/blup.hpp"
#include "abpm/cli.hpp"
#include "abpm/dataio.hpp"
#include "abpm/estimation.hpp"
#include "abpm/inference.hpp"
#include "abpm/kernels.hpp"
#include "abpm/model_io.hpp"
#include "helpers.hpp"
#include "instances.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace abpm;
using namespace testing_helpers;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome orthonormality() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0;
    for (std::size_t p : {12u, 24u, 49u}) {
        const auto grid = TimeGrid::equispaced(0.0, 24.0, p);
        for (int deg = 0; deg <= 9; ++deg) {
            const auto b = orthonormal_polynomial_basis(grid, deg).basis.values;
            const Eigen::MatrixXd g = b.transpose() * b - Eigen::MatrixXd::Identity(deg + 1, deg + 1);
            worst = std::max(worst, g.cwiseAbs().maxCoeff());
        }
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-10 && secs < 1.0, fmt("max|B'B-I| = %.3g, %.3f s", worst, secs)};
}

Outcome approximate_basis() {
    const auto grid = TimeGrid::half_hourly();
    const auto ob = orthonormal_polynomial_basis(grid, 9);
    const auto again = evaluate_polynomial_basis(ob.coefficients, grid);
    const double full = (again.values - ob.basis.values).cwiseAbs().maxCoeff();

    std::mt19937_64 rng(2);
    std::vector<double> pts = grid.points();
    std::shuffle(pts.begin(), pts.end(), rng);
    pts.resize(static_cast<std::size_t>(std::lround(0.8 * static_cast<double>(grid.size()))));
    std::sort(pts.begin(), pts.end());
    const auto sub = evaluate_polynomial_basis(ob.coefficients, TimeGrid(pts));
    const double dev = orthonormality_deviation(sub.values);
    const bool ok = full <= 1e-12 && std::isfinite(dev) && sub.kind == BasisKind::approx_orthonormal_poly;
    return {ok, fmt("full-grid diff %.3g, 80%% subgrid (%g points) deviation %.4g", full,
                    static_cast<double>(pts.size()), dev)};
}

Outcome spline_restriction() {
    const auto knots = clock_to_elapsed(default_clock_knots(), 12.0);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    double worst_tail = 0, worst_jump = 0;
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> coef(knots.size() - 1);
        for (auto& c : coef) c = 10 * nd(rng);
        auto f = [&](double t) {
            const auto row = restricted_cubic_spline_basis(TimeGrid({t}), knots).values;
            double v = 0;
            for (Eigen::Index j = 0; j < row.cols(); ++j) v += coef[static_cast<std::size_t>(j)] * row(0, j);
            return v;
        };
        const double h = 1e-2;
        auto f2 = [&](double t) { return (f(t + h) - 2 * f(t) + f(t - h)) / (h * h); };
        double scale = 0;
        for (double t = knots.front() + h; t <= knots.back() - h; t += 0.05) scale = std::max(scale, std::abs(f2(t)));
        for (double t = h; t <= knots.front() - h; t += 0.05) worst_tail = std::max(worst_tail, std::abs(f2(t)) / scale);
        for (double t = knots.back() + h; t <= 24.0 - h; t += 0.05)
            worst_tail = std::max(worst_tail, std::abs(f2(t)) / scale);
        for (std::size_t j = 1; j + 1 < knots.size(); ++j) {
            const double k = knots[j];
            // f'' is linear between knots: extrapolate each side to the knot
            const double l = 2 * f2(k - 0.1) - f2(k - 0.2);
            const double r = 2 * f2(k + 0.1) - f2(k + 0.2);
            worst_jump = std::max(worst_jump, std::abs(l - r) / scale);
        }
    }
    return {worst_tail <= 1e-6 && worst_jump <= 1e-6,
            fmt("max tail |f''|/scale %.3g, max knot jump/scale %.3g", worst_tail, worst_jump)};
}

Outcome likelihood_oracle() {
    std::mt19937_64 rng(4);
    double worst = 0;
    for (int rep = 0; rep < 50; ++rep) {
        const auto inst = random_instance(rng, 3, 5);
        const DesignContext ctx(inst.spec, inst.cohort);
        const CovarianceModel cm(inst.spec.random_cov, ctx.random_columns());
        const Eigen::VectorXd theta = inst.params.packed();
        const double ours = marginal_loglikelihood(inst.params, inst.cohort, inst.spec, Method::reml);
        const double dense =
            oracle::dense_loglik(oracle_blocks(ctx, inst.cohort), cm.sigma_d(theta), cm.sigma2(theta), true);
        worst = std::max(worst, std::abs(ours - dense));
    }
    return {worst <= 1e-8, fmt("50 instances, max |diff| %.3g", worst)};
}

Outcome gradient_check() {
    std::mt19937_64 rng(5);
    double worst = 0;
    for (int rep = 0; rep < 20; ++rep) {
        const auto inst = random_instance(rng, 8, 12);
        const auto ev = LikelihoodEvaluator::from_cohort(DesignContext(inst.spec, inst.cohort), inst.cohort, Method::reml);
        const Eigen::VectorXd theta = inst.params.packed();
        const Eigen::VectorXd g = ev.gradient(theta);
        const Eigen::VectorXd fd =
            oracle::central_gradient([&](const Eigen::VectorXd& t) { return ev.loglik(t); }, theta, 1e-5);
        worst = std::max(worst, (g - fd).cwiseAbs().maxCoeff() / std::max(1.0, g.cwiseAbs().maxCoeff()));
    }
    return {worst <= 1e-5, fmt("20 instances, max relative error %.3g", worst)};
}

Outcome recovery() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto spec = orthonormal_spec(3, 3);
    const Eigen::Vector4d beta(612, -40, -22, 15);
    const Eigen::Vector4d d(1500, 300, 200, 120);
    const double s2 = 40;
    const int reps = 20;
    Eigen::MatrixXd betas(reps, 4), ds(reps, 4);
    Eigen::VectorXd s2s(reps);
    int converged = 0;
    FitOptions opt;
    opt.compute_inference = false;
    for (int r = 0; r < reps; ++r) {
        const auto cohort = simulate_cohort(simulation(spec, beta, d, s2, 100, 6000 + static_cast<std::uint64_t>(r)));
        const auto f = fit(spec, cohort, opt);
        converged += f.converged ? 1 : 0;
        betas.row(r) = f.beta_hat.transpose();
        ds.row(r) = f.sigma_d_hat.diagonal().transpose();
        s2s(r) = f.sigma2_hat;
    }
    bool ok = converged == reps;
    double worst_d = 0, worst_beta_se = 0;
    for (int j = 0; j < 4; ++j) {
        worst_d = std::max(worst_d, std::abs(ds.col(j).mean() - d(j)) / d(j));
        const Eigen::VectorXd c = betas.col(j).array() - betas.col(j).mean();
        const double se = std::sqrt(c.squaredNorm() / (reps - 1) / reps);
        worst_beta_se = std::max(worst_beta_se, std::abs(betas.col(j).mean() - beta(j)) / se);
    }
    const double rel_s2 = std::abs(s2s.mean() - s2) / s2;
    const double secs = seconds_since(t0);
    ok = ok && worst_d <= 0.10 && rel_s2 <= 0.05 && worst_beta_se <= 2.0 && secs < 60.0;
    return {ok, fmt("variance components max rel err %.3f, sigma2 rel err %.4f, beta max |err|/MC-SE %.2f, %.1f s",
                    worst_d, rel_s2, worst_beta_se, secs) +
                    (converged == reps ? "" : ", " + std::to_string(reps - converged) + " fits not converged")};
}

Outcome blup_oracle() {
    std::mt19937_64 rng(7);
    double worst = 0;
    int checked = 0;
    for (int rep = 0; rep < 50; ++rep) {
        const auto inst = random_instance(rng, 4, 8);
        const DesignContext ctx(inst.spec, inst.cohort);
        const auto fitted = fitted_at(ctx, inst.cohort, inst.params);
        for (const auto& s : inst.cohort.subjects()) {
            const auto dp = ctx.design(s);
            const Eigen::VectorXd expected =
                oracle::conditional_mean(fitted.sigma_d_hat, dp.Z, fitted.sigma2_hat, s.y, dp.X * fitted.beta_hat);
            const Eigen::VectorXd got = random_effects_blup(fitted, s);
            worst = std::max(worst, (got - expected).cwiseAbs().maxCoeff() / std::max(1.0, expected.cwiseAbs().maxCoeff()));
            ++checked;
        }
    }
    return {worst <= 1e-8, fmt("50 instances (%g subjects), max error %.3g", checked, worst)};
}

Outcome satterthwaite() {
    const auto spec = orthonormal_spec(0, 0);
    double worst = 0;
    std::string detail;
    bool all_converged = true;
    for (std::size_t n : {5u, 20u, 50u}) {
        const auto cohort = simulate_cohort(simulation(spec, Eigen::VectorXd::Constant(1, 600.0),
                                                       Eigen::VectorXd::Constant(1, 900.0), 50.0, n, 80 + n));
        const auto fitted = fit(spec, cohort);
        all_converged = all_converged && fitted.converged;
        Contrast c{Eigen::MatrixXd::Ones(1, 1), "intercept"};
        const auto t = f_test(fitted, c);
        worst = std::max(worst, std::abs(t.ddf - static_cast<double>(n - 1)));
        detail += fmt("N=%g ddf %.8f; ", static_cast<double>(n), t.ddf);
    }
    return {all_converged && worst <= 1e-6, detail + fmt("max |ddf-(N-1)| %.3g", worst)};
}

Outcome band_coverage() {
    const auto spec = orthonormal_spec(3, 3);
    const auto cohort = simulate_cohort(simulation(spec, Eigen::Vector4d(612, -40, -22, 15),
                                                   Eigen::Vector4d(1500, 300, 200, 120), 40, 200, 9000));
    const auto fitted = fit(spec, cohort);
    if (!fitted.converged) return {false, "fit did not converge"};
    const auto grid = TimeGrid::hourly_midpoints();
    const auto band = prediction_band(fitted, grid, 0.90);
    const auto dp = fitted.design.design_at(grid.points(), fitted.design.reference_covariates());

    // New subjects from the fitted model; the fixed effects carry their
    // sampling uncertainty, as the band does.
    const Eigen::MatrixXd lb = Eigen::LLT<Eigen::MatrixXd>(fitted.cov_beta).matrixL();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(fitted.sigma_d_hat);
    const Eigen::MatrixXd ld = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    const double sigma = std::sqrt(fitted.sigma2_hat);
    std::mt19937_64 rng(99);
    std::normal_distribution<double> nd;
    const int draws = 10000;
    const auto p = static_cast<Eigen::Index>(grid.size());
    Eigen::VectorXi inside = Eigen::VectorXi::Zero(p);
    for (int i = 0; i < draws; ++i) {
        Eigen::VectorXd gb(lb.rows()), gd(ld.cols());
        for (auto& v : gb) v = nd(rng);
        for (auto& v : gd) v = nd(rng);
        const Eigen::VectorXd mean = dp.X * (fitted.beta_hat + lb * gb) + dp.Z * (ld * gd);
        for (Eigen::Index k = 0; k < p; ++k) {
            const double y = mean(k) + sigma * nd(rng);
            if (y >= band.lower(k) && y <= band.upper(k)) ++inside(k);
        }
    }
    const Eigen::ArrayXd cover = inside.cast<double>().array() / draws;
    const bool ok = (cover - 0.90).abs().maxCoeff() <= 0.02;
    return {ok, fmt("pointwise coverage over 24 times in [%.4f, %.4f], mean %.4f", cover.minCoeff(), cover.maxCoeff(),
                    cover.mean())};
}

Outcome selection_pattern() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto truth = degree9_truth();
    const auto truth_spec = orthonormal_spec(9, 9);
    const auto rcs = spline_spec(TimeGrid::hourly_midpoints());
    FitOptions opt;
    opt.compute_inference = false;
    const int reps = 20;
    int poly_beats_rcs = 0, high_beats_4 = 0, not_converged = 0;
    for (int r = 0; r < reps; ++r) {
        const auto cohort = simulate_cohort(simulation(truth_spec, truth.beta, truth.sigma_d_diag, truth.sigma2, 357,
                                                       10000 + static_cast<std::uint64_t>(r)));
        const auto f9 = fit(truth_spec, cohort, opt);
        const auto fr = fit(rcs, cohort, opt);
        const auto f6 = fit(orthonormal_spec(6, 6), cohort, opt);
        const auto f4 = fit(orthonormal_spec(4, 4), cohort, opt);
        for (const auto* f : {&f9, &fr, &f6, &f4}) not_converged += f->converged ? 0 : 1;
        const double a9 = information_criteria(f9).aic, ar = information_criteria(fr).aic;
        const double a6 = information_criteria(f6).aic, a4 = information_criteria(f4).aic;
        if (a9 < ar) ++poly_beats_rcs;
        if (std::min(a6, a9) < a4) ++high_beats_4;
    }
    const double secs = seconds_since(t0);
    const bool ok = poly_beats_rcs >= 18 && high_beats_4 >= 19 && secs < 900.0;
    return {ok, fmt("degree 9 beats spline in %g/20, degree >= 6 beats degree 4 in %g/20, %g fits not converged, "
                    "%.1f s",
                    poly_beats_rcs, high_beats_4, not_converged, secs)};
}

Outcome counts() {
    auto d9 = orthonormal_spec(9, 9);
    auto u9 = orthonormal_spec(9, 9, RandomCovariance::unstructured);
    const auto a = parameter_count(d9), b = parameter_count(u9), c = parameter_count(spline_spec());
    const bool ok = a.fixed == 10 && a.covariance == 11 && b.covariance == 56 && c.fixed == 9 && c.covariance == 11;
    return {ok, "degree 9 diagonal (" + std::to_string(a.fixed) + ", " + std::to_string(a.covariance) +
                    "), degree 9 unstructured covariance " + std::to_string(b.covariance) + ", spline (" +
                    std::to_string(c.fixed) + ", " + std::to_string(c.covariance) + ")"};
}

int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "abpm");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    if (code != kExitOk) std::cerr << err.str();
    return code;
}

Outcome determinism() {
    const fs::path data = ABPM_DATA_DIR;
    const auto root = temp_dir("acceptance");
    std::vector<std::string> outputs;
    bool ok = true;
    int run = 0;
    for (const char* threads : {"1", "4", "1", "4"}) {
        const auto dir = root / std::to_string(run++);
        const auto csv = (dir / "simulated.csv").string();
        ok = ok && cli({"simulate", "--config", (data / "simulate_sample.json").string(), "--threads", threads, "--out",
                        dir.string()}) == kExitOk;
        ok = ok && cli({"fit", "--model", (data / "models" / "poly9.json").string(), "--data", csv, "--threads", threads,
                        "--out", dir.string()}) == kExitOk;
        ok = ok && cli({"profiles", "--fit", (dir / "fit.json").string(), "--data", csv, "--subjects", "S0001,S0002",
                        "--svg", "--threads", threads, "--out", dir.string()}) == kExitOk;
        std::string all;
        for (const char* f : {"simulated.csv", "fit.json", "fixed_effects.csv", "variance_components.csv",
                              "profiles.csv", "profiles.svg"}) {
            all += read_text_file(dir / f);
        }
        outputs.push_back(std::move(all));
    }
    bool same = true;
    for (const auto& o : outputs) same = same && o == outputs.front();

    // library level: one fit at 1 and 4 threads
    const auto spec = orthonormal_spec(6, 6, RandomCovariance::unstructured);
    const auto cohort = simulate_cohort(simulation(orthonormal_spec(6, 6),
                                                   (Eigen::VectorXd(7) << 612, -40, -22, 15, 12, 6, -5).finished(),
                                                   (Eigen::VectorXd(7) << 1800, 220, 160, 90, 80, 50, 30).finished(),
                                                   60, 80, 12, 0.1, 0.1));
    const int saved = max_threads();
    set_threads(1);
    const auto a = dump_fitted_model(fit(spec, cohort));
    set_threads(4);
    const auto b = dump_fitted_model(fit(spec, cohort));
    set_threads(saved);
    fs::remove_all(root);
    const bool lib_same = a == b;
    return {ok && same && lib_same,
            std::string("CLI runs ") + (ok ? "succeeded" : "failed") + ", outputs " +
                (same ? "byte-identical" : "differ") + " over 4 runs (1/4/1/4 threads), library fit " +
                (lib_same ? "identical" : "differs")};
}

}  // namespace

int main() {
    const std::vector<std::function<Outcome()>> criteria{
        orthonormality, approximate_basis, spline_restriction, likelihood_oracle, gradient_check, recovery,
        blup_oracle,    satterthwaite,     band_coverage,      selection_pattern,     counts,         determinism};
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i]();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::cout << "criterion " << i + 1 << " [" << (o.pass ? "PASS" : "FAIL") << "] " << o.detail << std::endl;
    }
    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
    return failed == 0 ? 0 : 1;
}
