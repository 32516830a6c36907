// Serial dense reference vs parallel Woodbury kernel on a synthetic cohort.
#include "abpm/basis.hpp"
#include "abpm/kernels.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <random>

namespace {

double max_abs_diff(const abpm::TermTotals& a, const abpm::TermTotals& b) {
    double d = std::abs(a.log_det - b.log_det);
    d = std::max(d, (a.xt_vinv_x - b.xt_vinv_x).cwiseAbs().maxCoeff());
    d = std::max(d, (a.xt_vinv_y - b.xt_vinv_y).cwiseAbs().maxCoeff());
    return std::max(d, std::abs(a.yt_vinv_y - b.yt_vinv_y));
}

template <class F>
double seconds(F&& f, int reps) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) f();
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    return dt.count() / reps;
}

}  // namespace

int main(int argc, char** argv) {
    const std::size_t n = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 2000;
    const int degree = argc > 2 ? std::atoi(argv[2]) : 9;
    const int reps = argc > 3 ? std::atoi(argv[3]) : 5;

    const auto basis = abpm::orthonormal_polynomial_basis(abpm::TimeGrid::hourly_midpoints(), degree).basis.values;
    std::mt19937_64 rng(42);
    std::normal_distribution<double> normal;
    std::vector<abpm::SubjectBlock> blocks(n);
    for (std::size_t i = 0; i < n; ++i) {
        blocks[i].id = std::to_string(i);
        blocks[i].X = basis;
        blocks[i].Z = basis;
        blocks[i].y.resize(basis.rows());
        for (Eigen::Index k = 0; k < basis.rows(); ++k) blocks[i].y(k) = 120.0 + 10.0 * normal(rng);
    }
    const int m = static_cast<int>(basis.cols());
    Eigen::MatrixXd sigma_d = Eigen::MatrixXd::Zero(m, m);
    for (int j = 0; j < m; ++j) sigma_d(j, j) = 100.0 / (1.0 + j);
    const Eigen::MatrixXd factor = sigma_d.cwiseSqrt();
    const double sigma2 = 40.0;

    abpm::TermTotals ref;
    const double t_ref = seconds([&] { ref = abpm::reduce_terms(abpm::reference::evaluate_terms(blocks, sigma_d, sigma2)); }, reps);
    std::printf("subjects %zu, p %ld, m %d\n", n, static_cast<long>(basis.rows()), m);
    std::printf("%-28s %10.4f s\n", "serial dense reference", t_ref);
    const int max_threads = abpm::max_threads();
    for (int threads = 1; threads <= std::max(4, max_threads); threads *= 2) {
        abpm::set_threads(threads);
        abpm::TermTotals par;
        const double t = seconds([&] { par = abpm::reduce_terms(abpm::evaluate_terms(blocks, factor, sigma2)); }, reps);
        char label[64];
        std::snprintf(label, sizeof label, "woodbury, %d thread%s", threads, threads == 1 ? "" : "s");
        std::printf("%-28s %10.4f s  speedup %5.2fx  max |diff| %.3g\n", label, t, t_ref / t, max_abs_diff(ref, par));
    }
    return 0;
}
