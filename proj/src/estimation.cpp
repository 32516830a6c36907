#include "abpm/estimation.hpp"

#include "abpm/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

namespace abpm {

std::string_view to_string(Method method) { return method == Method::reml ? "reml" : "ml"; }

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

// Per-subject pieces of the gradient and information, computed once the GLS
// solution is known.
struct Contribution {
    double quad = 0.0;
    double tr_vinv = 0.0;
    double vr_sq = 0.0;
    Eigen::MatrixXd gamma;  // m x m
    Eigen::MatrixXd vxvx;   // q x q
    std::vector<Eigen::MatrixXd> b;
    Eigen::MatrixXd info;  // T1 - 2 T2 over all parameters
};

double trace_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return a.transpose().cwiseProduct(b).sum();
}

}  // namespace

LikelihoodEvaluator::LikelihoodEvaluator(std::vector<SubjectBlock> blocks, CovarianceModel covariance, Method method)
    : blocks_(std::move(blocks)), covariance_(covariance), method_(method) {
    if (blocks_.empty()) throw Error(ErrorKind::spec, "cohort has no subjects");
    q_ = static_cast<int>(blocks_.front().X.cols());
    for (const auto& b : blocks_) {
        if (b.X.cols() != q_ || b.Z.cols() != covariance_.random_dim() || b.X.rows() != b.y.size() ||
            b.Z.rows() != b.y.size()) {
            throw Error(ErrorKind::argument, "inconsistent design for subject " + b.id);
        }
        n_ += static_cast<std::size_t>(b.y.size());
    }
    Eigen::MatrixXd pooled(static_cast<Eigen::Index>(n_), q_);
    Eigen::Index row = 0;
    for (const auto& b : blocks_) {
        pooled.middleRows(row, b.X.rows()) = b.X;
        row += b.X.rows();
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(pooled);
    qr.setThreshold(1e-10);
    if (qr.rank() < q_) {
        throw Error(ErrorKind::rank, "pooled fixed-effect design has rank " + std::to_string(qr.rank()) + " < " +
                                         std::to_string(q_) + " columns");
    }
    if (method_ == Method::reml && static_cast<int>(n_) <= q_) {
        throw Error(ErrorKind::rank, "REML needs more observations than fixed effects");
    }
}

LikelihoodEvaluator LikelihoodEvaluator::from_cohort(const DesignContext& design, const Cohort& cohort,
                                                     Method method) {
    std::vector<SubjectBlock> blocks;
    blocks.reserve(cohort.size());
    for (const auto& s : cohort.subjects()) {
        auto d = design.design(s);
        blocks.push_back({s.id, std::move(d.X), std::move(d.Z), s.y});
    }
    std::stable_sort(blocks.begin(), blocks.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    return {std::move(blocks), CovarianceModel(design.spec().random_cov, design.random_columns()), method};
}

LikelihoodEvaluator::Result LikelihoodEvaluator::evaluate(const Eigen::VectorXd& theta, Need need) const {
    if (theta.size() != covariance_.size()) throw Error(ErrorKind::argument, "covariance parameter length mismatch");
    const Eigen::MatrixXd factor = covariance_.factor(theta);
    const double sigma2 = covariance_.sigma2(theta);
    const bool reml = method_ == Method::reml;

    const auto terms = evaluate_terms(blocks_, factor, sigma2);
    const TermTotals totals = reduce_terms(terms);

    Eigen::LLT<Eigen::MatrixXd> a_llt(totals.xt_vinv_x);
    if (a_llt.info() != Eigen::Success) {
        throw Error(ErrorKind::conditioning, "GLS normal matrix is not positive definite");
    }
    Result out;
    out.cov_beta = a_llt.solve(Eigen::MatrixXd::Identity(q_, q_));
    out.cov_beta = 0.5 * (out.cov_beta + out.cov_beta.transpose()).eval();
    out.beta = a_llt.solve(totals.xt_vinv_y);
    const Eigen::MatrixXd a_l = a_llt.matrixL();
    const double log_det_a = 2.0 * a_l.diagonal().array().log().sum();

    const int nd = covariance_.random_parameters();
    const int np = covariance_.size();
    const int m = covariance_.random_dim();
    const bool want_grad = need != Need::value;
    const bool want_info = need == Need::information;
    const auto derivs = want_grad ? covariance_.sigma_d_derivatives(theta) : std::vector<Eigen::MatrixXd>{};
    const Eigen::MatrixXd& a_inv = out.cov_beta;

    Contribution total;
    total.gamma = Eigen::MatrixXd::Zero(m, m);
    total.vxvx = Eigen::MatrixXd::Zero(q_, q_);
    total.b.assign(static_cast<std::size_t>(nd), Eigen::MatrixXd::Zero(q_, q_));
    total.info = Eigen::MatrixXd::Zero(np, np);

    auto compute = [&](std::size_t i) {
        const SubjectBlock& blk = blocks_[i];
        const Eigen::MatrixXd& vinv = terms[i].v_inv;
        Contribution c;
        const Eigen::VectorXd r = blk.y - blk.X * out.beta;
        const Eigen::VectorXd vr = vinv * r;
        c.quad = r.dot(vr);
        if (!want_grad) return c;
        const Eigen::MatrixXd vz = vinv * blk.Z;
        const Eigen::MatrixXd vx = vinv * blk.X;
        const Eigen::MatrixXd g = blk.Z.transpose() * vz;
        const Eigen::MatrixXd h = blk.X.transpose() * vz;
        const Eigen::VectorXd w = blk.Z.transpose() * vr;
        c.tr_vinv = vinv.trace();
        c.vr_sq = vr.squaredNorm();
        c.vxvx = vx.transpose() * vx;
        const Eigen::MatrixXd ainv_h = a_inv * h;
        const Eigen::MatrixXd q_mat = h.transpose() * ainv_h;  // H^T A^-1 H
        c.gamma = g - w * w.transpose();
        if (reml) c.gamma -= q_mat;
        c.b.reserve(static_cast<std::size_t>(nd));
        for (int k = 0; k < nd; ++k) c.b.push_back(h * derivs[static_cast<std::size_t>(k)] * h.transpose());
        if (!want_info) return c;

        c.info = Eigen::MatrixXd::Zero(np, np);
        std::vector<Eigen::MatrixXd> mk(static_cast<std::size_t>(nd));
        std::vector<Eigen::MatrixXd> nk(static_cast<std::size_t>(nd));
        for (int k = 0; k < nd; ++k) {
            mk[static_cast<std::size_t>(k)] = derivs[static_cast<std::size_t>(k)] * g;
            if (reml) nk[static_cast<std::size_t>(k)] = derivs[static_cast<std::size_t>(k)] * q_mat;
        }
        const Eigen::MatrixXd g2 = vz.transpose() * vz;
        const Eigen::MatrixXd h2 = vx.transpose() * vz;  // X^T V^-2 Z
        const Eigen::MatrixXd cross = h2.transpose() * ainv_h;  // H2^T A^-1 H
        const int s = np - 1;
        for (int k = 0; k < nd; ++k) {
            const auto& mkk = mk[static_cast<std::size_t>(k)];
            for (int l = 0; l <= k; ++l) {
                const auto& mll = mk[static_cast<std::size_t>(l)];
                double v = trace_product(mkk, mll);
                if (reml) {
                    v -= trace_product(mkk, nk[static_cast<std::size_t>(l)]) +
                         trace_product(mll, nk[static_cast<std::size_t>(k)]);
                }
                c.info(k, l) = c.info(l, k) = v;
            }
            const auto& kk = derivs[static_cast<std::size_t>(k)];
            double v = sigma2 * trace_product(kk, g2);
            if (reml) v -= sigma2 * (trace_product(kk, cross) + trace_product(kk, cross.transpose()));
            c.info(k, s) = c.info(s, k) = v;
        }
        double v = sigma2 * sigma2 * vinv.squaredNorm();
        if (reml) v -= 2.0 * sigma2 * sigma2 * trace_product(a_inv, vx.transpose() * vinv * vx);
        c.info(s, s) = v;
        return c;
    };
    auto accumulate = [&](std::size_t, Contribution& c) {
        total.quad += c.quad;
        if (!want_grad) return;
        total.tr_vinv += c.tr_vinv;
        total.vr_sq += c.vr_sq;
        total.gamma += c.gamma;
        total.vxvx += c.vxvx;
        for (int k = 0; k < nd; ++k) total.b[static_cast<std::size_t>(k)] += c.b[static_cast<std::size_t>(k)];
        if (want_info) total.info += c.info;
    };
    ordered_reduce(blocks_.size(), compute, accumulate);

    const double n = static_cast<double>(n_);
    if (reml) {
        out.loglik = -0.5 * (totals.log_det + log_det_a + total.quad + (n - q_) * kLog2Pi);
    } else {
        out.loglik = -0.5 * (totals.log_det + total.quad + n * kLog2Pi);
    }
    if (!want_grad) return out;

    out.gradient.resize(np);
    for (int k = 0; k < nd; ++k) {
        out.gradient(k) = -0.5 * trace_product(derivs[static_cast<std::size_t>(k)], total.gamma);
    }
    double sigma_term = total.tr_vinv - total.vr_sq;
    if (reml) sigma_term -= trace_product(a_inv, total.vxvx);
    out.gradient(np - 1) = -0.5 * sigma2 * sigma_term;

    out.b_matrices = std::move(total.b);
    out.b_matrices.push_back(sigma2 * total.vxvx);
    if (!want_info) return out;

    out.information = total.info;
    if (reml) {
        std::vector<Eigen::MatrixXd> ab(static_cast<std::size_t>(np));
        for (int k = 0; k < np; ++k) ab[static_cast<std::size_t>(k)] = a_inv * out.b_matrices[static_cast<std::size_t>(k)];
        for (int k = 0; k < np; ++k) {
            for (int l = 0; l <= k; ++l) {
                const double t3 = trace_product(ab[static_cast<std::size_t>(k)], ab[static_cast<std::size_t>(l)]);
                out.information(k, l) += t3;
                if (l != k) out.information(l, k) += t3;
            }
        }
    }
    out.information *= 0.5;
    return out;
}

CovarianceModel FittedModel::covariance_model() const {
    return {design.spec().random_cov, design.random_columns()};
}

CovarianceParams default_start(const LikelihoodEvaluator& evaluator) {
    const auto& blocks = evaluator.blocks();
    const auto n = static_cast<Eigen::Index>(evaluator.observations());
    const int q = evaluator.fixed_dim();
    const int m = evaluator.covariance().random_dim();
    Eigen::MatrixXd x(n, q);
    Eigen::MatrixXd z(n, m);
    Eigen::VectorXd y(n);
    Eigen::Index row = 0;
    for (const auto& b : blocks) {
        x.middleRows(row, b.X.rows()) = b.X;
        z.middleRows(row, b.Z.rows()) = b.Z;
        y.segment(row, b.y.size()) = b.y;
        row += b.y.size();
    }
    const Eigen::VectorXd beta = x.colPivHouseholderQr().solve(y);
    const double rss = (y - x * beta).squaredNorm();
    double s2 = n > q ? rss / static_cast<double>(n - q) : 0.0;
    if (!(s2 > 0.0) || !std::isfinite(s2)) s2 = 1.0;

    Eigen::MatrixXd sigma_d = Eigen::MatrixXd::Zero(m, m);
    for (int j = 0; j < m; ++j) {
        const double mean_sq = z.col(j).squaredNorm() / static_cast<double>(n);
        sigma_d(j, j) = mean_sq > 0.0 ? 0.5 * s2 / (static_cast<double>(m) * mean_sq) : 0.5 * s2;
    }
    return CovarianceParams::unpack(evaluator.covariance().pack(sigma_d, 0.5 * s2));
}

namespace {

struct OptimResult {
    Eigen::VectorXd theta;
    LikelihoodEvaluator::Result at;
    bool converged = false;
    int iterations = 0;
    double gradient_norm = 0.0;
    std::vector<double> trace;
};

Eigen::VectorXd project(const Eigen::VectorXd& x, const Eigen::VectorXd& lb) { return x.cwiseMax(lb); }

// Free coordinates: not pinned at the floor by a gradient pointing further down.
std::vector<int> free_set(const Eigen::VectorXd& x, const Eigen::VectorXd& grad, const Eigen::VectorXd& lb) {
    std::vector<int> idx;
    for (int k = 0; k < x.size(); ++k) {
        if (!(x(k) <= lb(k) && grad(k) < 0.0)) idx.push_back(k);
    }
    return idx;
}

double projected_norm(const Eigen::VectorXd& grad, const std::vector<int>& free) {
    double v = 0.0;
    for (int k : free) v = std::max(v, std::abs(grad(k)));
    return v;
}

bool try_evaluate(const LikelihoodEvaluator& ev, const Eigen::VectorXd& x, LikelihoodEvaluator::Need need,
                  LikelihoodEvaluator::Result& out) {
    try {
        out = ev.evaluate(x, need);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::conditioning) throw;
        return false;
    }
    return std::isfinite(out.loglik);
}

OptimResult maximize(const LikelihoodEvaluator& ev, Eigen::VectorXd x, const FitOptions& opt) {
    using Need = LikelihoodEvaluator::Need;
    const Eigen::VectorXd lb = ev.covariance().lower_bounds();
    const int np = static_cast<int>(x.size());
    constexpr double kMaxStep = 5.0;
    constexpr double kArmijo = 1e-4;

    OptimResult res;
    x = project(x, lb);
    LikelihoodEvaluator::Result cur = ev.evaluate(x, Need::information);
    res.trace.push_back(cur.loglik);

    // Fisher scoring warm-up.
    Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(np, np);
    bool have_fisher = false;
    for (int it = 0; it < opt.fisher_steps; ++it) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(cur.information);
        if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all()) break;
        Eigen::VectorXd step = ldlt.solve(cur.gradient);
        const double big = step.lpNorm<Eigen::Infinity>();
        if (big > kMaxStep) step *= kMaxStep / big;
        bool accepted = false;
        for (int half = 0; half < 30; ++half) {
            const Eigen::VectorXd xn = project(x + step, lb);
            LikelihoodEvaluator::Result trial;
            if (try_evaluate(ev, xn, Need::information, trial) && trial.loglik >= cur.loglik) {
                x = xn;
                cur = std::move(trial);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
        ++res.iterations;
        res.trace.push_back(cur.loglik);
    }
    {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(cur.information);
        if (ldlt.info() == Eigen::Success && (ldlt.vectorD().array() > 0.0).all()) {
            hinv = ldlt.solve(Eigen::MatrixXd::Identity(np, np));
            have_fisher = true;
        }
    }
    if (!have_fisher) {
        const double scale = std::max(1.0, cur.gradient.lpNorm<Eigen::Infinity>());
        hinv /= scale;
    }

    // BFGS on f = -loglik.
    Eigen::VectorXd g = -cur.gradient;
    double f = -cur.loglik;
    double rel_change = std::numeric_limits<double>::infinity();
    bool reset_used = false;
    int stall = 0;
    constexpr int kMaxStall = 10;
    auto identity_hinv = [&] {
        const double scale = std::max(1.0, g.lpNorm<Eigen::Infinity>());
        hinv = Eigen::MatrixXd::Identity(np, np) / scale;
    };
    // Below this the objective cannot resolve a change and steps are judged
    // by the projected gradient instead.
    auto noise = [](double fv) { return 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(fv)); };
    // One Fisher scoring step on the free coordinates, accepted when it does
    // not raise f beyond rounding and shrinks the projected gradient.
    auto scoring_step = [&](const LikelihoodEvaluator::Result& at, double pg, Eigen::VectorXd& xn,
                            LikelihoodEvaluator::Result& trial) {
        LikelihoodEvaluator::Result full;
        const LikelihoodEvaluator::Result* src = &at;
        if (at.information.size() == 0) {
            if (!try_evaluate(ev, x, Need::information, full)) return false;
            src = &full;
        }
        const auto free = free_set(x, src->gradient, lb);
        if (free.empty()) return false;
        const auto nf = static_cast<Eigen::Index>(free.size());
        Eigen::MatrixXd info(nf, nf);
        Eigen::VectorXd gf(nf);
        for (Eigen::Index a = 0; a < nf; ++a) {
            gf(a) = src->gradient(free[static_cast<std::size_t>(a)]);
            for (Eigen::Index b = 0; b < nf; ++b) {
                info(a, b) = src->information(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
            }
        }
        // Truncated eigen-solve: near-singular directions (a covariance
        // factor close to rank deficiency) would otherwise swamp the step.
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(info);
        if (es.info() != Eigen::Success || !(es.eigenvalues().maxCoeff() > 0.0)) return false;
        const double cut = 1e-8 * es.eigenvalues().maxCoeff();
        Eigen::VectorXd proj = es.eigenvectors().transpose() * gf;
        for (Eigen::Index a = 0; a < nf; ++a) proj(a) = es.eigenvalues()(a) > cut ? proj(a) / es.eigenvalues()(a) : 0.0;
        Eigen::VectorXd step = es.eigenvectors() * proj;
        const double big = step.lpNorm<Eigen::Infinity>();
        if (big > kMaxStep) step *= kMaxStep / big;
        const double fx = -src->loglik;
        for (int half = 0; half < 10; ++half, step *= 0.5) {
            xn = x;
            for (Eigen::Index a = 0; a < nf; ++a) xn(free[static_cast<std::size_t>(a)]) += step(a);
            xn = project(xn, lb);
            if (!try_evaluate(ev, xn, Need::information, trial)) continue;
            if (-trial.loglik <= fx + noise(fx) &&
                projected_norm(trial.gradient, free_set(xn, trial.gradient, lb)) < pg) {
                return true;
            }
        }
        return false;
    };

    // A variance heading for zero stalls once its log-scale gradient is small;
    // put it on the floor if that does not cost likelihood.
    std::vector<int> diag_index;
    {
        const auto& cov = ev.covariance();
        const int m = cov.random_dim();
        if (cov.structure() == RandomCovariance::diagonal) {
            for (int j = 0; j < m; ++j) diag_index.push_back(j);
        } else {
            for (int j = 0, k = 0; j < m; k += j + 2, ++j) diag_index.push_back(k);
        }
    }
    auto try_snap = [&] {
        bool moved = false;
        for (int k : diag_index) {
            if (x(k) <= lb(k) || cur.gradient(k) > 0.0) continue;
            Eigen::VectorXd xn = x;
            xn(k) = lb(k);
            LikelihoodEvaluator::Result trial;
            if (try_evaluate(ev, xn, Need::information, trial) && trial.loglik >= cur.loglik) {
                x = xn;
                cur = std::move(trial);
                res.trace.push_back(cur.loglik);
                moved = true;
            }
        }
        if (moved) {
            f = -cur.loglik;
            g = -cur.gradient;
        }
        return moved;
    };

    while (res.iterations < opt.max_iter) {
        const auto free = free_set(x, cur.gradient, lb);
        const double pg = projected_norm(cur.gradient, free);
        res.gradient_norm = pg;
        if (pg <= opt.tol && rel_change <= opt.rel_loglik_tol) {
            if (try_snap()) {
                rel_change = std::numeric_limits<double>::infinity();
                identity_hinv();
                continue;
            }
            res.converged = true;
            break;
        }
        Eigen::VectorXd d = Eigen::VectorXd::Zero(np);
        for (int a : free) {
            for (int b : free) d(a) -= hinv(a, b) * g(b);
        }
        double slope = g.dot(d);
        if (!(slope < 0.0)) {
            identity_hinv();
            d.setZero();
            for (int a : free) d(a) = -hinv(a, a) * g(a);
            slope = g.dot(d);
        }
        const double big = d.lpNorm<Eigen::Infinity>();
        if (big > kMaxStep) d *= kMaxStep / big;

        bool accepted = false;
        bool resolved = true;
        Eigen::VectorXd xn;
        LikelihoodEvaluator::Result trial;
        double alpha = 1.0;
        for (int half = 0; half < 50; ++half, alpha *= 0.5) {
            xn = project(x + alpha * d, lb);
            if (!try_evaluate(ev, xn, Need::gradient, trial)) continue;
            const double fn = -trial.loglik;
            const double decrease = g.dot(xn - x);
            if (-kArmijo * decrease > noise(f)) {
                if (fn <= f + kArmijo * decrease) {
                    accepted = true;
                    break;
                }
                continue;
            }
            resolved = false;
            if (fn <= f + noise(f) && projected_norm(trial.gradient, free_set(xn, trial.gradient, lb)) < pg) {
                accepted = true;
                break;
            }
        }
        // Unresolvable objective changes: let a scoring step drive the
        // gradient down instead of crawling.
        if (!accepted || !resolved) {
            Eigen::VectorXd xs;
            LikelihoodEvaluator::Result ts;
            if (scoring_step(cur, pg, xs, ts)) {
                const bool better = !accepted || projected_norm(ts.gradient, free_set(xs, ts.gradient, lb)) <
                                                     projected_norm(trial.gradient, free_set(xn, trial.gradient, lb));
                if (better) {
                    xn = std::move(xs);
                    trial = std::move(ts);
                }
                accepted = true;
            }
        }
        if (!accepted) {
            if (pg <= opt.tol && !try_snap()) {
                res.converged = true;
                break;
            }
            if (try_snap()) {
                identity_hinv();
                continue;
            }
            if (reset_used) break;
            reset_used = true;
            identity_hinv();
            continue;
        }
        const Eigen::VectorXd s = xn - x;
        const Eigen::VectorXd gn = -trial.gradient;
        const Eigen::VectorXd yv = gn - g;
        const double sy = s.dot(yv);
        rel_change = std::abs(-trial.loglik - f) / std::max(1.0, std::abs(f));
        x = xn;
        f = -trial.loglik;
        g = gn;
        cur = std::move(trial);
        ++res.iterations;
        res.trace.push_back(cur.loglik);
        // Crawling along a ridge: try the boundary, otherwise give up.
        const double pg_new = projected_norm(cur.gradient, free_set(x, cur.gradient, lb));
        stall = pg_new > 0.99 * pg && rel_change <= opt.rel_loglik_tol ? stall + 1 : 0;
        if (stall >= kMaxStall) {
            if (!try_snap()) break;
            stall = 0;
            identity_hinv();
            continue;
        }
        if (sy > 1e-12 * s.norm() * yv.norm()) {
            const double rho = 1.0 / sy;
            const Eigen::VectorXd hy = hinv * yv;
            hinv += (rho * rho * yv.dot(hy) + rho) * (s * s.transpose()) - rho * (hy * s.transpose() + s * hy.transpose());
            hinv = 0.5 * (hinv + hinv.transpose()).eval();
        }
    }
    if (res.converged) {
        // Polish with a few scoring steps on the free coordinates.
        for (int it = 0; it < 4; ++it) {
            if (cur.information.size() == 0) {
                LikelihoodEvaluator::Result full;
                if (!try_evaluate(ev, x, Need::information, full)) break;
                cur = std::move(full);
            }
            const auto free = free_set(x, cur.gradient, lb);
            const double pg = projected_norm(cur.gradient, free);
            if (free.empty() || pg == 0.0) break;
            const auto nf = static_cast<Eigen::Index>(free.size());
            Eigen::MatrixXd info(nf, nf);
            Eigen::VectorXd gf(nf);
            for (Eigen::Index a = 0; a < nf; ++a) {
                gf(a) = cur.gradient(free[static_cast<std::size_t>(a)]);
                for (Eigen::Index b = 0; b < nf; ++b) {
                    info(a, b) = cur.information(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
                }
            }
            Eigen::LLT<Eigen::MatrixXd> llt(info);
            if (llt.info() != Eigen::Success) break;
            const Eigen::VectorXd step = llt.solve(gf);
            Eigen::VectorXd xn = x;
            for (Eigen::Index a = 0; a < nf; ++a) xn(free[static_cast<std::size_t>(a)]) += step(a);
            xn = project(xn, lb);
            LikelihoodEvaluator::Result trial;
            if (!try_evaluate(ev, xn, Need::information, trial) || trial.loglik < cur.loglik ||
                projected_norm(trial.gradient, free_set(xn, trial.gradient, lb)) >= pg) {
                break;
            }
            x = xn;
            cur = std::move(trial);
            res.trace.push_back(cur.loglik);
        }
        res.gradient_norm = projected_norm(cur.gradient, free_set(x, cur.gradient, lb));
    }
    if (res.iterations >= opt.max_iter && !res.converged) {
        res.gradient_norm = projected_norm(cur.gradient, free_set(x, cur.gradient, lb));
    }
    res.theta = x;
    res.at = std::move(cur);
    return res;
}

// Central differences of the analytic gradient, Richardson-extrapolated.
Eigen::MatrixXd hessian(const LikelihoodEvaluator& ev, const Eigen::VectorXd& x, const std::vector<int>& free,
                        double h) {
    using Need = LikelihoodEvaluator::Need;
    const int np = static_cast<int>(x.size());
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(np, np);
    for (int k : free) {
        auto diff = [&](double step) {
            Eigen::VectorXd xp = x;
            Eigen::VectorXd xm = x;
            xp(k) += step;
            xm(k) -= step;
            return Eigen::VectorXd((ev.evaluate(xp, Need::gradient).gradient - ev.evaluate(xm, Need::gradient).gradient) /
                                   (2.0 * step));
        };
        const Eigen::VectorXd d1 = diff(h);
        const Eigen::VectorXd d2 = diff(0.5 * h);
        out.col(k) = (4.0 * d2 - d1) / 3.0;
    }
    return 0.5 * (out + out.transpose());
}

InferenceState build_inference(const LikelihoodEvaluator& ev, const Eigen::VectorXd& theta,
                               const LikelihoodEvaluator::Result& at) {
    constexpr double kStep = 1e-4;
    InferenceState st;
    const auto& cov = ev.covariance();
    st.variance_labels = cov.variance_labels();
    st.variance_estimates = cov.variance_scale(theta);
    const Eigen::VectorXd lb = cov.lower_bounds();
    std::vector<int> candidates;
    for (int k = 0; k < theta.size(); ++k) {
        if (theta(k) > lb(k) + 2.0 * kStep) candidates.push_back(k);
    }
    try {
        const Eigen::MatrixXd hess = hessian(ev, theta, candidates, kStep);
        double scale = 0.0;
        for (int k : candidates) scale = std::max(scale, std::abs(hess(k, k)));
        for (int k : candidates) {
            if (std::abs(hess(k, k)) > 1e-10 * scale) st.free_parameters.push_back(k);
        }
        const auto nf = static_cast<Eigen::Index>(st.free_parameters.size());
        Eigen::MatrixXd info(nf, nf);
        for (Eigen::Index a = 0; a < nf; ++a) {
            for (Eigen::Index b = 0; b < nf; ++b) {
                info(a, b) = -hess(st.free_parameters[static_cast<std::size_t>(a)],
                                   st.free_parameters[static_cast<std::size_t>(b)]);
            }
        }
        Eigen::LLT<Eigen::MatrixXd> llt(info);
        if (nf > 0 && llt.info() != Eigen::Success) {
            st.reason = "observed information is not positive definite";
            return st;
        }
        st.theta_covariance = nf > 0 ? Eigen::MatrixXd(llt.solve(Eigen::MatrixXd::Identity(nf, nf)))
                                     : Eigen::MatrixXd(0, 0);
        for (int k : st.free_parameters) {
            const auto& b = at.b_matrices[static_cast<std::size_t>(k)];
            st.cov_beta_derivatives.push_back(at.cov_beta * b * at.cov_beta);
        }
        const Eigen::MatrixXd jac = cov.variance_jacobian(theta);
        Eigen::MatrixXd jf(jac.rows(), nf);
        for (Eigen::Index a = 0; a < nf; ++a) jf.col(a) = jac.col(st.free_parameters[static_cast<std::size_t>(a)]);
        st.variance_covariance = jf * st.theta_covariance * jf.transpose();
        st.available = true;
    } catch (const Error& e) {
        st.reason = e.what();
    }
    return st;
}

FittedModel assemble(const DesignContext& design, const LikelihoodEvaluator& ev, const Eigen::VectorXd& theta,
                     const LikelihoodEvaluator::Result& at) {
    FittedModel fm;
    fm.design = design;
    fm.method = ev.method();
    fm.theta = theta;
    fm.beta_hat = at.beta;
    fm.cov_beta = at.cov_beta;
    const auto& cov = ev.covariance();
    fm.sigma_d_hat = cov.reported_sigma_d(theta);
    fm.sigma2_hat = cov.sigma2(theta);
    fm.loglik = at.loglik;
    fm.n_subjects = ev.blocks().size();
    fm.n_observations = ev.observations();
    return fm;
}

}  // namespace

double marginal_loglikelihood(const CovarianceParams& params, const Cohort& cohort, const ModelSpec& spec,
                              Method method) {
    const DesignContext design(spec, cohort);
    const auto ev = LikelihoodEvaluator::from_cohort(design, cohort, method);
    return ev.loglik(params.packed());
}

GlsResult gls_beta(const CovarianceParams& params, const Cohort& cohort, const ModelSpec& spec) {
    const DesignContext design(spec, cohort);
    const auto ev = LikelihoodEvaluator::from_cohort(design, cohort, Method::ml);
    auto r = ev.evaluate(params.packed());
    return {std::move(r.beta), std::move(r.cov_beta)};
}

FittedModel fit(const ModelSpec& spec, const Cohort& cohort, const FitOptions& options) {
    spec.validate();
    return fit(DesignContext(spec, cohort), cohort, options);
}

FittedModel fit(const DesignContext& design, const Cohort& cohort, const FitOptions& options) {
    if (options.max_iter < 1) throw Error(ErrorKind::argument, "max_iter must be positive");
    if (!(options.tol > 0.0)) throw Error(ErrorKind::argument, "tolerance must be positive");
    const auto ev = LikelihoodEvaluator::from_cohort(design, cohort, options.method);

    std::vector<Eigen::VectorXd> starts{default_start(ev).packed()};
    for (const auto& s : options.starts) {
        const Eigen::VectorXd p = s.packed();
        if (p.size() != ev.covariance().size()) throw Error(ErrorKind::argument, "start has the wrong length");
        starts.push_back(p);
    }
    std::optional<OptimResult> best;
    for (const auto& s : starts) {
        OptimResult r = maximize(ev, s, options);
        const bool better = !best || (r.converged && !best->converged) ||
                            (r.converged == best->converged && r.at.loglik > best->at.loglik);
        if (better) best = std::move(r);
    }
    FittedModel fm = assemble(design, ev, best->theta, best->at);
    fm.converged = best->converged;
    fm.iterations = best->iterations;
    fm.gradient_norm = best->gradient_norm;
    fm.loglik_trace = std::move(best->trace);
    if (options.compute_inference) {
        fm.inference = build_inference(ev, best->theta, best->at);
    } else {
        fm.inference.reason = "not computed";
    }
    return fm;
}

FittedModel fitted_at(const DesignContext& design, const Cohort& cohort, const CovarianceParams& params,
                      Method method, bool compute_inference) {
    const auto ev = LikelihoodEvaluator::from_cohort(design, cohort, method);
    const Eigen::VectorXd theta = params.packed();
    if (theta.size() != ev.covariance().size()) throw Error(ErrorKind::argument, "parameters have the wrong length");
    const auto at = ev.evaluate(theta, LikelihoodEvaluator::Need::gradient);
    FittedModel fm = assemble(design, ev, theta, at);
    // Not optimized: callers supply the parameters they want treated as final.
    fm.converged = true;
    const auto free = free_set(theta, at.gradient, ev.covariance().lower_bounds());
    fm.gradient_norm = projected_norm(at.gradient, free);
    fm.loglik_trace = {at.loglik};
    if (compute_inference) {
        fm.inference = build_inference(ev, theta, at);
    } else {
        fm.inference.reason = "not computed";
    }
    return fm;
}

}  // namespace abpm
