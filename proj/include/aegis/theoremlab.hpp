#pragma once

// Numerical checks of the GRP guarantees on controlled quadratics: local
// descent of the erasing loss, directional curvature of the retention loss,
// the retention-benefit conditions and the deviation lower bound on random
// vectors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "aegis/errors.hpp"
#include "aegis/gradcheck.hpp"
#include "aegis/grp.hpp"
#include "aegis/metrics.hpp"
#include "aegis/rng.hpp"
#include "aegis/tensor.hpp"

namespace aegis::theoremlab {

using num::Vec;

// ---------------------------------------------------------------------------
// Quadratic test functions: 0.5 (theta - minimizer)^T A (theta - minimizer)

struct QuadraticTestProblem {
    Eigen::MatrixXd hessian;
    Vec minimizer;
    double L = 0.0;    // largest eigenvalue
    double ell = 0.0;  // smallest eigenvalue

    std::size_t dim() const { return minimizer.size(); }

    static QuadraticTestProblem make(Eigen::MatrixXd a, Vec minimizer) {
        if (a.rows() != a.cols() || static_cast<std::size_t>(a.rows()) != minimizer.size())
            throw ShapeError("quadratic: Hessian is " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                             " but minimizer has " + std::to_string(minimizer.size()) + " entries");
        if (!a.allFinite() || !num::all_finite(minimizer)) throw NumericError("quadratic: non-finite entries");
        const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
        if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
            throw ContractError("quadratic: Hessian is not symmetric");
        a = 0.5 * (a + a.transpose());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a, Eigen::EigenvaluesOnly);
        QuadraticTestProblem q;
        q.ell = es.eigenvalues().minCoeff();
        q.L = es.eigenvalues().maxCoeff();
        if (q.ell < -1e-12 * scale) throw ContractError("quadratic: Hessian is not positive semidefinite");
        q.ell = std::max(q.ell, 0.0);
        q.hessian = std::move(a);
        q.minimizer = std::move(minimizer);
        return q;
    }

    Eigen::VectorXd offset(std::span<const double> theta) const {
        if (theta.size() != dim()) throw ShapeError("quadratic: point has wrong dimension");
        Eigen::VectorXd d(static_cast<Eigen::Index>(dim()));
        for (std::size_t i = 0; i < dim(); ++i) d[static_cast<Eigen::Index>(i)] = theta[i] - minimizer[i];
        return d;
    }

    double loss(std::span<const double> theta) const {
        const Eigen::VectorXd d = offset(theta);
        return 0.5 * d.dot(hessian * d);
    }

    Vec grad(std::span<const double> theta) const {
        const Eigen::VectorXd g = hessian * offset(theta);
        return Vec(g.data(), g.data() + g.size());
    }
};

/// Rotated diagonal Hessian with eigenvalues drawn log-uniformly from [lo, hi].
inline QuadraticTestProblem random_quadratic(std::size_t dim, Rng& rng, double lo = 0.1, double hi = 10.0) {
    if (dim < 1) throw ContractError("random_quadratic: dimension must be >= 1");
    if (!(lo >= 0.0 && hi >= lo)) throw ConfigError("random_quadratic: need 0 <= lo <= hi");
    const auto n = static_cast<Eigen::Index>(dim);
    Eigen::MatrixXd g(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) g(i, j) = rng.normal();
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
    Eigen::VectorXd eig(n);
    for (Eigen::Index i = 0; i < n; ++i)
        eig[i] = lo == 0.0 ? rng.uniform(0.0, hi) : lo * std::pow(hi / lo, rng.uniform());
    Eigen::MatrixXd a = q * eig.asDiagonal() * q.transpose();
    a = 0.5 * (a + a.transpose());
    Vec m(dim);
    for (double& x : m) x = rng.normal();
    return QuadraticTestProblem::make(std::move(a), std::move(m));
}

/// A point where the gradient of `q` equals `g`; needs a nonsingular Hessian.
inline Vec point_with_gradient(const QuadraticTestProblem& q, std::span<const double> g) {
    if (g.size() != q.dim()) throw ShapeError("point_with_gradient: gradient has wrong dimension");
    if (!(q.ell > 0.0)) throw ContractError("point_with_gradient: Hessian is singular");
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(g.size()));
    for (std::size_t i = 0; i < g.size(); ++i) rhs[static_cast<Eigen::Index>(i)] = g[i];
    const Eigen::VectorXd d = q.hessian.ldlt().solve(rhs);
    Vec theta(q.dim());
    for (std::size_t i = 0; i < q.dim(); ++i) theta[i] = q.minimizer[i] + d[static_cast<Eigen::Index>(i)];
    return theta;
}

// ---------------------------------------------------------------------------
// Local descent of the erasing loss under GRP steps

struct DescentConfig {
    double alpha = 0.1;
    std::vector<double> omega_schedule{0.0};  // step i uses entry min(i, size-1)
    std::size_t steps = 50;
    bool allow_large_step = false;  // permit alpha > 2/L to exhibit failures
    double slack = 1e-10;
    double stall_cos = -1.0 + 1e-12;  // cos_phi at or below this counts as anti-parallel
    double stall_tolerance = 1e-12;   // allowed movement on a stall, relative to 1 + alpha ||g_e||
};

struct DescentViolation {
    std::size_t step = 0;
    double loss_before = 0.0;
    double loss_after = 0.0;
    double cos_phi = 0.0;
    double omega = 0.0;
};

struct DescentReport {
    double alpha = 0.0;
    double L = 0.0;
    std::size_t steps = 0;
    std::size_t conflicts = 0;
    std::size_t stalls = 0;          // anti-parallel steps with omega = 1
    std::size_t stall_breaches = 0;  // stalls where theta moved
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<DescentViolation> violations;

    bool passed() const { return violations.empty() && stall_breaches == 0; }
};

/// Runs GRP steps theta <- theta - alpha * g_hat with g_e from `erase` and g_r
/// from `retain`, checking that the erasing loss never increases.
inline DescentReport verify_descent(const QuadraticTestProblem& erase,
                                    const std::function<Vec(std::span<const double>)>& retain_grad, Vec theta,
                                    const DescentConfig& cfg) {
    if (theta.size() != erase.dim()) throw ShapeError("verify_descent: start point has wrong dimension");
    if (!(cfg.alpha > 0.0)) throw ConfigError("verify_descent: alpha must be positive");
    if (cfg.omega_schedule.empty()) throw ConfigError("verify_descent: empty omega schedule");
    for (double w : cfg.omega_schedule)
        if (!(w >= 0.0 && w <= 1.0)) throw ConfigError("verify_descent: omega outside [0, 1]");
    if (erase.L > 0.0 && cfg.alpha > 2.0 / erase.L && !cfg.allow_large_step)
        throw ContractError("verify_descent: alpha " + std::to_string(cfg.alpha) + " exceeds 2/L = " +
                            std::to_string(2.0 / erase.L));
    DescentReport rep;
    rep.alpha = cfg.alpha;
    rep.L = erase.L;
    rep.initial_loss = erase.loss(theta);
    double loss = rep.initial_loss;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const double omega = cfg.omega_schedule[std::min(step, cfg.omega_schedule.size() - 1)];
        const Vec ge = erase.grad(theta);
        const auto g = grp::combine(ge, retain_grad(theta), omega);
        rep.conflicts += g.conflict ? 1 : 0;
        const Vec next = num::axpy(-cfg.alpha, g.g_hat, theta);
        const double next_loss = erase.loss(next);
        if (g.conflict && g.cos_phi <= cfg.stall_cos && omega == 1.0) {
            // g_hat = (1 - omega) g_e = 0; exact when g_r = -g_e exactly, rounding-level otherwise.
            ++rep.stalls;
            const double moved = num::norm(num::subtract(next, theta));
            if (moved > cfg.stall_tolerance * (1.0 + cfg.alpha * num::norm(ge))) ++rep.stall_breaches;
        }
        if (next_loss > loss + cfg.slack) rep.violations.push_back({step, loss, next_loss, g.cos_phi, omega});
        theta = next;
        loss = next_loss;
        ++rep.steps;
    }
    rep.final_loss = loss;
    return rep;
}

inline DescentReport verify_descent(const QuadraticTestProblem& erase, const QuadraticTestProblem& retain, Vec theta,
                                    const DescentConfig& cfg) {
    if (retain.dim() != erase.dim()) throw ShapeError("verify_descent: problems disagree on dimension");
    return verify_descent(erase, [&retain](std::span<const double> x) { return retain.grad(x); }, std::move(theta),
                          cfg);
}

struct DescentSweepConfig {
    std::size_t trials = 2000;
    std::size_t max_dim = 6;
    std::size_t steps = 20;
    double alpha_over_bound = 1.0;  // alpha = u * alpha_over_bound * 2/L with u ~ U(0.05, 1]
    bool force_bound = false;       // use exactly alpha_over_bound * 2/L (no random shrink)
    std::uint64_t seed = 7;
};

struct DescentSweepSummary {
    std::size_t trials = 0;
    std::size_t steps = 0;
    std::size_t conflicts = 0;
    std::size_t violations = 0;
    std::size_t stalls = 0;
    std::size_t stall_breaches = 0;
    std::size_t degenerate_trials = 0;  // constructed g_r = -g_e, omega = 1
    bool degenerate_frozen = true;      // theta and loss unchanged on every one of them

    bool passed() const { return violations == 0 && stall_breaches == 0 && degenerate_frozen; }
};

/// Random convex quadratic pairs with random omega schedules. Every tenth
/// trial is the anti-parallel stall case.
inline DescentSweepSummary descent_sweep(const DescentSweepConfig& cfg) {
    if (cfg.trials < 1 || cfg.max_dim < 1 || cfg.steps < 1) throw ConfigError("descent_sweep: empty sweep");
    if (!(cfg.alpha_over_bound > 0.0)) throw ConfigError("descent_sweep: alpha factor must be positive");
    DescentSweepSummary sum;
    for (std::size_t t = 0; t < cfg.trials; ++t) {
        Rng rng = Rng::stream(cfg.seed, "descent").fork(t);
        const std::size_t dim =
            1 + std::min(cfg.max_dim - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(cfg.max_dim)));
        const auto erase = random_quadratic(dim, rng, 0.05, 20.0);
        Vec theta(dim);
        for (std::size_t i = 0; i < dim; ++i) theta[i] = erase.minimizer[i] + 3.0 * rng.normal();
        const double u = cfg.force_bound ? 1.0 : rng.uniform(0.05, 1.0);
        DescentConfig dc;
        dc.alpha = u * cfg.alpha_over_bound * 2.0 / erase.L;
        dc.allow_large_step = cfg.alpha_over_bound > 1.0;
        dc.steps = cfg.steps;
        ++sum.trials;
        if (t % 10 == 9) {
            // Retention gradient fixed to exactly -g_e.
            if (num::squared_norm(erase.grad(theta)) == 0.0) continue;
            const auto opposite = [&erase](std::span<const double> x) { return num::scaled(-1.0, erase.grad(x)); };
            dc.omega_schedule = {1.0};
            const auto rep = verify_descent(erase, opposite, theta, dc);
            ++sum.degenerate_trials;
            sum.degenerate_frozen = sum.degenerate_frozen && rep.stalls == rep.steps &&
                                    rep.final_loss == rep.initial_loss && rep.stall_breaches == 0;
            sum.violations += rep.violations.size();
            sum.steps += rep.steps;
            sum.stalls += rep.stalls;
            sum.stall_breaches += rep.stall_breaches;
            sum.conflicts += rep.conflicts;
            continue;
        }
        const auto retain = random_quadratic(dim, rng, 0.05, 20.0);
        dc.omega_schedule.clear();
        for (std::size_t s = 0; s < cfg.steps; ++s) {
            const double r = rng.uniform();
            dc.omega_schedule.push_back(r < 0.15 ? 0.0 : (r < 0.3 ? 1.0 : rng.uniform()));
        }
        const auto rep = verify_descent(erase, retain, theta, dc);
        sum.steps += rep.steps;
        sum.conflicts += rep.conflicts;
        sum.violations += rep.violations.size();
        sum.stalls += rep.stalls;
        sum.stall_breaches += rep.stall_breaches;
    }
    return sum;
}

// ---------------------------------------------------------------------------
// Directional curvature: integral over a in [0, 1] of
// g^T Hess(L)(theta - a * alpha * g) g, by the trapezoid rule.

struct Curvature {
    double H = 0.0;
    double ell_est = 0.0;  // H / ||g||^2
};

using GradientFn = std::function<Vec(std::span<const double>)>;

inline Curvature directional_curvature(const GradientFn& grad, std::span<const double> theta, std::span<const double> g,
                                       double alpha, std::size_t nodes = 16) {
    if (theta.size() != g.size()) throw ShapeError("directional_curvature: point and direction differ in length");
    const double gg = num::squared_norm(g);
    if (!(gg > 0.0)) throw ContractError("directional_curvature: direction must be nonzero");
    if (nodes < 8) throw ContractError("directional_curvature: need at least 8 quadrature nodes");
    const auto tensor_grad = [&grad](const num::Tensor& x) { return num::Tensor::vector(grad(x.data())); };
    const num::Tensor dir = num::Tensor::vector(Vec(g.begin(), g.end()));
    double h = 0.0;
    for (std::size_t k = 0; k < nodes; ++k) {
        const double a = static_cast<double>(k) / static_cast<double>(nodes - 1);
        const num::Tensor x = num::Tensor::vector(num::axpy(-a * alpha, g, theta));
        const double f = num::dot(g, num::hessian_vector(tensor_grad, x, dir).data());
        const double w = (k == 0 || k + 1 == nodes) ? 0.5 : 1.0;
        h += w * f;
    }
    h /= static_cast<double>(nodes - 1);
    if (!std::isfinite(h)) throw NumericError("directional_curvature: non-finite curvature");
    return {h, h / gg};
}

inline Curvature directional_curvature(const QuadraticTestProblem& q, std::span<const double> theta,
                                       std::span<const double> g, double alpha, std::size_t nodes = 16) {
    return directional_curvature([&q](std::span<const double> x) { return q.grad(x); }, theta, g, alpha, nodes);
}

// ---------------------------------------------------------------------------
// Retention benefit: compares L_r after a rectified step and after a plain
// erasing step, together with the two sufficient conditions.

struct RetentionCheck {
    double ratio = 0.0;  // ||g_e - g_r||^2 / ||g_e + g_r||^2
    double ell = 0.0;    // directional curvature estimate of L_r along g_e
    double L = 0.0;
    double alpha = 0.0;
    double omega = 0.0;
    double cos_phi = 0.0;
    bool conflict = false;
    bool ell_below_L = false;
    bool cond1 = false;
    bool cond2 = false;
    double loss_grp = 0.0;
    double loss_plain = 0.0;
    bool holds = false;  // loss_grp <= loss_plain + tolerance

    bool asserted() const { return cond1 && cond2; }
    bool violation() const { return asserted() && !holds; }
};

inline constexpr double kRetentionTolerance = 1e-9;

/// g_r is the gradient of `retain` at theta.
inline RetentionCheck verify_retention_benefit(const QuadraticTestProblem& retain, std::span<const double> theta,
                                               std::span<const double> g_e, double alpha, double omega,
                                               std::size_t nodes = 16) {
    if (!(alpha > 0.0)) throw ConfigError("verify_retention_benefit: alpha must be positive");
    const Vec g_r = retain.grad(theta);
    if (g_r.size() != g_e.size()) throw ShapeError("verify_retention_benefit: gradient lengths differ");
    const double sum = num::squared_norm(num::axpy(1.0, g_e, g_r));
    if (!(sum > 0.0)) throw ContractError("verify_retention_benefit: g_e + g_r vanishes");
    RetentionCheck r;
    r.alpha = alpha;
    r.omega = omega;
    r.L = retain.L;
    r.ratio = num::squared_norm(num::subtract(g_e, g_r)) / sum;
    r.ell = directional_curvature(retain, theta, g_e, alpha, nodes).ell_est;
    r.ell_below_L = r.ell < r.L;
    r.cond1 = r.ell >= r.L * r.ratio;
    r.cond2 = r.ell >= r.L * r.ratio + 2.0 / alpha;
    const auto g = grp::combine(g_e, g_r, omega);
    r.cos_phi = g.cos_phi;
    r.conflict = g.conflict;
    r.loss_grp = retain.loss(num::axpy(-alpha, g.g_hat, theta));
    r.loss_plain = retain.loss(num::axpy(-alpha, g_e, theta));
    r.holds = r.loss_grp <= r.loss_plain + kRetentionTolerance;
    return r;
}

struct RetentionGridConfig {
    std::vector<double> cosines;         // cos(angle between g_e and g_r)
    std::vector<double> norm_ratios;     // ||g_r|| / ||g_e||
    std::vector<double> alpha_over_L;    // alpha * L
    std::vector<double> omegas;
    std::uint64_t seed = 2024;
    std::size_t jobs = 1;

    static RetentionGridConfig standard() {
        RetentionGridConfig c;
        for (int i = 0; i <= 20; ++i) c.cosines.push_back(-1.0 + 0.1 * i);
        for (int i = 0; i < 10; ++i) c.norm_ratios.push_back(std::pow(10.0, -1.0 + 2.0 * i / 9.0));
        c.alpha_over_L = {0.1, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0};
        c.omegas = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
        return c;
    }

    std::size_t cells() const { return cosines.size() * norm_ratios.size() * alpha_over_L.size() * omegas.size(); }
};

struct RetentionGridCell {
    std::size_t index = 0;
    double cos_target = 0.0;
    double norm_ratio = 0.0;
    double alpha_over_L = 0.0;
    RetentionCheck check;
};

struct RetentionGridSummary {
    std::size_t cells = 0;
    std::size_t cond1 = 0;
    std::size_t cond2 = 0;
    std::size_t both = 0;
    std::size_t violations = 0;  // on cells where both conditions hold
    std::size_t both_with_conflict = 0;
    std::size_t cond1_only = 0;
    std::size_t cond1_only_holds = 0;
    std::size_t conflict_cells = 0;
    std::size_t conflict_holds = 0;
    std::size_t holds = 0;

    bool passed() const { return violations == 0; }
};

struct RetentionGridReport {
    std::vector<RetentionGridCell> cells;
    RetentionGridSummary summary;
};

namespace detail {

inline RetentionGridCell grid_cell(const RetentionGridConfig& cfg, std::size_t index) {
    std::size_t k = index;
    const std::size_t io = k % cfg.omegas.size();
    k /= cfg.omegas.size();
    const std::size_t ia = k % cfg.alpha_over_L.size();
    k /= cfg.alpha_over_L.size();
    const std::size_t ir = k % cfg.norm_ratios.size();
    const std::size_t ic = k / cfg.norm_ratios.size();

    // Per-cell 2-D problem: eigenvalues 1 and kappa, random rotation and g_e direction.
    Rng rng = Rng::stream(cfg.seed, "retention-grid").fork(index);
    const double kappa = 1.5 + 8.5 * rng.uniform();
    const double rot = rng.uniform(0.0, std::numbers::pi);
    const double cr = std::cos(rot), sr = std::sin(rot);
    Eigen::Matrix2d q;
    q << cr, -sr, sr, cr;
    Eigen::MatrixXd a = q * Eigen::Vector2d(1.0, kappa).asDiagonal() * q.transpose();
    a = 0.5 * (a + a.transpose());
    const auto retain = QuadraticTestProblem::make(a, {rng.normal(), rng.normal()});

    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const Vec g_e{std::cos(phi), std::sin(phi)};
    const double c = std::clamp(cfg.cosines[ic], -1.0, 1.0);
    const double angle = phi + std::acos(c);
    const double rn = cfg.norm_ratios[ir];
    const Vec g_r{rn * std::cos(angle), rn * std::sin(angle)};
    const Vec theta = point_with_gradient(retain, g_r);

    RetentionGridCell cell;
    cell.index = index;
    cell.cos_target = c;
    cell.norm_ratio = rn;
    cell.alpha_over_L = cfg.alpha_over_L[ia];
    const double alpha = cfg.alpha_over_L[ia] / retain.L;
    const double sum = num::squared_norm(num::axpy(1.0, g_e, retain.grad(theta)));
    if (sum > 1e-24) {
        cell.check = verify_retention_benefit(retain, theta, g_e, alpha, cfg.omegas[io]);
    } else {
        // g_r = -g_e: the ratio diverges, so neither condition can hold.
        cell.check.alpha = alpha;
        cell.check.omega = cfg.omegas[io];
        cell.check.L = retain.L;
        cell.check.ratio = INFINITY;
        cell.check.cos_phi = -1.0;
        cell.check.conflict = true;
        const auto g = grp::combine(g_e, retain.grad(theta), cfg.omegas[io]);
        cell.check.loss_grp = retain.loss(num::axpy(-alpha, g.g_hat, theta));
        cell.check.loss_plain = retain.loss(num::axpy(-alpha, g_e, theta));
        cell.check.holds = cell.check.loss_grp <= cell.check.loss_plain + kRetentionTolerance;
    }
    return cell;
}

}  // namespace detail

inline RetentionGridReport retention_grid(const RetentionGridConfig& cfg) {
    if (cfg.cells() == 0) throw ConfigError("retention_grid: every axis needs at least one value");
    RetentionGridReport rep;
    rep.cells.resize(cfg.cells());
    const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, rep.cells.size()));
    if (jobs == 1) {
        for (std::size_t i = 0; i < rep.cells.size(); ++i) rep.cells[i] = detail::grid_cell(cfg, i);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < jobs; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < rep.cells.size(); i += jobs) rep.cells[i] = detail::grid_cell(cfg, i);
            });
    }
    auto& s = rep.summary;
    s.cells = rep.cells.size();
    for (const auto& cell : rep.cells) {
        const auto& r = cell.check;
        s.cond1 += r.cond1;
        s.cond2 += r.cond2;
        s.both += r.asserted();
        s.violations += r.violation();
        s.both_with_conflict += r.asserted() && r.conflict;
        s.holds += r.holds;
        if (r.cond1 && !r.cond2) {
            ++s.cond1_only;
            s.cond1_only_holds += r.holds;
        }
        if (r.conflict) {
            ++s.conflict_cells;
            s.conflict_holds += r.holds;
        }
    }
    return rep;
}

inline constexpr const char* kRetentionGridCsvHeader =
    "cell,cos_phi,norm_ratio,alpha_L,omega,ratio,ell,L,cond1,cond2,conflict,loss_grp,loss_plain,holds";

inline void write_retention_grid_csv(std::ostream& os, const RetentionGridReport& rep) {
    os << kRetentionGridCsvHeader << '\n';
    for (const auto& c : rep.cells) {
        const auto& r = c.check;
        os << c.index << ',' << erasure::fmt_double(c.cos_target) << ',' << erasure::fmt_double(c.norm_ratio) << ','
           << erasure::fmt_double(c.alpha_over_L) << ',' << erasure::fmt_double(r.omega) << ','
           << erasure::fmt_double(r.ratio) << ',' << erasure::fmt_double(r.ell) << ',' << erasure::fmt_double(r.L)
           << ',' << r.cond1 << ',' << r.cond2 << ',' << r.conflict << ',' << erasure::fmt_double(r.loss_grp) << ','
           << erasure::fmt_double(r.loss_plain) << ',' << r.holds << '\n';
    }
}

// ---------------------------------------------------------------------------
// Deviation lower bound on random vectors

struct DeviationBoundReport {
    std::size_t trials = 0;
    std::size_t applicable = 0;  // delta < Delta
    std::size_t passed = 0;
    std::size_t failed = 0;
    std::size_t equality_cases = 0;  // a == b
    double worst_margin = INFINITY;  // min over applicable trials of lhs - rhs

    bool ok() const { return failed == 0; }
};

/// Random (a, b, c) triples with coordinates of scale 1e-3..1, so an absolute
/// slack stays above rounding error; a third of the trials put a close
/// to b so the bound is active, and every 100th trial sets a = b.
inline DeviationBoundReport verify_prop1_vectors(std::size_t trials, std::size_t dim, std::uint64_t seed,
                                        double slack = metrics::kBoundSlack) {
    if (trials < 1) throw ContractError("verify_prop1_vectors: need at least one trial");
    if (dim < 1) throw ContractError("verify_prop1_vectors: dimension must be >= 1");
    Rng rng = Rng::stream(seed, "prop1");
    DeviationBoundReport rep;
    Vec a(dim), b(dim), c(dim);
    for (std::size_t t = 0; t < trials; ++t) {
        const double scale = std::pow(10.0, rng.uniform(-3.0, 0.0));
        for (std::size_t i = 0; i < dim; ++i) {
            b[i] = scale * rng.normal();
            c[i] = scale * rng.normal();
        }
        const bool equal = t % 100 == 0;
        const double near = t % 3 == 0 ? rng.uniform(0.0, 1.0) : 2.0;
        for (std::size_t i = 0; i < dim; ++i) a[i] = equal ? b[i] : b[i] + near * scale * rng.normal();
        const auto chk = metrics::deviation_bound_check(a, b, c, slack);
        ++rep.trials;
        rep.equality_cases += equal;
        if (chk.applicable) {
            ++rep.applicable;
            rep.worst_margin = std::min(rep.worst_margin, chk.lhs - chk.rhs);
        }
        if (chk.holds)
            ++rep.passed;
        else
            ++rep.failed;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const DescentReport& r) {
    nlohmann::json v = nlohmann::json::array();
    for (const auto& x : r.violations)
        v.push_back({{"step", x.step}, {"loss_before", x.loss_before}, {"loss_after", x.loss_after},
                     {"cos_phi", x.cos_phi}, {"omega", x.omega}});
    j = {{"alpha", r.alpha},           {"L", r.L},
         {"steps", r.steps},           {"conflicts", r.conflicts},
         {"stalls", r.stalls},         {"stall_breaches", r.stall_breaches},
         {"initial_loss", r.initial_loss}, {"final_loss", r.final_loss},
         {"violations", v},            {"passed", r.passed()}};
}

inline void to_json(nlohmann::json& j, const DescentSweepSummary& s) {
    j = {{"trials", s.trials},
         {"steps", s.steps},
         {"conflicts", s.conflicts},
         {"violations", s.violations},
         {"stalls", s.stalls},
         {"stall_breaches", s.stall_breaches},
         {"degenerate_trials", s.degenerate_trials},
         {"degenerate_frozen", s.degenerate_frozen},
         {"passed", s.passed()}};
}

inline void to_json(nlohmann::json& j, const RetentionGridSummary& s) {
    j = {{"cells", s.cells},
         {"cond1", s.cond1},
         {"cond2", s.cond2},
         {"both", s.both},
         {"both_with_conflict", s.both_with_conflict},
         {"violations", s.violations},
         {"cond1_only", s.cond1_only},
         {"cond1_only_holds", s.cond1_only_holds},
         {"conflict_cells", s.conflict_cells},
         {"conflict_holds", s.conflict_holds},
         {"holds", s.holds},
         {"satisfiable_fraction", s.cells ? static_cast<double>(s.both) / static_cast<double>(s.cells) : 0.0},
         {"passed", s.passed()}};
}

inline void to_json(nlohmann::json& j, const DeviationBoundReport& r) {
    j = {{"trials", r.trials},
         {"applicable", r.applicable},
         {"passed", r.passed},
         {"failed", r.failed},
         {"equality_cases", r.equality_cases},
         {"worst_margin", std::isfinite(r.worst_margin) ? nlohmann::json(r.worst_margin) : nlohmann::json(nullptr)},
         {"ok", r.ok()}};
}

}  // namespace aegis::theoremlab
