#pragma once

// Erasure fine-tuning: negative-guidance targets, the plain ESD baseline, ESD
// with an adversarial erasure target, and the full AEGIS epoch (AET refresh,
// target, adversarial prompt, erasing/retention gradients, rectification,
// omega step, parameter step).

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aegis/adversarial.hpp"
#include "aegis/concepts.hpp"
#include "aegis/diffusion.hpp"
#include "aegis/errors.hpp"
#include "aegis/grp.hpp"

namespace aegis::erasure {

using adversarial::AttackConfig;
using concepts::ConceptEmbedding;
using diffusion::NoisePredictorParams;
using diffusion::NoiseSchedule;
using diffusion::ZBatch;
using num::Tape;
using num::Tensor;
using num::Var;
using num::Vec;

enum class Mode { esd, esd_aet, aegis, aegis_fixed_omega, no_aet, no_pr, no_dgr };
enum class Granularity { global, per_block };

inline const char* to_string(Mode m) {
    switch (m) {
        case Mode::esd: return "esd";
        case Mode::esd_aet: return "esd_aet";
        case Mode::aegis: return "aegis";
        case Mode::aegis_fixed_omega: return "aegis_fixed_omega";
        case Mode::no_aet: return "no_aet";
        case Mode::no_pr: return "no_pr";
        case Mode::no_dgr: return "no_dgr";
    }
    return "?";
}

inline Mode parse_mode(const std::string& s) {
    for (Mode m : {Mode::esd, Mode::esd_aet, Mode::aegis, Mode::aegis_fixed_omega, Mode::no_aet, Mode::no_pr,
                   Mode::no_dgr})
        if (s == to_string(m)) return m;
    throw ConfigError("unknown erasure mode '" + s + "'");
}

/// Which pieces of the full method a mode switches on.
struct ModeTraits {
    bool aet_target = false;      // target built from c' instead of c_e
    bool adversarial_input = false;  // erasing loss evaluated at c* instead of c_e
    bool retention = false;       // a retention gradient is formed
    bool data_retention = false;  // ... from retained-concept samples instead of theta - theta0
    bool rectify = false;         // DGR applied under conflict
    bool dynamic_omega = false;
};

inline ModeTraits traits(Mode m) {
    switch (m) {
        case Mode::esd: return {false, false, false, false, false, false};
        case Mode::esd_aet: return {true, false, false, false, false, false};
        case Mode::aegis: return {true, true, true, false, true, true};
        case Mode::aegis_fixed_omega: return {true, true, true, false, true, false};
        case Mode::no_aet: return {false, true, true, false, true, true};
        case Mode::no_pr: return {true, true, true, true, true, true};
        case Mode::no_dgr: return {true, true, true, false, false, false};
    }
    return {};
}

struct ErasureConfig {
    Mode mode = Mode::aegis;
    double eta = 1.0;
    double alpha = 1e-5;
    std::size_t epochs = 1000;
    AttackConfig aet = adversarial::aet_defaults();
    AttackConfig adv = adversarial::aet_defaults();  // training-time c* updates
    double omega0 = 0.0;
    double mu = 0.1;
    Granularity granularity = Granularity::global;
    diffusion::Optimizer optimizer = diffusion::Optimizer::sgd;
    std::size_t batch = 1;         // latents per epoch
    std::size_t retain_batch = 4;  // retained-concept latents per epoch (data-based retention only)
    bool log_block_cosines = false;

    ErasureConfig() { adv.sign_update = false; }

    void validate() const {
        if (!(eta >= 0.0)) throw ConfigError("erasure: eta must be >= 0");
        if (!(alpha > 0.0)) throw ConfigError("erasure: alpha must be > 0");
        if (epochs < 1) throw ConfigError("erasure: epochs must be >= 1");
        if (!(omega0 >= 0.0 && omega0 <= 1.0)) throw ConfigError("erasure: omega0 must lie in [0, 1]");
        if (!(mu > 0.0)) throw ConfigError("erasure: mu must be > 0");
        if (batch < 1 || retain_batch < 1) throw ConfigError("erasure: batch sizes must be >= 1");
        aet.validate();
        adv.validate();
    }
};

// ---------------------------------------------------------------------------
// Target and loss

/// eps0(z) - eta * (eps0(z|c_target) - eps0(z)), one row per latent.
inline Tensor build_erasure_target(const NoisePredictorParams& theta0, const ZBatch& zb,
                                   std::span<const double> c_target, double eta) {
    const Tensor uncond = diffusion::predict_batch(theta0, zb, {});
    const Tensor cond = diffusion::predict_batch(theta0, zb, c_target);
    Tensor out = uncond;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = uncond[i] - eta * (cond[i] - uncond[i]);
    return out;
}

struct LossGrad {
    double value = 0.0;
    Vec grad;
};

/// ||eps(z|c_input) - target||^2 averaged over rows, with its gradient in theta.
inline LossGrad erasing_loss(const NoisePredictorParams& theta, std::span<const double> c_input, const Tensor& target,
                             const ZBatch& zb) {
    if (target.rows() != zb.rows() || target.cols() != 2) throw ShapeError("erasing_loss: target/latent shape mismatch");
    Tape tape;
    Var th = diffusion::params_leaf(tape, theta);
    Var pred = diffusion::predict_rows(tape, theta, th, zb, diffusion::concept_row(tape, c_input, false));
    Var loss = num::scale(num::squared_norm(pred - tape.constant(target)), 1.0 / static_cast<double>(zb.rows()));
    return {loss.value().item(), tape.backward(loss, {th})[0].values()};
}

/// Data-based retention: mean ||eps(z|c_r) - eps0(z|c_r)||^2 over retained-concept latents.
inline LossGrad data_retention_loss(const NoisePredictorParams& theta, const NoisePredictorParams& theta0,
                                    const concepts::ConceptUniverse& u, const NoiseSchedule& s, std::size_t n,
                                    Rng& rng) {
    Tape tape;
    Var th = diffusion::params_leaf(tape, theta);
    Var th0 = diffusion::params_constant(tape, theta0);
    Var total;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = rng.below(u.retained.size());
        const auto lat = diffusion::draw_latent(concepts::draw_retained_point(u, r, rng), s, rng);
        const ZBatch zb = diffusion::make_zbatch(std::span(&lat, 1), s.T, theta.arch.temb_dim);
        Var c = diffusion::concept_row(tape, u.retained[r].v, false);
        Var d = num::squared_norm(diffusion::predict_rows(tape, theta, th, zb, c) -
                                  diffusion::predict_rows(tape, theta0, th0, zb, c));
        total = i == 0 ? d : total + d;
    }
    Var loss = num::scale(total, 1.0 / static_cast<double>(n));
    return {loss.value().item(), tape.backward(loss, {th})[0].values()};
}

// ---------------------------------------------------------------------------
// Run state and log

struct RunRow {
    std::size_t epoch = 0;
    double L_e = 0.0;
    double L_r = 0.0;
    double cos_phi = 0.0;
    double lambda = 0.0;
    double omega = 0.0;
    double theta_drift = 0.0;
    bool conflict = false;
    std::vector<double> block_cos;  // optional, per parameter block
};

struct RunRecord {
    Mode mode = Mode::aegis;
    std::vector<RunRow> rows;
};

inline const char* kRunCsvHeader = "epoch,L_e,L_r,cos_phi,lambda,omega,theta_drift";

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_run_csv(std::ostream& os, const RunRecord& rec) {
    os << kRunCsvHeader << '\n';
    for (const RunRow& r : rec.rows)
        os << r.epoch << ',' << fmt_double(r.L_e) << ',' << fmt_double(r.L_r) << ',' << fmt_double(r.cos_phi) << ','
           << fmt_double(r.lambda) << ',' << fmt_double(r.omega) << ',' << fmt_double(r.theta_drift) << '\n';
}

struct EpochState {
    NoisePredictorParams theta;
    grp::OmegaState omega;
    ConceptEmbedding c_prime;  // AET, carried across epochs
    ConceptEmbedding c_star;   // training-time adversarial prompt
    diffusion::AdamState adam;
    std::size_t epoch = 0;     // completed epochs
};

struct EpochContext {
    const NoisePredictorParams& theta0;
    const concepts::ConceptUniverse& universe;
    const NoiseSchedule& schedule;
    const ErasureConfig& config;
    std::uint64_t seed = 0;
};

inline EpochState initial_state(const EpochContext& ctx) {
    const ConceptEmbedding& ce = ctx.universe.erased();
    EpochState st;
    st.theta = ctx.theta0;
    st.omega.omega = ctx.config.omega0;
    st.omega.mu = ctx.config.mu;
    st.omega.fixed = !traits(ctx.config.mode).dynamic_omega;
    st.c_prime = concepts::init_learnable(ce, ctx.config.aet.segment_len, splitmix64(ctx.seed) ^ 0xAE7ull,
                                          ctx.config.aet.init);
    st.c_star = concepts::init_learnable(ce, ctx.config.adv.segment_len, splitmix64(ctx.seed) ^ 0xC5ull,
                                         ctx.config.adv.init);
    return st;
}

namespace detail {

template <class F>
auto staged(long epoch, const char* stage, F&& f) -> decltype(f()) {
    try {
        auto out = f();
        return out;
    } catch (const NumericAbort&) {
        throw;
    } catch (const NumericError& e) {
        throw NumericAbort(epoch, stage, e.what());
    }
}

inline void require_finite(long epoch, const char* stage, double v) {
    if (!std::isfinite(v)) throw NumericAbort(epoch, stage, "non-finite value");
}

inline void require_finite(long epoch, const char* stage, std::span<const double> v) {
    if (!num::all_finite(v)) throw NumericAbort(epoch, stage, "non-finite vector");
}

}  // namespace detail

/// One epoch. The latent batch comes from the erased concept's data; AET
/// steps draw their own latents from the same stream.
inline grp::GradReport aegis_epoch(EpochState& st, const EpochContext& ctx, Rng& rng, RunRow* row = nullptr) {
    const ErasureConfig& cfg = ctx.config;
    const ModeTraits tr = traits(cfg.mode);
    const ConceptEmbedding& ce = ctx.universe.erased();
    const long ep = static_cast<long>(st.epoch + 1);
    const auto points = adversarial::erase_member_points(ctx.universe, 0);

    const ZBatch zb = adversarial::draw_zbatch(points, ctx.schedule, cfg.batch, st.theta.arch.temb_dim, rng);

    // AET refresh.
    if (tr.aet_target) {
        Rng aet_rng = rng.fork(rng());
        ConceptEmbedding start = st.c_prime;
        if (!cfg.aet.warm_start)
            start = concepts::init_learnable(ce, cfg.aet.segment_len, rng(), cfg.aet.init);
        st.c_prime = detail::staged(ep, "aet", [&] {
            return adversarial::generate_aet(start, ce, st.theta, ctx.theta0, ctx.schedule, cfg.aet, points, aet_rng);
        });
    }

    // Erasure target.
    const ConceptEmbedding& c_target = tr.aet_target ? st.c_prime : ce;
    const Tensor target = detail::staged(ep, "target", [&] {
        return build_erasure_target(ctx.theta0, zb, c_target.v, cfg.eta);
    });

    // Adversarial prompt.
    if (tr.adversarial_input) {
        st.c_star = detail::staged(ep, "adversarial_prompt", [&] {
            return cfg.adv.sign_update
                       ? adversarial::attack_prompt_step(st.c_star, ce, st.theta, ctx.theta0, zb, cfg.adv.step)
                       : adversarial::attack_gradient_step(st.c_star, ce, st.theta, ctx.theta0, zb, cfg.adv.step);
        });
    }

    // Erasing and retention gradients.
    const ConceptEmbedding& c_input = tr.adversarial_input ? st.c_star : ce;
    const LossGrad le = detail::staged(ep, "erasing_loss", [&] { return erasing_loss(st.theta, c_input.v, target, zb); });
    detail::require_finite(ep, "erasing_loss", le.value);
    detail::require_finite(ep, "erasing_grad", le.grad);

    LossGrad lr;
    if (tr.data_retention) {
        Rng rr = rng.fork(rng());
        lr = detail::staged(ep, "retention_loss", [&] {
            return data_retention_loss(st.theta, ctx.theta0, ctx.universe, ctx.schedule, cfg.retain_batch, rr);
        });
    } else {
        lr.grad = grp::retention_grad(st.theta.theta, ctx.theta0.theta);
        lr.value = 0.5 * num::squared_norm(lr.grad);
    }
    detail::require_finite(ep, "retention_loss", lr.value);

    // Conflict branch.
    const double omega_now = st.omega.omega;
    grp::GradReport rep;
    std::vector<double> block_cos;
    if (tr.rectify) {
        rep = cfg.granularity == Granularity::per_block
                  ? grp::combine_per_block(le.grad, lr.grad, omega_now, st.theta.blocks)
                  : grp::combine(le.grad, lr.grad, omega_now);
    } else {
        rep = grp::combine(le.grad, lr.grad, 0.0);
        rep.g_hat = rep.g_e;
        rep.lambda = 0.0;
    }
    if (cfg.log_block_cosines) block_cos = grp::block_cosines(le.grad, lr.grad, st.theta.blocks);
    detail::require_finite(ep, "rectify", rep.g_hat);

    // Omega step, then cache this epoch's gradients.
    if (tr.dynamic_omega) {
        const double g_omega = grp::omega_gradient(le.grad, st.omega.prev_g_e, st.omega.prev_g_r);
        st.omega = grp::update_omega(st.omega, g_omega);
        st.omega.prev_g_e = le.grad;
        st.omega.prev_g_r = lr.grad;
    }

    // Parameter step.
    if (cfg.optimizer == diffusion::Optimizer::adam) {
        st.adam.apply(st.theta.theta, rep.g_hat, cfg.alpha);
    } else {
        for (std::size_t i = 0; i < st.theta.theta.size(); ++i) st.theta.theta[i] -= cfg.alpha * rep.g_hat[i];
    }
    detail::require_finite(ep, "parameter_step", st.theta.theta);
    ++st.epoch;

    if (row) {
        row->epoch = st.epoch;
        row->L_e = le.value;
        row->L_r = lr.value;
        row->cos_phi = rep.cos_phi;
        row->lambda = rep.lambda;
        row->omega = omega_now;
        row->theta_drift = num::norm(num::subtract(st.theta.theta, ctx.theta0.theta));
        row->conflict = rep.conflict;
        row->block_cos = std::move(block_cos);
    }
    return rep;
}

/// One plain ESD step: erasing loss on c_e with the c_e-based target, no retention.
inline NoisePredictorParams esd_step(const NoisePredictorParams& theta, const EpochContext& ctx, Rng& rng) {
    ErasureConfig cfg = ctx.config;
    cfg.mode = Mode::esd;
    const EpochContext local{ctx.theta0, ctx.universe, ctx.schedule, cfg, ctx.seed};
    EpochState st = initial_state(local);
    st.theta = theta;
    aegis_epoch(st, local, rng);
    return st.theta;
}

struct RunResult {
    NoisePredictorParams theta;
    RunRecord record;
    ConceptEmbedding c_prime;
    ConceptEmbedding c_star;
    grp::OmegaState omega;
};

/// E epochs of the configured mode from theta0. epochs = 0 returns theta0.
inline RunResult run_aegis(const NoisePredictorParams& theta0, const concepts::ConceptUniverse& u,
                           const NoiseSchedule& s, const ErasureConfig& cfg, std::uint64_t seed) {
    if (cfg.epochs > 0) cfg.validate();
    theta0.validate();
    const EpochContext ctx{theta0, u, s, cfg, seed};
    EpochState st = initial_state(ctx);
    Rng rng = Rng::stream(seed, std::string("erase:") + to_string(cfg.mode));
    RunResult out;
    out.record.mode = cfg.mode;
    out.record.rows.reserve(cfg.epochs);
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        RunRow row;
        aegis_epoch(st, ctx, rng, &row);
        out.record.rows.push_back(std::move(row));
    }
    out.theta = std::move(st.theta);
    out.c_prime = std::move(st.c_prime);
    out.c_star = std::move(st.c_star);
    out.omega = std::move(st.omega);
    return out;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const ErasureConfig& c) {
    j = {{"mode", to_string(c.mode)},
         {"eta", c.eta},
         {"alpha", c.alpha},
         {"epochs", c.epochs},
         {"aet", c.aet},
         {"adv", c.adv},
         {"omega0", c.omega0},
         {"mu", c.mu},
         {"granularity", c.granularity == Granularity::per_block ? "per_block" : "global"},
         {"optimizer", c.optimizer == diffusion::Optimizer::adam ? "adam" : "sgd"},
         {"batch", c.batch},
         {"retain_batch", c.retain_batch},
         {"log_block_cosines", c.log_block_cosines}};
}

inline ErasureConfig erasure_from_json(const nlohmann::json& j, ErasureConfig d = {}) {
    if (j.contains("mode")) d.mode = parse_mode(j.at("mode").get<std::string>());
    d.eta = j.value("eta", d.eta);
    d.alpha = j.value("alpha", d.alpha);
    d.epochs = j.value("epochs", d.epochs);
    if (j.contains("aet")) d.aet = adversarial::attack_from_json(j.at("aet"), d.aet);
    if (j.contains("adv")) d.adv = adversarial::attack_from_json(j.at("adv"), d.adv);
    d.omega0 = j.value("omega0", d.omega0);
    d.mu = j.value("mu", d.mu);
    if (j.contains("granularity")) {
        const auto g = j.at("granularity").get<std::string>();
        if (g == "global")
            d.granularity = Granularity::global;
        else if (g == "per_block")
            d.granularity = Granularity::per_block;
        else
            throw ConfigError("unknown granularity '" + g + "'");
    }
    if (j.contains("optimizer")) d.optimizer = diffusion::parse_optimizer(j.at("optimizer").get<std::string>());
    d.batch = j.value("batch", d.batch);
    d.retain_batch = j.value("retain_batch", d.retain_batch);
    d.log_block_cosines = j.value("log_block_cosines", d.log_block_cosines);
    d.validate();
    return d;
}

}  // namespace aegis::erasure
