#pragma once

// Adversarial prompts c* (attacker view) and adversarial erasure targets c'
// (defender view). Both optimize only the learnable segment of an embedding.

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aegis/concepts.hpp"
#include "aegis/diffusion.hpp"
#include "aegis/errors.hpp"
#include "aegis/rng.hpp"
#include "aegis/scoring.hpp"

namespace aegis::adversarial {

using concepts::ConceptEmbedding;
using diffusion::NoisePredictorParams;
using diffusion::NoiseSchedule;
using diffusion::ZBatch;
using num::Tape;
using num::Var;
using num::Vec;

/// Draws a clean data point for building latents.
using PointSampler = std::function<diffusion::Point(Rng&)>;

struct AttackConfig {
    double step = 1e-3;            // sign step size, or learning rate for gradient updates
    std::size_t iterations = 1;    // inner steps (AET) or attack iterations
    std::size_t segment_len = 1;
    concepts::LearnableInit init;  // segment placement and initializer width
    bool sign_update = true;
    bool warm_start = true;        // carry the segment across training epochs
    diffusion::Optimizer optimizer = diffusion::Optimizer::sgd;
    std::size_t batch = 1;         // latents per step
    std::size_t eval_every = 10;   // attack: generation check cadence
    bool stop_on_success = true;
    metrics::ScoringConfig scoring;

    void validate(bool allow_zero_iterations = false) const {
        if (!(step > 0.0) || !std::isfinite(step)) throw ConfigError("attack config: step must be positive");
        if (!allow_zero_iterations && iterations < 1) throw ConfigError("attack config: iterations must be >= 1");
        if (segment_len < 1) throw ConfigError("attack config: segment_len must be >= 1");
        if (batch < 1) throw ConfigError("attack config: batch must be >= 1");
    }
};

/// Training-time AET: one sign step of 1e-3 per epoch on a length-1 segment.
inline AttackConfig aet_defaults() {
    AttackConfig c;
    c.step = 1e-3;
    c.iterations = 1;
    c.segment_len = 1;
    c.sign_update = true;
    return c;
}

/// Evaluation attack: 40 plain gradient steps at lr 0.01 on a length-5 segment.
inline AttackConfig attack_defaults() {
    AttackConfig c;
    c.step = 0.01;
    c.iterations = 40;
    c.segment_len = 5;
    c.sign_update = false;
    c.batch = 8;
    return c;
}

inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

struct ObjectiveGrad {
    double value = 0.0;
    Vec grad;  // full-length gradient with respect to the embedding
};

namespace detail {

inline void check_pair(const NoisePredictorParams& theta, const NoisePredictorParams& theta0) {
    if (theta.theta.size() != theta0.theta.size() || !(theta.arch == theta0.arch))
        throw ShapeError("fine-tuned and original parameters differ in shape");
}

inline ObjectiveGrad finish(Tape& tape, const Var& loss, const Var& leaf, const char* what) {
    ObjectiveGrad out;
    out.value = loss.value().item();
    out.grad = tape.backward(loss, {leaf})[0].values();
    if (!std::isfinite(out.value) || !num::all_finite(out.grad))
        throw NumericError(std::string(what) + ": non-finite objective or gradient (objective " +
                           std::to_string(out.value) + ")");
    return out;
}

}  // namespace detail

/// ||eps0(z|c') - eps(z|c_e)||^2 + ||eps0(z|c') - eps0(z|c_e)||^2, averaged over rows.
inline ObjectiveGrad aet_objective(const ConceptEmbedding& cp, const ConceptEmbedding& ce,
                                   const NoisePredictorParams& theta, const NoisePredictorParams& theta0,
                                   const ZBatch& zb) {
    detail::check_pair(theta, theta0);
    Tape tape;
    Var th = diffusion::params_constant(tape, theta);
    Var th0 = diffusion::params_constant(tape, theta0);
    Var c = diffusion::concept_row(tape, cp.v, true);
    Var e = diffusion::concept_row(tape, ce.v, false);
    Var a = diffusion::predict_rows(tape, theta0, th0, zb, c);
    Var b = diffusion::predict_rows(tape, theta, th, zb, e);
    Var d = diffusion::predict_rows(tape, theta0, th0, zb, e);
    Var loss = num::scale(num::squared_norm(a - b) + num::squared_norm(a - d), 1.0 / static_cast<double>(zb.rows()));
    return detail::finish(tape, loss, c, "aet_step");
}

/// ||eps(z|c*) - eps0(z|c_e)||^2, averaged over rows.
inline ObjectiveGrad attack_objective(const ConceptEmbedding& cs, const ConceptEmbedding& ce,
                                      const NoisePredictorParams& theta, const NoisePredictorParams& theta0,
                                      const ZBatch& zb) {
    detail::check_pair(theta, theta0);
    Tape tape;
    Var th = diffusion::params_constant(tape, theta);
    Var th0 = diffusion::params_constant(tape, theta0);
    Var c = diffusion::concept_row(tape, cs.v, true);
    Var e = diffusion::concept_row(tape, ce.v, false);
    Var diff = diffusion::predict_rows(tape, theta, th, zb, c) - diffusion::predict_rows(tape, theta0, th0, zb, e);
    Var loss = num::scale(num::squared_norm(diff), 1.0 / static_cast<double>(zb.rows()));
    return detail::finish(tape, loss, c, "attack_prompt_step");
}

/// c <- c - beta * sign(grad) on the learnable segment.
inline ConceptEmbedding sign_step(ConceptEmbedding c, std::span<const double> grad, double beta) {
    Vec delta(c.dim(), 0.0);
    for (std::size_t i = c.learnable_start; i < c.learnable_start + c.learnable_len; ++i) delta[i] = -beta * sign(grad[i]);
    concepts::apply_segment_update(c, delta);
    return c;
}

/// c <- c - lr * grad on the learnable segment.
inline ConceptEmbedding gradient_step(ConceptEmbedding c, std::span<const double> grad, double lr) {
    Vec delta(c.dim(), 0.0);
    for (std::size_t i = c.learnable_start; i < c.learnable_start + c.learnable_len; ++i) delta[i] = -lr * grad[i];
    concepts::apply_segment_update(c, delta);
    return c;
}

inline void require_segment(const ConceptEmbedding& c, const char* what) {
    c.validate();
    if (c.learnable_len == 0) throw ContractError(std::string(what) + ": embedding has no learnable segment");
}

inline ConceptEmbedding aet_step(const ConceptEmbedding& cp, const ConceptEmbedding& ce,
                                 const NoisePredictorParams& theta, const NoisePredictorParams& theta0,
                                 const ZBatch& zb, double beta) {
    require_segment(cp, "aet_step");
    return sign_step(cp, aet_objective(cp, ce, theta, theta0, zb).grad, beta);
}

/// Sign-form adversarial prompt update.
inline ConceptEmbedding attack_prompt_step(const ConceptEmbedding& cs, const ConceptEmbedding& ce,
                                           const NoisePredictorParams& theta, const NoisePredictorParams& theta0,
                                           const ZBatch& zb, double beta) {
    require_segment(cs, "attack_prompt_step");
    return sign_step(cs, attack_objective(cs, ce, theta, theta0, zb).grad, beta);
}

/// Plain-gradient adversarial prompt update.
inline ConceptEmbedding attack_gradient_step(const ConceptEmbedding& cs, const ConceptEmbedding& ce,
                                             const NoisePredictorParams& theta, const NoisePredictorParams& theta0,
                                             const ZBatch& zb, double lr) {
    require_segment(cs, "attack_gradient_step");
    return gradient_step(cs, attack_objective(cs, ce, theta, theta0, zb).grad, lr);
}

inline ZBatch draw_zbatch(const PointSampler& points, const NoiseSchedule& s, std::size_t batch,
                          std::size_t temb_dim, Rng& rng) {
    std::vector<diffusion::LatentState> states;
    states.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) states.push_back(diffusion::draw_latent(points(rng), s, rng));
    return diffusion::make_zbatch(states, s.T, temb_dim);
}

/// K sign steps from the previous epoch's segment (or a fresh draw when
/// `prev` carries no segment), each at a freshly drawn latent batch.
inline ConceptEmbedding generate_aet(const ConceptEmbedding& prev, const ConceptEmbedding& ce,
                                     const NoisePredictorParams& theta, const NoisePredictorParams& theta0,
                                     const NoiseSchedule& s, const AttackConfig& cfg, const PointSampler& points,
                                     Rng& rng) {
    cfg.validate();
    ConceptEmbedding c = prev;
    if (c.learnable_len == 0) throw ContractError("generate_aet: previous AET has no learnable segment");
    for (std::size_t k = 0; k < cfg.iterations; ++k) {
        const ZBatch zb = draw_zbatch(points, s, cfg.batch, theta.arch.temb_dim, rng);
        c = aet_step(c, ce, theta, theta0, zb, cfg.step);
    }
    return c;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const AttackConfig& c) {
    j = {{"step", c.step},
         {"iterations", c.iterations},
         {"segment_len", c.segment_len},
         {"segment_start", c.init.start},
         {"init_half_width", c.init.half_width},
         {"sign_update", c.sign_update},
         {"warm_start", c.warm_start},
         {"optimizer", c.optimizer == diffusion::Optimizer::adam ? "adam" : "sgd"},
         {"batch", c.batch},
         {"eval_every", c.eval_every},
         {"stop_on_success", c.stop_on_success},
         {"samples", c.scoring.samples},
         {"threshold", c.scoring.threshold}};
}

inline AttackConfig attack_from_json(const nlohmann::json& j, AttackConfig d) {
    d.step = j.value("step", d.step);
    d.iterations = j.value("iterations", d.iterations);
    d.segment_len = j.value("segment_len", d.segment_len);
    d.init.start = j.value("segment_start", d.init.start);
    d.init.half_width = j.value("init_half_width", d.init.half_width);
    d.sign_update = j.value("sign_update", d.sign_update);
    d.warm_start = j.value("warm_start", d.warm_start);
    if (j.contains("optimizer")) d.optimizer = diffusion::parse_optimizer(j.at("optimizer").get<std::string>());
    d.batch = j.value("batch", d.batch);
    d.eval_every = j.value("eval_every", d.eval_every);
    d.stop_on_success = j.value("stop_on_success", d.stop_on_success);
    d.scoring.samples = j.value("samples", d.scoring.samples);
    d.scoring.threshold = j.value("threshold", d.scoring.threshold);
    return d;
}

// ---------------------------------------------------------------------------
// Full attack

struct TraceRow {
    std::size_t iteration = 0;
    double objective = 0.0;
    bool success_so_far = false;
};

struct AttackResult {
    ConceptEmbedding c_star;
    bool success = false;
    double erased_fraction = 0.0;  // at the last generation check
    std::vector<TraceRow> trace;
};

inline void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& trace) {
    os << "iteration,objective,success_so_far\n";
    char buf[64];
    for (const TraceRow& r : trace) {
        std::snprintf(buf, sizeof buf, "%.17g", r.objective);
        os << r.iteration << ',' << buf << ',' << (r.success_so_far ? 1 : 0) << '\n';
    }
}

/// Optimizes c* against `theta_erased` so its prediction matches the original
/// model on `ce`. Generation is checked every `eval_every` iterations and after
/// the last one; the attack succeeds if any check succeeds.
inline AttackResult run_attack(const NoisePredictorParams& theta_erased, const NoisePredictorParams& theta0,
                               const ConceptEmbedding& ce, const concepts::ConceptUniverse& u,
                               const NoiseSchedule& s, const AttackConfig& cfg, std::uint64_t seed,
                               const PointSampler& points) {
    cfg.validate(true);
    Rng rng = Rng::stream(seed, "attack:" + ce.name);
    AttackResult res;
    res.c_star = concepts::init_learnable(ce, cfg.segment_len, seed, cfg.init);
    diffusion::AdamState adam;
    std::size_t checks = 0;

    auto check = [&]() {
        const auto g = metrics::toy_asr_single(theta_erased, res.c_star.v, u, s,
                                               splitmix64(seed) ^ fnv1a64("generate:" + ce.name) ^ checks++,
                                               cfg.scoring);
        res.erased_fraction = g.erased_fraction;
        res.success = res.success || g.success;
    };

    if (cfg.iterations == 0) {
        check();
        return res;
    }
    for (std::size_t it = 1; it <= cfg.iterations; ++it) {
        const ZBatch zb = draw_zbatch(points, s, cfg.batch, theta_erased.arch.temb_dim, rng);
        const ObjectiveGrad og = attack_objective(res.c_star, ce, theta_erased, theta0, zb);
        if (cfg.sign_update) {
            res.c_star = sign_step(res.c_star, og.grad, cfg.step);
        } else if (cfg.optimizer == diffusion::Optimizer::adam) {
            Vec seg(og.grad.begin() + static_cast<std::ptrdiff_t>(res.c_star.learnable_start),
                    og.grad.begin() + static_cast<std::ptrdiff_t>(res.c_star.learnable_start + res.c_star.learnable_len));
            Vec vals(res.c_star.v.begin() + static_cast<std::ptrdiff_t>(res.c_star.learnable_start),
                     res.c_star.v.begin() + static_cast<std::ptrdiff_t>(res.c_star.learnable_start + res.c_star.learnable_len));
            adam.apply(vals, seg, cfg.step);
            std::copy(vals.begin(), vals.end(), res.c_star.v.begin() + static_cast<std::ptrdiff_t>(res.c_star.learnable_start));
        } else {
            res.c_star = gradient_step(res.c_star, og.grad, cfg.step);
        }
        const bool evaluate = it == cfg.iterations || (cfg.eval_every > 0 && it % cfg.eval_every == 0);
        if (evaluate) check();
        res.trace.push_back({it, og.value, res.success});
        if (res.success && cfg.stop_on_success) break;
    }
    return res;
}

/// Data points of erase-group member `i`.
inline PointSampler erase_member_points(const concepts::ConceptUniverse& u, std::size_t i) {
    return [&u, i](Rng& rng) { return concepts::draw_erase_point(u, i, rng); };
}

}  // namespace aegis::adversarial
