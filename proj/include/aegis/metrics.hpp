#pragma once

// Predicted-noise distances at the final step, the deviation lower bound,
// toy attack-success rate, retention drift and conflict traces.

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "aegis/adversarial.hpp"
#include "aegis/concepts.hpp"
#include "aegis/diffusion.hpp"
#include "aegis/erasure.hpp"
#include "aegis/scoring.hpp"

namespace aegis::metrics {

using concepts::ConceptEmbedding;
using diffusion::NoisePredictorParams;
using diffusion::NoiseSchedule;
using num::Tensor;
using num::Vec;

enum class DistanceKind { d0, d1, d2 };

inline const char* to_string(DistanceKind k) {
    return k == DistanceKind::d0 ? "d0" : (k == DistanceKind::d1 ? "d1" : "d2");
}

/// Fixed latents at t = T: one standard-normal z per seed.
struct ZProtocol {
    std::vector<std::uint64_t> seeds;

    static ZProtocol standard(std::size_t n = 16) {
        ZProtocol p;
        for (std::size_t i = 0; i < n; ++i) p.seeds.push_back(1000 + i);
        return p;
    }

    diffusion::ZBatch batch(const NoiseSchedule& s, std::size_t temb_dim) const {
        if (seeds.empty()) throw ContractError("z protocol: no seeds");
        std::vector<diffusion::LatentState> states;
        for (std::uint64_t sd : seeds) {
            Rng rng = Rng::stream(sd, "zT");
            states.push_back({{rng.normal(), rng.normal()}, s.T});
        }
        return diffusion::make_zbatch(states, s.T, temb_dim);
    }
};

/// Concept name -> adversarial prompt found for it.
using AttackMap = std::map<std::string, ConceptEmbedding>;

inline double mean_row_squared_distance(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / static_cast<double>(a.rows());
}

/// d0 = ||eps0(z|ci) - eps0(z|cj)||^2, d1 = ||eps(z|ci) - eps0(z|cj)||^2,
/// d2 = ||eps(z|ci) - eps(z|cj*)||^2, each averaged over the protocol's latents.
inline double noise_distance(DistanceKind kind, const NoisePredictorParams& theta, const NoisePredictorParams& theta0,
                             const ConceptEmbedding& ci, const ConceptEmbedding& cj, const NoiseSchedule& s,
                             const ZProtocol& zp, const AttackMap* attacks = nullptr) {
    const auto zb = zp.batch(s, theta0.arch.temb_dim);
    switch (kind) {
        case DistanceKind::d0:
            return mean_row_squared_distance(diffusion::predict_batch(theta0, zb, ci.v),
                                             diffusion::predict_batch(theta0, zb, cj.v));
        case DistanceKind::d1:
            return mean_row_squared_distance(diffusion::predict_batch(theta, zb, ci.v),
                                             diffusion::predict_batch(theta0, zb, cj.v));
        case DistanceKind::d2: {
            if (!attacks || !attacks->contains(cj.name))
                throw ContractError("noise_distance: no adversarial prompt for '" + cj.name + "'");
            return mean_row_squared_distance(diffusion::predict_batch(theta, zb, ci.v),
                                             diffusion::predict_batch(theta, zb, attacks->at(cj.name).v));
        }
    }
    return 0.0;
}

struct DistanceMatrix {
    DistanceKind kind = DistanceKind::d0;
    std::vector<std::string> names;
    std::vector<std::vector<double>> values;
    ZProtocol protocol;
};

inline DistanceMatrix distance_matrix(DistanceKind kind, const NoisePredictorParams& theta,
                                      const NoisePredictorParams& theta0, const std::vector<ConceptEmbedding>& cs,
                                      const NoiseSchedule& s, const ZProtocol& zp, const AttackMap* attacks = nullptr) {
    DistanceMatrix m{kind, {}, {}, zp};
    const auto zb = zp.batch(s, theta0.arch.temb_dim);
    std::vector<Tensor> row_pred, col_pred;
    for (const auto& c : cs) {
        m.names.push_back(c.name);
        row_pred.push_back(diffusion::predict_batch(kind == DistanceKind::d0 ? theta0 : theta, zb, c.v));
        if (kind == DistanceKind::d2) {
            if (!attacks || !attacks->contains(c.name))
                throw ContractError("distance_matrix: no adversarial prompt for '" + c.name + "'");
            col_pred.push_back(diffusion::predict_batch(theta, zb, attacks->at(c.name).v));
        } else {
            col_pred.push_back(diffusion::predict_batch(theta0, zb, c.v));
        }
    }
    for (std::size_t i = 0; i < cs.size(); ++i) {
        m.values.emplace_back();
        for (std::size_t j = 0; j < cs.size(); ++j)
            m.values.back().push_back(kind == DistanceKind::d0 && i == j
                                          ? 0.0
                                          : mean_row_squared_distance(row_pred[i], col_pred[j]));
    }
    return m;
}

// ---------------------------------------------------------------------------
// Deviation lower bound

struct BoundCheck {
    double lhs = 0.0;  // ||a - c||^2
    double rhs = 0.0;  // (sqrt(Delta) - sqrt(delta))^2
    double delta = 0.0;
    double Delta = 0.0;
    bool applicable = false;  // delta < Delta
    bool holds = true;
};

inline constexpr double kBoundSlack = 1e-12;

/// With Delta = ||b - c||^2 and delta = ||a - b||^2 < Delta, checks
/// ||a - c||^2 >= (sqrt(Delta) - sqrt(delta))^2.
inline BoundCheck deviation_bound_check(std::span<const double> a, std::span<const double> b,
                                        std::span<const double> c, double slack = kBoundSlack) {
    BoundCheck r;
    r.Delta = num::squared_norm(num::subtract(b, c));
    r.delta = num::squared_norm(num::subtract(a, b));
    r.lhs = num::squared_norm(num::subtract(a, c));
    const double gap = std::sqrt(r.Delta) - std::sqrt(r.delta);
    r.rhs = gap * gap;
    r.applicable = r.delta < r.Delta;
    r.holds = !r.applicable || r.lhs >= r.rhs - slack;
    return r;
}

/// The bound instantiated on models: a = eps(z|c), b = the erasure target built
/// from c_target, c = eps0(z|c), over the protocol's latents stacked into one vector.
inline BoundCheck live_deviation_check(const NoisePredictorParams& theta, const NoisePredictorParams& theta0,
                                       const ConceptEmbedding& c, const ConceptEmbedding& c_target, double eta,
                                       const NoiseSchedule& s, const ZProtocol& zp, double slack = 1e-9) {
    const auto zb = zp.batch(s, theta0.arch.temb_dim);
    const double n = static_cast<double>(zb.rows());
    Tensor a = diffusion::predict_batch(theta, zb, c.v);
    Tensor b = erasure::build_erasure_target(theta0, zb, c_target.v, eta);
    Tensor cc = diffusion::predict_batch(theta0, zb, c.v);
    // Scaling by 1/sqrt(n) turns stacked squared norms into row means.
    for (Tensor* t : {&a, &b, &cc})
        for (double& v : t->values()) v /= std::sqrt(n);
    return deviation_bound_check(a.data(), b.data(), cc.data(), slack);
}

// ---------------------------------------------------------------------------
// Attack success and retention

struct AsrReport {
    double rate = 0.0;
    std::vector<bool> successes;           // per (target, seed), target-major
    std::vector<double> erased_fractions;
    std::vector<adversarial::AttackResult> runs;
};

/// Fraction of successful attacks over every (target, seed) pair. Targets
/// are erase-group indices; each attack optimizes a prompt seeded from that
/// member and matches the original model's prediction on it.
inline AsrReport toy_asr(const NoisePredictorParams& theta_erased, const NoisePredictorParams& theta0,
                         const concepts::ConceptUniverse& u, const NoiseSchedule& s,
                         const adversarial::AttackConfig& cfg, std::span<const std::uint64_t> seeds,
                         std::span<const std::size_t> targets, bool keep_runs = false) {
    if (seeds.empty()) throw ContractError("toy_asr: need at least one seed");
    if (targets.empty()) throw ContractError("toy_asr: need at least one target");
    AsrReport rep;
    std::size_t hits = 0;
    for (std::size_t t : targets) {
        for (std::uint64_t sd : seeds) {
            auto run = adversarial::run_attack(theta_erased, theta0, u.erase_group.at(t), u, s, cfg, sd,
                                               adversarial::erase_member_points(u, t));
            hits += run.success ? 1 : 0;
            rep.successes.push_back(run.success);
            rep.erased_fractions.push_back(run.erased_fraction);
            if (keep_runs) rep.runs.push_back(std::move(run));
        }
    }
    rep.rate = static_cast<double>(hits) / static_cast<double>(rep.successes.size());
    return rep;
}

struct DriftProtocol {
    std::uint64_t seed = 77;
    std::size_t draws_per_concept = 64;
};

/// Mean over retained concepts and fixed (t, z_t) draws of ||eps(z|c_r) - eps0(z|c_r)||^2.
inline double retention_drift(const NoisePredictorParams& theta, const NoisePredictorParams& theta0,
                              const concepts::ConceptUniverse& u, const NoiseSchedule& s,
                              const DriftProtocol& dp = {}) {
    if (u.retained.empty()) throw ContractError("retention_drift: universe has no retained concepts");
    double total = 0.0;
    for (std::size_t r = 0; r < u.retained.size(); ++r) {
        Rng rng = Rng::stream(dp.seed, "drift:" + u.retained[r].name);
        std::vector<diffusion::LatentState> states;
        for (std::size_t i = 0; i < dp.draws_per_concept; ++i)
            states.push_back(diffusion::draw_latent(concepts::draw_retained_point(u, r, rng), s, rng));
        const auto zb = diffusion::make_zbatch(states, s.T, theta0.arch.temb_dim);
        total += mean_row_squared_distance(diffusion::predict_batch(theta, zb, u.retained[r].v),
                                           diffusion::predict_batch(theta0, zb, u.retained[r].v));
    }
    return total / static_cast<double>(u.retained.size());
}

// ---------------------------------------------------------------------------
// Conflict trace

enum class TraceGranularity { global, layer_mean };

/// Cosine series, one entry per epoch: the global cosine, or the mean of the
/// per-block cosines when those were logged.
inline std::vector<double> conflict_trace(const erasure::RunRecord& rec, TraceGranularity g = TraceGranularity::global) {
    std::vector<double> out;
    out.reserve(rec.rows.size());
    for (const auto& r : rec.rows) {
        if (g == TraceGranularity::global) {
            out.push_back(r.cos_phi);
            continue;
        }
        if (r.block_cos.empty()) throw ContractError("conflict_trace: run has no per-block cosines");
        double s = 0.0;
        for (double c : r.block_cos) s += c;
        out.push_back(s / static_cast<double>(r.block_cos.size()));
    }
    return out;
}

}  // namespace aegis::metrics
