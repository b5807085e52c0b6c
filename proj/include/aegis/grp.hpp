#pragma once

// Gradient regularization projection: data-free retention gradient, conflict
// test, directional rectification of the erasing gradient and the sign-step
// schedule for the rectification strength omega.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aegis/diffusion.hpp"
#include "aegis/errors.hpp"
#include "aegis/tensor.hpp"

namespace aegis::grp {

using num::Vec;

/// Gradient of 0.5 * ||theta - theta0||^2.
inline Vec retention_grad(std::span<const double> theta, std::span<const double> theta0) {
    if (theta.size() != theta0.size())
        throw ShapeError("retention_grad: parameter length " + std::to_string(theta.size()) + " vs " +
                         std::to_string(theta0.size()));
    return num::subtract(theta, theta0);
}

inline double retention_loss(std::span<const double> theta, std::span<const double> theta0) {
    return 0.5 * num::squared_norm(retention_grad(theta, theta0));
}

struct Conflict {
    double cos_phi = 0.0;
    bool conflict = false;
    bool degenerate = false;  // one of the gradients vanished
};

inline Conflict detect_conflict(std::span<const double> ge, std::span<const double> gr) {
    const double d = num::dot(ge, gr);
    const double ne = num::norm(ge), nr = num::norm(gr);
    if (ne == 0.0 || nr == 0.0) return {0.0, false, true};
    const double c = std::clamp(d / (ne * nr), -1.0, 1.0);
    return {c, d < 0.0, false};
}

struct Rectification {
    double lambda = 0.0;
    Vec g_tilde;
};

/// lambda = -omega <ge,gr> / ||gr||^2 and g_tilde = lambda * gr. Requires conflict.
inline Rectification rectify(std::span<const double> ge, std::span<const double> gr, double omega) {
    const double d = num::dot(ge, gr);
    if (!(d < 0.0)) throw ContractError("rectify: gradients do not conflict (<g_e, g_r> = " + std::to_string(d) + ")");
    if (!(omega >= 0.0 && omega <= 1.0)) throw ContractError("rectify: omega outside [0, 1]");
    Rectification r;
    r.lambda = -omega * d / num::squared_norm(gr);
    r.g_tilde = num::scaled(r.lambda, gr);
    return r;
}

struct GradReport {
    Vec g_e;
    Vec g_r;
    double cos_phi = 0.0;
    bool conflict = false;
    bool degenerate = false;
    double lambda = 0.0;
    Vec g_hat;
};

/// g_hat = g_e without conflict, g_e + lambda * g_r under conflict.
inline GradReport combine(std::span<const double> ge, std::span<const double> gr, double omega) {
    if (ge.size() != gr.size()) throw ShapeError("combine: gradient lengths differ");
    GradReport rep;
    rep.g_e.assign(ge.begin(), ge.end());
    rep.g_r.assign(gr.begin(), gr.end());
    const Conflict c = detect_conflict(ge, gr);
    rep.cos_phi = c.cos_phi;
    rep.conflict = c.conflict;
    rep.degenerate = c.degenerate;
    if (!c.conflict) {
        rep.g_hat = rep.g_e;
        return rep;
    }
    Rectification r = rectify(ge, gr, omega);
    rep.lambda = r.lambda;
    rep.g_hat = num::axpy(1.0, r.g_tilde, ge);
    return rep;
}

/// <g_e_now, (<prev_ge, prev_gr> / ||prev_gr||^2) prev_gr>; 0 without a cache.
inline double omega_gradient(std::span<const double> ge_now, std::span<const double> prev_ge,
                             std::span<const double> prev_gr) {
    if (prev_ge.empty() || prev_gr.empty()) return 0.0;
    const double n = num::squared_norm(prev_gr);
    if (n == 0.0) return 0.0;
    const double coef = num::dot(prev_ge, prev_gr) / n;
    return coef * num::dot(ge_now, prev_gr);
}

struct OmegaState {
    double omega = 0.0;
    double mu = 0.1;
    Vec prev_g_e;
    Vec prev_g_r;
    bool fixed = false;  // pinned omega (ablations)
};

/// omega <- clamp(omega - mu * sign(grad), 0, 1); sign(0) = 0.
inline OmegaState update_omega(OmegaState s, double grad_omega) {
    if (!(s.mu > 0.0)) throw ConfigError("update_omega: mu must be positive");
    if (s.fixed) return s;
    const double sg = grad_omega > 0.0 ? 1.0 : (grad_omega < 0.0 ? -1.0 : 0.0);
    s.omega = std::clamp(s.omega - s.mu * sg, 0.0, 1.0);
    return s;
}

// ---------------------------------------------------------------------------
// Per-block variant: the same rectification applied independently on each
// parameter block (one layer's weights or biases).

struct BlockReport {
    std::vector<double> cos_phi;  // per block, in block-map order
    std::vector<double> lambda;
};

inline GradReport combine_per_block(std::span<const double> ge, std::span<const double> gr, double omega,
                                    const diffusion::BlockMap& blocks, BlockReport* per_block = nullptr) {
    if (ge.size() != gr.size()) throw ShapeError("combine_per_block: gradient lengths differ");
    if (!diffusion::blocks_partition(blocks, ge.size())) throw ShapeError("combine_per_block: blocks do not partition");
    GradReport rep;
    rep.g_e.assign(ge.begin(), ge.end());
    rep.g_r.assign(gr.begin(), gr.end());
    rep.g_hat = rep.g_e;
    const Conflict global = detect_conflict(ge, gr);
    rep.cos_phi = global.cos_phi;
    rep.degenerate = global.degenerate;
    for (const auto& b : blocks) {
        auto e = ge.subspan(b.offset, b.size());
        auto r = gr.subspan(b.offset, b.size());
        const GradReport local = combine(e, r, omega);
        std::copy(local.g_hat.begin(), local.g_hat.end(), rep.g_hat.begin() + static_cast<std::ptrdiff_t>(b.offset));
        rep.conflict = rep.conflict || local.conflict;
        rep.lambda = std::max(rep.lambda, local.lambda);
        if (per_block) {
            per_block->cos_phi.push_back(local.cos_phi);
            per_block->lambda.push_back(local.lambda);
        }
    }
    return rep;
}

/// Cosine between g_e and g_r on each block.
inline std::vector<double> block_cosines(std::span<const double> ge, std::span<const double> gr,
                                         const diffusion::BlockMap& blocks) {
    std::vector<double> out;
    out.reserve(blocks.size());
    for (const auto& b : blocks)
        out.push_back(detect_conflict(ge.subspan(b.offset, b.size()), gr.subspan(b.offset, b.size())).cos_phi);
    return out;
}

}  // namespace aegis::grp
