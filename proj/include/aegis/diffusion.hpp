#pragma once

// Toy denoising diffusion on 2-D points: linear noise schedule, conditional
// MLP noise predictor over a flat parameter vector, base training on the
// noise-prediction objective, and ancestral sampling.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aegis/autodiff.hpp"
#include "aegis/errors.hpp"
#include "aegis/rng.hpp"
#include "aegis/tensor.hpp"

namespace aegis::diffusion {

using num::Shape;
using num::Tape;
using num::Tensor;
using num::Var;
using num::Vec;
using Point = std::array<double, 2>;

// ---------------------------------------------------------------------------
// Noise schedule

struct NoiseSchedule {
    std::size_t T = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;
    Vec beta;       // beta[t-1] for t = 1..T
    Vec alpha_bar;  // alpha_bar[t] for t = 0..T, alpha_bar[0] = 1

    double beta_at(std::size_t t) const { return beta.at(t - 1); }
    double alpha_bar_at(std::size_t t) const { return alpha_bar.at(t); }
};

inline NoiseSchedule make_schedule(std::size_t T, double beta_start, double beta_end) {
    if (T < 1) throw ConfigError("schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.beta.resize(T);
    s.alpha_bar.resize(T + 1);
    s.alpha_bar[0] = 1.0;
    for (std::size_t t = 1; t <= T; ++t) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(T - 1);
        s.beta[t - 1] = beta_start + (beta_end - beta_start) * frac;
        s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t - 1]);
    }
    return s;
}

/// Default toy schedule: 50 steps, linear beta in [1e-4, 0.05].
inline NoiseSchedule default_schedule() { return make_schedule(50, 1e-4, 0.05); }

// ---------------------------------------------------------------------------
// Forward corruption

struct LatentState {
    Point z{};
    std::size_t t = 1;
};

/// sqrt(ab) * x + sqrt(1 - ab) * eps for an explicit cumulative coefficient.
inline Point noise_point(const Point& x, double alpha_bar, const Point& eps) {
    const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
    return {a * x[0] + b * eps[0], a * x[1] + b * eps[1]};
}

inline LatentState forward_noise(const Point& x, std::size_t t, const Point& eps, const NoiseSchedule& s) {
    if (t < 1 || t > s.T)
        throw ContractError("forward_noise: step " + std::to_string(t) + " outside [1, " + std::to_string(s.T) + "]");
    return {noise_point(x, s.alpha_bar_at(t), eps), t};
}

// ---------------------------------------------------------------------------
// Noise predictor

struct Architecture {
    std::size_t z_dim = 2;
    std::size_t temb_dim = 8;
    std::size_t concept_dim = 8;
    std::size_t hidden = 64;
    std::size_t depth = 3;  // hidden layers

    std::size_t input_dim() const { return z_dim + temb_dim + concept_dim; }
    friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct Block {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t size() const { return rows * cols; }
    Shape shape() const { return rows == 1 ? Shape{cols} : Shape{rows, cols}; }
    friend bool operator==(const Block&, const Block&) = default;
};

using BlockMap = std::vector<Block>;

/// Weights "l<k>.w" [in, out] and biases "l<k>.b" [out], laid out back to back.
inline BlockMap make_block_map(const Architecture& a) {
    BlockMap blocks;
    std::size_t off = 0;
    std::size_t in = a.input_dim();
    auto add = [&](std::string name, std::size_t r, std::size_t c) {
        blocks.push_back({std::move(name), off, r, c});
        off += r * c;
    };
    for (std::size_t k = 0; k <= a.depth; ++k) {
        const std::size_t out = k == a.depth ? a.z_dim : a.hidden;
        add("l" + std::to_string(k) + ".w", in, out);
        add("l" + std::to_string(k) + ".b", 1, out);
        in = out;
    }
    return blocks;
}

inline std::size_t parameter_count(const BlockMap& b) { return b.empty() ? 0 : b.back().offset + b.back().size(); }

/// Blocks partition [0, total) with no overlap and no gap.
inline bool blocks_partition(const BlockMap& blocks, std::size_t total) {
    std::size_t expect = 0;
    for (const Block& b : blocks) {
        if (b.offset != expect || b.size() == 0) return false;
        expect += b.size();
    }
    return expect == total;
}

struct NoisePredictorParams {
    Architecture arch;
    BlockMap blocks;
    Vec theta;

    void validate() const {
        if (blocks != make_block_map(arch)) throw ShapeError("parameter block map does not match architecture");
        if (!blocks_partition(blocks, theta.size()))
            throw ShapeError("parameter blocks do not partition theta of length " + std::to_string(theta.size()));
    }
};

inline NoisePredictorParams zero_params(const Architecture& a = {}) {
    NoisePredictorParams p{a, make_block_map(a), {}};
    p.theta.assign(parameter_count(p.blocks), 0.0);
    return p;
}

/// Glorot-uniform weights, zero biases.
inline NoisePredictorParams init_params(const Architecture& a, std::uint64_t seed) {
    NoisePredictorParams p = zero_params(a);
    Rng rng = Rng::stream(seed, "init");
    for (const Block& b : p.blocks) {
        if (b.name.ends_with(".b")) continue;
        const double lim = std::sqrt(6.0 / static_cast<double>(b.rows + b.cols));
        for (std::size_t i = 0; i < b.size(); ++i) p.theta[b.offset + i] = rng.uniform(-lim, lim);
    }
    return p;
}

/// Sinusoidal embedding of t/T at octave frequencies pi * 2^k.
inline Vec timestep_embedding(std::size_t t, std::size_t T, std::size_t dim) {
    Vec e(dim);
    const double s = static_cast<double>(t) / static_cast<double>(T);
    for (std::size_t k = 0; k < dim / 2; ++k) {
        const double w = std::numbers::pi * std::ldexp(1.0, static_cast<int>(k));
        e[2 * k] = std::sin(w * s);
        e[2 * k + 1] = std::cos(w * s);
    }
    return e;
}

inline Tensor timestep_embeddings(std::span<const std::size_t> ts, std::size_t T, std::size_t dim) {
    Vec out;
    out.reserve(ts.size() * dim);
    for (std::size_t t : ts) {
        const Vec e = timestep_embedding(t, T, dim);
        out.insert(out.end(), e.begin(), e.end());
    }
    return Tensor(Shape{ts.size(), dim}, std::move(out), num::Check::none);
}

/// MLP forward on a tape. `theta` is the flat parameter vector; `z` is [B,2],
/// `temb` is [B,temb_dim] and `c` is [B,concept_dim].
inline Var predict_noise(const Architecture& arch, const BlockMap& blocks, const Var& theta, const Var& z,
                         const Var& temb, const Var& c) {
    const std::size_t B = z.value().rows();
    Var h = num::concat_cols({z, temb, c});
    for (std::size_t k = 0; k <= arch.depth; ++k) {
        const Block& w = blocks[2 * k];
        const Block& b = blocks[2 * k + 1];
        Var W = num::view(theta, w.offset, {w.rows, w.cols});
        Var bias = num::tile_rows(num::view(theta, b.offset, {1, b.cols}), B);
        h = num::matmul(h, W) + bias;
        if (k < arch.depth) h = num::silu(h);
    }
    return h;
}

/// Convenience overload taking a params struct and batched plain inputs.
/// Returns the [B,2] prediction.
inline Tensor predict_noise_batch(const NoisePredictorParams& p, const Tensor& z, std::span<const std::size_t> ts,
                                  std::size_t T, const Tensor& c) {
    Tape tape;
    tape.set_grad_enabled(false);
    Var th = tape.constant(Tensor(Shape{p.theta.size()}, p.theta, num::Check::none));
    Var out = predict_noise(p.arch, p.blocks, th, tape.constant(z),
                            tape.constant(timestep_embeddings(ts, T, p.arch.temb_dim)), tape.constant(c));
    return out.value();
}

/// eps_theta(z_t | c); an empty concept means the unconditional (all-zero) input.
inline Point predict_noise(const NoisePredictorParams& p, const LatentState& s, std::size_t T,
                           std::span<const double> c = {}) {
    Vec cv(p.arch.concept_dim, 0.0);
    if (!c.empty()) {
        if (c.size() != cv.size()) throw ShapeError("predict_noise: concept dimension mismatch");
        cv.assign(c.begin(), c.end());
    }
    const std::size_t ts[1] = {s.t};
    const std::size_t m = cv.size();
    const Tensor out = predict_noise_batch(p, Tensor(Shape{1, 2}, Vec{s.z[0], s.z[1]}), ts, T,
                                           Tensor(Shape{1, m}, std::move(cv)));
    return {out[0], out[1]};
}

/// Uniform t in [1, T] and a fresh Gaussian eps applied to x.
inline LatentState draw_latent(const Point& x, const NoiseSchedule& s, Rng& rng) {
    const std::size_t t = 1 + rng.below(s.T);
    const Point e{rng.normal(), rng.normal()};
    return forward_noise(x, t, e, s);
}

/// A fixed set of latents with their timestep embeddings, shared by several
/// forward passes (different parameters or concepts) on one tape.
struct ZBatch {
    Tensor z;     // [B,2]
    Tensor temb;  // [B,temb_dim]
    std::vector<std::size_t> t;

    std::size_t rows() const { return z.rows(); }
};

inline ZBatch make_zbatch(std::span<const LatentState> states, std::size_t T, std::size_t temb_dim) {
    if (states.empty()) throw ContractError("make_zbatch: no latents");
    Vec z;
    std::vector<std::size_t> ts;
    for (const LatentState& s : states) {
        if (s.t < 1 || s.t > T) throw ContractError("make_zbatch: step outside [1, T]");
        z.push_back(s.z[0]);
        z.push_back(s.z[1]);
        ts.push_back(s.t);
    }
    return {Tensor(Shape{states.size(), 2}, std::move(z)), timestep_embeddings(ts, T, temb_dim), std::move(ts)};
}

/// eps(z|c) rows for every latent in the batch. `c` is a single [1,m] row
/// (tiled across the batch) or a full [B,m] block.
inline Var predict_rows(Tape& tape, const NoisePredictorParams& p, const Var& theta, const ZBatch& zb, const Var& c) {
    const std::size_t B = zb.rows();
    Var cb = c.value().rows() == B ? c : num::tile_rows(c, B);
    return predict_noise(p.arch, p.blocks, theta, tape.constant(zb.z), tape.constant(zb.temb), cb);
}

inline Var params_constant(Tape& tape, const NoisePredictorParams& p) {
    return tape.constant(Tensor(Shape{p.theta.size()}, p.theta, num::Check::none));
}

inline Var params_leaf(Tape& tape, const NoisePredictorParams& p) {
    return tape.leaf(Tensor(Shape{p.theta.size()}, p.theta, num::Check::none));
}

inline Var concept_row(Tape& tape, std::span<const double> c, bool differentiable) {
    Tensor row = Tensor::row(c);
    return differentiable ? tape.leaf(std::move(row)) : tape.constant(std::move(row));
}

/// The unconditional (all-zero) concept input.
inline Var null_concept(Tape& tape, std::size_t m) { return tape.constant(Tensor(Shape{1, m})); }

/// Batched plain evaluation of eps(z|c) for one concept (empty = unconditional).
inline Tensor predict_batch(const NoisePredictorParams& p, const ZBatch& zb, std::span<const double> c) {
    Tape tape;
    tape.set_grad_enabled(false);
    Var cv = c.empty() ? null_concept(tape, p.arch.concept_dim) : concept_row(tape, c, false);
    return predict_rows(tape, p, params_constant(tape, p), zb, cv).value();
}

// ---------------------------------------------------------------------------
// Base training

struct LabeledPoint {
    Point x{};
    Vec c;  // concept embedding
};

enum class Optimizer { sgd, adam };

inline const char* to_string(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd"; }

inline Optimizer parse_optimizer(const std::string& s) {
    if (s == "sgd") return Optimizer::sgd;
    if (s == "adam") return Optimizer::adam;
    throw ConfigError("unknown optimizer '" + s + "'");
}


struct TrainConfig {
    std::size_t epochs = 400;
    std::size_t batch = 128;
    double lr = 1e-2;
    std::uint64_t seed = 0;
    double null_prob = 0.1;  // fraction of rows trained with the unconditional input
    Optimizer optimizer = Optimizer::sgd;
    double loss_threshold = 1.0;
    /// When set, every step reuses the same (x, c, t, eps) draw; used to check memorization.
    bool fixed_sample = false;
};

struct TrainResult {
    NoisePredictorParams params;
    Vec epoch_loss;
    bool converged = false;
};

/// Adam state over a flat vector.
struct AdamState {
    Vec m, v;
    std::size_t step = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void apply(Vec& theta, std::span<const double> g, double lr) {
        if (m.empty()) {
            m.assign(theta.size(), 0.0);
            v.assign(theta.size(), 0.0);
        }
        ++step;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
};

struct Minibatch {
    Tensor z, temb, c, eps;
};

inline Minibatch draw_minibatch(std::span<const LabeledPoint> data, std::span<const std::size_t> idx,
                                const NoiseSchedule& s, const Architecture& arch, double null_prob, Rng& rng) {
    const std::size_t B = idx.size();
    Vec z(B * 2), eps(B * 2), c(B * arch.concept_dim, 0.0);
    std::vector<std::size_t> ts(B);
    for (std::size_t r = 0; r < B; ++r) {
        const LabeledPoint& ex = data[idx[r]];
        ts[r] = 1 + rng.below(s.T);
        const Point e{rng.normal(), rng.normal()};
        const Point zt = noise_point(ex.x, s.alpha_bar_at(ts[r]), e);
        z[2 * r] = zt[0];
        z[2 * r + 1] = zt[1];
        eps[2 * r] = e[0];
        eps[2 * r + 1] = e[1];
        const bool drop = null_prob > 0.0 && rng.uniform() < null_prob;
        if (!drop) std::copy(ex.c.begin(), ex.c.end(), c.begin() + static_cast<std::ptrdiff_t>(r * arch.concept_dim));
    }
    return {Tensor(Shape{B, 2}, std::move(z), num::Check::none), timestep_embeddings(ts, s.T, arch.temb_dim),
            Tensor(Shape{B, arch.concept_dim}, std::move(c), num::Check::none),
            Tensor(Shape{B, 2}, std::move(eps), num::Check::none)};
}

/// Mean over rows of ||eps - eps_theta(z_t|c)||^2 and its gradient.
inline std::pair<double, Vec> denoising_loss_grad(const NoisePredictorParams& p, const Minibatch& mb) {
    Tape tape;
    Var th = tape.leaf(Tensor(Shape{p.theta.size()}, p.theta, num::Check::none));
    Var pred = predict_noise(p.arch, p.blocks, th, tape.constant(mb.z), tape.constant(mb.temb), tape.constant(mb.c));
    Var loss = num::scale(num::squared_norm(tape.constant(mb.eps) - pred), 1.0 / static_cast<double>(mb.z.rows()));
    auto g = tape.backward(loss, {th});
    return {loss.value().item(), std::move(g.grads[0].values())};
}

inline TrainResult train_base(std::span<const LabeledPoint> data, const NoiseSchedule& s, const Architecture& arch,
                              const TrainConfig& cfg) {
    if (data.empty()) throw ContractError("train_base: empty dataset");
    if (!(cfg.lr >= 0.0)) throw ConfigError("train_base: lr must be nonnegative");
    if (cfg.batch == 0) throw ConfigError("train_base: batch must be positive");
    for (const auto& ex : data)
        if (ex.c.size() != arch.concept_dim) throw ShapeError("train_base: concept dimension mismatch");

    TrainResult res{init_params(arch, cfg.seed), {}, false};
    Rng rng = Rng::stream(cfg.seed, "data");
    AdamState adam;
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::optional<Minibatch> fixed;
    if (cfg.fixed_sample) {
        Rng frng = Rng::stream(cfg.seed, "fixed");
        const std::size_t one[1] = {0};
        fixed = draw_minibatch(data, one, s, arch, 0.0, frng);
    }

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates with our own stream for reproducibility across platforms.
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        double total = 0.0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            const Minibatch mb = fixed ? *fixed
                                       : draw_minibatch(data, std::span(order).subspan(start, end - start), s, arch,
                                                        cfg.null_prob, rng);
            auto [loss, g] = denoising_loss_grad(res.params, mb);
            if (!std::isfinite(loss) || !num::all_finite(g))
                throw NumericAbort(static_cast<long>(epoch), "train_base", "non-finite loss");
            if (cfg.optimizer == Optimizer::adam) {
                if (cfg.lr > 0.0) adam.apply(res.params.theta, g, cfg.lr);
            } else {
                for (std::size_t i = 0; i < g.size(); ++i) res.params.theta[i] -= cfg.lr * g[i];
            }
            total += loss;
            ++steps;
        }
        res.epoch_loss.push_back(total / static_cast<double>(steps));
    }
    res.converged = !res.epoch_loss.empty() && res.epoch_loss.back() < cfg.loss_threshold;
    return res;
}

// ---------------------------------------------------------------------------
// Ancestral sampling

/// n samples by the reverse chain from pure noise, conditioned on `c`
/// (empty = unconditional). Uses the posterior variance for the injected noise.
inline std::vector<Point> sample(const NoisePredictorParams& p, std::span<const double> c, const NoiseSchedule& s,
                                 std::uint64_t seed, std::size_t n) {
    if (n < 1) throw ContractError("sample: n must be >= 1");
    Rng rng = Rng::stream(seed, "sample");
    const std::size_t m = p.arch.concept_dim;
    Vec cv(m, 0.0);
    if (!c.empty()) {
        if (c.size() != m) throw ShapeError("sample: concept dimension mismatch");
        cv.assign(c.begin(), c.end());
    }
    Vec crep(n * m);
    for (std::size_t r = 0; r < n; ++r) std::copy(cv.begin(), cv.end(), crep.begin() + static_cast<std::ptrdiff_t>(r * m));
    const Tensor ct(Shape{n, m}, std::move(crep), num::Check::none);

    Tensor x(Shape{n, 2});
    for (std::size_t i = 0; i < 2 * n; ++i) x[i] = rng.normal();

    std::vector<std::size_t> ts(n);
    for (std::size_t t = s.T; t >= 1; --t) {
        std::fill(ts.begin(), ts.end(), t);
        const Tensor eps = predict_noise_batch(p, x, ts, s.T, ct);
        const double beta = s.beta_at(t);
        const double ab = s.alpha_bar_at(t);
        const double ab_prev = s.alpha_bar_at(t - 1);
        const double coef = beta / std::sqrt(1.0 - ab);
        const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
        const double sigma = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
        for (std::size_t i = 0; i < 2 * n; ++i) {
            x[i] = inv_sqrt_alpha * (x[i] - coef * eps[i]);
            if (t > 1) x[i] += sigma * rng.normal();
        }
    }
    std::vector<Point> out(n);
    for (std::size_t r = 0; r < n; ++r) out[r] = {x[2 * r], x[2 * r + 1]};
    return out;
}

}  // namespace aegis::diffusion
