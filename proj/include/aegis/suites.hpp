#pragma once

// Randomized property suites shared by the test binaries and the CLI:
// reverse-mode gradients against finite differences on small MLP losses, and
// the geometric invariants of the GRP rectification.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "aegis/diffusion.hpp"
#include "aegis/gradcheck.hpp"
#include "aegis/grp.hpp"
#include "aegis/rng.hpp"

namespace aegis::suites {

using num::Shape;
using num::Tape;
using num::Tensor;
using num::Var;
using num::Vec;

struct GradcheckReport {
    std::size_t instances = 0;
    std::size_t failures = 0;
    double max_relative_error = 0.0;
    double tolerance = 1e-5;

    bool passed() const { return failures == 0 && instances > 0; }
};

namespace detail {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = scale * rng.normal();
    return t;
}

/// Scalar losses on top of the prediction; index selects the kind.
inline Var loss_head(std::size_t kind, const Var& pred, const Tensor& target) {
    Tape& tape = *pred.tape();
    switch (kind % 3) {
        case 0: return num::squared_norm(num::sub(pred, tape.constant(target)));
        case 1: return num::sum(num::tanh(pred));
        default: return num::sum(num::mul(num::sin(pred), pred));
    }
}

}  // namespace detail

/// Random small noise-predictor MLPs with random inputs and loss heads;
/// alternates between differentiating w.r.t. the parameters and the concept.
inline GradcheckReport gradcheck_suite(std::size_t instances, std::uint64_t seed, double tolerance = 1e-5) {
    GradcheckReport rep;
    rep.tolerance = tolerance;
    for (std::size_t i = 0; i < instances; ++i) {
        Rng rng = Rng::stream(seed, "gradcheck").fork(i);
        diffusion::Architecture arch;
        arch.temb_dim = 2 + rng.below(3);
        arch.concept_dim = 2 + rng.below(3);
        arch.hidden = 3 + rng.below(4);
        arch.depth = 1 + rng.below(2);
        const auto blocks = diffusion::make_block_map(arch);
        const std::size_t B = 1 + rng.below(3);
        const Tensor theta = detail::random_tensor({diffusion::parameter_count(blocks)}, rng, 0.5);
        const Tensor z = detail::random_tensor({B, arch.z_dim}, rng, 1.0);
        const Tensor temb = detail::random_tensor({B, arch.temb_dim}, rng, 1.0);
        const Tensor c = detail::random_tensor({B, arch.concept_dim}, rng, 1.0);
        const Tensor target = detail::random_tensor({B, arch.z_dim}, rng, 1.0);
        const bool wrt_concept = i % 4 == 3;

        const num::ScalarExpr f = [&](Tape& tape, const Var& x) {
            const Var th = wrt_concept ? tape.constant(theta) : x;
            const Var cv = wrt_concept ? x : tape.constant(c);
            const Var pred = diffusion::predict_noise(arch, blocks, th, tape.constant(z), tape.constant(temb), cv);
            return detail::loss_head(i, pred, target);
        };
        const Tensor& x = wrt_concept ? c : theta;
        const Tensor analytic = num::gradient(f, x);
        const Tensor numeric = num::finite_diff_grad(f, x);
        const double err = num::relative_error(analytic.data(), numeric.data());
        rep.max_relative_error = std::max(rep.max_relative_error, err);
        ++rep.instances;
        if (!(err < tolerance)) ++rep.failures;
    }
    return rep;
}

struct GrpPropertyReport {
    std::size_t trials = 0;
    std::map<std::string, std::size_t> failures{{"descent_direction", 0},
                                                {"norm_bound", 0},
                                                {"orthogonal_at_one", 0},
                                                {"rescaling_invariance", 0},
                                                {"zero_lambda_without_conflict", 0}};

    std::size_t total_failures() const {
        std::size_t n = 0;
        for (const auto& [k, v] : failures) n += v;
        return n;
    }
    bool passed() const { return trials > 0 && total_failures() == 0; }
};

/// Random conflicting pairs (g_e, g_r) with omega in [0, 1], plus a
/// non-conflicting pair per trial:
///   <g_e, g_hat> >= -1e-12, ||g_hat|| <= ||g_e|| + 1e-12,
///   omega = 1 gives |<g_hat, g_r>| < 1e-10, g_hat unchanged when g_r is
///   scaled by s > 0, and lambda = 0 exactly without conflict.
inline GrpPropertyReport grp_property_suite(std::size_t trials, std::uint64_t seed) {
    GrpPropertyReport rep;
    for (std::size_t i = 0; i < trials; ++i) {
        Rng rng = Rng::stream(seed, "grp-props").fork(i);
        const std::size_t dim = 2 + rng.below(63);
        Vec ge(dim), gr(dim);
        const double se = std::pow(10.0, rng.uniform(-2.0, 0.5));
        const double sr = std::pow(10.0, rng.uniform(-2.0, 0.5));
        for (std::size_t k = 0; k < dim; ++k) {
            ge[k] = se * rng.normal();
            gr[k] = sr * rng.normal();
        }
        if (num::dot(ge, gr) >= 0.0) gr = num::scaled(-1.0, gr);
        if (!(num::dot(ge, gr) < 0.0)) continue;
        const double r = rng.uniform();
        const double omega = r < 0.1 ? 0.0 : (r < 0.3 ? 1.0 : rng.uniform());
        ++rep.trials;

        const auto g = grp::combine(ge, gr, omega);
        if (!(num::dot(ge, g.g_hat) >= -1e-12)) ++rep.failures["descent_direction"];
        if (!(num::norm(g.g_hat) <= num::norm(ge) + 1e-12)) ++rep.failures["norm_bound"];

        const auto g1 = grp::combine(ge, gr, 1.0);
        if (!(std::abs(num::dot(g1.g_hat, gr)) < 1e-10)) ++rep.failures["orthogonal_at_one"];

        const double s = std::pow(10.0, rng.uniform(-3.0, 3.0));
        const auto gs = grp::combine(ge, num::scaled(s, gr), omega);
        if (!(num::norm(num::subtract(gs.g_hat, g.g_hat)) <= 1e-12 * std::max(1.0, num::norm(ge))))
            ++rep.failures["rescaling_invariance"];

        const auto gn = grp::combine(ge, num::scaled(-1.0, gr), omega);
        if (gn.lambda != 0.0 || gn.g_hat != ge) ++rep.failures["zero_lambda_without_conflict"];
    }
    return rep;
}

inline void to_json(nlohmann::json& j, const GradcheckReport& r) {
    j = {{"instances", r.instances},
         {"failures", r.failures},
         {"max_relative_error", r.max_relative_error},
         {"tolerance", r.tolerance},
         {"passed", r.passed()}};
}

inline void to_json(nlohmann::json& j, const GrpPropertyReport& r) {
    j = {{"trials", r.trials}, {"failures", r.failures}, {"passed", r.passed()}};
}

}  // namespace aegis::suites
