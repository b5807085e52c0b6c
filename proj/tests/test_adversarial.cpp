#include <cmath>

#include <gtest/gtest.h>

#include "aegis/adversarial.hpp"
#include "aegis/erasure.hpp"
#include "aegis/gradcheck.hpp"
#include "support.hpp"

namespace {

using namespace aegis;
using namespace aegis::adversarial;
using concepts::ConceptEmbedding;

const fixtures::StandardBase& base() { return fixtures::standard_base(); }

// A fine-tuned stand-in: the base model with a small deterministic perturbation.
diffusion::NoisePredictorParams perturbed(double scale, std::uint64_t seed) {
    auto p = base().theta0;
    Rng rng(seed);
    for (double& v : p.theta) v += scale * rng.normal();
    return p;
}

ZBatch erase_batch(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    return draw_zbatch(erase_member_points(base().universe, 0), base().schedule, n, base().theta0.arch.temb_dim, rng);
}

ConceptEmbedding segment_of(const ConceptEmbedding& c, std::size_t len, std::uint64_t seed) {
    return concepts::init_learnable(c, len, seed);
}

TEST(AetStep, ZeroStepLeavesEmbedding) {
    const auto& u = base().universe;
    const auto cp = segment_of(u.erased(), 3, 1);
    const auto out = aet_step(cp, u.erased(), perturbed(0.01, 2), base().theta0, erase_batch(4, 3), 0.0);
    EXPECT_EQ(out.v, cp.v);
}

TEST(AetStep, FrozenCoordinatesUnchanged) {
    const auto& u = base().universe;
    const auto cp = segment_of(u.erased(), 2, 1);
    for (double beta : {1e-3, 0.1, 5.0}) {
        const auto out = aet_step(cp, u.erased(), perturbed(0.01, 2), base().theta0, erase_batch(4, 3), beta);
        for (std::size_t i = 2; i < cp.dim(); ++i) EXPECT_EQ(out.v[i], cp.v[i]);
    }
}

TEST(AetStep, SignStepMatchesFiniteDifferenceSign) {
    const auto& u = base().universe;
    const double beta = 1e-3;
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
        const auto theta = perturbed(0.02, 100 + trial);
        const auto cp = segment_of(u.erase_group[trial % 5], 5, trial);
        const auto zb = erase_batch(4, 200 + trial);
        const auto f = [&](const num::Tensor& x) {
            ConceptEmbedding c = cp;
            c.v.assign(x.data().begin(), x.data().end());
            return aet_objective(c, u.erased(), theta, base().theta0, zb).value;
        };
        const num::Tensor fd = num::finite_diff_grad(f, num::Tensor::vector(cp.v));
        const auto out = aet_step(cp, u.erased(), theta, base().theta0, zb, beta);
        for (std::size_t i = 0; i < cp.learnable_len; ++i) {
            const double moved = out.v[i] - cp.v[i];
            // Skip coordinates where the difference quotient cannot resolve the sign.
            if (std::abs(fd[i]) < 1e-7) continue;
            const double expect = fd[i] > 0.0 ? -beta : beta;
            EXPECT_NEAR(moved, expect, 1e-15) << "trial " << trial << " coord " << i;
        }
    }
}

TEST(AetStep, RequiresLearnableSegment) {
    const auto& u = base().universe;
    EXPECT_THROW(aet_step(u.erased(), u.erased(), base().theta0, base().theta0, erase_batch(1, 1), 1e-3),
                 ContractError);
}

TEST(GenerateAet, OneIterationEqualsOneStep) {
    const auto& u = base().universe;
    const auto theta = perturbed(0.01, 7);
    const auto cp = segment_of(u.erased(), 1, 4);
    AttackConfig cfg = aet_defaults();
    const auto points = erase_member_points(u, 0);
    Rng a(55), b(55);
    const auto via_generate = generate_aet(cp, u.erased(), theta, base().theta0, base().schedule, cfg, points, a);
    const auto zb = draw_zbatch(points, base().schedule, cfg.batch, theta.arch.temb_dim, b);
    const auto via_step = aet_step(cp, u.erased(), theta, base().theta0, zb, cfg.step);
    EXPECT_EQ(via_generate.v, via_step.v);
}

TEST(GenerateAet, TenIterationsMoveEachCoordinateOnAGrid) {
    const auto& u = base().universe;
    AttackConfig cfg = aet_defaults();
    cfg.iterations = 10;
    const auto cp = segment_of(u.erased(), 1, 4);
    Rng rng(3);
    const auto out = generate_aet(cp, u.erased(), perturbed(0.01, 8), base().theta0, base().schedule, cfg,
                                  erase_member_points(u, 0), rng);
    const double steps = (out.v[0] - cp.v[0]) / cfg.step;
    EXPECT_NEAR(steps, std::round(steps), 1e-9);
    EXPECT_LE(std::abs(steps), 10.0);
    for (std::size_t i = 1; i < cp.dim(); ++i) EXPECT_EQ(out.v[i], cp.v[i]);
}

TEST(GenerateAet, ObjectiveNonIncreasingInMostTrials) {
    const auto& u = base().universe;
    const double beta = 1e-3;
    const std::size_t K = 10;
    std::size_t monotone = 0;
    const std::size_t trials = 100;
    for (std::uint64_t trial = 0; trial < trials; ++trial) {
        const auto theta = perturbed(0.02, 1000 + trial);
        const auto zb = erase_batch(8, 2000 + trial);
        auto c = segment_of(u.erased(), 1, 3000 + trial);
        double prev = aet_objective(c, u.erased(), theta, base().theta0, zb).value;
        bool ok = true;
        for (std::size_t k = 0; k < K; ++k) {
            c = aet_step(c, u.erased(), theta, base().theta0, zb, beta);
            const double cur = aet_objective(c, u.erased(), theta, base().theta0, zb).value;
            ok = ok && cur <= prev;
            prev = cur;
        }
        monotone += ok ? 1 : 0;
    }
    EXPECT_GE(monotone, 90u) << monotone << " of " << trials << " trials were monotone";
}

TEST(AttackPromptStep, ZeroStepLeavesEmbedding) {
    const auto& u = base().universe;
    const auto cs = segment_of(u.erased(), 5, 1);
    EXPECT_EQ(attack_prompt_step(cs, u.erased(), perturbed(0.01, 2), base().theta0, erase_batch(4, 3), 0.0).v, cs.v);
}

TEST(AttackPromptStep, UnmodifiedModelStillTakesSignSteps) {
    const auto& u = base().universe;
    ConceptEmbedding cs = u.erased();
    cs.learnable_len = 5;
    const double beta = 0.01;
    const auto out = attack_prompt_step(cs, u.erased(), base().theta0, base().theta0, erase_batch(4, 3), beta);
    for (std::size_t i = 0; i < cs.dim(); ++i) {
        const double moved = std::abs(out.v[i] - cs.v[i]);
        EXPECT_TRUE(moved == 0.0 || std::abs(moved - beta) < 1e-15) << i;
    }
}

class AgainstErasedModel : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        erasure::ErasureConfig cfg = base().config.erasure;
        cfg.mode = erasure::Mode::esd;
        esd_ = new diffusion::NoisePredictorParams(
            erasure::run_aegis(base().theta0, base().universe, base().schedule, cfg, 0).theta);
    }
    static void TearDownTestSuite() {
        delete esd_;
        esd_ = nullptr;
    }
    static diffusion::NoisePredictorParams* esd_;
};

diffusion::NoisePredictorParams* AgainstErasedModel::esd_ = nullptr;

TEST_F(AgainstErasedModel, AttackDistanceDecreasesOverFortySteps) {
    const auto& u = base().universe;
    const AttackConfig cfg = attack_defaults();
    const auto points = erase_member_points(u, 0);
    std::size_t decreased = 0;
    const std::size_t trials = 20;
    for (std::uint64_t trial = 0; trial < trials; ++trial) {
        const auto eval = erase_batch(64, 500 + trial);
        auto cs = concepts::init_learnable(u.erased(), cfg.segment_len, trial, cfg.init);
        const double before = attack_objective(cs, u.erased(), *esd_, base().theta0, eval).value;
        Rng rng(700 + trial);
        for (int it = 0; it < 40; ++it) {
            const auto zb = draw_zbatch(points, base().schedule, cfg.batch, esd_->arch.temb_dim, rng);
            cs = attack_gradient_step(cs, u.erased(), *esd_, base().theta0, zb, cfg.step);
        }
        const double after = attack_objective(cs, u.erased(), *esd_, base().theta0, eval).value;
        decreased += after < before ? 1 : 0;
    }
    EXPECT_GE(decreased, 18u) << decreased << " of " << trials;
}

TEST_F(AgainstErasedModel, RunAttackIsDeterministic) {
    const auto& u = base().universe;
    const AttackConfig cfg = attack_defaults();
    const auto a = run_attack(*esd_, base().theta0, u.erased(), u, base().schedule, cfg, 4, erase_member_points(u, 0));
    const auto b = run_attack(*esd_, base().theta0, u.erased(), u, base().schedule, cfg, 4, erase_member_points(u, 0));
    EXPECT_EQ(a.c_star.v, b.c_star.v);
    EXPECT_EQ(a.success, b.success);
    ASSERT_EQ(a.trace.size(), b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].objective, b.trace[i].objective);
}

TEST(RunAttack, AlwaysSucceedsAgainstTheBaseModel) {
    const auto& u = base().universe;
    const AttackConfig cfg = attack_defaults();
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto r = run_attack(base().theta0, base().theta0, u.erased(), u, base().schedule, cfg, seed,
                                  erase_member_points(u, 0));
        EXPECT_TRUE(r.success) << "seed " << seed << " erased fraction " << r.erased_fraction;
    }
}

TEST(RunAttack, ZeroIterationsEvaluatesTheInitialization) {
    const auto& u = base().universe;
    AttackConfig cfg = attack_defaults();
    cfg.iterations = 0;
    const auto r = run_attack(base().theta0, base().theta0, u.erased(), u, base().schedule, cfg, 3,
                              erase_member_points(u, 0));
    EXPECT_EQ(r.c_star.v, concepts::init_learnable(u.erased(), cfg.segment_len, 3, cfg.init).v);
    EXPECT_TRUE(r.trace.empty());
    EXPECT_GT(r.erased_fraction, 0.0);  // generation was scored
}

TEST(AttackConfig, Validation) {
    AttackConfig c = attack_defaults();
    c.step = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = aet_defaults();
    c.iterations = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_NO_THROW(c.validate(true));
}

}  // namespace
