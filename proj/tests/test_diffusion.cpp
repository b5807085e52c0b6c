#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "aegis/diffusion.hpp"
#include "aegis/gradcheck.hpp"
#include "support.hpp"

namespace {

using namespace aegis;
using namespace aegis::diffusion;

TEST(Schedule, SingleStep) {
    const auto s = make_schedule(1, 0.1, 0.1);
    EXPECT_NEAR(s.alpha_bar_at(1), 0.9, 1e-15);
    EXPECT_EQ(s.alpha_bar_at(0), 1.0);
}

TEST(Schedule, TwoSteps) {
    const auto s = make_schedule(2, 0.1, 0.2);
    EXPECT_NEAR(s.beta_at(1), 0.1, 1e-15);
    EXPECT_NEAR(s.beta_at(2), 0.2, 1e-15);
    EXPECT_NEAR(s.alpha_bar_at(2), 0.72, 1e-15);
}

TEST(Schedule, DefaultMatchesDirectProduct) {
    const auto s = make_schedule(50, 1e-4, 0.05);
    double prod = 1.0;
    for (int t = 1; t <= 50; ++t) prod *= 1.0 - (1e-4 + (0.05 - 1e-4) * (t - 1) / 49.0);
    EXPECT_NEAR(s.alpha_bar_at(50), prod, 1e-14);
}

TEST(Schedule, Invariants) {
    const auto s = default_schedule();
    for (std::size_t t = 1; t <= s.T; ++t) {
        EXPECT_GT(s.beta_at(t), 0.0);
        if (t > 1) {
            EXPECT_GE(s.beta_at(t), s.beta_at(t - 1));
        }
        EXPECT_LT(s.alpha_bar_at(t), s.alpha_bar_at(t - 1));
    }
}

TEST(Schedule, RejectsBadBounds) {
    EXPECT_THROW(make_schedule(0, 0.1, 0.2), ConfigError);
    EXPECT_THROW(make_schedule(10, 0.0, 0.2), ConfigError);
    EXPECT_THROW(make_schedule(10, 0.3, 0.2), ConfigError);
    EXPECT_THROW(make_schedule(10, 0.1, 1.0), ConfigError);
}

TEST(ForwardNoise, NoNoiseLimit) {
    const Point z = noise_point({1.5, -2.0}, 1.0, {0.3, 0.4});
    EXPECT_EQ(z[0], 1.5);
    EXPECT_EQ(z[1], -2.0);
}

TEST(ForwardNoise, PureNoiseBranch) {
    const auto s = make_schedule(2, 0.1, 0.2);
    const auto st = forward_noise({0, 0}, 2, {0.6, -0.8}, s);
    EXPECT_NEAR(st.z[0], std::sqrt(0.28) * 0.6, 1e-15);
    EXPECT_NEAR(st.z[1], std::sqrt(0.28) * -0.8, 1e-15);
}

TEST(ForwardNoise, HandEvaluation) {
    const auto s = make_schedule(2, 0.1, 0.2);  // alpha_bar_2 = 0.72
    const auto st = forward_noise({1, 0}, 2, {0, 1}, s);
    EXPECT_NEAR(st.z[0], 0.848528137423857, 1e-12);
    EXPECT_NEAR(st.z[1], 0.529150262212918, 1e-12);
    EXPECT_EQ(st.t, 2u);
}

TEST(ForwardNoise, StepOutOfRange) {
    const auto s = default_schedule();
    EXPECT_THROW(forward_noise({0, 0}, 0, {0, 0}, s), ContractError);
    EXPECT_THROW(forward_noise({0, 0}, 51, {0, 0}, s), ContractError);
}

TEST(ForwardNoise, SecondMomentMatchesExpectation) {
    const auto s = default_schedule();
    const Point x{1.2, -0.7};
    Rng rng(17);
    for (std::size_t t : {1u, 25u, 50u}) {
        const int n = 200000;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            const auto st = forward_noise(x, t, {rng.normal(), rng.normal()}, s);
            acc += st.z[0] * st.z[0] + st.z[1] * st.z[1];
        }
        const double ab = s.alpha_bar_at(t);
        const double expect = ab * (x[0] * x[0] + x[1] * x[1]) + 2.0 * (1.0 - ab);
        // Var(||z||^2) <= 4(1-ab)^2 + 8 ab (1-ab)||x||^2; 5 sigma bound.
        const double sd = std::sqrt((4.0 + 8.0 * 2.0) / n);
        EXPECT_NEAR(acc / n, expect, 5.0 * sd) << "t=" << t;
    }
}

TEST(Params, BlocksPartitionTheta) {
    for (std::size_t depth : {1u, 2u, 3u}) {
        Architecture a;
        a.depth = depth;
        a.hidden = 7;
        const auto p = init_params(a, 3);
        EXPECT_TRUE(blocks_partition(p.blocks, p.theta.size()));
        EXPECT_NO_THROW(p.validate());
        // Expected count: (in*h + h) + (depth-1)(h*h + h) + (h*2 + 2).
        const std::size_t in = a.input_dim();
        EXPECT_EQ(p.theta.size(), in * 7 + 7 + (depth - 1) * (49 + 7) + 14 + 2);
    }
    auto bad = init_params({}, 1);
    bad.theta.pop_back();
    EXPECT_THROW(bad.validate(), ShapeError);
}

TEST(PredictNoise, ZeroParamsGiveZero) {
    const auto p = zero_params();
    const Vec c(8, 0.5);
    const Point e = predict_noise(p, {{0.3, -1.0}, 10}, 50, c);
    EXPECT_EQ(e[0], 0.0);
    EXPECT_EQ(e[1], 0.0);
}

TEST(PredictNoise, Deterministic) {
    const auto p = init_params({}, 42);
    const Vec c{0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8};
    const Point a = predict_noise(p, {{0.3, -1.0}, 10}, 50, c);
    const Point b = predict_noise(p, {{0.3, -1.0}, 10}, 50, c);
    EXPECT_EQ(a, b);
}

TEST(PredictNoise, GradientOfSquaredOutputMatchesFiniteDifferences) {
    Architecture a;
    a.hidden = 6;
    a.depth = 3;
    const auto p = init_params(a, 8);
    const auto blocks = p.blocks;
    const Tensor z = Tensor::matrix(2, 2, {0.3, -0.2, 1.1, 0.5});
    const std::size_t ts[2] = {7, 33};
    const Tensor temb = timestep_embeddings(ts, 50, a.temb_dim);
    Tensor c(Shape{2, a.concept_dim});
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = std::sin(0.7 * static_cast<double>(i));
    const num::ScalarExpr f = [&](Tape& tape, const Var& th) {
        return num::squared_norm(predict_noise(a, blocks, th, tape.constant(z), tape.constant(temb), tape.constant(c)));
    };
    const Tensor theta = Tensor::vector(p.theta);
    const Tensor g = num::gradient(f, theta);
    const Tensor fd = num::finite_diff_grad(f, theta);
    EXPECT_LT(num::relative_error(g.data(), fd.data()), 1e-5);
}

TEST(TrainBase, MemorizesOneFixedSample) {
    Architecture a;
    a.hidden = 16;
    a.depth = 2;
    const std::vector<LabeledPoint> data{{{1.0, -0.5}, Vec(8, 0.3)}};
    TrainConfig cfg;
    cfg.epochs = 3000;
    cfg.batch = 1;
    cfg.lr = 0.02;
    cfg.fixed_sample = true;
    cfg.null_prob = 0.0;
    const auto r = train_base(data, default_schedule(), a, cfg);
    EXPECT_LT(r.epoch_loss.back(), 1e-4);
    // Hard monotonicity over epoch windows of 10 on the deterministic run.
    for (std::size_t w = 10; w + 10 <= r.epoch_loss.size(); w += 10) {
        double prev = 0.0, cur = 0.0;
        for (std::size_t i = 0; i < 10; ++i) {
            prev += r.epoch_loss[w - 10 + i];
            cur += r.epoch_loss[w + i];
        }
        ASSERT_LE(cur, prev + 1e-12) << "window at epoch " << w;
    }
}

std::vector<LabeledPoint> small_dataset() {
    std::vector<LabeledPoint> d;
    Rng rng(4);
    for (int i = 0; i < 40; ++i) {
        Vec c(8, 0.0);
        c[static_cast<std::size_t>(i % 4)] = 1.0;
        d.push_back({{rng.normal(), rng.normal()}, c});
    }
    return d;
}

TEST(TrainBase, ZeroLearningRateLeavesParameters) {
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.lr = 0.0;
    cfg.batch = 8;
    const auto r = train_base(small_dataset(), default_schedule(), {}, cfg);
    EXPECT_EQ(r.params.theta, init_params({}, cfg.seed).theta);
}

TEST(TrainBase, SameSeedIsBitIdentical) {
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch = 8;
    cfg.seed = 5;
    const auto a = train_base(small_dataset(), default_schedule(), {}, cfg);
    const auto b = train_base(small_dataset(), default_schedule(), {}, cfg);
    EXPECT_EQ(a.params.theta, b.params.theta);
    EXPECT_EQ(a.epoch_loss, b.epoch_loss);
}

TEST(TrainBase, ErrorsAndAbort) {
    TrainConfig cfg;
    EXPECT_THROW(train_base({}, default_schedule(), {}, cfg), ContractError);
    cfg.epochs = 50;
    cfg.lr = 1e6;
    cfg.batch = 8;
    try {
        (void)train_base(small_dataset(), default_schedule(), {}, cfg);
        FAIL() << "expected a numeric abort";
    } catch (const NumericAbort& e) {
        EXPECT_GE(e.epoch(), 0);
        EXPECT_EQ(e.stage(), "train_base");
    }
}

TEST(Sample, ZeroModelIsAFunctionOfSeed) {
    const auto p = zero_params();
    const auto s = default_schedule();
    EXPECT_EQ(sample(p, {}, s, 3, 20), sample(p, {}, s, 3, 20));
    EXPECT_NE(sample(p, {}, s, 3, 20), sample(p, {}, s, 4, 20));
}

TEST(Sample, SameSeedTwiceOnTrainedModel) {
    const auto& base = fixtures::standard_base();
    const auto& c = base.universe.retained.at(0).v;
    EXPECT_EQ(sample(base.theta0, c, base.schedule, 9, 50), sample(base.theta0, c, base.schedule, 9, 50));
    EXPECT_THROW(sample(base.theta0, c, base.schedule, 9, 0), ContractError);
}

TEST(Sample, TrainedBaseGeneratesEachConceptsCluster) {
    const auto& base = fixtures::standard_base();
    const auto& u = base.universe;
    auto share = [&](const Vec& c, std::size_t cluster) {
        const auto pts = sample(base.theta0, c, base.schedule, 123, 200);
        std::size_t hits = 0;
        for (const auto& p : pts) hits += concepts::nearest_centroid(u.centroids, p) == cluster ? 1 : 0;
        return static_cast<double>(hits) / 200.0;
    };
    for (const auto& c : u.erase_group) EXPECT_GE(share(c.v, 0), 0.8) << c.name;
    for (std::size_t k = 0; k < u.retained.size(); ++k)
        EXPECT_GE(share(u.retained[k].v, k + 1), 0.8) << u.retained[k].name;
}

}  // namespace
