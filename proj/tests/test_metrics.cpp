#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "aegis/erasure.hpp"
#include "aegis/metrics.hpp"
#include "aegis/scoring.hpp"
#include "support.hpp"

namespace {

using namespace aegis;
using namespace aegis::metrics;

const fixtures::StandardBase& base() { return fixtures::standard_base(); }

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

erasure::ErasureConfig erasure_config(erasure::Mode mode) {
    erasure::ErasureConfig cfg = base().config.erasure;
    cfg.mode = mode;
    return cfg;
}

diffusion::NoisePredictorParams perturbed(double scale, std::uint64_t seed) {
    auto p = base().theta0;
    Rng rng(seed);
    for (double& v : p.theta) v += scale * rng.normal();
    return p;
}

TEST(ZProtocol, FixedSeedsAtFinalStep) {
    const auto zp = ZProtocol::standard();
    EXPECT_EQ(zp.seeds.size(), 16u);
    const auto a = zp.batch(base().schedule, base().theta0.arch.temb_dim);
    const auto b = zp.batch(base().schedule, base().theta0.arch.temb_dim);
    EXPECT_EQ(a.z.values(), b.z.values());
    EXPECT_EQ(a.rows(), 16u);
    EXPECT_THROW(ZProtocol{}.batch(base().schedule, 4), ContractError);
}

TEST(NoiseDistance, SameConceptIsZero) {
    const auto zp = ZProtocol::standard();
    for (const auto& c : base().universe.all_concepts())
        EXPECT_EQ(noise_distance(DistanceKind::d0, base().theta0, base().theta0, c, c, base().schedule, zp), 0.0);
}

TEST(NoiseDistance, D1AtBaseEqualsD0) {
    const auto zp = ZProtocol::standard();
    const auto cs = base().universe.all_concepts();
    for (const auto& ci : cs)
        for (const auto& cj : cs)
            EXPECT_EQ(noise_distance(DistanceKind::d1, base().theta0, base().theta0, ci, cj, base().schedule, zp),
                      noise_distance(DistanceKind::d0, base().theta0, base().theta0, ci, cj, base().schedule, zp));
    const auto m0 = distance_matrix(DistanceKind::d0, base().theta0, base().theta0, cs, base().schedule, zp);
    const auto m1 = distance_matrix(DistanceKind::d1, base().theta0, base().theta0, cs, base().schedule, zp);
    EXPECT_EQ(m0.values, m1.values);
}

TEST(DistanceMatrix, D0IsSymmetricNonnegativeWithZeroDiagonal) {
    const auto cs = base().universe.all_concepts();
    const auto m = distance_matrix(DistanceKind::d0, perturbed(0.3, 1), base().theta0, cs, base().schedule,
                                   ZProtocol::standard());
    ASSERT_EQ(m.values.size(), cs.size());
    ASSERT_EQ(m.names.size(), cs.size());
    for (std::size_t i = 0; i < cs.size(); ++i) {
        EXPECT_EQ(m.values[i][i], 0.0);
        for (std::size_t j = 0; j < cs.size(); ++j) {
            EXPECT_GE(m.values[i][j], 0.0);
            EXPECT_EQ(m.values[i][j], m.values[j][i]);
        }
    }
}

TEST(DistanceMatrix, C1PairCloserThanCrossGroupOnTrainedBase) {
    const auto& u = base().universe;
    const auto m = distance_matrix(DistanceKind::d0, base().theta0, base().theta0, u.erase_group, base().schedule,
                                   ZProtocol::standard());
    double within = 0.0;
    for (std::size_t a : u.c1)
        for (std::size_t b : u.c1)
            if (a != b) within = std::max(within, m.values[a][b]);
    double cross = INFINITY;
    for (std::size_t a : u.c1)
        for (std::size_t b : u.c2) cross = std::min(cross, m.values[a][b]);
    EXPECT_LT(within, cross);
}

TEST(DistanceMatrix, D2RequiresAttackPrompts) {
    const auto& u = base().universe;
    const auto zp = ZProtocol::standard();
    EXPECT_THROW(noise_distance(DistanceKind::d2, base().theta0, base().theta0, u.erased(), u.erased(),
                                base().schedule, zp),
                 ContractError);
    AttackMap partial{{u.erased().name, u.erased()}};
    EXPECT_THROW(distance_matrix(DistanceKind::d2, base().theta0, base().theta0, u.erase_group, base().schedule, zp,
                                 &partial),
                 ContractError);
    // With each prompt equal to its own concept on the base model, d2 reduces to d0.
    AttackMap identity;
    for (const auto& c : u.erase_group) identity[c.name] = c;
    const auto m2 =
        distance_matrix(DistanceKind::d2, base().theta0, base().theta0, u.erase_group, base().schedule, zp, &identity);
    const auto m0 = distance_matrix(DistanceKind::d0, base().theta0, base().theta0, u.erase_group, base().schedule, zp);
    for (std::size_t i = 0; i < u.erase_group.size(); ++i)
        for (std::size_t j = 0; j < u.erase_group.size(); ++j) EXPECT_EQ(m2.values[i][j], m0.values[i][j]);
}

TEST(DeviationBound, EqualityWhenPredictionMeetsTarget) {
    const Vec b{0.4, -1.0}, c{1.5, 2.0};
    const auto r = deviation_bound_check(b, b, c);
    EXPECT_EQ(r.delta, 0.0);
    EXPECT_TRUE(r.applicable);
    EXPECT_EQ(r.rhs, r.Delta);
    EXPECT_EQ(r.lhs, r.Delta);
    EXPECT_TRUE(r.holds);
}

TEST(DeviationBound, CollinearBeyondTarget) {
    // c = 0, b = 2, a = 3 on a line: Delta = 4, delta = 1, lhs = 9, rhs = 1.
    const auto r = deviation_bound_check(Vec{3.0, 0.0}, Vec{2.0, 0.0}, Vec{0.0, 0.0});
    EXPECT_DOUBLE_EQ(r.Delta, 4.0);
    EXPECT_DOUBLE_EQ(r.delta, 1.0);
    EXPECT_DOUBLE_EQ(r.lhs, 9.0);
    EXPECT_DOUBLE_EQ(r.rhs, 1.0);
    EXPECT_GT(r.lhs, r.rhs);
    EXPECT_TRUE(r.holds);
    // a between b and c attains the bound.
    const auto tight = deviation_bound_check(Vec{1.0, 0.0}, Vec{2.0, 0.0}, Vec{0.0, 0.0});
    EXPECT_DOUBLE_EQ(tight.lhs, tight.rhs);
    EXPECT_TRUE(tight.holds);
}

TEST(DeviationBound, VacuousWhenDeviationExceedsGap) {
    const auto r = deviation_bound_check(Vec{5.0, 0.0}, Vec{1.0, 0.0}, Vec{0.0, 0.0});
    EXPECT_FALSE(r.applicable);
    EXPECT_TRUE(r.holds);
}

TEST(DeviationBound, HoldsOnRandomTriples) {
    Rng rng(31);
    std::size_t checked = 0, failures = 0;
    while (checked < 100000) {
        Vec a(2), b(2), c(2);
        for (std::size_t i = 0; i < 2; ++i) {
            a[i] = rng.normal();
            b[i] = rng.normal();
            c[i] = 3.0 * rng.normal();
        }
        const auto r = deviation_bound_check(a, b, c);
        if (!r.applicable) continue;
        ++checked;
        failures += r.holds ? 0 : 1;
    }
    EXPECT_EQ(failures, 0u);
}

TEST(DeviationBound, HoldsOnLiveModelsAfterErasure) {
    const auto& u = base().universe;
    const auto r = erasure::run_aegis(base().theta0, u, base().schedule, erasure_config(erasure::Mode::aegis), 0);
    const auto zp = ZProtocol::standard();
    for (const auto* c : {&r.c_star, &u.erased()}) {
        const auto chk = live_deviation_check(r.theta, base().theta0, *c, r.c_prime, 1.0, base().schedule, zp);
        EXPECT_TRUE(chk.holds) << "lhs " << chk.lhs << " rhs " << chk.rhs;
        EXPECT_GE(chk.lhs, 0.0);
    }
}

TEST(ToyAsr, BaseModelWithoutAttackStepsSucceeds) {
    const auto& u = base().universe;
    adversarial::AttackConfig cfg = base().config.attack;
    cfg.iterations = 0;
    const std::uint64_t seeds[] = {0, 1, 2};
    const std::size_t targets[] = {0};
    const auto rep = toy_asr(base().theta0, base().theta0, u, base().schedule, cfg, seeds, targets);
    EXPECT_EQ(rep.rate, 1.0);
    EXPECT_EQ(rep.successes.size(), 3u);
    for (std::uint64_t seed : seeds) EXPECT_TRUE(toy_asr_single(base().theta0, u.erased().v, u, base().schedule, seed).success);
    EXPECT_THROW(toy_asr(base().theta0, base().theta0, u, base().schedule, cfg, {}, targets), ContractError);
}

TEST(ToyAsr, ModelTrainedWithoutTheEraseClusterFails) {
    // Retarget every erase-group sample onto the first retained cluster and retrain.
    const auto& u = base().universe;
    auto data = concepts::make_dataset(u, base().config.points_per_concept, base().config.data_seed);
    const diffusion::Point shift{u.centroids[1][0] - u.centroids[0][0], u.centroids[1][1] - u.centroids[0][1]};
    std::size_t moved = 0;
    for (auto& p : data) {
        if (concepts::nearest_centroid(u.centroids, p.x) != 0) continue;
        p.x[0] += shift[0];
        p.x[1] += shift[1];
        ++moved;
    }
    ASSERT_GT(moved, 0u);
    const auto displaced = diffusion::train_base(data, base().schedule, base().config.arch, base().config.train).params;
    const std::uint64_t seeds[] = {0, 1};
    const std::size_t targets[] = {0, 2};
    const auto rep = toy_asr(displaced, base().theta0, u, base().schedule, base().config.attack, seeds, targets);
    EXPECT_EQ(rep.rate, 0.0);
    for (double f : rep.erased_fractions) EXPECT_LT(f, 0.5);
}

TEST(RetentionDrift, ZeroAtBase) {
    EXPECT_EQ(retention_drift(base().theta0, base().theta0, base().universe, base().schedule), 0.0);
    EXPECT_GT(retention_drift(perturbed(0.05, 3), base().theta0, base().universe, base().schedule), 0.0);
}

TEST(RetentionDrift, RectificationDoesNotIncreaseDrift) {
    const auto& u = base().universe;
    std::vector<double> full, plain;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto a = erasure::run_aegis(base().theta0, u, base().schedule, erasure_config(erasure::Mode::aegis), seed);
        const auto b =
            erasure::run_aegis(base().theta0, u, base().schedule, erasure_config(erasure::Mode::no_dgr), seed);
        full.push_back(retention_drift(a.theta, base().theta0, u, base().schedule));
        plain.push_back(retention_drift(b.theta, base().theta0, u, base().schedule));
    }
    EXPECT_LE(median(full), median(plain)) << "with rectification " << median(full) << " without " << median(plain);
}

erasure::RunRecord synthetic_run(std::size_t n, double cos, std::vector<double> blocks = {}) {
    erasure::RunRecord rec;
    for (std::size_t i = 0; i < n; ++i) {
        erasure::RunRow r;
        r.epoch = i + 1;
        r.cos_phi = cos;
        r.block_cos = blocks;
        rec.rows.push_back(r);
    }
    return rec;
}

TEST(ConflictTrace, AlignedRunIsConstant) {
    const auto trace = conflict_trace(synthetic_run(12, 0.8));
    ASSERT_EQ(trace.size(), 12u);
    for (double c : trace) EXPECT_EQ(c, 0.8);
}

TEST(ConflictTrace, LayerMeanAveragesBlocks) {
    const auto trace = conflict_trace(synthetic_run(3, 0.1, {0.5, -0.25, 1.0}), TraceGranularity::layer_mean);
    ASSERT_EQ(trace.size(), 3u);
    for (double c : trace) EXPECT_NEAR(c, 1.25 / 3.0, 1e-15);
    EXPECT_THROW(conflict_trace(synthetic_run(2, 0.1), TraceGranularity::layer_mean), ContractError);
}

TEST(ConflictTrace, StandardRunHasNegativeEntries) {
    auto cfg = erasure_config(erasure::Mode::aegis);
    cfg.log_block_cosines = true;
    const auto r = erasure::run_aegis(base().theta0, base().universe, base().schedule, cfg, 0);
    const auto global = conflict_trace(r.record);
    const auto layered = conflict_trace(r.record, TraceGranularity::layer_mean);
    EXPECT_EQ(global.size(), cfg.epochs);
    EXPECT_EQ(layered.size(), cfg.epochs);
    EXPECT_TRUE(std::any_of(global.begin(), global.end(), [](double c) { return c < 0.0; }));
}

}  // namespace
