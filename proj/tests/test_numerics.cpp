#include <cmath>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "aegis/autodiff.hpp"
#include "aegis/gradcheck.hpp"
#include "aegis/rng.hpp"

namespace {

using namespace aegis;
using namespace aegis::num;

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

TEST(Forward, ElementwiseAddition) {
    Tape tape;
    const Var s = tape.constant(Tensor::vector({1, 2})) + tape.constant(Tensor::vector({3, 4}));
    EXPECT_EQ(s.value().values(), (Vec{4, 6}));
}

TEST(Forward, IdentityMatmul) {
    Tape tape;
    const Var x = tape.constant(Tensor::matrix(1, 2, {0.25, -7.5}));
    const Var out = matmul(x, tape.constant(Tensor::matrix(2, 2, {1, 0, 0, 1})));
    EXPECT_EQ(out.value().values(), (Vec{0.25, -7.5}));
}

TEST(Forward, SquaredNorm) {
    Tape tape;
    EXPECT_DOUBLE_EQ(squared_norm(tape.constant(Tensor::vector({3, 4}))).value().item(), 25.0);
}

TEST(Forward, ShapeMismatchNamesBothShapes) {
    Tape tape;
    const Var a = tape.constant(Tensor::vector({1, 2}));
    const Var b = tape.constant(Tensor::vector({1, 2, 3}));
    try {
        (void)add(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[3]"), std::string::npos) << msg;
    }
    const Var m = tape.constant(Tensor::matrix(2, 3, Vec(6, 1.0)));
    EXPECT_THROW((void)matmul(m, m), ShapeError);
}

TEST(Backward, SquareAtThree) {
    const ScalarExpr f = [](Tape&, const Var& x) { return x * x; };
    EXPECT_DOUBLE_EQ(gradient(f, Tensor::scalar(3.0)).item(), 6.0);
}

TEST(Backward, HalfSquaredDistanceGivesDifference) {
    Rng rng(11);
    const Tensor theta0 = random_tensor({7}, rng);
    const Tensor theta = random_tensor({7}, rng);
    const ScalarExpr f = [&](Tape& tape, const Var& x) {
        return scale(squared_norm(x - tape.constant(theta0)), 0.5);
    };
    const Tensor g = gradient(f, theta);
    for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(g[i], theta[i] - theta0[i], 1e-15);
}

TEST(Backward, NonScalarRootIsRejected) {
    Tape tape;
    const Var x = tape.leaf(Tensor::vector({1, 2}));
    EXPECT_THROW((void)tape.backward(x * x, {x}), ContractError);
}

TEST(Backward, LeafFromAnotherTapeGetsZeroWithWarning) {
    Tape tape, other;
    const Var x = tape.leaf(Tensor::vector({1, 2}));
    const Var stranger = other.leaf(Tensor::vector({5, 6, 7}));
    const Gradients g = tape.backward(squared_norm(x), {x, stranger});
    EXPECT_TRUE(g.warning());
    ASSERT_EQ(g.missing, std::vector<std::size_t>{1});
    EXPECT_EQ(g[1].values(), (Vec{0, 0, 0}));
    EXPECT_EQ(g[0].values(), (Vec{2, 4}));
}

// Three-layer MLP with tanh and silu activations and a scalar readout.
struct Mlp {
    Tensor w1, b1, w2, b2, w3, b3, input;

    static Mlp random(Rng& rng) {
        Mlp m;
        m.input = random_tensor({4, 3}, rng);
        m.w1 = random_tensor({3, 5}, rng);
        m.b1 = random_tensor({1, 5}, rng);
        m.w2 = random_tensor({5, 6}, rng);
        m.b2 = random_tensor({1, 6}, rng);
        m.w3 = random_tensor({6, 1}, rng);
        m.b3 = random_tensor({1, 1}, rng);
        return m;
    }

    // Scalar output as a function of the first-layer weights.
    ScalarExpr wrt_w1() const {
        return [this](Tape& tape, const Var& w) {
            const Var x = tape.constant(input);
            Var h = num::tanh(matmul(x, w) + tile_rows(tape.constant(b1), 4));
            h = silu(matmul(h, tape.constant(w2)) + tile_rows(tape.constant(b2), 4));
            const Var y = matmul(h, tape.constant(w3)) + tile_rows(tape.constant(b3), 4);
            return sum(num::sin(y));
        };
    }
};

TEST(Backward, ThreeLayerMlpMatchesCentralDifferences) {
    Rng rng(2024);
    for (int trial = 0; trial < 10; ++trial) {
        const Mlp m = Mlp::random(rng);
        const auto f = m.wrt_w1();
        const Tensor analytic = gradient(f, m.w1);
        const Tensor numeric = finite_diff_grad(f, m.w1, 1e-5);
        EXPECT_LT(relative_error(analytic.data(), numeric.data()), 1e-6) << "trial " << trial;
    }
}

TEST(FiniteDiff, SquareAtThree) {
    const auto f = [](const Tensor& x) { return x[0] * x[0]; };
    EXPECT_NEAR(finite_diff_grad(f, Tensor::scalar(3.0), 1e-5).item(), 6.0, 1e-9);
}

TEST(FiniteDiff, SineAtZero) {
    const auto f = [](const Tensor& x) { return std::sin(x[0]); };
    EXPECT_NEAR(finite_diff_grad(f, Tensor::scalar(0.0), 1e-5).item(), 1.0, 1e-10);
}

TEST(FiniteDiff, RejectsNonPositiveStep) {
    const auto f = [](const Tensor& x) { return x[0]; };
    EXPECT_THROW(finite_diff_grad(f, Tensor::scalar(0.0), 0.0), ContractError);
}

TEST(FiniteDiff, NonFiniteValuesAreErrors) {
    const auto f = [](const Tensor& x) { return std::log(x[0]); };
    EXPECT_THROW(finite_diff_grad(f, Tensor::scalar(0.0), 1e-5), NumericError);
}

TEST(HessianVector, IdentityHessian) {
    const ScalarExpr f = [](Tape&, const Var& x) { return scale(squared_norm(x), 0.5); };
    const Tensor v = Tensor::vector({0.3, -1.2, 2.0});
    const Tensor hv = hessian_vector(f, Tensor::vector({1, 2, 3}), v);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(hv[i], v[i], 1e-9);
}

TEST(HessianVector, DiagonalHessian) {
    const ScalarExpr f = [](Tape& tape, const Var& x) {
        return scale(sum(mul(mul(x, x), tape.constant(Tensor::vector({1, 2})))), 0.5);
    };
    const Tensor hv = hessian_vector(f, Tensor::vector({0.7, -0.4}), Tensor::vector({1, 1}));
    EXPECT_NEAR(hv[0], 1.0, 1e-9);
    EXPECT_NEAR(hv[1], 2.0, 1e-9);
}

TEST(HessianVector, RandomSymmetricQuadraticMatchesMatrixProduct) {
    Rng rng(5);
    const std::size_t n = 6;
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a({n, n});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j <= i; ++j) a.at(i, j) = a.at(j, i) = rng.uniform(-2.0, 2.0);
        const Tensor x = random_tensor({n}, rng), v = random_tensor({n}, rng);
        // f(x) = 0.5 x^T A x with x as a [1,n] row.
        const ScalarExpr f = [&](Tape& tape, const Var& p) {
            const Var row = view(p, 0, {1, n});
            return scale(sum(mul(matmul(row, tape.constant(a)), row)), 0.5);
        };
        const Tensor hv = hessian_vector(f, x, v);
        for (std::size_t i = 0; i < n; ++i) {
            double expect = 0.0;
            for (std::size_t j = 0; j < n; ++j) expect += a.at(i, j) * v[j];
            EXPECT_NEAR(hv[i], expect, 1e-6);
        }
    }
}

TEST(HessianVector, RejectsBadStepAndZeroDirection) {
    const ScalarExpr f = [](Tape&, const Var& x) { return squared_norm(x); };
    EXPECT_THROW(hessian_vector(f, Tensor::vector({1, 1}), Tensor::vector({1, 0}), 0.0), ContractError);
    EXPECT_THROW(hessian_vector(f, Tensor::vector({1, 1}), Tensor::vector({0, 0})), ContractError);
}

// One scalar test function per differentiable op, each reduced with a random
// weighting so every output coordinate contributes.
struct OpCase {
    const char* name;
    Shape input;
    std::function<Var(Tape&, const Var&, Rng&)> build;
};

std::vector<OpCase> op_cases() {
    auto weigh = [](Tape& tape, const Var& y, Rng& rng) {
        return sum(mul(y, tape.constant(random_tensor(y.shape(), rng))));
    };
    return {
        {"add", {2, 3}, [=](Tape& t, const Var& x, Rng& r) { return weigh(t, x + t.constant(random_tensor({2, 3}, r)), r); }},
        {"sub", {2, 3}, [=](Tape& t, const Var& x, Rng& r) { return weigh(t, t.constant(random_tensor({2, 3}, r)) - x, r); }},
        {"mul", {2, 3}, [=](Tape& t, const Var& x, Rng& r) { return weigh(t, x * x, r); }},
        {"scale", {4}, [=](Tape& t, const Var& x, Rng& r) { return weigh(t, scale(x, -1.7), r); }},
        {"matmul_left", {2, 3}, [=](Tape& t, const Var& x, Rng& r) { return weigh(t, matmul(x, t.constant(random_tensor({3, 4}, r))), r); }},
        {"matmul_right", {3, 4}, [=](Tape& t, const Var& x, Rng& r) { return weigh(t, matmul(t.constant(random_tensor({2, 3}, r)), x), r); }},
        {"tile_rows", {1, 3}, [=](Tape& t, const Var& x, Rng& r) { return weigh(t, tile_rows(x, 4), r); }},
        {"view", {10}, [=](Tape& t, const Var& x, Rng& r) { return weigh(t, view(x, 2, {2, 3}), r); }},
        {"concat_cols", {2, 2}, [=](Tape& t, const Var& x, Rng& r) { return weigh(t, concat_cols({x, t.constant(random_tensor({2, 1}, r)), x}), r); }},
        {"silu", {2, 3}, [=](Tape& t, const Var& x, Rng& r) { return weigh(t, silu(x), r); }},
        {"tanh", {2, 3}, [=](Tape& t, const Var& x, Rng& r) { return weigh(t, num::tanh(x), r); }},
        {"sin", {2, 3}, [=](Tape& t, const Var& x, Rng& r) { return weigh(t, num::sin(x), r); }},
        {"sum", {5}, [](Tape&, const Var& x, Rng&) { return sum(x); }},
        {"squared_norm", {5}, [](Tape&, const Var& x, Rng&) { return squared_norm(x); }},
    };
}

TEST(Backward, EveryOpMatchesFiniteDifferencesOnRandomInputs) {
    std::size_t cases = 0;
    for (const OpCase& op : op_cases()) {
        for (std::uint64_t trial = 0; trial < 10; ++trial) {
            Rng rng = Rng::stream(trial, op.name);
            const Tensor x = random_tensor(op.input, rng);
            const std::uint64_t build_seed = rng();
            // Rebuild with the same stream on every evaluation so constants agree.
            const ScalarExpr f = [&](Tape& tape, const Var& v) {
                Rng local(build_seed);
                return op.build(tape, v, local);
            };
            const Tensor analytic = gradient(f, x);
            const Tensor numeric = finite_diff_grad(f, x);
            EXPECT_LT(relative_error(analytic.data(), numeric.data()), 1e-5) << op.name << " trial " << trial;
            ++cases;
        }
    }
    EXPECT_GE(cases, 100u);
}

TEST(Backward, IsLinearInTheRoot) {
    Rng rng(3);
    const Tensor x = random_tensor({2, 3}, rng);
    const double a = 0.7, b = -2.3;
    const ScalarExpr f = [](Tape&, const Var& v) { return sum(num::tanh(v)); };
    const ScalarExpr g = [](Tape&, const Var& v) { return squared_norm(num::sin(v)); };
    const ScalarExpr combo = [&](Tape& tape, const Var& v) { return scale(f(tape, v), a) + scale(g(tape, v), b); };
    const Tensor gf = gradient(f, x), gg = gradient(g, x), gc = gradient(combo, x);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(gc[i], a * gf[i] + b * gg[i], 1e-12);
}

TEST(Backward, ReplayIsBitIdentical) {
    Rng rng(9);
    const Mlp m = Mlp::random(rng);
    Tape tape;
    const Var w = tape.leaf(m.w1);
    const Var out = m.wrt_w1()(tape, w);
    const Gradients first = tape.backward(out, {w});
    const Gradients second = tape.backward(out, {w});
    EXPECT_EQ(first[0].values(), second[0].values());
}

}  // namespace
