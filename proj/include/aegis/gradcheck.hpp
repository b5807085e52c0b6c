#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "aegis/autodiff.hpp"

namespace aegis::num {

/// Default central-difference step for f64.
inline constexpr double kFiniteDiffStep = 1e-5;

/// A differentiable scalar function expressed on a tape: given the input
/// leaf, build the graph and return the scalar output.
using ScalarExpr = std::function<Var(Tape&, const Var&)>;

inline double evaluate(const ScalarExpr& f, const Tensor& x) {
    Tape tape;
    tape.set_grad_enabled(false);
    return f(tape, tape.leaf(x)).value().item();
}

/// Reverse-mode gradient of `f` at `x`.
inline Tensor gradient(const ScalarExpr& f, const Tensor& x) {
    Tape tape;
    Var in = tape.leaf(x);
    Var out = f(tape, in);
    return tape.backward(out, {in})[0];
}

/// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double h = kFiniteDiffStep) {
    if (!(h > 0.0)) throw ContractError("finite_diff_grad: step must be positive");
    Tensor g(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        probe[i] = xi + h;
        const double fp = f(probe);
        probe[i] = xi - h;
        const double fm = f(probe);
        probe[i] = xi;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("finite_diff_grad: non-finite function value at coordinate " + std::to_string(i));
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline Tensor finite_diff_grad(const ScalarExpr& f, const Tensor& x, double h = kFiniteDiffStep) {
    return finite_diff_grad([&f](const Tensor& p) { return evaluate(f, p); }, x, h);
}

/// Hessian-vector product by central differences of reverse-mode gradients:
/// (grad f(x + h v) - grad f(x - h v)) / 2h.
inline Tensor hessian_vector(const std::function<Tensor(const Tensor&)>& grad_f, const Tensor& x, const Tensor& v,
                             double h = kFiniteDiffStep) {
    if (!(h > 0.0)) throw ContractError("hessian_vector: step must be positive");
    if (x.shape() != v.shape())
        throw ShapeError("hessian_vector: point " + to_string(x.shape()) + " vs direction " + to_string(v.shape()));
    if (squared_norm(v.data()) == 0.0) throw ContractError("hessian_vector: direction must be nonzero");
    Tensor xp = x, xm = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        xp[i] += h * v[i];
        xm[i] -= h * v[i];
    }
    const Tensor gp = grad_f(xp);
    const Tensor gm = grad_f(xm);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (gp[i] - gm[i]) / (2.0 * h);
    if (!out.all_finite()) throw NumericError("hessian_vector: non-finite curvature");
    return out;
}

inline Tensor hessian_vector(const ScalarExpr& f, const Tensor& x, const Tensor& v, double h = kFiniteDiffStep) {
    return hessian_vector([&f](const Tensor& p) { return gradient(f, p); }, x, v, h);
}

/// ||a - b|| / max(||a||, ||b||), with 0 when both vanish.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
    const double num = norm(subtract(a, b));
    const double den = std::max(norm(a), norm(b));
    if (den == 0.0) return num;
    return num / den;
}

}  // namespace aegis::num
