#pragma once

// Reverse-mode automatic differentiation over dense f64 tensors.
//
// A Tape records every operation applied to its Vars in creation order, so a
// node's parents always have smaller indices than the node itself. backward()
// walks the tape once in reverse and accumulates adjoints. Tapes are
// single-owner and not thread-safe; gradients returned from backward() are
// plain values.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "aegis/errors.hpp"
#include "aegis/tensor.hpp"

namespace aegis::num {

enum class Op {
    leaf,
    constant,
    add,
    sub,
    mul,
    scale,
    matmul,
    tile_rows,
    view,
    concat_cols,
    silu,
    tanh,
    sin,
    sum,
    squared_norm,
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t id() const noexcept { return id_; }
    Tape* tape() const noexcept { return tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

struct TapeNode {
    Op op = Op::constant;
    std::vector<std::size_t> parents;
    Tensor value;
    Tensor partial;  // local derivative for elementwise unary ops
    double scalar = 0.0;
    std::size_t offset = 0;
    bool requires_grad = false;
};

/// Result of Tape::backward: one gradient per requested leaf, in request order.
struct Gradients {
    std::vector<Tensor> grads;
    /// Indices (into the request list) of Vars that were not on this tape.
    std::vector<std::size_t> missing;

    bool warning() const noexcept { return !missing.empty(); }
    const Tensor& operator[](std::size_t i) const { return grads.at(i); }
    std::size_t size() const noexcept { return grads.size(); }
};

class Tape {
public:
    Tape() { nodes_.reserve(64); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Differentiable input.
    Var leaf(Tensor value) { return push(Op::leaf, {}, std::move(value), true); }

    /// Input that never receives a gradient.
    Var constant(Tensor value) { return push(Op::constant, {}, std::move(value), false); }

    void set_grad_enabled(bool on) noexcept { grad_enabled_ = on; }
    bool grad_enabled() const noexcept { return grad_enabled_; }

    std::size_t size() const noexcept { return nodes_.size(); }
    const TapeNode& node(std::size_t i) const { return nodes_.at(i); }

    /// Gradients of a scalar root with respect to the given leaves.
    /// Leaves from another tape (or default-constructed) get a zero gradient
    /// and are listed in Gradients::missing.
    Gradients backward(const Var& root, std::span<const Var> wrt) const;

    Gradients backward(const Var& root, std::initializer_list<Var> wrt) const {
        return backward(root, std::span<const Var>(wrt.begin(), wrt.size()));
    }

    // Used by the op constructors below.
    Var push(Op op, std::vector<std::size_t> parents, Tensor value, bool requires_grad,
             Tensor partial = {}, double scalar = 0.0, std::size_t offset = 0) {
        TapeNode n;
        n.op = op;
        n.value = std::move(value);
        n.requires_grad = requires_grad && (grad_enabled_ || op == Op::leaf);
        if (n.requires_grad && op != Op::leaf) {
            n.parents = std::move(parents);
            n.partial = std::move(partial);
            n.scalar = scalar;
            n.offset = offset;
        }
        nodes_.push_back(std::move(n));
        return Var(this, nodes_.size() - 1);
    }

    bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

private:
    std::vector<TapeNode> nodes_;
    bool grad_enabled_ = true;
};

inline const Tensor& Var::value() const {
    if (!tape_) throw ContractError("value() on an unbound Var");
    return tape_->node(id_).value;
}

namespace detail {

inline Tape& same_tape(const Var& a, const Var& b) {
    if (!a.valid() || !b.valid() || a.tape() != b.tape())
        throw ContractError("operands live on different tapes");
    return *a.tape();
}

inline Tape& tape_of(const Var& a) {
    if (!a.valid()) throw ContractError("operand is an unbound Var");
    return *a.tape();
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

template <class F>
Var unary(Op op, const Var& a, F&& f) {
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    Vec out(x.size());
    Vec d(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) f(x[i], out[i], d[i]);
    const bool rg = t.requires_grad(a);
    return t.push(op, {a.id()}, Tensor(x.shape(), std::move(out), Check::none), rg,
                  rg ? Tensor(x.shape(), std::move(d), Check::none) : Tensor{});
}

inline void accumulate(Vec& dst, std::span<const double> src) {
    if (dst.empty()) {
        dst.assign(src.begin(), src.end());
        return;
    }
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
    Tape& t = detail::same_tape(a, b);
    detail::require_same_shape("add", a.value(), b.value());
    Vec out = a.value().values();
    const auto& bv = b.value().values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return t.push(Op::add, {a.id(), b.id()}, Tensor(a.shape(), std::move(out), Check::none),
                  t.requires_grad(a) || t.requires_grad(b));
}

inline Var sub(const Var& a, const Var& b) {
    Tape& t = detail::same_tape(a, b);
    detail::require_same_shape("sub", a.value(), b.value());
    Vec out = a.value().values();
    const auto& bv = b.value().values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return t.push(Op::sub, {a.id(), b.id()}, Tensor(a.shape(), std::move(out), Check::none),
                  t.requires_grad(a) || t.requires_grad(b));
}

/// Elementwise (Hadamard) product.
inline Var mul(const Var& a, const Var& b) {
    Tape& t = detail::same_tape(a, b);
    detail::require_same_shape("mul", a.value(), b.value());
    Vec out = a.value().values();
    const auto& bv = b.value().values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return t.push(Op::mul, {a.id(), b.id()}, Tensor(a.shape(), std::move(out), Check::none),
                  t.requires_grad(a) || t.requires_grad(b));
}

inline Var scale(const Var& a, double s) {
    Tape& t = detail::tape_of(a);
    Vec out = a.value().values();
    for (double& v : out) v *= s;
    return t.push(Op::scale, {a.id()}, Tensor(a.shape(), std::move(out), Check::none), t.requires_grad(a), {}, s);
}

/// Matrix product of [n,k] by [k,m]. A rank-1 right operand of length k is
/// treated as a column vector and yields a rank-1 result of length n.
inline Var matmul(const Var& a, const Var& b) {
    Tape& t = detail::same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.rank() != 2 || (B.rank() != 2 && B.rank() != 1))
        throw ShapeError("matmul: unsupported ranks " + to_string(A.shape()) + " x " + to_string(B.shape()));
    const std::size_t n = A.shape()[0], k = A.shape()[1];
    const std::size_t kb = B.shape()[0];
    const std::size_t m = B.rank() == 2 ? B.shape()[1] : 1;
    if (k != kb) throw ShapeError("matmul: inner extents differ " + to_string(A.shape()) + " x " + to_string(B.shape()));
    Vec out(n * m, 0.0);
    const double* pa = A.data().data();
    const double* pb = B.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        double* row = out.data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = pa[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = pb + p * m;
            for (std::size_t j = 0; j < m; ++j) row[j] += aip * brow[j];
        }
    }
    Shape s = B.rank() == 2 ? Shape{n, m} : Shape{n};
    return t.push(Op::matmul, {a.id(), b.id()}, Tensor(std::move(s), std::move(out), Check::none),
                  t.requires_grad(a) || t.requires_grad(b));
}

/// Repeat a [1,n] (or [n]) row `rows` times into [rows,n].
inline Var tile_rows(const Var& a, std::size_t rows) {
    Tape& t = detail::tape_of(a);
    const Tensor& x = a.value();
    if (x.rank() > 2 || x.rows() != 1) throw ShapeError("tile_rows: expected a single row, got " + to_string(x.shape()));
    const std::size_t n = x.size();
    Vec out(rows * n);
    for (std::size_t r = 0; r < rows; ++r) std::copy(x.data().begin(), x.data().end(), out.begin() + r * n);
    return t.push(Op::tile_rows, {a.id()}, Tensor(Shape{rows, n}, std::move(out), Check::none), t.requires_grad(a));
}

/// Contiguous slice of a flat tensor reinterpreted with `shape`.
inline Var view(const Var& flat, std::size_t offset, Shape shape) {
    Tape& t = detail::tape_of(flat);
    const Tensor& x = flat.value();
    const std::size_t n = extent_product(shape);
    if (offset + n > x.size())
        throw ShapeError("view: slice [" + std::to_string(offset) + ", " + std::to_string(offset + n) +
                         ") exceeds " + std::to_string(x.size()) + " elements");
    Vec out(x.data().begin() + static_cast<std::ptrdiff_t>(offset),
            x.data().begin() + static_cast<std::ptrdiff_t>(offset + n));
    return t.push(Op::view, {flat.id()}, Tensor(std::move(shape), std::move(out), Check::none), t.requires_grad(flat),
                  {}, 0.0, offset);
}

/// Concatenate rank-2 tensors with equal row counts along columns.
inline Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no operands");
    Tape& t = detail::tape_of(parts[0]);
    const std::size_t rows = parts[0].value().rows();
    std::size_t cols = 0;
    bool rg = false;
    std::vector<std::size_t> parents;
    for (const Var& p : parts) {
        if (p.tape() != &t) throw ContractError("concat_cols: operands live on different tapes");
        if (p.value().rank() != 2 || p.value().rows() != rows)
            throw ShapeError("concat_cols: operand " + to_string(p.shape()) + " does not have " +
                             std::to_string(rows) + " rows");
        cols += p.value().cols();
        rg = rg || t.requires_grad(p);
        parents.push_back(p.id());
    }
    Vec out(rows * cols);
    std::size_t c0 = 0;
    for (const Var& p : parts) {
        const Tensor& x = p.value();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < x.cols(); ++c) out[r * cols + c0 + c] = x.at(r, c);
        c0 += x.cols();
    }
    return t.push(Op::concat_cols, std::move(parents), Tensor(Shape{rows, cols}, std::move(out), Check::none), rg);
}

inline Var concat_cols(std::initializer_list<Var> parts) {
    return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

/// x * sigmoid(x)
inline Var silu(const Var& a) {
    return detail::unary(Op::silu, a, [](double x, double& y, double& d) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        y = x * s;
        d = s * (1.0 + x * (1.0 - s));
    });
}

inline Var tanh(const Var& a) {
    return detail::unary(Op::tanh, a, [](double x, double& y, double& d) {
        y = std::tanh(x);
        d = 1.0 - y * y;
    });
}

inline Var sin(const Var& a) {
    return detail::unary(Op::sin, a, [](double x, double& y, double& d) {
        y = std::sin(x);
        d = std::cos(x);
    });
}

inline Var sum(const Var& a) {
    Tape& t = detail::tape_of(a);
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return t.push(Op::sum, {a.id()}, Tensor::scalar(s), t.requires_grad(a));
}

inline Var squared_norm(const Var& a) {
    Tape& t = detail::tape_of(a);
    double s = 0.0;
    for (double v : a.value().data()) s += v * v;
    return t.push(Op::squared_norm, {a.id()}, Tensor(Shape{}, Vec{s}, Check::none), t.requires_grad(a));
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

inline Gradients Tape::backward(const Var& root, std::span<const Var> wrt) const {
    if (root.tape() != this) throw ContractError("backward: root is not on this tape");
    if (nodes_[root.id()].value.size() != 1)
        throw ContractError("backward: root must be scalar, got shape " + to_string(nodes_[root.id()].value.shape()));

    std::vector<Vec> adj(root.id() + 1);
    adj[root.id()] = Vec{1.0};

    for (std::size_t i = root.id() + 1; i-- > 0;) {
        const TapeNode& n = nodes_[i];
        if (adj[i].empty() || !n.requires_grad || n.op == Op::leaf) continue;
        const Vec& g = adj[i];
        auto flows = [&](std::size_t p) { return nodes_[p].requires_grad; };

        switch (n.op) {
            case Op::add:
                for (std::size_t p : n.parents)
                    if (flows(p)) detail::accumulate(adj[p], g);
                break;
            case Op::sub: {
                if (flows(n.parents[0])) detail::accumulate(adj[n.parents[0]], g);
                if (flows(n.parents[1])) {
                    Vec neg(g.size());
                    for (std::size_t k = 0; k < g.size(); ++k) neg[k] = -g[k];
                    detail::accumulate(adj[n.parents[1]], neg);
                }
                break;
            }
            case Op::mul: {
                const auto& av = nodes_[n.parents[0]].value.values();
                const auto& bv = nodes_[n.parents[1]].value.values();
                if (flows(n.parents[0])) {
                    Vec d(g.size());
                    for (std::size_t k = 0; k < g.size(); ++k) d[k] = g[k] * bv[k];
                    detail::accumulate(adj[n.parents[0]], d);
                }
                if (flows(n.parents[1])) {
                    Vec d(g.size());
                    for (std::size_t k = 0; k < g.size(); ++k) d[k] = g[k] * av[k];
                    detail::accumulate(adj[n.parents[1]], d);
                }
                break;
            }
            case Op::scale: {
                Vec d(g.size());
                for (std::size_t k = 0; k < g.size(); ++k) d[k] = n.scalar * g[k];
                detail::accumulate(adj[n.parents[0]], d);
                break;
            }
            case Op::matmul: {
                const Tensor& A = nodes_[n.parents[0]].value;
                const Tensor& B = nodes_[n.parents[1]].value;
                const std::size_t rows = A.shape()[0], k = A.shape()[1];
                const std::size_t m = B.rank() == 2 ? B.shape()[1] : 1;
                if (flows(n.parents[0])) {
                    // dA = G * B^T
                    Vec d(rows * k, 0.0);
                    for (std::size_t i2 = 0; i2 < rows; ++i2)
                        for (std::size_t p = 0; p < k; ++p) {
                            double s = 0.0;
                            for (std::size_t j = 0; j < m; ++j) s += g[i2 * m + j] * B[p * m + j];
                            d[i2 * k + p] = s;
                        }
                    detail::accumulate(adj[n.parents[0]], d);
                }
                if (flows(n.parents[1])) {
                    // dB = A^T * G
                    Vec d(k * m, 0.0);
                    for (std::size_t i2 = 0; i2 < rows; ++i2)
                        for (std::size_t p = 0; p < k; ++p) {
                            const double a = A[i2 * k + p];
                            if (a == 0.0) continue;
                            for (std::size_t j = 0; j < m; ++j) d[p * m + j] += a * g[i2 * m + j];
                        }
                    detail::accumulate(adj[n.parents[1]], d);
                }
                break;
            }
            case Op::tile_rows: {
                const std::size_t cols = nodes_[n.parents[0]].value.size();
                Vec d(cols, 0.0);
                for (std::size_t k = 0; k < g.size(); ++k) d[k % cols] += g[k];
                detail::accumulate(adj[n.parents[0]], d);
                break;
            }
            case Op::view: {
                Vec& dst = adj[n.parents[0]];
                if (dst.empty()) dst.assign(nodes_[n.parents[0]].value.size(), 0.0);
                for (std::size_t k = 0; k < g.size(); ++k) dst[n.offset + k] += g[k];
                break;
            }
            case Op::concat_cols: {
                const std::size_t rows = n.value.rows(), cols = n.value.cols();
                std::size_t c0 = 0;
                for (std::size_t p : n.parents) {
                    const std::size_t pc = nodes_[p].value.cols();
                    if (flows(p)) {
                        Vec d(rows * pc);
                        for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t c = 0; c < pc; ++c) d[r * pc + c] = g[r * cols + c0 + c];
                        detail::accumulate(adj[p], d);
                    }
                    c0 += pc;
                }
                break;
            }
            case Op::silu:
            case Op::tanh:
            case Op::sin: {
                Vec d(g.size());
                for (std::size_t k = 0; k < g.size(); ++k) d[k] = g[k] * n.partial[k];
                detail::accumulate(adj[n.parents[0]], d);
                break;
            }
            case Op::sum: {
                Vec d(nodes_[n.parents[0]].value.size(), g[0]);
                detail::accumulate(adj[n.parents[0]], d);
                break;
            }
            case Op::squared_norm: {
                const auto& x = nodes_[n.parents[0]].value.values();
                Vec d(x.size());
                for (std::size_t k = 0; k < x.size(); ++k) d[k] = 2.0 * x[k] * g[0];
                detail::accumulate(adj[n.parents[0]], d);
                break;
            }
            case Op::leaf:
            case Op::constant:
                break;
        }
    }

    Gradients out;
    out.grads.reserve(wrt.size());
    for (std::size_t w = 0; w < wrt.size(); ++w) {
        const Var& v = wrt[w];
        if (v.tape() != this || v.id() >= nodes_.size()) {
            out.missing.push_back(w);
            out.grads.emplace_back(v.valid() ? v.shape() : Shape{});
            continue;
        }
        const Tensor& val = nodes_[v.id()].value;
        if (v.id() < adj.size() && !adj[v.id()].empty())
            out.grads.emplace_back(val.shape(), adj[v.id()], Check::none);
        else
            out.grads.emplace_back(val.shape());
    }
    return out;
}

}  // namespace aegis::num
