#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "aegis/errors.hpp"

namespace aegis::num {

using Shape = std::vector<std::size_t>;
using Vec = std::vector<double>;

inline std::string to_string(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

inline std::size_t extent_product(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

enum class Check { finite, none };

/// Dense row-major f64 tensor. Rank 0 is a scalar, rank 2 is [rows, cols].
class Tensor {
public:
    Tensor() : shape_{}, data_(1, 0.0) {}

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(extent_product(shape_), fill) {}

    Tensor(Shape shape, Vec data, Check check = Check::finite)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (extent_product(shape_) != data_.size())
            throw ShapeError("tensor shape " + to_string(shape_) + " does not match " +
                             std::to_string(data_.size()) + " values");
        if (check == Check::finite) {
            for (double v : data_)
                if (!std::isfinite(v)) throw NumericError("non-finite value in tensor construction");
        }
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, Vec{v}); }
    static Tensor vector(Vec v) {
        const auto n = v.size();
        return Tensor(Shape{n}, std::move(v));
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, Vec v) {
        return Tensor(Shape{rows, cols}, std::move(v));
    }
    static Tensor row(std::span<const double> v) {
        return Tensor(Shape{1, v.size()}, Vec(v.begin(), v.end()));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
    std::size_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 1); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const Vec& values() const noexcept { return data_; }
    Vec& values() noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    /// Scalar value of a single-element tensor.
    double item() const {
        if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
        return data_[0];
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    Vec data_;
};

// Flat-vector helpers used by the gradient-geometry code.

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw ShapeError("dot: length " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }
inline double norm(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

inline Vec axpy(double alpha, std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ShapeError("axpy: length mismatch");
    Vec out(y.begin(), y.end());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] += alpha * x[i];
    return out;
}

inline Vec subtract(std::span<const double> a, std::span<const double> b) { return axpy(-1.0, b, a); }

inline Vec scaled(double s, std::span<const double> a) {
    Vec out(a.begin(), a.end());
    for (double& v : out) v *= s;
    return out;
}

inline bool all_finite(std::span<const double> a) {
    for (double v : a)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace aegis::num
