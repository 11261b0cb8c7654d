#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "fisel/errors.hpp"

namespace fisel {

// Row-major dense matrix of doubles. The whole engine runs in 64-bit;
// gradient checks need the headroom.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix from_rows(std::size_t rows, std::size_t cols,
                            std::initializer_list<double> values) {
        Matrix m(rows, cols);
        if (values.size() != m.data_.size()) {
            throw ShapeError("from_rows: " + std::to_string(values.size()) +
                             " values for " + m.shape_str());
        }
        std::size_t i = 0;
        for (double v : values) m.data_[i++] = v;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

    void fill(double v) { data_.assign(data_.size(), v); }

    Matrix& operator+=(const Matrix& o) {
        require_same_shape(o, "operator+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    Matrix& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

    void require_same_shape(const Matrix& o, const char* where) const {
        if (!same_shape(o)) {
            throw ShapeError(std::string(where) + ": shape mismatch " + shape_str() +
                             " vs " + o.shape_str());
        }
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + a.shape_str() + " x " + b.shape_str());
    }
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) {
                c(i, j) += aik * b(k, j);
            }
        }
    }
    return c;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

// VJP of c = a*b: dA = dC * B^T, dB = A^T * dC.
inline void matmul_vjp(const Matrix& a, const Matrix& b, const Matrix& d_c,
                       Matrix& d_a, Matrix& d_b) {
    d_a = matmul(d_c, transpose(b));
    d_b = matmul(transpose(a), d_c);
}

inline Matrix relu(const Matrix& x) {
    Matrix y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = y[i] > 0.0 ? y[i] : 0.0;
    return y;
}

// Subgradient at exactly 0 is 0.
inline Matrix relu_vjp(const Matrix& x, const Matrix& upstream) {
    x.require_same_shape(upstream, "relu_vjp");
    Matrix d = upstream;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (x[i] <= 0.0) d[i] = 0.0;
    }
    return d;
}

inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Matrix sigmoid(const Matrix& x) {
    Matrix y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = sigmoid(y[i]);
    return y;
}

inline double sigmoid_grad(double x) {
    const double s = sigmoid(x);
    return s * (1.0 - s);
}

inline Matrix sigmoid_vjp(const Matrix& x, const Matrix& upstream) {
    x.require_same_shape(upstream, "sigmoid_vjp");
    Matrix d = upstream;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] *= sigmoid_grad(x[i]);
    return d;
}

// Straight-through estimator. Forward: unit step with the boundary on the
// 0-branch. Backward: identity on the upstream gradient.
inline double ste(double x) { return x > 0.0 ? 1.0 : 0.0; }

inline Matrix ste(const Matrix& x) {
    Matrix y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = ste(y[i]);
    return y;
}

inline Matrix ste_vjp(const Matrix& upstream) { return upstream; }
inline double ste_vjp(double upstream) { return upstream; }

// A parameter matrix with an additively accumulated gradient.
struct GradSlot {
    Matrix value;
    Matrix grad;

    GradSlot() = default;
    explicit GradSlot(Matrix v) : value(std::move(v)), grad(value.rows(), value.cols()) {}

    void zero_grad() { grad.fill(0.0); }
    std::size_t size() const { return value.size(); }
};

// Central finite differences, (L(p+e) - L(p-e)) / 2e per entry.
inline Matrix finite_diff_grad(const std::function<double(const Matrix&)>& lossfn,
                               const Matrix& param, double epsilon) {
    if (!(epsilon > 0.0)) throw ShapeError("finite_diff_grad: epsilon must be > 0");
    Matrix g(param.rows(), param.cols());
    Matrix p = param;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double saved = p[i];
        p[i] = saved + epsilon;
        const double up = lossfn(p);
        p[i] = saved - epsilon;
        const double down = lossfn(p);
        p[i] = saved;
        g[i] = (up - down) / (2.0 * epsilon);
    }
    return g;
}

}  // namespace fisel
