#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hc/rng.hpp"

namespace hc {

using Vec = std::vector<double>;

inline bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// Dense row-major matrix. Everything in this project is double precision;
// the nets are small enough that naive loops beat any BLAS setup cost.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vec data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::size_t size() const { return data.size(); }
    bool finite() const { return all_finite(data); }

    bool operator==(const Matrix& o) const {
        return rows == o.rows && cols == o.cols && data == o.data;
    }
};

inline Matrix random_uniform(std::size_t rows, std::size_t cols, double r, Rng& rng) {
    Matrix m(rows, cols);
    for (double& x : m.data) x = rng.uniform(-r, r);
    return m;
}

// y = M x
inline void matvec(const Matrix& m, const Vec& x, Vec& y) {
    if (x.size() != m.cols)
        throw std::invalid_argument("matvec: vector length " + std::to_string(x.size()) +
                                    " does not match matrix cols " + std::to_string(m.cols));
    y.assign(m.rows, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* row = &m.data[i * m.cols];
        double acc = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
}

// y += M x
inline void matvec_acc(const Matrix& m, const Vec& x, Vec& y) {
    if (x.size() != m.cols || y.size() != m.rows)
        throw std::invalid_argument("matvec_acc: dimension mismatch");
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* row = &m.data[i * m.cols];
        double acc = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) acc += row[j] * x[j];
        y[i] += acc;
    }
}

// y = M^T x
inline void matvec_t(const Matrix& m, const Vec& x, Vec& y) {
    if (x.size() != m.rows)
        throw std::invalid_argument("matvec_t: vector length does not match matrix rows");
    y.assign(m.cols, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double xi = x[i];
        const double* row = &m.data[i * m.cols];
        for (std::size_t j = 0; j < m.cols; ++j) y[j] += row[j] * xi;
    }
}

// M += a b^T
inline void outer_acc(Matrix& m, const Vec& a, const Vec& b) {
    if (a.size() != m.rows || b.size() != m.cols)
        throw std::invalid_argument("outer_acc: dimension mismatch");
    for (std::size_t i = 0; i < m.rows; ++i) {
        double* row = &m.data[i * m.cols];
        const double ai = a[i];
        for (std::size_t j = 0; j < m.cols; ++j) row[j] += ai * b[j];
    }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimensions differ");
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

inline double dot(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const Vec& v) { return std::sqrt(dot(v, v)); }

inline void require_finite(const Vec& v, const char* what) {
    if (!all_finite(v)) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

// Numerically stable softmax (max subtraction).
inline Vec softmax(const Vec& v) {
    if (v.empty()) throw std::invalid_argument("softmax: empty input");
    require_finite(v, "softmax");
    const double m = *std::max_element(v.begin(), v.end());
    Vec out(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - m);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

inline Vec tanh_vec(const Vec& v) {
    require_finite(v, "tanh_vec");
    Vec out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::tanh(v[i]);
    return out;
}

inline Vec sigmoid_vec(const Vec& v) {
    require_finite(v, "sigmoid_vec");
    Vec out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        // Split on sign so exp never overflows.
        const double x = v[i];
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                          : std::exp(x) / (1.0 + std::exp(x));
    }
    return out;
}

// Central-difference gradient of a scalar function. This is the oracle used
// to certify every analytic gradient in the repository; keep it independent
// of anything they compute.
inline Vec finite_diff_grad(const std::function<double(const Vec&)>& f, Vec x, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("finite_diff_grad: eps must be positive");
    Vec g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        x[i] = xi + eps;
        const double fp = f(x);
        x[i] = xi - eps;
        const double fm = f(x);
        x[i] = xi;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::invalid_argument("finite_diff_grad: non-finite value at coordinate " +
                                        std::to_string(i));
        g[i] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

// |a-b| / max(floor, |a|+|b|), the relative error used by all gradient checks.
inline double rel_err(double a, double b, double floor = 1e-8) {
    return std::abs(a - b) / std::max(floor, std::abs(a) + std::abs(b));
}

}  // namespace hc
