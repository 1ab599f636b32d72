#pragma once

// Minimal row-major double matrix. The models here are small enough that
// plain loops beat pulling in a linear algebra dependency, and the fixed
// iteration order keeps training trajectories bit-reproducible.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "fedmkt/io.hpp"

namespace fedmkt {

struct Matrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(size_t r, size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& operator()(size_t r, size_t c) { return a[r * cols + c]; }
    double operator()(size_t r, size_t c) const { return a[r * cols + c]; }

    const double* row(size_t r) const { return a.data() + r * cols; }
    double* row(size_t r) { return a.data() + r * cols; }

    size_t size() const { return a.size(); }

    void fill(double v) { a.assign(a.size(), v); }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    bool operator==(const Matrix& o) const = default;
};

// y = M x  (y has M.rows entries, x has M.cols entries)
inline void matvec(const Matrix& m, const double* x, double* y) {
    for (size_t r = 0; r < m.rows; ++r) {
        const double* mr = m.row(r);
        double acc = 0.0;
        for (size_t c = 0; c < m.cols; ++c) acc += mr[c] * x[c];
        y[r] = acc;
    }
}

// y = M^T x  (y has M.cols entries, x has M.rows entries)
inline void matvec_t(const Matrix& m, const double* x, double* y) {
    for (size_t c = 0; c < m.cols; ++c) y[c] = 0.0;
    for (size_t r = 0; r < m.rows; ++r) {
        const double* mr = m.row(r);
        double xr = x[r];
        for (size_t c = 0; c < m.cols; ++c) y[c] += mr[c] * xr;
    }
}

// M += scale * u v^T
inline void add_outer(Matrix& m, double scale, const double* u, const double* v) {
    for (size_t r = 0; r < m.rows; ++r) {
        double* mr = m.row(r);
        double su = scale * u[r];
        for (size_t c = 0; c < m.cols; ++c) mr[c] += su * v[c];
    }
}

inline void axpy(Matrix& dst, double scale, const Matrix& src) {
    if (!dst.same_shape(src)) throw std::invalid_argument("axpy: shape mismatch");
    for (size_t i = 0; i < dst.a.size(); ++i) dst.a[i] += scale * src.a[i];
}

inline uint64_t matrix_hash(const Matrix& m, uint64_t seed = 1469598103934665603ULL) {
    uint64_t h = fnv1a64(&m.rows, sizeof(m.rows), seed);
    h = fnv1a64(&m.cols, sizeof(m.cols), h);
    return fnv1a64(m.a.data(), m.a.size() * sizeof(double), h);
}

}  // namespace fedmkt
