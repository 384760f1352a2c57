#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace siger {

/// Row-major dense matrix of doubles. Vectors are represented as n x 1 or
/// 1 x n matrices depending on orientation.
struct Dense {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Dense() = default;
    Dense(int r, int c, double fill = 0.0)
        : rows(r), cols(c), v(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {}

    double& at(int i, int j) { return v[static_cast<std::size_t>(i) * cols + j]; }
    double at(int i, int j) const { return v[static_cast<std::size_t>(i) * cols + j]; }
    double& operator()(int i, int j) { return at(i, j); }
    double operator()(int i, int j) const { return at(i, j); }
    double* row(int i) { return v.data() + static_cast<std::size_t>(i) * cols; }
    const double* row(int i) const { return v.data() + static_cast<std::size_t>(i) * cols; }
    std::size_t size() const { return v.size(); }

    bool same_shape(const Dense& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

inline Dense add(const Dense& a, const Dense& b) {
    assert(a.same_shape(b));
    Dense out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.size(); ++i) out.v[i] = a.v[i] + b.v[i];
    return out;
}

inline Dense sub(const Dense& a, const Dense& b) {
    assert(a.same_shape(b));
    Dense out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.size(); ++i) out.v[i] = a.v[i] - b.v[i];
    return out;
}

inline Dense hadamard(const Dense& a, const Dense& b) {
    assert(a.same_shape(b));
    Dense out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.size(); ++i) out.v[i] = a.v[i] * b.v[i];
    return out;
}

inline Dense scale(const Dense& a, double s) {
    Dense out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.size(); ++i) out.v[i] = a.v[i] * s;
    return out;
}

inline void add_inplace(Dense& a, const Dense& b) {
    assert(a.same_shape(b));
    for (std::size_t i = 0; i < a.size(); ++i) a.v[i] += b.v[i];
}

/// a += s * b
inline void axpy_inplace(Dense& a, double s, const Dense& b) {
    assert(a.same_shape(b));
    for (std::size_t i = 0; i < a.size(); ++i) a.v[i] += s * b.v[i];
}

/// C = A * B
inline Dense matmul(const Dense& a, const Dense& b) {
    assert(a.cols == b.rows);
    Dense out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* ai = a.row(i);
        double* oi = out.row(i);
        for (int k = 0; k < a.cols; ++k) {
            double aik = ai[k];
            if (aik == 0.0) continue;
            const double* bk = b.row(k);
            for (int j = 0; j < b.cols; ++j) oi[j] += aik * bk[j];
        }
    }
    return out;
}

/// C = A * B^T
inline Dense matmul_nt(const Dense& a, const Dense& b) {
    assert(a.cols == b.cols);
    Dense out(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const double* ai = a.row(i);
        double* oi = out.row(i);
        for (int j = 0; j < b.rows; ++j) {
            const double* bj = b.row(j);
            double s = 0.0;
            for (int k = 0; k < a.cols; ++k) s += ai[k] * bj[k];
            oi[j] = s;
        }
    }
    return out;
}

/// C = A^T * B
inline Dense matmul_tn(const Dense& a, const Dense& b) {
    assert(a.rows == b.rows);
    Dense out(a.cols, b.cols);
    for (int k = 0; k < a.rows; ++k) {
        const double* ak = a.row(k);
        const double* bk = b.row(k);
        for (int i = 0; i < a.cols; ++i) {
            double aki = ak[i];
            if (aki == 0.0) continue;
            double* oi = out.row(i);
            for (int j = 0; j < b.cols; ++j) oi[j] += aki * bk[j];
        }
    }
    return out;
}

inline Dense transpose(const Dense& a) {
    Dense out(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

/// Per-row L2 norms as an n x 1 column.
inline Dense row_l2_norms(const Dense& a) {
    Dense out(a.rows, 1);
    for (int i = 0; i < a.rows; ++i) {
        const double* r = a.row(i);
        double s = 0.0;
        for (int j = 0; j < a.cols; ++j) s += r[j] * r[j];
        out.v[static_cast<std::size_t>(i)] = std::sqrt(s);
    }
    return out;
}

/// Rows rescaled to unit L2 norm; zero rows stay zero.
inline Dense row_l2_normalize(const Dense& a) {
    Dense out(a.rows, a.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* r = a.row(i);
        double s = 0.0;
        for (int j = 0; j < a.cols; ++j) s += r[j] * r[j];
        double n = std::sqrt(s);
        double* o = out.row(i);
        if (n > 0.0)
            for (int j = 0; j < a.cols; ++j) o[j] = r[j] / n;
    }
    return out;
}

inline double frobenius_sq(const Dense& a) {
    double s = 0.0;
    for (double x : a.v) s += x * x;
    return s;
}

inline Dense gather_rows(const Dense& a, const std::vector<int>& idx) {
    Dense out(static_cast<int>(idx.size()), a.cols);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const double* src = a.row(idx[k]);
        std::copy(src, src + a.cols, out.row(static_cast<int>(k)));
    }
    return out;
}

}  // namespace siger
