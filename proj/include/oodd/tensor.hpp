#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "oodd/errors.hpp"

namespace oodd {

/// Dense row-major matrix of doubles. All math in the project runs in 64-bit
/// floats so results are reproducible at the bit level across runs.
struct Tensor2 {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Tensor2() = default;
    Tensor2(int r, int c, double fill = 0.0)
        : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}

    double& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
    double at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }

    double* row(int i) { return data.data() + static_cast<size_t>(i) * cols; }
    const double* row(int i) const { return data.data() + static_cast<size_t>(i) * cols; }

    size_t size() const { return data.size(); }
    void zero() { std::fill(data.begin(), data.end(), 0.0); }

    bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }
};

inline void require_shape(const Tensor2& t, int rows, int cols, const char* what) {
    if (t.rows != rows || t.cols != cols) {
        throw ShapeMismatch(std::string(what) + ": got " + std::to_string(t.rows) + "x" +
                            std::to_string(t.cols) + ", want " + std::to_string(rows) + "x" +
                            std::to_string(cols));
    }
}

inline bool all_finite(const Tensor2& t) {
    for (double v : t.data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// C += A * B. The k-outer / n-inner order keeps the inner loop contiguous so
// the compiler vectorizes it with FMA.
inline void gemm_acc(const Tensor2& a, const Tensor2& b, Tensor2& c) {
    if (a.cols != b.rows || c.rows != a.rows || c.cols != b.cols) {
        throw ShapeMismatch("gemm_acc");
    }
    const int m = a.rows, k = a.cols, n = b.cols;
    for (int i = 0; i < m; ++i) {
        const double* arow = a.row(i);
        double* crow = c.row(i);
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b.row(p);
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline Tensor2 gemm(const Tensor2& a, const Tensor2& b) {
    Tensor2 c(a.rows, b.cols);
    gemm_acc(a, b, c);
    return c;
}

// C += A^T * B, i.e. accumulation of per-row outer products. Used for weight
// gradients dW += X^T * dY.
inline void gemm_at_acc(const Tensor2& a, const Tensor2& b, Tensor2& c) {
    if (a.rows != b.rows || c.rows != a.cols || c.cols != b.cols) {
        throw ShapeMismatch("gemm_at_acc");
    }
    const int m = a.rows, k = a.cols, n = b.cols;
    for (int i = 0; i < m; ++i) {
        const double* arow = a.row(i);
        const double* brow = b.row(i);
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            double* crow = c.row(p);
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A * B^T. Used for input gradients dX += dY * W^T.
inline void gemm_bt_acc(const Tensor2& a, const Tensor2& b, Tensor2& c) {
    if (a.cols != b.cols || c.rows != a.rows || c.cols != b.rows) {
        throw ShapeMismatch("gemm_bt_acc");
    }
    const int m = a.rows, k = a.cols, n = b.rows;
    for (int i = 0; i < m; ++i) {
        const double* arow = a.row(i);
        double* crow = c.row(i);
        for (int j = 0; j < n; ++j) {
            const double* brow = b.row(j);
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

/// Repeats each row of `a` `times` consecutive times.
inline Tensor2 repeat_rows(const Tensor2& a, int times) {
    Tensor2 out(a.rows * times, a.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int r = 0; r < times; ++r) {
            std::copy(a.row(i), a.row(i) + a.cols, out.row(i * times + r));
        }
    }
    return out;
}

}  // namespace oodd
