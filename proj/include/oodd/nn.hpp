#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "oodd/errors.hpp"
#include "oodd/rng.hpp"
#include "oodd/tensor.hpp"

namespace oodd {

/// A parameter tensor with its gradient accumulator and Adam moment buffers.
struct AdamParam {
    Tensor2 w, g, m, v;
    int64_t step = 0;

    AdamParam() = default;
    AdamParam(int rows, int cols) : w(rows, cols), g(rows, cols), m(rows, cols), v(rows, cols) {}

    void zero_grad() { g.zero(); }
};

inline void init_uniform(Tensor2& w, double bound, Rng& rng) {
    for (double& v : w.data) v = rng.uniform_in(-bound, bound);
}

/// Standard Adam update with bias correction.
inline void adam_step(AdamParam& p, double lr, double beta1 = 0.9, double beta2 = 0.999,
                      double eps = 1e-8) {
    if (!(lr > 0.0)) throw ConfigError("lr", "must be > 0");
    if (!p.w.same_shape(p.g)) throw ShapeMismatch("adam_step: gradient shape");
    p.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(p.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(p.step));
    for (size_t i = 0; i < p.w.data.size(); ++i) {
        const double g = p.g.data[i];
        p.m.data[i] = beta1 * p.m.data[i] + (1.0 - beta1) * g;
        p.v.data[i] = beta2 * p.v.data[i] + (1.0 - beta2) * g * g;
        const double mhat = p.m.data[i] / bc1;
        const double vhat = p.v.data[i] / bc2;
        p.w.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

inline double grad_global_norm(const std::vector<AdamParam*>& params) {
    double sq = 0.0;
    for (const AdamParam* p : params) {
        for (double g : p->g.data) sq += g * g;
    }
    return std::sqrt(sq);
}

/// Scales all gradients so their global L2 norm is at most max_norm.
inline void clip_global_norm(const std::vector<AdamParam*>& params, double max_norm) {
    const double norm = grad_global_norm(params);
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
    if (norm <= max_norm || norm == 0.0) return;
    const double scale = max_norm / norm;
    for (AdamParam* p : params) {
        for (double& g : p->g.data) g *= scale;
    }
}

// ---------------------------------------------------------------------------
// Activations

inline void relu_inplace(Tensor2& x) {
    for (double& v : x.data) v = v > 0.0 ? v : 0.0;
}

/// dx = dy ⊙ 1[y > 0], with y the post-activation values.
inline Tensor2 relu_backward(const Tensor2& activated, const Tensor2& dy) {
    if (!activated.same_shape(dy)) throw ShapeMismatch("relu_backward");
    Tensor2 dx = dy;
    for (size_t i = 0; i < dx.data.size(); ++i) {
        if (activated.data[i] <= 0.0) dx.data[i] = 0.0;
    }
    return dx;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline void sigmoid_inplace(Tensor2& x) {
    for (double& v : x.data) v = sigmoid(v);
}

inline void tanh_inplace(Tensor2& x) {
    for (double& v : x.data) v = std::tanh(v);
}

/// dx = dy ⊙ s(1−s), with s the post-sigmoid values.
inline Tensor2 sigmoid_backward(const Tensor2& activated, const Tensor2& dy) {
    if (!activated.same_shape(dy)) throw ShapeMismatch("sigmoid_backward");
    Tensor2 dx = dy;
    for (size_t i = 0; i < dx.data.size(); ++i) {
        const double s = activated.data[i];
        dx.data[i] *= s * (1.0 - s);
    }
    return dx;
}

/// dx = dy ⊙ (1−u²), with u the post-tanh values.
inline Tensor2 tanh_backward(const Tensor2& activated, const Tensor2& dy) {
    if (!activated.same_shape(dy)) throw ShapeMismatch("tanh_backward");
    Tensor2 dx = dy;
    for (size_t i = 0; i < dx.data.size(); ++i) {
        const double u = activated.data[i];
        dx.data[i] *= 1.0 - u * u;
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Layers

struct Linear {
    AdamParam weight; // (in × out)
    AdamParam bias;   // (1 × out)

    Linear() = default;
    Linear(int in, int out, Rng& rng) : weight(in, out), bias(1, out) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        init_uniform(weight.w, bound, rng);
        init_uniform(bias.w, bound, rng);
    }

    /// y = x W + b
    Tensor2 forward(const Tensor2& x) const {
        if (x.cols != weight.w.rows) throw ShapeMismatch("Linear::forward");
        Tensor2 y(x.rows, weight.w.cols);
        for (int i = 0; i < y.rows; ++i) {
            std::copy(bias.w.row(0), bias.w.row(0) + y.cols, y.row(i));
        }
        gemm_acc(x, weight.w, y);
        return y;
    }

    /// Accumulates dW += xᵀdy, db += Σ rows of dy; returns dx = dy Wᵀ.
    Tensor2 backward(const Tensor2& x, const Tensor2& dy) {
        if (dy.rows != x.rows || dy.cols != weight.w.cols || x.cols != weight.w.rows) {
            throw ShapeMismatch("Linear::backward");
        }
        gemm_at_acc(x, dy, weight.g);
        for (int i = 0; i < dy.rows; ++i) {
            const double* row = dy.row(i);
            for (int j = 0; j < dy.cols; ++j) bias.g.at(0, j) += row[j];
        }
        Tensor2 dx(x.rows, x.cols);
        gemm_bt_acc(dy, weight.w, dx);
        return dx;
    }

    /// Gradient accumulation when the input itself needs no cotangent (first
    /// layers, constant inputs like the quantile cos features).
    void backward_params_only(const Tensor2& x, const Tensor2& dy) {
        if (dy.rows != x.rows || dy.cols != weight.w.cols || x.cols != weight.w.rows) {
            throw ShapeMismatch("Linear::backward_params_only");
        }
        gemm_at_acc(x, dy, weight.g);
        for (int i = 0; i < dy.rows; ++i) {
            const double* row = dy.row(i);
            for (int j = 0; j < dy.cols; ++j) bias.g.at(0, j) += row[j];
        }
    }

    void collect(std::vector<AdamParam*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
};

/// Per-step cache for backpropagation through time.
struct GruCache {
    Tensor2 x;      // input at this step
    Tensor2 h_prev; // hidden before the step
    Tensor2 z, r, c; // gate activations (post sigmoid/tanh)
    Tensor2 hc;     // hidden-side candidate preactivation (h_prev W_hh + b_hh, c block)
};

/// Gated recurrent unit with z/r gates and candidate h̃:
///   z = σ(x W_z + h W_z' + b),  r = σ(...),  h̃ = tanh(x W_c + r ⊙ (h W_c' + b')),
///   h' = (1−z) ⊙ h + z ⊙ h̃.
/// Gate matrices are fused column blocks [z | r | c] for one GEMM per side.
struct GruCell {
    int input = 0;
    int hidden = 0;
    AdamParam w_ih; // (input × 3H)
    AdamParam w_hh; // (H × 3H)
    AdamParam b_ih; // (1 × 3H)
    AdamParam b_hh; // (1 × 3H)

    GruCell() = default;
    GruCell(int input_, int hidden_, Rng& rng)
        : input(input_), hidden(hidden_), w_ih(input_, 3 * hidden_), w_hh(hidden_, 3 * hidden_),
          b_ih(1, 3 * hidden_), b_hh(1, 3 * hidden_) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_));
        init_uniform(w_ih.w, bound, rng);
        init_uniform(w_hh.w, bound, rng);
        init_uniform(b_ih.w, bound, rng);
        init_uniform(b_hh.w, bound, rng);
    }

    /// Returns h_t (B × H); fills the cache for the backward pass.
    Tensor2 forward(const Tensor2& x, const Tensor2& h_prev, GruCache& cache) const {
        if (x.cols != input || h_prev.cols != hidden || x.rows != h_prev.rows) {
            throw ShapeMismatch("GruCell::forward");
        }
        const int b = x.rows, h = hidden;
        Tensor2 gi(b, 3 * h), gh(b, 3 * h);
        for (int i = 0; i < b; ++i) {
            std::copy(b_ih.w.row(0), b_ih.w.row(0) + 3 * h, gi.row(i));
            std::copy(b_hh.w.row(0), b_hh.w.row(0) + 3 * h, gh.row(i));
        }
        gemm_acc(x, w_ih.w, gi);
        gemm_acc(h_prev, w_hh.w, gh);

        cache.x = x;
        cache.h_prev = h_prev;
        cache.z = Tensor2(b, h);
        cache.r = Tensor2(b, h);
        cache.c = Tensor2(b, h);
        cache.hc = Tensor2(b, h);
        Tensor2 out(b, h);
        for (int i = 0; i < b; ++i) {
            const double* gir = gi.row(i);
            const double* ghr = gh.row(i);
            const double* hp = h_prev.row(i);
            double* zr = cache.z.row(i);
            double* rr = cache.r.row(i);
            double* cr = cache.c.row(i);
            double* hcr = cache.hc.row(i);
            double* o = out.row(i);
            for (int j = 0; j < h; ++j) {
                const double z = sigmoid(gir[j] + ghr[j]);
                const double r = sigmoid(gir[h + j] + ghr[h + j]);
                const double hc = ghr[2 * h + j];
                const double c = std::tanh(gir[2 * h + j] + r * hc);
                zr[j] = z;
                rr[j] = r;
                cr[j] = c;
                hcr[j] = hc;
                o[j] = (1.0 - z) * hp[j] + z * c;
            }
        }
        return out;
    }

    /// Exact reverse step: accumulates weight gradients; adds input/hidden
    /// cotangents into dx (B × input) and dh_prev (B × H).
    void backward(const GruCache& cache, const Tensor2& dh, Tensor2& dx, Tensor2& dh_prev) {
        const int b = dh.rows, h = hidden;
        if (dh.cols != h || dx.rows != b || dx.cols != input || dh_prev.rows != b ||
            dh_prev.cols != h) {
            throw ShapeMismatch("GruCell::backward");
        }
        Tensor2 dgi(b, 3 * h), dgh(b, 3 * h);
        for (int i = 0; i < b; ++i) {
            const double* dhr = dh.row(i);
            const double* zr = cache.z.row(i);
            const double* rr = cache.r.row(i);
            const double* cr = cache.c.row(i);
            const double* hcr = cache.hc.row(i);
            const double* hp = cache.h_prev.row(i);
            double* dgir = dgi.row(i);
            double* dghr = dgh.row(i);
            double* dhp = dh_prev.row(i);
            for (int j = 0; j < h; ++j) {
                const double z = zr[j], r = rr[j], c = cr[j], hc = hcr[j];
                const double dz = dhr[j] * (c - hp[j]);
                const double dc = dhr[j] * z;
                dhp[j] += dhr[j] * (1.0 - z);
                const double dcc = dc * (1.0 - c * c); // through tanh
                const double dr = dcc * hc;
                const double dhc = dcc * r;
                const double dzz = dz * z * (1.0 - z);    // through sigmoid
                const double drr = dr * r * (1.0 - r);
                dgir[j] = dzz;
                dgir[h + j] = drr;
                dgir[2 * h + j] = dcc;
                dghr[j] = dzz;
                dghr[h + j] = drr;
                dghr[2 * h + j] = dhc;
            }
        }
        gemm_at_acc(cache.x, dgi, w_ih.g);
        gemm_at_acc(cache.h_prev, dgh, w_hh.g);
        for (int i = 0; i < b; ++i) {
            const double* dgir = dgi.row(i);
            const double* dghr = dgh.row(i);
            for (int j = 0; j < 3 * h; ++j) {
                b_ih.g.at(0, j) += dgir[j];
                b_hh.g.at(0, j) += dghr[j];
            }
        }
        gemm_bt_acc(dgi, w_ih.w, dx);
        gemm_bt_acc(dgh, w_hh.w, dh_prev);
    }

    void collect(std::vector<AdamParam*>& out) {
        out.push_back(&w_ih);
        out.push_back(&w_hh);
        out.push_back(&b_ih);
        out.push_back(&b_hh);
    }
};

}  // namespace oodd
