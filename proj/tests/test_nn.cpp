// Neural-core tests: Tensor2 algebra, RNG statistics, activations, the
// quantile Huber loss, Adam, gradient clipping, and exact finite-difference
// verification of every layer's manual backward pass.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "oodd/nn.hpp"
#include "oodd/quantile_loss.hpp"
#include "oodd/rng.hpp"
#include "oodd/tensor.hpp"

using namespace oodd;

namespace {

// Relative error with an absolute floor so that near-zero pairs compare
// absolutely instead of blowing up.
double rel_err(double analytic, double numeric) {
    const double denom = std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
    return std::abs(analytic - numeric) / denom;
}

constexpr double kFdStep = 1e-5;
constexpr double kFdTol = 1e-4;

// Central finite difference of `loss()` w.r.t. a single scalar slot.
template <typename LossFn>
double fd_slot(double& slot, LossFn loss) {
    const double saved = slot;
    slot = saved + kFdStep;
    const double fp = loss();
    slot = saved - kFdStep;
    const double fm = loss();
    slot = saved;
    return (fp - fm) / (2.0 * kFdStep);
}

void fill_random(Tensor2& t, Rng& rng, double scale = 1.0) {
    for (double& v : t.data) v = rng.uniform_in(-scale, scale);
}

double weighted_sum(const Tensor2& y, const Tensor2& c) {
    REQUIRE(y.same_shape(c));
    double s = 0.0;
    for (size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * c.data[i];
    return s;
}

}  // namespace

TEST_CASE("Tensor2 shape, addressing, and fill") {
    Tensor2 t(3, 4);
    REQUIRE(t.rows == 3);
    REQUIRE(t.cols == 4);
    REQUIRE(t.data.size() == 12);
    for (double v : t.data) REQUIRE(v == 0.0);

    t.at(1, 2) = 7.5;
    REQUIRE(t.data[1 * 4 + 2] == 7.5);  // row-major layout
    REQUIRE(t.row(1)[2] == 7.5);

    Tensor2 u(3, 4), w(4, 3);
    REQUIRE(t.same_shape(u));
    REQUIRE_FALSE(t.same_shape(w));

    t.zero();
    for (double v : t.data) REQUIRE(v == 0.0);
}

TEST_CASE("gemm matches a hand-computed product") {
    Tensor2 a(2, 3), b(3, 2);
    // a = [1 2 3; 4 5 6], b = [7 8; 9 10; 11 12]
    a.data = {1, 2, 3, 4, 5, 6};
    b.data = {7, 8, 9, 10, 11, 12};
    Tensor2 c = gemm(a, b);
    REQUIRE(c.rows == 2);
    REQUIRE(c.cols == 2);
    REQUIRE(c.at(0, 0) == 58.0);
    REQUIRE(c.at(0, 1) == 64.0);
    REQUIRE(c.at(1, 0) == 139.0);
    REQUIRE(c.at(1, 1) == 154.0);

    SECTION("gemm_acc accumulates into the output") {
        Tensor2 acc(2, 2);
        acc.data = {1, 1, 1, 1};
        gemm_acc(a, b, acc);
        REQUIRE(acc.at(0, 0) == 59.0);
        REQUIRE(acc.at(1, 1) == 155.0);
    }

    SECTION("shape mismatches throw") {
        Tensor2 bad(2, 2);
        REQUIRE_THROWS_AS(gemm(a, bad), ShapeMismatch);
        Tensor2 out(3, 3);
        REQUIRE_THROWS_AS(gemm_acc(a, b, out), ShapeMismatch);
    }
}

TEST_CASE("transposed gemm accumulators agree with explicit transposition") {
    Rng rng(11);
    Tensor2 a(4, 3), b(4, 5);
    fill_random(a, rng);
    fill_random(b, rng);

    // at_acc: C += A^T B
    Tensor2 c1(3, 5);
    gemm_at_acc(a, b, c1);
    Tensor2 at(3, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) at.at(j, i) = a.at(i, j);
    Tensor2 c2 = gemm(at, b);
    for (size_t i = 0; i < c1.data.size(); ++i)
        REQUIRE(c1.data[i] == Catch::Approx(c2.data[i]).margin(1e-12));

    // bt_acc: C += A B^T
    Tensor2 d1(4, 4);
    gemm_bt_acc(b, b, d1);
    Tensor2 bt(5, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 5; ++j) bt.at(j, i) = b.at(i, j);
    Tensor2 d2 = gemm(b, bt);
    for (size_t i = 0; i < d1.data.size(); ++i)
        REQUIRE(d1.data[i] == Catch::Approx(d2.data[i]).margin(1e-12));
}

TEST_CASE("repeat_rows repeats each row consecutively") {
    Tensor2 a(2, 3);
    a.data = {1, 2, 3, 4, 5, 6};
    Tensor2 r = repeat_rows(a, 3);
    REQUIRE(r.rows == 6);
    REQUIRE(r.cols == 3);
    for (int rep = 0; rep < 3; ++rep) {
        REQUIRE(r.at(rep, 0) == 1.0);
        REQUIRE(r.at(rep, 2) == 3.0);
        REQUIRE(r.at(3 + rep, 0) == 4.0);
        REQUIRE(r.at(3 + rep, 2) == 6.0);
    }
}

TEST_CASE("all_finite detects NaN and infinity") {
    Tensor2 t(2, 2);
    t.data = {1.0, -2.0, 0.0, 3.5};
    REQUIRE(all_finite(t));
    t.at(1, 0) = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_FALSE(all_finite(t));
    t.at(1, 0) = std::numeric_limits<double>::infinity();
    REQUIRE_FALSE(all_finite(t));
}

TEST_CASE("Rng determinism and distribution ranges") {
    Rng a(1234), b(1234), c(1235);
    bool diverged = false;
    for (int i = 0; i < 100; ++i) {
        const double va = a.uniform();
        REQUIRE(va == b.uniform());
        if (va != c.uniform()) diverged = true;
        REQUIRE(va >= 0.0);
        REQUIRE(va < 1.0);
    }
    REQUIRE(diverged);

    Rng r(99);
    for (int i = 0; i < 1000; ++i) {
        const double v = r.uniform_in(-2.5, 7.5);
        REQUIRE(v >= -2.5);
        REQUIRE(v < 7.5);
        REQUIRE(r.uniform_int(13) < 13);
    }

    // Gaussian moments over a large sample.
    Rng g(7);
    const int n = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = g.gaussian();
        sum += v;
        sumsq += v * v;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    REQUIRE(std::abs(mean) < 0.02);
    REQUIRE(std::abs(std::sqrt(var) - 1.0) < 0.02);
}

TEST_CASE("mix_seed separates streams by label") {
    const uint64_t base = 42;
    REQUIRE(mix_seed(base, 1) != mix_seed(base, 2));
    REQUIRE(mix_seed(base, 1, 2) != mix_seed(base, 2, 1));
    REQUIRE(mix_seed(base, 1) == mix_seed(base, 1));
    REQUIRE(mix_seed(base, 1) != mix_seed(base + 1, 1));
    // Label lists of different lengths must not collide trivially.
    REQUIRE(mix_seed(base, 1, 0) != mix_seed(base, 1));
}

TEST_CASE("Linear forward matches xW + b and backward matches finite differences") {
    Rng rng(2024);
    Linear layer(5, 3, rng);
    Tensor2 x(4, 5), cot(4, 3);
    fill_random(x, rng);
    fill_random(cot, rng);

    auto loss = [&] { return weighted_sum(layer.forward(x), cot); };

    SECTION("forward is an affine map") {
        Tensor2 y = layer.forward(x);
        REQUIRE(y.rows == 4);
        REQUIRE(y.cols == 3);
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 3; ++j) {
                double acc = layer.bias.w.at(0, j);
                for (int k = 0; k < 5; ++k) acc += x.at(i, k) * layer.weight.w.at(k, j);
                REQUIRE(y.at(i, j) == Catch::Approx(acc).margin(1e-12));
            }
        }
        Tensor2 bad(4, 6);
        REQUIRE_THROWS_AS(layer.forward(bad), ShapeMismatch);
    }

    SECTION("parameter and input gradients pass FD with at least 20 probes") {
        layer.weight.zero_grad();
        layer.bias.zero_grad();
        Tensor2 dx = layer.backward(x, cot);

        int probes = 0;
        for (int k = 0; k < 5; ++k) {
            for (int j = 0; j < 3; ++j) {
                const double numeric = fd_slot(layer.weight.w.at(k, j), loss);
                REQUIRE(rel_err(layer.weight.g.at(k, j), numeric) < kFdTol);
                ++probes;
            }
        }
        for (int j = 0; j < 3; ++j) {
            const double numeric = fd_slot(layer.bias.w.at(0, j), loss);
            REQUIRE(rel_err(layer.bias.g.at(0, j), numeric) < kFdTol);
            ++probes;
        }
        for (int i = 0; i < 4; ++i) {
            for (int k = 0; k < 5; ++k) {
                const double numeric = fd_slot(x.at(i, k), loss);
                REQUIRE(rel_err(dx.at(i, k), numeric) < kFdTol);
                ++probes;
            }
        }
        REQUIRE(probes >= 20);
    }

    SECTION("zero cotangent produces zero gradients") {
        layer.weight.zero_grad();
        layer.bias.zero_grad();
        Tensor2 zero_cot(4, 3);
        Tensor2 dx = layer.backward(x, zero_cot);
        for (double v : layer.weight.g.data) REQUIRE(v == 0.0);
        for (double v : layer.bias.g.data) REQUIRE(v == 0.0);
        for (double v : dx.data) REQUIRE(v == 0.0);
    }

    SECTION("backward_params_only matches backward's parameter gradients") {
        layer.weight.zero_grad();
        layer.bias.zero_grad();
        layer.backward(x, cot);
        const auto wg = layer.weight.g.data;
        const auto bg = layer.bias.g.data;
        layer.weight.zero_grad();
        layer.bias.zero_grad();
        layer.backward_params_only(x, cot);
        REQUIRE(layer.weight.g.data == wg);
        REQUIRE(layer.bias.g.data == bg);
    }
}

TEST_CASE("activation backward passes match finite differences") {
    Rng rng(31);
    Tensor2 x(3, 6), cot(3, 6);
    fill_random(cot, rng);
    // Keep ReLU probes away from the kink at zero.
    for (double& v : x.data) {
        v = rng.uniform_in(-2.0, 2.0);
        if (std::abs(v) < 0.1) v = v < 0.0 ? v - 0.1 : v + 0.1;
    }

    SECTION("relu") {
        auto loss = [&] {
            Tensor2 y = x;
            relu_inplace(y);
            return weighted_sum(y, cot);
        };
        Tensor2 y = x;
        relu_inplace(y);
        for (size_t i = 0; i < y.data.size(); ++i)
            REQUIRE(y.data[i] == std::max(x.data[i], 0.0));
        Tensor2 dx = relu_backward(y, cot);
        int probes = 0;
        for (int i = 0; i < x.rows; ++i)
            for (int j = 0; j < x.cols; ++j) {
                REQUIRE(rel_err(dx.at(i, j), fd_slot(x.at(i, j), loss)) < kFdTol);
                ++probes;
            }
        REQUIRE(probes >= 18);
    }

    SECTION("tanh") {
        auto loss = [&] {
            Tensor2 y = x;
            tanh_inplace(y);
            return weighted_sum(y, cot);
        };
        Tensor2 y = x;
        tanh_inplace(y);
        REQUIRE(y.at(0, 0) == Catch::Approx(std::tanh(x.at(0, 0))).margin(1e-15));
        Tensor2 dx = tanh_backward(y, cot);
        for (int i = 0; i < x.rows; ++i)
            for (int j = 0; j < x.cols; ++j)
                REQUIRE(rel_err(dx.at(i, j), fd_slot(x.at(i, j), loss)) < kFdTol);
    }

    SECTION("sigmoid") {
        auto loss = [&] {
            Tensor2 y = x;
            sigmoid_inplace(y);
            return weighted_sum(y, cot);
        };
        Tensor2 y = x;
        sigmoid_inplace(y);
        REQUIRE(sigmoid(0.0) == 0.5);
        REQUIRE(y.at(0, 0) == Catch::Approx(1.0 / (1.0 + std::exp(-x.at(0, 0)))).margin(1e-15));
        Tensor2 dx = sigmoid_backward(y, cot);
        for (int i = 0; i < x.rows; ++i)
            for (int j = 0; j < x.cols; ++j)
                REQUIRE(rel_err(dx.at(i, j), fd_slot(x.at(i, j), loss)) < kFdTol);
    }
}

TEST_CASE("GRU single-step backward matches finite differences") {
    Rng rng(77);
    const int input = 4, hidden = 5, batch = 3;
    GruCell cell(input, hidden, rng);
    Tensor2 x(batch, input), h_prev(batch, hidden), cot(batch, hidden);
    fill_random(x, rng);
    fill_random(h_prev, rng);
    fill_random(cot, rng);

    auto loss = [&] {
        GruCache cache;
        return weighted_sum(cell.forward(x, h_prev, cache), cot);
    };

    GruCache cache;
    Tensor2 h = cell.forward(x, h_prev, cache);
    REQUIRE(h.rows == batch);
    REQUIRE(h.cols == hidden);

    for (AdamParam* p : {&cell.w_ih, &cell.w_hh, &cell.b_ih, &cell.b_hh}) p->zero_grad();
    Tensor2 dx(batch, input), dh_prev(batch, hidden);
    cell.backward(cache, cot, dx, dh_prev);

    int probes = 0;
    Rng pick(5);
    auto check_param = [&](AdamParam& p, int count) {
        for (int n = 0; n < count; ++n) {
            const auto idx = pick.uniform_int(p.w.data.size());
            const double numeric = fd_slot(p.w.data[idx], loss);
            REQUIRE(rel_err(p.g.data[idx], numeric) < kFdTol);
            ++probes;
        }
    };
    check_param(cell.w_ih, 8);
    check_param(cell.w_hh, 8);
    check_param(cell.b_ih, 5);
    check_param(cell.b_hh, 5);
    for (int i = 0; i < batch; ++i) {
        for (int j = 0; j < input; ++j) {
            REQUIRE(rel_err(dx.at(i, j), fd_slot(x.at(i, j), loss)) < kFdTol);
            ++probes;
        }
        for (int j = 0; j < hidden; ++j) {
            REQUIRE(rel_err(dh_prev.at(i, j), fd_slot(h_prev.at(i, j), loss)) < kFdTol);
            ++probes;
        }
    }
    REQUIRE(probes >= 20);
}

TEST_CASE("GRU backpropagation through a length-5 sequence matches finite differences") {
    Rng rng(123);
    const int input = 3, hidden = 4, batch = 2, steps = 5;
    GruCell cell(input, hidden, rng);
    std::vector<Tensor2> xs(steps, Tensor2(batch, input));
    std::vector<Tensor2> cots(steps, Tensor2(batch, hidden));
    for (int t = 0; t < steps; ++t) {
        fill_random(xs[t], rng);
        fill_random(cots[t], rng);
    }

    // Loss touches every step's hidden state so BPTT must accumulate
    // contributions across time.
    auto loss = [&] {
        Tensor2 h(batch, hidden);
        double total = 0.0;
        for (int t = 0; t < steps; ++t) {
            GruCache cache;
            h = cell.forward(xs[t], h, cache);
            total += weighted_sum(h, cots[t]);
        }
        return total;
    };

    std::vector<GruCache> caches(steps);
    {
        Tensor2 h(batch, hidden);
        for (int t = 0; t < steps; ++t) h = cell.forward(xs[t], h, caches[t]);
    }
    for (AdamParam* p : {&cell.w_ih, &cell.w_hh, &cell.b_ih, &cell.b_hh}) p->zero_grad();
    std::vector<Tensor2> dxs(steps, Tensor2(batch, input));
    Tensor2 dh(batch, hidden);
    for (int t = steps - 1; t >= 0; --t) {
        for (size_t i = 0; i < dh.data.size(); ++i) dh.data[i] += cots[t].data[i];
        Tensor2 dh_prev(batch, hidden);
        cell.backward(caches[t], dh, dxs[t], dh_prev);
        dh = dh_prev;
    }

    int probes = 0;
    Rng pick(17);
    auto check_param = [&](AdamParam& p, int count) {
        for (int n = 0; n < count; ++n) {
            const auto idx = pick.uniform_int(p.w.data.size());
            const double numeric = fd_slot(p.w.data[idx], loss);
            REQUIRE(rel_err(p.g.data[idx], numeric) < kFdTol);
            ++probes;
        }
    };
    check_param(cell.w_ih, 6);
    check_param(cell.w_hh, 6);
    check_param(cell.b_ih, 4);
    check_param(cell.b_hh, 4);
    // Input gradients at the earliest and a middle step flow through
    // multiple unrolled steps.
    for (int t : {0, 2, 4}) {
        for (int j = 0; j < input; ++j) {
            REQUIRE(rel_err(dxs[t].at(0, j), fd_slot(xs[t].at(0, j), loss)) < kFdTol);
            ++probes;
        }
    }
    REQUIRE(probes >= 20);
}

TEST_CASE("GRU saturation and fixed-point behavior") {
    Rng rng(5);
    const int input = 3, hidden = 4;
    GruCell cell(input, hidden, rng);
    Tensor2 x(2, input), h_prev(2, hidden);
    fill_random(x, rng);
    fill_random(h_prev, rng);

    SECTION("large negative update-gate bias freezes the hidden state") {
        for (int j = 0; j < hidden; ++j) {
            cell.b_ih.w.at(0, j) = -40.0;  // z-gate block
            cell.b_hh.w.at(0, j) = -40.0;
        }
        GruCache cache;
        Tensor2 h = cell.forward(x, h_prev, cache);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < hidden; ++j)
                REQUIRE(h.at(i, j) == Catch::Approx(h_prev.at(i, j)).margin(1e-9));
    }

    SECTION("zero weights and zero state give a zero output") {
        GruCell zero_cell(input, hidden, rng);
        for (AdamParam* p : {&zero_cell.w_ih, &zero_cell.w_hh, &zero_cell.b_ih, &zero_cell.b_hh})
            p->w.zero();
        Tensor2 h0(2, hidden);
        GruCache cache;
        Tensor2 h = zero_cell.forward(x, h0, cache);
        // z = 0.5, candidate tanh(0) = 0, h_prev = 0 → h = 0 exactly.
        for (double v : h.data) REQUIRE(v == 0.0);
    }

    SECTION("shape mismatches throw") {
        GruCache cache;
        Tensor2 bad(2, input + 1);
        REQUIRE_THROWS_AS(cell.forward(bad, h_prev, cache), ShapeMismatch);
        cell.forward(x, h_prev, cache);
        Tensor2 dh(2, hidden), dx(2, input), dhp(2, hidden + 1);
        REQUIRE_THROWS_AS(cell.backward(cache, dh, dx, dhp), ShapeMismatch);
    }
}

TEST_CASE("quantile Huber loss worked examples") {
    // Zero residual → zero loss and zero gradient.
    REQUIRE(quantile_huber_loss(1.7, 1.7, 0.3, 1.0) == 0.0);
    REQUIRE(quantile_huber_loss_dpred(1.7, 1.7, 0.3, 1.0) == 0.0);

    // τ=0.5, κ=1, residual +2 (beyond κ): weight 0.5, Huber 1·(2−0.5)=1.5.
    REQUIRE(quantile_huber_loss(0.0, 2.0, 0.5, 1.0) == Catch::Approx(0.75).margin(1e-15));

    // Asymmetry: at τ=0.1 an over-prediction of the same magnitude costs
    // 9 times an under-prediction (weights 0.9 vs 0.1).
    const double under = quantile_huber_loss(0.0, 0.5, 0.1, 1.0);   // residual +0.5
    const double over = quantile_huber_loss(0.5, 0.0, 0.1, 1.0);    // residual −0.5
    REQUIRE(over == Catch::Approx(9.0 * under).epsilon(1e-12));
    REQUIRE(under == Catch::Approx(0.1 * 0.5 * 0.25).margin(1e-15));

    // Quadratic region value: τ=0.7, κ=2, residual −1 → |δ|≤κ,
    // loss = |0.7−1| · (½·1)/2 = 0.075.
    REQUIRE(quantile_huber_loss(1.0, 0.0, 0.7, 2.0) == Catch::Approx(0.075).margin(1e-15));
}

TEST_CASE("quantile Huber gradient matches finite differences away from kinks") {
    Rng rng(404);
    int probes = 0;
    while (probes < 40) {
        const double target = rng.uniform_in(-3.0, 3.0);
        const double pred = rng.uniform_in(-3.0, 3.0);
        const double tau = rng.uniform_in(0.05, 0.95);
        const double kappa = rng.uniform_in(0.5, 2.0);
        const double delta = target - pred;
        // Skip probes near the non-differentiable points δ=0 and |δ|=κ.
        if (std::abs(delta) < 1e-2 || std::abs(std::abs(delta) - kappa) < 1e-2) continue;
        double p = pred;
        auto loss = [&] { return quantile_huber_loss(p, target, tau, kappa); };
        const double numeric = fd_slot(p, loss);
        const double analytic = quantile_huber_loss_dpred(pred, target, tau, kappa);
        REQUIRE(rel_err(analytic, numeric) < kFdTol);
        ++probes;
    }
    REQUIRE(probes >= 20);
}

TEST_CASE("Adam optimizer behavior") {
    SECTION("zero gradient leaves parameters bit-identical") {
        AdamParam p(2, 2);
        p.w.data = {1.0, -2.0, 3.0, 0.5};
        const auto before = p.w.data;
        p.zero_grad();
        adam_step(p, 0.01);
        REQUIRE(p.w.data == before);
    }

    SECTION("first-step displacement magnitude is the learning rate") {
        AdamParam p(1, 1);
        p.g.at(0, 0) = 0.37;
        adam_step(p, 0.01);
        REQUIRE(std::abs(std::abs(p.w.at(0, 0)) - 0.01) < 1e-6);
        REQUIRE(p.w.at(0, 0) < 0.0);  // moves against the gradient
    }

    SECTION("converges on a quadratic bowl") {
        // Minimize (w−3)² from w=2 with 200 steps at lr 0.01.
        AdamParam p(1, 1);
        p.w.at(0, 0) = 2.0;
        for (int i = 0; i < 200; ++i) {
            p.zero_grad();
            p.g.at(0, 0) = 2.0 * (p.w.at(0, 0) - 3.0);
            adam_step(p, 0.01);
        }
        REQUIRE(std::abs(p.w.at(0, 0) - 3.0) < 0.05);
    }

    SECTION("rejects non-positive learning rates") {
        AdamParam p(1, 1);
        p.g.at(0, 0) = 1.0;
        REQUIRE_THROWS_AS(adam_step(p, 0.0), ConfigError);
        REQUIRE_THROWS_AS(adam_step(p, -0.1), ConfigError);
    }
}

TEST_CASE("global gradient norm and clipping") {
    AdamParam a(1, 2), b(1, 1);
    a.g.data = {3.0, 0.0};
    b.g.data = {4.0};
    std::vector<AdamParam*> params = {&a, &b};
    REQUIRE(grad_global_norm(params) == Catch::Approx(5.0).margin(1e-12));

    SECTION("norms above the cap are rescaled exactly") {
        clip_global_norm(params, 1.0);
        REQUIRE(a.g.data[0] == Catch::Approx(0.6).margin(1e-12));
        REQUIRE(b.g.data[0] == Catch::Approx(0.8).margin(1e-12));
        REQUIRE(grad_global_norm(params) == Catch::Approx(1.0).margin(1e-12));
    }

    SECTION("norms at or below the cap are untouched bit-for-bit") {
        const auto ga = a.g.data;
        const auto gb = b.g.data;
        clip_global_norm(params, 5.0);
        REQUIRE(a.g.data == ga);
        REQUIRE(b.g.data == gb);
        clip_global_norm(params, 10.0);
        REQUIRE(a.g.data == ga);
    }

    SECTION("non-finite gradients raise NumericError") {
        b.g.data[0] = std::numeric_limits<double>::quiet_NaN();
        REQUIRE_THROWS_AS(clip_global_norm(params, 1.0), NumericError);
    }
}
