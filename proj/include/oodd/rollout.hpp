#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "oodd/errors.hpp"
#include "oodd/predictors.hpp"
#include "oodd/rng.hpp"
#include "oodd/tensor.hpp"

namespace oodd {

struct RolloutConfig {
    int delta = 1;        // detection horizon Δ
    int m_samples = 8;    // samples per model (ignored by deterministic models)
    bool mean_sampling = false;

    void validate() const {
        if (delta < 1) throw ConfigError("delta", "must be >= 1");
        if (m_samples < 1) throw ConfigError("m_samples", "must be >= 1");
    }
};

namespace detail {

inline Tensor2 take_rows(const Tensor2& a, const std::vector<int>& keep) {
    Tensor2 out(static_cast<int>(keep.size()), a.cols);
    for (size_t i = 0; i < keep.size(); ++i) {
        std::copy(a.row(keep[i]), a.row(keep[i]) + a.cols, out.row(static_cast<int>(i)));
    }
    return out;
}

/// Slides each row's window left by one observation and appends the new one.
inline void shift_append(Tensor2& win, const Tensor2& x) {
    const int d = x.cols;
    for (int r = 0; r < win.rows; ++r) {
        double* row = win.row(r);
        std::memmove(row, row + d, static_cast<size_t>(win.cols - d) * sizeof(double));
        std::copy(x.row(r), x.row(r) + d, row + (win.cols - d));
    }
}

/// One block of M τ draws per trajectory from its own stream. Each stream's
/// consumption order is fixed (rollout step, then feature, then sample), so
/// results do not depend on which trajectories share a batch.
inline void draw_taus(std::vector<Rng>& rngs, int m, std::vector<double>& taus) {
    taus.resize(rngs.size() * static_cast<size_t>(m));
    for (size_t r = 0; r < rngs.size(); ++r) {
        for (int k = 0; k < m; ++k) taus[r * m + k] = rngs[r].uniform();
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Scoring sessions. A session carries the model's evolving state over a batch
// of trajectories: advance() consumes one true observation row per
// trajectory; sample() branches off that state to predict Δ steps ahead
// without modifying it; compact() drops finished trajectories.

class RiqnScorer {
public:
    explicit RiqnScorer(const RiqnModel& model) : model_(model) {}

    void init(int rows) {
        const int d = model_.meta.d, hidden = model_.meta.hidden;
        h_.assign(d, Tensor2(rows, hidden));
        s_.assign(d, Tensor2(rows, hidden));
    }

    void advance(const Tensor2& x) {
        for (size_t j = 0; j < h_.size(); ++j) {
            s_[j] = model_.nets[j].trunk.forward(x, h_[j], nullptr);
        }
    }

    void compact(const std::vector<int>& keep) {
        for (size_t j = 0; j < h_.size(); ++j) {
            h_[j] = detail::take_rows(h_[j], keep);
            s_[j] = detail::take_rows(s_[j], keep);
        }
    }

    /// Returns (rows·M) × d samples at offset Δ, trajectory-major.
    Tensor2 sample(const RolloutConfig& cfg, std::vector<Rng>& rngs) const {
        return cfg.mean_sampling ? sample_mean(cfg, rngs) : sample_plain(cfg, rngs);
    }

private:
    Tensor2 sample_plain(const RolloutConfig& cfg, std::vector<Rng>& rngs) const {
        const int d = model_.meta.d, m = cfg.m_samples;
        const int rows = h_[0].rows;
        std::vector<Tensor2> hb(d), sb(d);
        for (int j = 0; j < d; ++j) {
            hb[j] = repeat_rows(h_[j], m);
            sb[j] = repeat_rows(s_[j], m);
        }
        Tensor2 xs(rows * m, d);
        std::vector<double> taus;
        for (int step = 0; step < cfg.delta; ++step) {
            if (step > 0) {
                const Tensor2 prev = xs;
                for (int j = 0; j < d; ++j) {
                    sb[j] = model_.nets[j].trunk.forward(prev, hb[j], nullptr);
                }
            }
            for (int j = 0; j < d; ++j) {
                detail::draw_taus(rngs, m, taus);
                const Tensor2 y = model_.nets[j].head.forward(sb[j], taus, nullptr);
                for (int row = 0; row < xs.rows; ++row) xs.at(row, j) = y.at(row, 0);
            }
        }
        return xs;
    }

    Tensor2 sample_mean(const RolloutConfig& cfg, std::vector<Rng>& rngs) const {
        const int d = model_.meta.d, m = cfg.m_samples;
        const int rows = h_[0].rows;
        std::vector<Tensor2> hc = h_, sc = s_;
        Tensor2 xmean(rows, d);
        Tensor2 samples(rows * m, d);
        std::vector<double> taus;
        for (int step = 0; step < cfg.delta; ++step) {
            if (step > 0) {
                for (int j = 0; j < d; ++j) {
                    sc[j] = model_.nets[j].trunk.forward(xmean, hc[j], nullptr);
                }
            }
            for (int j = 0; j < d; ++j) {
                detail::draw_taus(rngs, m, taus);
                const Tensor2 y =
                    model_.nets[j].head.forward(repeat_rows(sc[j], m), taus, nullptr);
                for (int r = 0; r < rows; ++r) {
                    double mean = 0.0;
                    for (int k = 0; k < m; ++k) {
                        const double v = y.at(r * m + k, 0);
                        samples.at(r * m + k, j) = v;
                        mean += v;
                    }
                    xmean.at(r, j) = mean / m;
                }
            }
        }
        return samples;
    }

    const RiqnModel& model_;
    std::vector<Tensor2> h_, s_;
};

class NpnScorer {
public:
    explicit NpnScorer(const NpnModel& model) : model_(model) {}

    void init(int rows) {
        const int d = model_.meta.d, hidden = model_.meta.hidden;
        h_.assign(d, Tensor2(rows, hidden));
        s_.assign(d, Tensor2(rows, hidden));
    }

    void advance(const Tensor2& x) {
        for (size_t j = 0; j < h_.size(); ++j) {
            s_[j] = model_.nets[j].trunk.forward(x, h_[j], nullptr);
        }
    }

    void compact(const std::vector<int>& keep) {
        for (size_t j = 0; j < h_.size(); ++j) {
            h_[j] = detail::take_rows(h_[j], keep);
            s_[j] = detail::take_rows(s_[j], keep);
        }
    }

    /// Deterministic: always one chain per trajectory (rows × d).
    Tensor2 sample(const RolloutConfig& cfg, std::vector<Rng>&) const {
        const int d = model_.meta.d;
        const int rows = h_[0].rows;
        std::vector<Tensor2> hc = h_, sc = s_;
        Tensor2 xp(rows, d);
        for (int step = 0; step < cfg.delta; ++step) {
            if (step > 0) {
                const Tensor2 prev = xp;
                for (int j = 0; j < d; ++j) {
                    sc[j] = model_.nets[j].trunk.forward(prev, hc[j], nullptr);
                }
            }
            for (int j = 0; j < d; ++j) {
                const Tensor2 y = model_.nets[j].out.forward(sc[j]);
                for (int r = 0; r < rows; ++r) xp.at(r, j) = y.at(r, 0);
            }
        }
        return xp;
    }

private:
    const NpnModel& model_;
    std::vector<Tensor2> h_, s_;
};

/// Shared sliding-window state for the non-recurrent models.
class WindowState {
public:
    void init(int rows, int window, int d) {
        window_ = window;
        d_ = d;
        win_ = Tensor2(rows, window * d);
        primed_ = false;
    }

    void advance(const Tensor2& x) {
        if (!primed_) {
            for (int r = 0; r < win_.rows; ++r) {
                for (int w = 0; w < window_; ++w) {
                    std::copy(x.row(r), x.row(r) + d_, win_.row(r) + w * d_);
                }
            }
            primed_ = true;
        } else {
            detail::shift_append(win_, x);
        }
    }

    void compact(const std::vector<int>& keep) { win_ = detail::take_rows(win_, keep); }

    const Tensor2& window() const { return win_; }

private:
    Tensor2 win_;
    int window_ = 0, d_ = 0;
    bool primed_ = false;
};

class NriqnScorer {
public:
    explicit NriqnScorer(const NriqnModel& model) : model_(model) {}

    void init(int rows) { state_.init(rows, model_.meta.window, model_.meta.d); }
    void advance(const Tensor2& x) { state_.advance(x); }
    void compact(const std::vector<int>& keep) { state_.compact(keep); }

    Tensor2 sample(const RolloutConfig& cfg, std::vector<Rng>& rngs) const {
        const int d = model_.meta.d, m = cfg.m_samples;
        const int rows = state_.window().rows;
        std::vector<double> taus;
        if (!cfg.mean_sampling) {
            Tensor2 wb = repeat_rows(state_.window(), m);
            Tensor2 xs(rows * m, d);
            for (int step = 0; step < cfg.delta; ++step) {
                if (step > 0) detail::shift_append(wb, xs);
                for (int j = 0; j < d; ++j) {
                    Tensor2 s = model_.nets[j].fc1.forward(wb);
                    relu_inplace(s);
                    detail::draw_taus(rngs, m, taus);
                    const Tensor2 y = model_.nets[j].head.forward(s, taus, nullptr);
                    for (int row = 0; row < xs.rows; ++row) xs.at(row, j) = y.at(row, 0);
                }
            }
            return xs;
        }
        Tensor2 wc = state_.window();
        Tensor2 xmean(rows, d);
        Tensor2 samples(rows * m, d);
        for (int step = 0; step < cfg.delta; ++step) {
            if (step > 0) detail::shift_append(wc, xmean);
            for (int j = 0; j < d; ++j) {
                Tensor2 s = model_.nets[j].fc1.forward(wc);
                relu_inplace(s);
                detail::draw_taus(rngs, m, taus);
                const Tensor2 y = model_.nets[j].head.forward(repeat_rows(s, m), taus, nullptr);
                for (int r = 0; r < rows; ++r) {
                    double mean = 0.0;
                    for (int k = 0; k < m; ++k) {
                        const double v = y.at(r * m + k, 0);
                        samples.at(r * m + k, j) = v;
                        mean += v;
                    }
                    xmean.at(r, j) = mean / m;
                }
            }
        }
        return samples;
    }

private:
    const NriqnModel& model_;
    WindowState state_;
};

class ForestScorer {
public:
    explicit ForestScorer(const ForestModel& model) : model_(model) {}

    void init(int rows) { state_.init(rows, model_.meta.window, model_.meta.d); }
    void advance(const Tensor2& x) { state_.advance(x); }
    void compact(const std::vector<int>& keep) { state_.compact(keep); }

    /// Deterministic: one chain per trajectory (rows × d).
    Tensor2 sample(const RolloutConfig& cfg, std::vector<Rng>&) const {
        const int d = model_.meta.d;
        const int rows = state_.window().rows;
        Tensor2 wc = state_.window();
        Tensor2 xp(rows, d);
        for (int step = 0; step < cfg.delta; ++step) {
            if (step > 0) detail::shift_append(wc, xp);
            for (int r = 0; r < rows; ++r) {
                for (int j = 0; j < d; ++j) xp.at(r, j) = model_.forests[j].predict(wc.row(r));
            }
        }
        return xp;
    }

private:
    const ForestModel& model_;
    WindowState state_;
};

// ---------------------------------------------------------------------------
// Batched member scoring

namespace detail {

/// Drives one ensemble member over a batch of trajectories. Returns, per
/// trajectory, the per-step sums Σ_m |o_t − sample_m|_1 for t = Δ..T−1
/// (entry i corresponds to t = Δ+i). Per-trajectory RNG streams are seeded
/// from (score_seed, trajectory id, member), so scores are independent of
/// batch composition and processing order.
template <class Scorer>
std::vector<std::vector<double>> member_l1_driver(Scorer& scorer,
                                                  const std::vector<const Trajectory*>& trajs,
                                                  const RolloutConfig& cfg, uint64_t score_seed,
                                                  int member) {
    cfg.validate();
    const int n = static_cast<int>(trajs.size());
    if (n == 0) return {};
    const int d = trajs[0]->observations.cols;
    for (const Trajectory* t : trajs) {
        if (t->length() <= cfg.delta) {
            throw HistoryTooShort("trajectory " + std::to_string(t->id) + " has length " +
                                  std::to_string(t->length()) + " <= delta " +
                                  std::to_string(cfg.delta));
        }
    }

    std::vector<std::vector<double>> out(n);
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<Rng> rngs;
    rngs.reserve(n);
    for (const Trajectory* t : trajs) {
        rngs.emplace_back(mix_seed(score_seed, static_cast<uint64_t>(t->id),
                                   static_cast<uint64_t>(member)));
        out[rngs.size() - 1].reserve(t->length() - cfg.delta);
    }
    std::vector<const Trajectory*> act = trajs;
    scorer.init(n);

    int k = 0;
    std::vector<int> keep;
    while (!act.empty()) {
        const int rows = static_cast<int>(act.size());
        Tensor2 x(rows, d);
        for (int r = 0; r < rows; ++r) {
            std::copy(act[r]->observations.row(k), act[r]->observations.row(k) + d, x.row(r));
        }
        scorer.advance(x);
        const Tensor2 samples = scorer.sample(cfg, rngs);
        const int mout = samples.rows / rows;
        for (int r = 0; r < rows; ++r) {
            const double* truth = act[r]->observations.row(k + cfg.delta);
            double sum = 0.0;
            for (int m = 0; m < mout; ++m) {
                const double* pred = samples.row(r * mout + m);
                for (int j = 0; j < d; ++j) sum += std::abs(truth[j] - pred[j]);
            }
            out[idx[r]].push_back(sum);
        }
        keep.clear();
        for (int r = 0; r < rows; ++r) {
            if (k < act[r]->length() - 1 - cfg.delta) keep.push_back(r);
        }
        if (static_cast<int>(keep.size()) < rows) {
            for (size_t i = 0; i < keep.size(); ++i) {
                act[i] = act[keep[i]];
                idx[i] = idx[keep[i]];
                rngs[i] = rngs[keep[i]];
            }
            act.resize(keep.size());
            idx.resize(keep.size());
            rngs.resize(keep.size());
            scorer.compact(keep);
        }
        ++k;
    }
    return out;
}

}  // namespace detail

/// Samples per model ensemble member: number of rollout samples entering the
/// score average (M for the quantile models, 1 for deterministic ones).
inline int samples_per_member(ModelKind kind, int m_samples) {
    return (kind == ModelKind::Npn || kind == ModelKind::Forest) ? 1 : m_samples;
}

inline std::vector<std::vector<double>> member_l1_sums(const RiqnModel& model,
                                                       const std::vector<const Trajectory*>& t,
                                                       const RolloutConfig& cfg,
                                                       uint64_t score_seed, int member) {
    RiqnScorer s(model);
    return detail::member_l1_driver(s, t, cfg, score_seed, member);
}
inline std::vector<std::vector<double>> member_l1_sums(const NpnModel& model,
                                                       const std::vector<const Trajectory*>& t,
                                                       const RolloutConfig& cfg,
                                                       uint64_t score_seed, int member) {
    NpnScorer s(model);
    return detail::member_l1_driver(s, t, cfg, score_seed, member);
}
inline std::vector<std::vector<double>> member_l1_sums(const NriqnModel& model,
                                                       const std::vector<const Trajectory*>& t,
                                                       const RolloutConfig& cfg,
                                                       uint64_t score_seed, int member) {
    NriqnScorer s(model);
    return detail::member_l1_driver(s, t, cfg, score_seed, member);
}
inline std::vector<std::vector<double>> member_l1_sums(const ForestModel& model,
                                                       const std::vector<const Trajectory*>& t,
                                                       const RolloutConfig& cfg,
                                                       uint64_t score_seed, int member) {
    ForestScorer s(model);
    return detail::member_l1_driver(s, t, cfg, score_seed, member);
}

// ---------------------------------------------------------------------------
// Single-history rollout (the spec-level operation)

namespace detail {

template <class Scorer>
Tensor2 rollout_impl(Scorer& scorer, const Tensor2& history, const RolloutConfig& cfg,
                     Rng& rng) {
    cfg.validate();
    if (history.rows < 1) throw HistoryTooShort("rollout requires at least one observation");
    scorer.init(1);
    Tensor2 x(1, history.cols);
    for (int t = 0; t < history.rows; ++t) {
        std::copy(history.row(t), history.row(t) + history.cols, x.row(0));
        scorer.advance(x);
    }
    std::vector<Rng> rngs{rng};
    Tensor2 samples = scorer.sample(cfg, rngs);
    rng = rngs[0]; // hand the advanced stream back to the caller
    return samples;
}

}  // namespace detail

/// Autoregressive rollout from a history: returns M × d samples at offset Δ
/// past the last history row (deterministic models return a single row).
inline Tensor2 rollout(const RiqnModel& model, const Tensor2& history, const RolloutConfig& cfg,
                       Rng& rng) {
    RiqnScorer s(model);
    return detail::rollout_impl(s, history, cfg, rng);
}
inline Tensor2 rollout(const NpnModel& model, const Tensor2& history, const RolloutConfig& cfg,
                       Rng& rng) {
    NpnScorer s(model);
    return detail::rollout_impl(s, history, cfg, rng);
}
inline Tensor2 rollout(const NriqnModel& model, const Tensor2& history, const RolloutConfig& cfg,
                       Rng& rng) {
    NriqnScorer s(model);
    return detail::rollout_impl(s, history, cfg, rng);
}
inline Tensor2 rollout(const ForestModel& model, const Tensor2& history, const RolloutConfig& cfg,
                       Rng& rng) {
    ForestScorer s(model);
    return detail::rollout_impl(s, history, cfg, rng);
}

// ---------------------------------------------------------------------------
// Model sum type

using AnyModel = std::variant<RiqnModel, NpnModel, NriqnModel, ForestModel>;

inline ModelKind model_kind(const AnyModel& m) {
    switch (m.index()) {
        case 0: return ModelKind::Riqn;
        case 1: return ModelKind::Npn;
        case 2: return ModelKind::Nriqn;
        case 3: return ModelKind::Forest;
    }
    throw ConfigError("model", "empty model variant");
}

inline const ModelMeta& model_meta(const AnyModel& m) {
    return std::visit([](const auto& v) -> const ModelMeta& { return v.meta; }, m);
}

inline ModelMeta& model_meta(AnyModel& m) {
    return std::visit([](auto& v) -> ModelMeta& { return v.meta; }, m);
}

inline Tensor2 rollout(const AnyModel& model, const Tensor2& history, const RolloutConfig& cfg,
                       Rng& rng) {
    return std::visit([&](const auto& v) { return rollout(v, history, cfg, rng); }, model);
}

inline std::vector<std::vector<double>> member_l1_sums(const AnyModel& model,
                                                       const std::vector<const Trajectory*>& t,
                                                       const RolloutConfig& cfg,
                                                       uint64_t score_seed, int member) {
    return std::visit([&](const auto& v) { return member_l1_sums(v, t, cfg, score_seed, member); },
                      model);
}

}  // namespace oodd
