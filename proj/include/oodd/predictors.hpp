#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "oodd/dataset.hpp"
#include "oodd/errors.hpp"
#include "oodd/forest.hpp"
#include "oodd/nn.hpp"
#include "oodd/quantile_loss.hpp"
#include "oodd/rng.hpp"
#include "oodd/tensor.hpp"

namespace oodd {

enum class ModelKind { Riqn, Npn, Nriqn, Forest };

inline const char* model_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::Riqn: return "riqn";
        case ModelKind::Npn: return "npn";
        case ModelKind::Nriqn: return "nriqn";
        case ModelKind::Forest: return "forest";
    }
    throw ConfigError("model", "invalid model tag");
}

inline ModelKind parse_model(const std::string& name) {
    for (ModelKind k : {ModelKind::Riqn, ModelKind::Npn, ModelKind::Nriqn, ModelKind::Forest}) {
        if (name == model_name(k)) return k;
    }
    throw ConfigError("model", "unknown model '" + name + "'");
}

// ---------------------------------------------------------------------------
// Quantile embedding head

/// cos(π·i·τ) for i = 0..hidden−1 per row, via the Chebyshev recurrence
/// cos((i+1)θ) = 2cosθ·cos(iθ) − cos((i−1)θ).
inline Tensor2 cos_features(const std::vector<double>& taus, int hidden) {
    Tensor2 out(static_cast<int>(taus.size()), hidden);
    for (int r = 0; r < out.rows; ++r) {
        double* row = out.row(r);
        const double c1 = std::cos(M_PI * taus[r]);
        row[0] = 1.0;
        if (hidden > 1) row[1] = c1;
        for (int i = 2; i < hidden; ++i) row[i] = 2.0 * c1 * row[i - 1] - row[i - 2];
    }
    return out;
}

struct HeadCache {
    Tensor2 cosm;   // N × H cos features
    Tensor2 srep;   // N × H state rows
    Tensor2 phi;    // N × H post-ReLU embedding
    Tensor2 merged; // N × H state ⊙ phi
    Tensor2 u;      // N × H post-ReLU hidden layer
};

/// Quantile head: φ(τ) = ReLU(cos-features · W + b), merged with the state by
/// elementwise product, then a hidden ReLU layer and a scalar output.
struct QuantileHead {
    Linear emb, fc2, fc3;

    QuantileHead() = default;
    QuantileHead(int hidden, Rng& rng)
        : emb(hidden, hidden, rng), fc2(hidden, hidden, rng), fc3(hidden, 1, rng) {}

    /// One state row per τ; callers repeat state rows for multiple draws.
    Tensor2 forward(const Tensor2& srep, const std::vector<double>& taus,
                    HeadCache* cache) const {
        if (srep.rows != static_cast<int>(taus.size())) {
            throw ShapeMismatch("QuantileHead::forward: one tau per state row");
        }
        HeadCache local;
        HeadCache& c = cache ? *cache : local;
        c.cosm = cos_features(taus, srep.cols);
        c.phi = emb.forward(c.cosm);
        relu_inplace(c.phi);
        c.merged = Tensor2(srep.rows, srep.cols);
        for (size_t i = 0; i < c.merged.data.size(); ++i) {
            c.merged.data[i] = srep.data[i] * c.phi.data[i];
        }
        c.u = fc2.forward(c.merged);
        relu_inplace(c.u);
        Tensor2 y = fc3.forward(c.u);
        if (cache) cache->srep = srep;
        return y;
    }

    /// Accumulates weight gradients; returns the state cotangent per row.
    Tensor2 backward(const HeadCache& c, const Tensor2& dy) {
        Tensor2 du = fc3.backward(c.u, dy);
        du = relu_backward(c.u, du);
        Tensor2 dmerged = fc2.backward(c.merged, du);
        Tensor2 ds(dmerged.rows, dmerged.cols);
        Tensor2 dphi(dmerged.rows, dmerged.cols);
        for (size_t i = 0; i < dmerged.data.size(); ++i) {
            ds.data[i] = dmerged.data[i] * c.phi.data[i];
            dphi.data[i] = dmerged.data[i] * c.srep.data[i];
        }
        dphi = relu_backward(c.phi, dphi);
        emb.backward_params_only(c.cosm, dphi); // the cos features carry no gradient
        return ds;
    }

    void collect(std::vector<AdamParam*>& out) {
        emb.collect(out);
        fc2.collect(out);
        fc3.collect(out);
    }
};

// ---------------------------------------------------------------------------
// Trunks and per-feature networks

struct TrunkCache {
    Tensor2 x, f; // input and post-ReLU first layer
    GruCache gru;
};

/// First layer + ReLU feeding a GRU; the state embedding is the GRU output
/// plus the first-layer output (skip connection).
struct RecurrentTrunk {
    Linear fc1;
    GruCell gru;

    RecurrentTrunk() = default;
    RecurrentTrunk(int in, int hidden, Rng& rng)
        : fc1(in, hidden, rng), gru(hidden, hidden, rng) {}

    /// Advances the hidden state in place; returns s = h_new + f.
    Tensor2 forward(const Tensor2& x, Tensor2& h, TrunkCache* cache) const {
        TrunkCache local;
        TrunkCache& c = cache ? *cache : local;
        c.f = fc1.forward(x);
        relu_inplace(c.f);
        h = gru.forward(c.f, h, c.gru);
        Tensor2 s = h;
        for (size_t i = 0; i < s.data.size(); ++i) s.data[i] += c.f.data[i];
        if (cache) cache->x = x;
        return s;
    }

    /// Reverse step: ds is the cotangent of the skip sum, dh_carry the hidden
    /// cotangent flowing back from the future; returns the next carry.
    Tensor2 backward(const TrunkCache& c, const Tensor2& ds, const Tensor2& dh_carry) {
        Tensor2 dh = ds;
        for (size_t i = 0; i < dh.data.size(); ++i) dh.data[i] += dh_carry.data[i];
        Tensor2 df = ds; // skip path contribution
        Tensor2 dh_prev(dh.rows, dh.cols);
        gru.backward(c.gru, dh, df, dh_prev);
        df = relu_backward(c.f, df);
        fc1.backward_params_only(c.x, df);
        return dh_prev;
    }

    void collect(std::vector<AdamParam*>& out) {
        fc1.collect(out);
        gru.collect(out);
    }
};

struct RiqnNet {
    RecurrentTrunk trunk;
    QuantileHead head;
    void collect(std::vector<AdamParam*>& out) {
        trunk.collect(out);
        head.collect(out);
    }
};

struct NpnNet {
    RecurrentTrunk trunk;
    Linear out; // point-prediction head
    void collect(std::vector<AdamParam*>& o) {
        trunk.collect(o);
        out.collect(o);
    }
};

struct NriqnNet {
    Linear fc1; // (window·d) → hidden, ReLU; no recurrence
    QuantileHead head;
    void collect(std::vector<AdamParam*>& out) {
        fc1.collect(out);
        head.collect(out);
    }
};

struct ModelMeta {
    EnvKind env = EnvKind::CartPole;
    int d = 4;
    int hidden = 64;
    int window = 4;
    double lr = 1e-3;
    uint64_t seed = 0;
    std::vector<double> feature_means, feature_stds; // normalization the model expects
    std::vector<double> val_losses;                  // [0] is the pre-training loss
};

struct RiqnModel {
    ModelMeta meta;
    std::vector<RiqnNet> nets; // one per observation feature
};
struct NpnModel {
    ModelMeta meta;
    std::vector<NpnNet> nets;
};
struct NriqnModel {
    ModelMeta meta;
    std::vector<NriqnNet> nets;
};
struct ForestModel {
    ModelMeta meta;
    ForestConfig forest_cfg;
    std::vector<Forest> forests; // one per observation feature
};

// ---------------------------------------------------------------------------
// Training configuration

struct TrainConfig {
    int epochs = 5;
    int batches_per_epoch = 100;
    int batch = 16;  // segments per minibatch
    int tbptt = 50;  // steps per segment (shrinks if trajectories are shorter)
    int n_tau = 8;   // quantile draws per training step
    int window = 4;
    int hidden = 64;
    double lr = 1e-3;
    double kappa = 1.0;
    double clip_norm = 5.0;
    double teacher_start = 1.0; // scheduled sampling: teacher-forcing probability
    double teacher_floor = 0.5; // ... decays linearly to this over the epochs
    int val_trajectories = 16;  // cap on trajectories used per validation pass
    int forest_pool = 60000;    // cap on (trajectory, step) pairs pooled for forests
    uint64_t seed = 0;

    bool operator==(const TrainConfig&) const = default;

    /// Linear decay from teacher_start at epoch 0 to teacher_floor at the last.
    double teacher_prob(int epoch) const {
        if (epochs <= 1) return teacher_start;
        const double f = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
        return teacher_start - (teacher_start - teacher_floor) * f;
    }

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs", "must be >= 1");
        if (batches_per_epoch < 1) throw ConfigError("batches_per_epoch", "must be >= 1");
        if (batch < 1) throw ConfigError("batch", "must be >= 1");
        if (tbptt < 1) throw ConfigError("tbptt", "must be >= 1");
        if (n_tau < 1) throw ConfigError("n_tau", "must be >= 1");
        if (window < 1) throw ConfigError("window", "must be >= 1");
        if (hidden < 2) throw ConfigError("hidden", "must be >= 2");
        if (!(lr > 0.0)) throw ConfigError("lr", "must be > 0");
        if (!(kappa > 0.0)) throw ConfigError("kappa", "must be > 0");
        if (!(clip_norm > 0.0)) throw ConfigError("clip_norm", "must be > 0");
        if (teacher_start < 0.0 || teacher_start > 1.0) {
            throw ConfigError("teacher_start", "must be in [0, 1]");
        }
        if (teacher_floor < 0.0 || teacher_floor > teacher_start) {
            throw ConfigError("teacher_floor", "must be in [0, teacher_start]");
        }
        if (val_trajectories < 1) throw ConfigError("val_trajectories", "must be >= 1");
        if (forest_pool < 1) throw ConfigError("forest_pool", "must be >= 1");
    }
};

namespace detail {

inline int min_length(const std::vector<Trajectory>& data) {
    int m = data.front().length();
    for (const auto& t : data) m = std::min(m, t.length());
    return m;
}

inline void check_training_data(const std::vector<Trajectory>& train,
                                const std::vector<Trajectory>& val) {
    if (train.empty()) throw EmptyDataset("training set");
    if (val.empty()) throw EmptyDataset("validation set");
    if (min_length(train) < 2 || min_length(val) < 2) {
        throw EmptyDataset("trajectories too short to form (input, target) pairs");
    }
}

struct SegmentBatch {
    std::vector<const Trajectory*> traj;
    std::vector<int> start;
    int len = 0;
};

/// Samples `batch` segments of `len` steps; row start+len (the last target)
/// always exists.
inline SegmentBatch sample_segments(const std::vector<Trajectory>& data, int len, int batch,
                                    Rng& rng) {
    SegmentBatch out;
    out.len = len;
    for (int b = 0; b < batch; ++b) {
        const Trajectory& t = data[rng.uniform_int(data.size())];
        const uint64_t span = static_cast<uint64_t>(t.length() - len);
        out.traj.push_back(&t);
        out.start.push_back(static_cast<int>(rng.uniform_int(span)));
    }
    return out;
}

/// Midpoint quantile grid used for deterministic validation.
inline std::vector<double> tau_grid(int n) {
    std::vector<double> taus(n);
    for (int k = 0; k < n; ++k) taus[k] = (k + 0.5) / n;
    return taus;
}

inline std::vector<const Trajectory*> val_subset(const std::vector<Trajectory>& val, int cap) {
    std::vector<const Trajectory*> out;
    for (const auto& t : val) {
        if (static_cast<int>(out.size()) >= cap) break;
        out.push_back(&t);
    }
    return out;
}

}  // namespace detail

/// Copies rows t−window+1..t into `out` (window·d values, oldest first),
/// left-padded by clamping to row 0 so a window exists from the first step.
inline void fill_window(const Tensor2& observations, int t, int window, double* out) {
    const int d = observations.cols;
    for (int w = 0; w < window; ++w) {
        const int row = std::max(t - window + 1 + w, 0);
        std::copy(observations.row(row), observations.row(row) + d, out + w * d);
    }
}

// ---------------------------------------------------------------------------
// Validation losses (teacher-forced, deterministic)

/// Mean quantile Huber loss over val trajectories, steps, features and the
/// midpoint τ grid.
inline double validation_loss_riqn(const std::vector<RiqnNet>& nets,
                                   const std::vector<Trajectory>& val, const TrainConfig& cfg) {
    const int d = static_cast<int>(nets.size());
    const auto taus = detail::tau_grid(cfg.n_tau);
    const auto subset = detail::val_subset(val, cfg.val_trajectories);
    double loss = 0.0;
    long long count = 0;
    for (const Trajectory* traj : subset) {
        const int t_len = traj->length();
        for (int j = 0; j < d; ++j) {
            Tensor2 h(1, cfg.hidden);
            Tensor2 x(1, d);
            for (int t = 0; t + 1 < t_len; ++t) {
                std::copy(traj->observations.row(t), traj->observations.row(t) + d, x.row(0));
                const Tensor2 s = nets[j].trunk.forward(x, h, nullptr);
                const Tensor2 y = nets[j].head.forward(repeat_rows(s, cfg.n_tau), taus, nullptr);
                const double target = traj->observations.at(t + 1, j);
                for (int k = 0; k < cfg.n_tau; ++k) {
                    loss += quantile_huber_loss(y.at(k, 0), target, taus[k], cfg.kappa);
                    ++count;
                }
            }
        }
    }
    return loss / static_cast<double>(count);
}

/// Mean squared error of the point predictions.
inline double validation_loss_npn(const std::vector<NpnNet>& nets,
                                  const std::vector<Trajectory>& val, const TrainConfig& cfg) {
    const int d = static_cast<int>(nets.size());
    const auto subset = detail::val_subset(val, cfg.val_trajectories);
    double loss = 0.0;
    long long count = 0;
    for (const Trajectory* traj : subset) {
        const int t_len = traj->length();
        for (int j = 0; j < d; ++j) {
            Tensor2 h(1, cfg.hidden);
            Tensor2 x(1, d);
            for (int t = 0; t + 1 < t_len; ++t) {
                std::copy(traj->observations.row(t), traj->observations.row(t) + d, x.row(0));
                const Tensor2 s = nets[j].trunk.forward(x, h, nullptr);
                const Tensor2 y = nets[j].out.forward(s);
                const double e = y.at(0, 0) - traj->observations.at(t + 1, j);
                loss += e * e;
                ++count;
            }
        }
    }
    return loss / static_cast<double>(count);
}

inline double validation_loss_nriqn(const std::vector<NriqnNet>& nets,
                                    const std::vector<Trajectory>& val, const TrainConfig& cfg) {
    const int d = static_cast<int>(nets.size());
    const auto taus = detail::tau_grid(cfg.n_tau);
    const auto subset = detail::val_subset(val, cfg.val_trajectories);
    double loss = 0.0;
    long long count = 0;
    for (const Trajectory* traj : subset) {
        const int t_len = traj->length();
        Tensor2 x(1, cfg.window * d);
        for (int j = 0; j < d; ++j) {
            for (int t = 0; t + 1 < t_len; ++t) {
                fill_window(traj->observations, t, cfg.window, x.row(0));
                Tensor2 s = nets[j].fc1.forward(x);
                relu_inplace(s);
                const Tensor2 y = nets[j].head.forward(repeat_rows(s, cfg.n_tau), taus, nullptr);
                const double target = traj->observations.at(t + 1, j);
                for (int k = 0; k < cfg.n_tau; ++k) {
                    loss += quantile_huber_loss(y.at(k, 0), target, taus[k], cfg.kappa);
                    ++count;
                }
            }
        }
    }
    return loss / static_cast<double>(count);
}

inline double validation_loss_forest(const std::vector<Forest>& forests,
                                     const std::vector<Trajectory>& val, const TrainConfig& cfg) {
    const int d = static_cast<int>(forests.size());
    const auto subset = detail::val_subset(val, cfg.val_trajectories);
    double loss = 0.0;
    long long count = 0;
    std::vector<double> x(static_cast<size_t>(cfg.window) * d);
    for (const Trajectory* traj : subset) {
        const int t_len = traj->length();
        for (int t = 0; t + 1 < t_len; ++t) {
            fill_window(traj->observations, t, cfg.window, x.data());
            for (int j = 0; j < d; ++j) {
                const double e = forests[j].predict(x.data()) - traj->observations.at(t + 1, j);
                loss += e * e;
                ++count;
            }
        }
    }
    return loss / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Trainers
//
// RNG streams: network j is initialized from mix_seed(seed, 0x11, j) and
// trained with draws from mix_seed(seed, 0x12, j), so every feature network
// is reproducible in isolation. Per training step the draw order is fixed:
// batch scheduled-sampling coins, then batch feed τs (quantile models only),
// then batch·n_tau loss τs.

namespace detail {

inline ModelMeta make_meta(const std::vector<Trajectory>& train, const TrainConfig& cfg) {
    ModelMeta meta;
    meta.env = train.front().env;
    meta.d = train.front().observations.cols;
    meta.hidden = cfg.hidden;
    meta.window = cfg.window;
    meta.lr = cfg.lr;
    meta.seed = cfg.seed;
    return meta;
}

inline void check_val_loss(double v, const char* what) {
    if (!std::isfinite(v)) throw DivergedTraining(std::string(what) + ": validation loss");
}

/// Sums the per-τ state cotangents (B·n_tau × H) back to one row per segment
/// (B × H).
inline Tensor2 collapse_tau_rows(const Tensor2& ds_rep, int batch, int n_tau) {
    Tensor2 ds(batch, ds_rep.cols);
    for (int r = 0; r < batch; ++r) {
        double* dst = ds.row(r);
        for (int k = 0; k < n_tau; ++k) {
            const double* src = ds_rep.row(r * n_tau + k);
            for (int c = 0; c < ds_rep.cols; ++c) dst[c] += src[c];
        }
    }
    return ds;
}

}  // namespace detail

/// Trains the per-feature recurrent quantile networks with truncated
/// backpropagation through time and scheduled sampling: with probability
/// 1−teacher the feature's input value is the network's own detached τ-sample
/// from the previous step.
inline RiqnModel train_riqn(const std::vector<Trajectory>& train,
                            const std::vector<Trajectory>& val, const TrainConfig& cfg) {
    cfg.validate();
    detail::check_training_data(train, val);
    const int d = train.front().observations.cols;
    const int seg_len = std::min(cfg.tbptt, detail::min_length(train) - 1);

    RiqnModel model;
    model.meta = detail::make_meta(train, cfg);
    std::vector<Rng> rngs;
    std::vector<std::vector<AdamParam*>> params(d);
    for (int j = 0; j < d; ++j) {
        Rng init(mix_seed(cfg.seed, 0x11u, static_cast<uint64_t>(j)));
        RiqnNet net;
        net.trunk = RecurrentTrunk(d, cfg.hidden, init);
        net.head = QuantileHead(cfg.hidden, init);
        model.nets.push_back(std::move(net));
        rngs.emplace_back(mix_seed(cfg.seed, 0x12u, static_cast<uint64_t>(j)));
    }
    for (int j = 0; j < d; ++j) model.nets[j].collect(params[j]);

    double v = validation_loss_riqn(model.nets, val, cfg);
    detail::check_val_loss(v, "riqn");
    model.meta.val_losses.push_back(v);

    struct StepCache {
        TrunkCache trunk;
        HeadCache head;
        Tensor2 ds;
    };
    std::vector<StepCache> caches(seg_len);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double p_teacher = cfg.teacher_prob(epoch);
        for (int j = 0; j < d; ++j) {
            RiqnNet& net = model.nets[j];
            Rng& rng = rngs[j];
            for (int b = 0; b < cfg.batches_per_epoch; ++b) {
                const auto seg = detail::sample_segments(train, seg_len, cfg.batch, rng);
                Tensor2 h(cfg.batch, cfg.hidden);
                Tensor2 x(cfg.batch, d);
                std::vector<double> prev_sample(cfg.batch, 0.0);
                std::vector<double> feed_taus(cfg.batch);
                std::vector<double> taus(static_cast<size_t>(cfg.batch) * cfg.n_tau);
                const double scale =
                    1.0 / (static_cast<double>(cfg.batch) * seg_len * cfg.n_tau);
                double loss = 0.0;

                for (int t = 0; t < seg_len; ++t) {
                    StepCache& sc = caches[t];
                    for (int r = 0; r < cfg.batch; ++r) {
                        const bool use_model = rng.uniform() >= p_teacher;
                        std::copy(seg.traj[r]->observations.row(seg.start[r] + t),
                                  seg.traj[r]->observations.row(seg.start[r] + t) + d, x.row(r));
                        if (t > 0 && use_model) x.at(r, j) = prev_sample[r];
                    }
                    const Tensor2 s = net.trunk.forward(x, h, &sc.trunk);

                    for (double& tv : feed_taus) tv = rng.uniform();
                    const Tensor2 y_feed = net.head.forward(s, feed_taus, nullptr);
                    for (int r = 0; r < cfg.batch; ++r) prev_sample[r] = y_feed.at(r, 0);

                    for (double& tv : taus) tv = rng.uniform();
                    const Tensor2 y = net.head.forward(repeat_rows(s, cfg.n_tau), taus, &sc.head);

                    Tensor2 dy(y.rows, 1);
                    for (int r = 0; r < cfg.batch; ++r) {
                        const double target =
                            seg.traj[r]->observations.at(seg.start[r] + t + 1, j);
                        for (int k = 0; k < cfg.n_tau; ++k) {
                            const int row = r * cfg.n_tau + k;
                            loss += quantile_huber_loss(y.at(row, 0), target, taus[row],
                                                        cfg.kappa) *
                                    scale;
                            dy.at(row, 0) = quantile_huber_loss_dpred(y.at(row, 0), target,
                                                                      taus[row], cfg.kappa) *
                                            scale;
                        }
                    }
                    const Tensor2 ds_rep = net.head.backward(sc.head, dy);
                    sc.ds = detail::collapse_tau_rows(ds_rep, cfg.batch, cfg.n_tau);
                }
                if (!std::isfinite(loss)) {
                    throw DivergedTraining("riqn feature " + std::to_string(j));
                }
                Tensor2 dh_carry(cfg.batch, cfg.hidden);
                for (int t = seg_len - 1; t >= 0; --t) {
                    dh_carry = net.trunk.backward(caches[t].trunk, caches[t].ds, dh_carry);
                }
                clip_global_norm(params[j], cfg.clip_norm);
                for (AdamParam* p : params[j]) {
                    adam_step(*p, cfg.lr);
                    p->zero_grad();
                }
            }
        }
        v = validation_loss_riqn(model.nets, val, cfg);
        detail::check_val_loss(v, "riqn");
        model.meta.val_losses.push_back(v);
    }
    return model;
}

/// Same trunk and training regime as the quantile model, but a linear point
/// head trained with mean squared error; the scheduled-sampling feed is the
/// point prediction itself.
inline NpnModel train_npn(const std::vector<Trajectory>& train,
                          const std::vector<Trajectory>& val, const TrainConfig& cfg) {
    cfg.validate();
    detail::check_training_data(train, val);
    const int d = train.front().observations.cols;
    const int seg_len = std::min(cfg.tbptt, detail::min_length(train) - 1);

    NpnModel model;
    model.meta = detail::make_meta(train, cfg);
    std::vector<Rng> rngs;
    std::vector<std::vector<AdamParam*>> params(d);
    for (int j = 0; j < d; ++j) {
        Rng init(mix_seed(cfg.seed, 0x11u, static_cast<uint64_t>(j)));
        NpnNet net;
        net.trunk = RecurrentTrunk(d, cfg.hidden, init);
        net.out = Linear(cfg.hidden, 1, init);
        model.nets.push_back(std::move(net));
        rngs.emplace_back(mix_seed(cfg.seed, 0x12u, static_cast<uint64_t>(j)));
    }
    for (int j = 0; j < d; ++j) model.nets[j].collect(params[j]);

    double v = validation_loss_npn(model.nets, val, cfg);
    detail::check_val_loss(v, "npn");
    model.meta.val_losses.push_back(v);

    struct StepCache {
        TrunkCache trunk;
        Tensor2 ds;
    };
    std::vector<StepCache> caches(seg_len);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double p_teacher = cfg.teacher_prob(epoch);
        for (int j = 0; j < d; ++j) {
            NpnNet& net = model.nets[j];
            Rng& rng = rngs[j];
            for (int b = 0; b < cfg.batches_per_epoch; ++b) {
                const auto seg = detail::sample_segments(train, seg_len, cfg.batch, rng);
                Tensor2 h(cfg.batch, cfg.hidden);
                Tensor2 x(cfg.batch, d);
                std::vector<double> prev_sample(cfg.batch, 0.0);
                const double scale = 1.0 / (static_cast<double>(cfg.batch) * seg_len);
                double loss = 0.0;

                for (int t = 0; t < seg_len; ++t) {
                    StepCache& sc = caches[t];
                    for (int r = 0; r < cfg.batch; ++r) {
                        const bool use_model = rng.uniform() >= p_teacher;
                        std::copy(seg.traj[r]->observations.row(seg.start[r] + t),
                                  seg.traj[r]->observations.row(seg.start[r] + t) + d, x.row(r));
                        if (t > 0 && use_model) x.at(r, j) = prev_sample[r];
                    }
                    const Tensor2 s = net.trunk.forward(x, h, &sc.trunk);
                    const Tensor2 y = net.out.forward(s);
                    Tensor2 dy(cfg.batch, 1);
                    for (int r = 0; r < cfg.batch; ++r) {
                        const double target =
                            seg.traj[r]->observations.at(seg.start[r] + t + 1, j);
                        const double e = y.at(r, 0) - target;
                        loss += e * e * scale;
                        dy.at(r, 0) = 2.0 * e * scale;
                        prev_sample[r] = y.at(r, 0);
                    }
                    sc.ds = net.out.backward(s, dy);
                }
                if (!std::isfinite(loss)) {
                    throw DivergedTraining("npn feature " + std::to_string(j));
                }
                Tensor2 dh_carry(cfg.batch, cfg.hidden);
                for (int t = seg_len - 1; t >= 0; --t) {
                    dh_carry = net.trunk.backward(caches[t].trunk, caches[t].ds, dh_carry);
                }
                clip_global_norm(params[j], cfg.clip_norm);
                for (AdamParam* p : params[j]) {
                    adam_step(*p, cfg.lr);
                    p->zero_grad();
                }
            }
        }
        v = validation_loss_npn(model.nets, val, cfg);
        detail::check_val_loss(v, "npn");
        model.meta.val_losses.push_back(v);
    }
    return model;
}

/// Non-recurrent variant: the state embedding is a ReLU layer over a sliding
/// window of observations. Scheduled sampling replaces the feature's value in
/// the newest window slot; gradients flow per step (no recurrence).
inline NriqnModel train_nriqn(const std::vector<Trajectory>& train,
                              const std::vector<Trajectory>& val, const TrainConfig& cfg) {
    cfg.validate();
    detail::check_training_data(train, val);
    const int d = train.front().observations.cols;
    const int seg_len = std::min(cfg.tbptt, detail::min_length(train) - 1);
    const int in_dim = cfg.window * d;

    NriqnModel model;
    model.meta = detail::make_meta(train, cfg);
    std::vector<Rng> rngs;
    std::vector<std::vector<AdamParam*>> params(d);
    for (int j = 0; j < d; ++j) {
        Rng init(mix_seed(cfg.seed, 0x11u, static_cast<uint64_t>(j)));
        NriqnNet net;
        net.fc1 = Linear(in_dim, cfg.hidden, init);
        net.head = QuantileHead(cfg.hidden, init);
        model.nets.push_back(std::move(net));
        rngs.emplace_back(mix_seed(cfg.seed, 0x12u, static_cast<uint64_t>(j)));
    }
    for (int j = 0; j < d; ++j) model.nets[j].collect(params[j]);

    double v = validation_loss_nriqn(model.nets, val, cfg);
    detail::check_val_loss(v, "nriqn");
    model.meta.val_losses.push_back(v);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double p_teacher = cfg.teacher_prob(epoch);
        for (int j = 0; j < d; ++j) {
            NriqnNet& net = model.nets[j];
            Rng& rng = rngs[j];
            for (int b = 0; b < cfg.batches_per_epoch; ++b) {
                const auto seg = detail::sample_segments(train, seg_len, cfg.batch, rng);
                Tensor2 x(cfg.batch, in_dim);
                std::vector<double> prev_sample(cfg.batch, 0.0);
                std::vector<double> feed_taus(cfg.batch);
                std::vector<double> taus(static_cast<size_t>(cfg.batch) * cfg.n_tau);
                const double scale =
                    1.0 / (static_cast<double>(cfg.batch) * seg_len * cfg.n_tau);
                double loss = 0.0;
                HeadCache hc;

                for (int t = 0; t < seg_len; ++t) {
                    for (int r = 0; r < cfg.batch; ++r) {
                        const bool use_model = rng.uniform() >= p_teacher;
                        fill_window(seg.traj[r]->observations, seg.start[r] + t, cfg.window,
                                    x.row(r));
                        if (t > 0 && use_model) {
                            x.at(r, (cfg.window - 1) * d + j) = prev_sample[r];
                        }
                    }
                    Tensor2 s = net.fc1.forward(x);
                    relu_inplace(s);

                    for (double& tv : feed_taus) tv = rng.uniform();
                    const Tensor2 y_feed = net.head.forward(s, feed_taus, nullptr);
                    for (int r = 0; r < cfg.batch; ++r) prev_sample[r] = y_feed.at(r, 0);

                    for (double& tv : taus) tv = rng.uniform();
                    const Tensor2 y = net.head.forward(repeat_rows(s, cfg.n_tau), taus, &hc);

                    Tensor2 dy(y.rows, 1);
                    for (int r = 0; r < cfg.batch; ++r) {
                        const double target =
                            seg.traj[r]->observations.at(seg.start[r] + t + 1, j);
                        for (int k = 0; k < cfg.n_tau; ++k) {
                            const int row = r * cfg.n_tau + k;
                            loss += quantile_huber_loss(y.at(row, 0), target, taus[row],
                                                        cfg.kappa) *
                                    scale;
                            dy.at(row, 0) = quantile_huber_loss_dpred(y.at(row, 0), target,
                                                                      taus[row], cfg.kappa) *
                                            scale;
                        }
                    }
                    const Tensor2 ds_rep = net.head.backward(hc, dy);
                    Tensor2 ds = detail::collapse_tau_rows(ds_rep, cfg.batch, cfg.n_tau);
                    ds = relu_backward(s, ds);
                    net.fc1.backward_params_only(x, ds);
                }
                if (!std::isfinite(loss)) {
                    throw DivergedTraining("nriqn feature " + std::to_string(j));
                }
                clip_global_norm(params[j], cfg.clip_norm);
                for (AdamParam* p : params[j]) {
                    adam_step(*p, cfg.lr);
                    p->zero_grad();
                }
            }
        }
        v = validation_loss_nriqn(model.nets, val, cfg);
        detail::check_val_loss(v, "nriqn");
        model.meta.val_losses.push_back(v);
    }
    return model;
}

/// Fits one regression forest per feature on a pooled design matrix of
/// observation windows. The pool takes every (trajectory, step) pair when
/// that fits the cap, otherwise a uniform sample with replacement drawn from
/// mix_seed(seed, 0x13).
inline ForestModel train_forest(const std::vector<Trajectory>& train,
                                const std::vector<Trajectory>& val, const TrainConfig& cfg,
                                ForestConfig forest_cfg) {
    cfg.validate();
    detail::check_training_data(train, val);
    const int d = train.front().observations.cols;
    const int in_dim = cfg.window * d;

    ForestModel model;
    model.meta = detail::make_meta(train, cfg);
    model.meta.hidden = 0;
    model.meta.lr = 0.0;

    long long total = 0;
    std::vector<long long> offsets; // prefix pair counts per trajectory
    for (const auto& t : train) {
        offsets.push_back(total);
        total += t.length() - 1;
    }
    std::vector<std::pair<int, int>> pool; // (trajectory index, step)
    if (total <= cfg.forest_pool) {
        for (size_t i = 0; i < train.size(); ++i) {
            for (int t = 0; t + 1 < train[i].length(); ++t) {
                pool.emplace_back(static_cast<int>(i), t);
            }
        }
    } else {
        Rng rng(mix_seed(cfg.seed, 0x13u));
        for (int n = 0; n < cfg.forest_pool; ++n) {
            const long long pick =
                static_cast<long long>(rng.uniform_int(static_cast<uint64_t>(total)));
            const auto it = std::upper_bound(offsets.begin(), offsets.end(), pick);
            const int traj = static_cast<int>(it - offsets.begin()) - 1;
            pool.emplace_back(traj, static_cast<int>(pick - offsets[traj]));
        }
    }

    const int n = static_cast<int>(pool.size());
    Tensor2 x(n, in_dim);
    Tensor2 targets(n, d);
    for (int i = 0; i < n; ++i) {
        const Trajectory& traj = train[pool[i].first];
        const int t = pool[i].second;
        fill_window(traj.observations, t, cfg.window, x.row(i));
        std::copy(traj.observations.row(t + 1), traj.observations.row(t + 1) + d,
                  targets.row(i));
    }

    std::vector<double> y(n);
    for (int j = 0; j < d; ++j) {
        for (int i = 0; i < n; ++i) y[i] = targets.at(i, j);
        ForestConfig fc = forest_cfg;
        fc.seed = mix_seed(cfg.seed, 0x14u, static_cast<uint64_t>(j));
        model.forests.push_back(fit_forest(x, y, fc));
    }
    model.forest_cfg = forest_cfg;

    const double v = validation_loss_forest(model.forests, val, cfg);
    detail::check_val_loss(v, "forest");
    model.meta.val_losses.push_back(v);
    return model;
}

}  // namespace oodd
