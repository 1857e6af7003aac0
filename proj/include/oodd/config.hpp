#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "oodd/anomaly.hpp"
#include "oodd/detection.hpp"
#include "oodd/env.hpp"
#include "oodd/errors.hpp"
#include "oodd/forest.hpp"
#include "oodd/predictors.hpp"
#include "oodd/version.hpp"

namespace oodd {

/// Model labels as they appear in sweep plans and reports. "riqn_ms" is the
/// RIQN checkpoint scored with mean-sampling rollouts; it shares training
/// artifacts with "riqn".
inline std::pair<ModelKind, bool> parse_model_label(const std::string& label) {
    if (label == "riqn_ms") return {ModelKind::Riqn, true};
    return {parse_model(label), false};
}

struct DataConfig {
    int train = 2000;
    int val = 200;
    int test_per_kind = 100;
    int horizon = 200;

    bool operator==(const DataConfig&) const = default;

    void validate() const {
        if (train < 2) throw ConfigError("data.train", "must be >= 2");
        if (val < 1) throw ConfigError("data.val", "must be >= 1");
        if (test_per_kind < 1) throw ConfigError("data.test_per_kind", "must be >= 1");
        if (horizon < 12) throw ConfigError("data.horizon", "must be >= 12");
    }
};

/// One block of the sweep plan: the cross product of its sets is evaluated,
/// one report row per (env, kind, model, delta, e) cell.
struct SweepBlock {
    std::vector<std::string> envs;
    std::vector<std::string> kinds;
    std::vector<std::string> models;  // labels: riqn | riqn_ms | npn | nriqn | forest
    std::vector<int> deltas;
    int m_samples = 8;
    std::vector<int> ensembles;

    bool operator==(const SweepBlock&) const = default;

    void validate() const {
        if (envs.empty()) throw ConfigError("sweep.envs", "must be nonempty");
        if (kinds.empty()) throw ConfigError("sweep.kinds", "must be nonempty");
        if (models.empty()) throw ConfigError("sweep.models", "must be nonempty");
        if (deltas.empty()) throw ConfigError("sweep.deltas", "must be nonempty");
        if (ensembles.empty()) throw ConfigError("sweep.ensembles", "must be nonempty");
        for (const auto& e : envs) parse_env(e);
        for (const auto& k : kinds) parse_anomaly(k);
        for (const auto& m : models) parse_model_label(m);
        for (int d : deltas) {
            if (d < 1) throw ConfigError("sweep.deltas", "must be >= 1");
        }
        if (m_samples < 1) throw ConfigError("sweep.m_samples", "must be >= 1");
        for (int e : ensembles) {
            if (e < 1) throw ConfigError("sweep.ensembles", "must be >= 1");
        }
    }

    int rows() const {
        return static_cast<int>(envs.size() * kinds.size() * models.size() * deltas.size() *
                                ensembles.size());
    }
};

struct ExperimentConfig {
    std::string out_dir = "out";
    std::string scale = "desk";
    uint64_t seed = 42;
    int jobs = 0;  // 0 → hardware concurrency
    DataConfig data;
    TrainConfig train;
    ForestConfig forest;
    std::vector<double> member_lrs = {0.001, 0.01, 0.001, 0.01, 0.001};
    CusumConfig cusum;
    int nominal_stat_trajectories = 100;  // nominal-val trajectories pooled for CUSUM stats
    std::vector<SweepBlock> sweep;

    bool operator==(const ExperimentConfig&) const = default;

    int max_ensemble() const {
        int m = 1;
        for (const auto& b : sweep) {
            for (int e : b.ensembles) m = std::max(m, e);
        }
        return m;
    }

    int report_rows() const {
        int n = 0;
        for (const auto& b : sweep) n += b.rows();
        return n;
    }

    void validate() const {
        if (out_dir.empty()) throw ConfigError("out_dir", "must be nonempty");
        if (scale != "desk" && scale != "full") throw ConfigError("scale", "must be desk or full");
        if (jobs < 0) throw ConfigError("jobs", "must be >= 0");
        data.validate();
        train.validate();
        cusum.validate();
        if (member_lrs.empty()) throw ConfigError("member_lrs", "must be nonempty");
        for (double lr : member_lrs) {
            if (!(lr > 0.0)) throw ConfigError("member_lrs", "must all be > 0");
        }
        if (nominal_stat_trajectories < 1) {
            throw ConfigError("nominal_stat_trajectories", "must be >= 1");
        }
        if (sweep.empty()) throw ConfigError("sweep", "must be nonempty");
        for (const auto& b : sweep) b.validate();
        if (max_ensemble() > static_cast<int>(member_lrs.size())) {
            throw ConfigError("member_lrs", "fewer learning rates than the largest ensemble");
        }
    }
};

// ---------------------------------------------------------------------------
// Built-in scale presets

inline std::vector<std::string> all_kind_names() {
    std::vector<std::string> out;
    for (AnomalyKind k : all_anomaly_kinds()) out.emplace_back(anomaly_name(k));
    return out;
}

inline ExperimentConfig default_config(const std::string& scale) {
    ExperimentConfig cfg;
    cfg.scale = scale;
    // Both plants are close to order-1 Markov in the observation, so gradient
    // quality comes from minibatch count rather than backprop depth: many
    // short truncation windows beat few long ones at equal cost. The small
    // Huber kappa keeps the quantile heads sharp near zero residual, which is
    // where subtle sensor faults live.
    cfg.train.epochs = 50;
    cfg.train.tbptt = 8;
    cfg.train.batch = 32;
    cfg.train.n_tau = 8;
    cfg.train.hidden = 64;
    cfg.train.window = 4;
    cfg.train.kappa = 0.1;
    cfg.train.teacher_floor = 0.9;
    if (scale == "desk") {
        cfg.data = DataConfig{2000, 200, 100, 200};
        cfg.train.batches_per_epoch = 20;
        cfg.train.val_trajectories = 8;
        cfg.train.forest_pool = 30000;
        // Main grid: every model at the one-step horizon, both ensemble sizes.
        SweepBlock main;
        main.envs = {"cartpole", "acrobot"};
        main.kinds = all_kind_names();
        main.models = {"riqn", "npn", "nriqn", "forest"};
        main.deltas = {1};
        main.m_samples = 8;
        main.ensembles = {1, 5};
        // Horizon contrast: mean-sampling RIQN on the two drift-style sensor
        // anomalies, short vs long detection horizon.
        SweepBlock horizon;
        horizon.envs = {"cartpole"};
        horizon.kinds = {"sensor_drift", "sensor_shutdown"};
        horizon.models = {"riqn_ms"};
        horizon.deltas = {1, 10};
        horizon.m_samples = 8;
        horizon.ensembles = {5};
        cfg.sweep = {main, horizon};
    } else if (scale == "full") {
        cfg.data = DataConfig{10000, 1000, 100, 500};
        cfg.train.batches_per_epoch = 40;
        cfg.train.val_trajectories = 16;
        cfg.train.forest_pool = 60000;
        SweepBlock main;
        main.envs = {"cartpole", "acrobot"};
        main.kinds = all_kind_names();
        main.models = {"riqn", "riqn_ms", "npn", "nriqn", "forest"};
        main.deltas = {1, 10, 20};
        main.m_samples = 8;
        main.ensembles = {1, 5};
        SweepBlock sampling;
        sampling.envs = {"cartpole", "acrobot"};
        sampling.kinds = all_kind_names();
        sampling.models = {"riqn"};
        sampling.deltas = {1};
        sampling.ensembles = {5};
        cfg.sweep = {main};
        for (int m : {4, 32, 128}) {
            sampling.m_samples = m;
            cfg.sweep.push_back(sampling);
        }
    } else {
        throw ConfigError("scale", "must be desk or full");
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// JSON round-trip

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["out_dir"] = c.out_dir;
    j["scale"] = c.scale;
    j["seed"] = c.seed;
    j["jobs"] = c.jobs;
    j["data"] = {{"train", c.data.train},
                 {"val", c.data.val},
                 {"test_per_kind", c.data.test_per_kind},
                 {"horizon", c.data.horizon}};
    j["train"] = {{"epochs", c.train.epochs},
                  {"batches_per_epoch", c.train.batches_per_epoch},
                  {"batch", c.train.batch},
                  {"tbptt", c.train.tbptt},
                  {"n_tau", c.train.n_tau},
                  {"window", c.train.window},
                  {"hidden", c.train.hidden},
                  {"kappa", c.train.kappa},
                  {"clip_norm", c.train.clip_norm},
                  {"teacher_start", c.train.teacher_start},
                  {"teacher_floor", c.train.teacher_floor},
                  {"val_trajectories", c.train.val_trajectories},
                  {"forest_pool", c.train.forest_pool}};
    j["forest"] = {{"n_trees", c.forest.n_trees},
                   {"max_depth", c.forest.max_depth},
                   {"min_leaf", c.forest.min_leaf},
                   {"bootstrap", c.forest.bootstrap},
                   {"mtry", c.forest.mtry},
                   {"sample_cap", c.forest.sample_cap}};
    j["member_lrs"] = c.member_lrs;
    j["cusum"] = {{"threshold", c.cusum.threshold},
                  {"drift", c.cusum.drift},
                  {"standardize", c.cusum.standardize}};
    j["nominal_stat_trajectories"] = c.nominal_stat_trajectories;
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : c.sweep) {
        blocks.push_back({{"envs", b.envs},
                          {"kinds", b.kinds},
                          {"models", b.models},
                          {"deltas", b.deltas},
                          {"m_samples", b.m_samples},
                          {"ensembles", b.ensembles}});
    }
    j["sweep"] = blocks;
    return j;
}

namespace detail {

template <typename T>
inline void get_if_present(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).template get<T>();
}

}  // namespace detail

/// Overlays the fields present in `j` onto `base`; absent fields keep the
/// base value. The `sweep` array, when present, replaces the whole plan.
inline ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base) {
    try {
        detail::get_if_present(j, "out_dir", base.out_dir);
        detail::get_if_present(j, "scale", base.scale);
        detail::get_if_present(j, "seed", base.seed);
        detail::get_if_present(j, "jobs", base.jobs);
        if (j.contains("data")) {
            const auto& d = j.at("data");
            detail::get_if_present(d, "train", base.data.train);
            detail::get_if_present(d, "val", base.data.val);
            detail::get_if_present(d, "test_per_kind", base.data.test_per_kind);
            detail::get_if_present(d, "horizon", base.data.horizon);
        }
        if (j.contains("train")) {
            const auto& t = j.at("train");
            detail::get_if_present(t, "epochs", base.train.epochs);
            detail::get_if_present(t, "batches_per_epoch", base.train.batches_per_epoch);
            detail::get_if_present(t, "batch", base.train.batch);
            detail::get_if_present(t, "tbptt", base.train.tbptt);
            detail::get_if_present(t, "n_tau", base.train.n_tau);
            detail::get_if_present(t, "window", base.train.window);
            detail::get_if_present(t, "hidden", base.train.hidden);
            detail::get_if_present(t, "kappa", base.train.kappa);
            detail::get_if_present(t, "clip_norm", base.train.clip_norm);
            detail::get_if_present(t, "teacher_start", base.train.teacher_start);
            detail::get_if_present(t, "teacher_floor", base.train.teacher_floor);
            detail::get_if_present(t, "val_trajectories", base.train.val_trajectories);
            detail::get_if_present(t, "forest_pool", base.train.forest_pool);
        }
        if (j.contains("forest")) {
            const auto& f = j.at("forest");
            detail::get_if_present(f, "n_trees", base.forest.n_trees);
            detail::get_if_present(f, "max_depth", base.forest.max_depth);
            detail::get_if_present(f, "min_leaf", base.forest.min_leaf);
            detail::get_if_present(f, "bootstrap", base.forest.bootstrap);
            detail::get_if_present(f, "mtry", base.forest.mtry);
            detail::get_if_present(f, "sample_cap", base.forest.sample_cap);
        }
        detail::get_if_present(j, "member_lrs", base.member_lrs);
        if (j.contains("cusum")) {
            const auto& cj = j.at("cusum");
            detail::get_if_present(cj, "threshold", base.cusum.threshold);
            detail::get_if_present(cj, "drift", base.cusum.drift);
            detail::get_if_present(cj, "standardize", base.cusum.standardize);
        }
        detail::get_if_present(j, "nominal_stat_trajectories", base.nominal_stat_trajectories);
        if (j.contains("sweep")) {
            base.sweep.clear();
            for (const auto& bj : j.at("sweep")) {
                SweepBlock b;
                detail::get_if_present(bj, "envs", b.envs);
                detail::get_if_present(bj, "kinds", b.kinds);
                detail::get_if_present(bj, "models", b.models);
                detail::get_if_present(bj, "deltas", b.deltas);
                detail::get_if_present(bj, "m_samples", b.m_samples);
                detail::get_if_present(bj, "ensembles", b.ensembles);
                base.sweep.push_back(std::move(b));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config", e.what());
    }
    return base;
}

inline ExperimentConfig load_config_file(const std::filesystem::path& path,
                                         ExperimentConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config", path.string() + ": " + e.what());
    }
    return config_from_json(j, std::move(base));
}

// ---------------------------------------------------------------------------
// Run manifest

inline void write_run_manifest(const std::filesystem::path& out_dir,
                               const ExperimentConfig& cfg) {
    std::filesystem::create_directories(out_dir);
    nlohmann::json j;
    j["oodd_version"] = kVersion;
    j["config"] = config_to_json(cfg);
    std::ofstream f(out_dir / "run_manifest.json");
    if (!f) throw IoError("cannot write run manifest in " + out_dir.string());
    f << j.dump(2) << "\n";
    if (!f) throw IoError("failed writing run manifest in " + out_dir.string());
}

/// Reads the resolved config back out of a run manifest.
inline ExperimentConfig read_run_manifest(const std::filesystem::path& out_dir) {
    std::ifstream f(out_dir / "run_manifest.json");
    if (!f) throw MissingArtifact((out_dir / "run_manifest.json").string());
    nlohmann::json j;
    try {
        f >> j;
        return config_from_json(j.at("config"), ExperimentConfig{});
    } catch (const nlohmann::json::exception& e) {
        throw CorruptRecord((out_dir / "run_manifest.json").string() + ": " + e.what());
    }
}

}  // namespace oodd
