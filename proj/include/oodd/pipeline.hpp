#pragma once

#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "oodd/config.hpp"
#include "oodd/dataset.hpp"
#include "oodd/detection.hpp"
#include "oodd/evaluation.hpp"
#include "oodd/model_io.hpp"
#include "oodd/rollout.hpp"
#include "oodd/threadpool.hpp"

namespace oodd {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Artifact layout

struct Paths {
    fs::path root;

    fs::path dataset_dir(const std::string& env, Split split,
                         const std::string& kind = "") const {
        fs::path p = root / "data" / env / split_name(split);
        if (!kind.empty()) p /= kind;
        return p;
    }
    fs::path model_file(const std::string& env, ModelKind kind, int member) const {
        return root / "models" / env / model_name(kind) /
               ("member_" + std::to_string(member) + ".json");
    }
    fs::path cell_dir(const std::string& env, const std::string& label, int delta,
                      int m) const {
        return root / "scores" / env / label / ("delta_" + std::to_string(delta)) /
               ("m_" + std::to_string(m));
    }
    fs::path member_scores(const std::string& env, const std::string& label, int delta, int m,
                           int member, const std::string& ds) const {
        return cell_dir(env, label, delta, m) / ("member_" + std::to_string(member)) /
               (ds + ".csv");
    }
    fs::path ensemble_scores(const std::string& env, const std::string& label, int delta, int m,
                             int e, const std::string& ds) const {
        return cell_dir(env, label, delta, m) / ("e_" + std::to_string(e)) / (ds + ".csv");
    }
    fs::path alarm_file(const std::string& env, const std::string& label, int delta, int m,
                        int e, const std::string& kind) const {
        return root / "alarms" / env / label / ("delta_" + std::to_string(delta)) /
               ("m_" + std::to_string(m)) / ("e_" + std::to_string(e)) / (kind + ".csv");
    }
    fs::path metrics_csv() const { return root / "eval" / "metrics.csv"; }
    fs::path report_csv() const { return root / "reports" / "report.csv"; }
    fs::path groups_csv() const { return root / "reports" / "groups.csv"; }
};

// ---------------------------------------------------------------------------
// Sweep enumeration

/// One scoring cell: a (env, model label, delta, M) combination together with
/// the anomaly kinds and ensemble sizes evaluated on it.
struct SweepCell {
    std::string env;
    EnvKind env_kind = EnvKind::CartPole;
    std::string label;
    ModelKind model = ModelKind::Riqn;
    bool mean_sampling = false;
    int delta = 1;
    int m_samples = 8;
    std::vector<int> ensembles;
    std::vector<std::string> kinds;
};

inline std::vector<SweepCell> enumerate_cells(const ExperimentConfig& cfg) {
    std::vector<SweepCell> cells;
    for (const auto& block : cfg.sweep) {
        for (const auto& env : block.envs) {
            for (const auto& label : block.models) {
                for (int delta : block.deltas) {
                    SweepCell c;
                    c.env = env;
                    c.env_kind = parse_env(env);
                    c.label = label;
                    std::tie(c.model, c.mean_sampling) = parse_model_label(label);
                    c.delta = delta;
                    c.m_samples = block.m_samples;
                    c.ensembles = block.ensembles;
                    c.kinds = block.kinds;
                    cells.push_back(std::move(c));
                }
            }
        }
    }
    return cells;
}

namespace detail {

inline void log_line(const char* stage, const std::string& msg) {
    std::cerr << "[" << stage << "] " << msg << std::endl;
}

class StageTimer {
  public:
    explicit StageTimer(const char* stage) : stage_(stage), start_(clock_t::now()) {
        log_line(stage_, "start");
    }
    double seconds() const {
        return std::chrono::duration<double>(clock_t::now() - start_).count();
    }
    ~StageTimer() {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "done in %.1f s", seconds());
        log_line(stage_, buf);
    }

  private:
    using clock_t = std::chrono::steady_clock;
    const char* stage_;
    clock_t::time_point start_;
};

/// parallel_for with exception transport: the first exception thrown by any
/// work item is rethrown on the calling thread.
inline void pool_run(int n, int jobs, const std::function<void(int)>& fn) {
    std::exception_ptr first;
    std::mutex mu;
    parallel_for(n, jobs, [&](int i) {
        try {
            fn(i);
        } catch (...) {
            std::lock_guard<std::mutex> lock(mu);
            if (!first) first = std::current_exception();
        }
    });
    if (first) std::rethrow_exception(first);
}

/// Environments referenced by the sweep, in first-appearance order.
inline std::vector<std::string> sweep_envs(const ExperimentConfig& cfg) {
    std::vector<std::string> out;
    for (const auto& b : cfg.sweep) {
        for (const auto& e : b.envs) {
            if (std::find(out.begin(), out.end(), e) == out.end()) out.push_back(e);
        }
    }
    return out;
}

/// Anomaly kinds referenced for an environment, in first-appearance order.
inline std::vector<std::string> sweep_kinds(const ExperimentConfig& cfg,
                                            const std::string& env) {
    std::vector<std::string> out;
    for (const auto& b : cfg.sweep) {
        if (std::find(b.envs.begin(), b.envs.end(), env) == b.envs.end()) continue;
        for (const auto& k : b.kinds) {
            if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
        }
    }
    return out;
}

/// (env, model kind) pairs needing trained checkpoints, first-appearance order.
inline std::vector<std::pair<std::string, ModelKind>> sweep_models(const ExperimentConfig& cfg) {
    std::vector<std::pair<std::string, ModelKind>> out;
    for (const auto& b : cfg.sweep) {
        for (const auto& env : b.envs) {
            for (const auto& label : b.models) {
                const auto [kind, ms] = parse_model_label(label);
                (void)ms;
                const std::pair<std::string, ModelKind> key{env, kind};
                if (std::find(out.begin(), out.end(), key) == out.end()) out.push_back(key);
            }
        }
    }
    return out;
}

inline uint64_t dataset_seed(const ExperimentConfig& cfg, EnvKind env, Split split,
                             int kind_idx = 0) {
    const uint64_t env_tag = static_cast<uint64_t>(env);
    switch (split) {
        case Split::NominalTrain: return mix_seed(cfg.seed, 0xD5, env_tag);
        case Split::NominalVal: return mix_seed(cfg.seed, 0xD6, env_tag);
        case Split::AnomalousTest:
            return mix_seed(cfg.seed, 0xD7, env_tag * 16 + static_cast<uint64_t>(kind_idx));
    }
    throw ConfigError("split", "invalid split tag");
}

inline uint64_t member_train_seed(const ExperimentConfig& cfg, EnvKind env, ModelKind model,
                                  int member) {
    const uint64_t tag = 0xA0 + static_cast<uint64_t>(env) * 8 + static_cast<uint64_t>(model);
    return mix_seed(cfg.seed, tag, static_cast<uint64_t>(member));
}

inline uint64_t cell_score_seed(const ExperimentConfig& cfg, int delta, int m) {
    return mix_seed(cfg.seed, 0x5C00 + static_cast<uint64_t>(delta),
                    static_cast<uint64_t>(m));
}

/// Lazy, cached access to datasets (raw and normalized) and model
/// checkpoints. Loading is guarded so the cache can be shared across worker
/// threads.
class ArtifactStore {
  public:
    explicit ArtifactStore(Paths paths) : paths_(std::move(paths)) {}

    const Dataset& dataset(const fs::path& dir) {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = datasets_.find(dir.string());
        if (it == datasets_.end()) {
            if (!fs::exists(dir / "manifest.json")) {
                throw MissingArtifact((dir / "manifest.json").string());
            }
            it = datasets_.emplace(dir.string(), load_dataset(dir.string())).first;
        }
        return it->second;
    }

    /// Trajectories standardized with the manifest's (train-split) statistics.
    const std::vector<Trajectory>& normalized(const fs::path& dir) {
        const Dataset& ds = dataset(dir);
        std::lock_guard<std::mutex> lock(mu_);
        auto it = normalized_.find(dir.string());
        if (it == normalized_.end()) {
            std::vector<Trajectory> out;
            out.reserve(ds.trajectories.size());
            for (const auto& t : ds.trajectories) out.push_back(normalize(t, ds.manifest));
            it = normalized_.emplace(dir.string(), std::move(out)).first;
        }
        return it->second;
    }

    const AnyModel& model(const fs::path& file) {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = models_.find(file.string());
        if (it == models_.end()) {
            it = models_.emplace(file.string(), load_model(file)).first;
        }
        return it->second;
    }

    const Paths& paths() const { return paths_; }

  private:
    Paths paths_;
    std::mutex mu_;
    std::map<std::string, Dataset> datasets_;
    std::map<std::string, std::vector<Trajectory>> normalized_;
    std::map<std::string, AnyModel> models_;
};

/// Per-trajectory (id, length, inject_step) read from a dataset manifest
/// without loading the trajectory files.
struct TrajIndexEntry {
    int id = 0;
    int length = 0;
    std::optional<int> inject_step;
};

inline std::vector<TrajIndexEntry> read_traj_index(const fs::path& dir) {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw MissingArtifact((dir / "manifest.json").string());
    nlohmann::json j;
    try {
        f >> j;
        std::vector<TrajIndexEntry> out;
        for (const auto& tj : j.at("trajectories")) {
            TrajIndexEntry e;
            e.id = tj.at("id").get<int>();
            e.length = tj.at("length").get<int>();
            if (tj.contains("inject_step")) e.inject_step = tj.at("inject_step").get<int>();
            out.push_back(e);
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw CorruptRecord((dir / "manifest.json").string() + ": " + e.what());
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// gen-data

inline void run_gen_data(const ExperimentConfig& cfg) {
    const detail::StageTimer timer("gen-data");
    const Paths paths{cfg.out_dir};
    for (const auto& env_name_str : detail::sweep_envs(cfg)) {
        const EnvKind env = parse_env(env_name_str);
        const int horizon = cfg.data.horizon;

        auto verify = [&](const fs::path& dir, Split split, int want_count) -> bool {
            if (!fs::exists(dir / "manifest.json")) return false;
            const Dataset ds = load_dataset(dir.string());
            if (ds.manifest.env != env || ds.manifest.split != split ||
                ds.manifest.count != want_count || ds.manifest.horizon != horizon) {
                throw ManifestMismatch(dir.string() + " does not match the configuration");
            }
            detail::log_line("gen-data", dir.string() + ": verified, skipping");
            return true;
        };

        // Training split first: it owns the normalization statistics.
        const fs::path train_dir = paths.dataset_dir(env_name_str, Split::NominalTrain);
        DatasetManifest stats_source;
        if (verify(train_dir, Split::NominalTrain, cfg.data.train)) {
            stats_source = load_dataset(train_dir.string()).manifest;
        } else {
            Dataset train;
            train.manifest.env = env;
            train.manifest.split = Split::NominalTrain;
            train.manifest.count = cfg.data.train;
            train.manifest.horizon = horizon;
            train.manifest.global_seed =
                detail::dataset_seed(cfg, env, Split::NominalTrain);
            train.trajectories = generate_nominal(env, cfg.data.train, horizon,
                                                  train.manifest.global_seed);
            compute_feature_stats(train.trajectories, train.manifest);
            save_dataset(train, train_dir.string());
            detail::log_line("gen-data", train_dir.string() + ": generated");
            stats_source = train.manifest;
        }

        auto copy_stats = [&](DatasetManifest& m) {
            m.feature_means = stats_source.feature_means;
            m.feature_stds = stats_source.feature_stds;
            m.constant_features = stats_source.constant_features;
        };

        const fs::path val_dir = paths.dataset_dir(env_name_str, Split::NominalVal);
        if (!verify(val_dir, Split::NominalVal, cfg.data.val)) {
            Dataset val;
            val.manifest.env = env;
            val.manifest.split = Split::NominalVal;
            val.manifest.count = cfg.data.val;
            val.manifest.horizon = horizon;
            val.manifest.global_seed = detail::dataset_seed(cfg, env, Split::NominalVal);
            val.trajectories =
                generate_nominal(env, cfg.data.val, horizon, val.manifest.global_seed);
            copy_stats(val.manifest);
            save_dataset(val, val_dir.string());
            detail::log_line("gen-data", val_dir.string() + ": generated");
        }

        for (const auto& kind_name : detail::sweep_kinds(cfg, env_name_str)) {
            const AnomalyKind kind = parse_anomaly(kind_name);
            const fs::path dir =
                paths.dataset_dir(env_name_str, Split::AnomalousTest, kind_name);
            if (verify(dir, Split::AnomalousTest, cfg.data.test_per_kind)) continue;
            Dataset test;
            test.manifest.env = env;
            test.manifest.split = Split::AnomalousTest;
            test.manifest.anomaly_kind = kind;
            test.manifest.count = cfg.data.test_per_kind;
            test.manifest.horizon = horizon;
            test.manifest.global_seed = detail::dataset_seed(cfg, env, Split::AnomalousTest,
                                                             static_cast<int>(kind));
            test.trajectories = generate_anomalous(env, kind, cfg.data.test_per_kind, horizon,
                                                   test.manifest.global_seed);
            copy_stats(test.manifest);
            save_dataset(test, dir.string());
            detail::log_line("gen-data", dir.string() + ": generated");
        }
    }
}

// ---------------------------------------------------------------------------
// train

inline void run_train(const ExperimentConfig& cfg) {
    const detail::StageTimer timer("train");
    detail::ArtifactStore store{Paths{cfg.out_dir}};
    const Paths& paths = store.paths();
    const int e_max = cfg.max_ensemble();

    struct Task {
        std::string env;
        EnvKind env_kind;
        ModelKind model;
        int member;
        fs::path file;
    };
    std::vector<Task> tasks;
    for (const auto& [env_str, model] : detail::sweep_models(cfg)) {
        for (int k = 0; k < e_max; ++k) {
            const fs::path file = paths.model_file(env_str, model, k);
            if (fs::exists(file)) {
                detail::log_line("train", file.string() + ": exists, skipping");
                continue;
            }
            tasks.push_back({env_str, parse_env(env_str), model, k, file});
        }
    }
    // Touch the datasets up front so worker threads only read the cache.
    for (const auto& t : tasks) {
        store.normalized(paths.dataset_dir(t.env, Split::NominalTrain));
        store.normalized(paths.dataset_dir(t.env, Split::NominalVal));
    }

    detail::pool_run(static_cast<int>(tasks.size()), cfg.jobs, [&](int i) {
        const Task& t = tasks[i];
        const auto start = std::chrono::steady_clock::now();
        const std::vector<Trajectory>& train =
            store.normalized(paths.dataset_dir(t.env, Split::NominalTrain));
        const std::vector<Trajectory>& val =
            store.normalized(paths.dataset_dir(t.env, Split::NominalVal));
        const Dataset& raw = store.dataset(paths.dataset_dir(t.env, Split::NominalTrain));

        TrainConfig tc = cfg.train;
        tc.lr = cfg.member_lrs[static_cast<size_t>(t.member) % cfg.member_lrs.size()];
        tc.seed = detail::member_train_seed(cfg, t.env_kind, t.model, t.member);

        AnyModel model = [&]() -> AnyModel {
            switch (t.model) {
                case ModelKind::Riqn: return train_riqn(train, val, tc);
                case ModelKind::Npn: return train_npn(train, val, tc);
                case ModelKind::Nriqn: return train_nriqn(train, val, tc);
                case ModelKind::Forest: return train_forest(train, val, tc, cfg.forest);
            }
            throw ConfigError("model", "invalid model tag");
        }();
        ModelMeta& meta = model_meta(model);
        meta.feature_means = raw.manifest.feature_means;
        meta.feature_stds = raw.manifest.feature_stds;
        save_model(model, t.file);

        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s: trained in %.1f s (val loss %.17g -> %.17g)",
                      t.file.string().c_str(),
                      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                          .count(),
                      meta.val_losses.front(), meta.val_losses.back());
        detail::log_line("train", buf);
    });
}

// ---------------------------------------------------------------------------
// score

namespace detail {

/// Datasets scored within one sweep cell: the capped nominal-validation split
/// plus each anomalous test kind.
struct ScoredDataset {
    std::string name;  // "nominal_val" or the anomaly kind name
    fs::path dir;
    int cap = 0;  // 0 = all trajectories
};

inline std::vector<ScoredDataset> cell_datasets(const ExperimentConfig& cfg, const Paths& paths,
                                                const SweepCell& cell) {
    std::vector<ScoredDataset> out;
    out.push_back({"nominal_val", paths.dataset_dir(cell.env, Split::NominalVal),
                   cfg.nominal_stat_trajectories});
    for (const auto& kind : cell.kinds) {
        out.push_back({kind, paths.dataset_dir(cell.env, Split::AnomalousTest, kind), 0});
    }
    return out;
}

/// Trajectories eligible for scoring at this horizon: a series exists only
/// when T > delta. Nominal-validation trajectories may additionally be capped.
inline std::vector<const Trajectory*> scoring_subset(const std::vector<Trajectory>& trajs,
                                                     int delta, int cap) {
    std::vector<const Trajectory*> out;
    const size_t limit = cap > 0 ? std::min<size_t>(cap, trajs.size()) : trajs.size();
    for (size_t i = 0; i < limit; ++i) {
        if (trajs[i].length() > delta) out.push_back(&trajs[i]);
    }
    return out;
}

}  // namespace detail

inline void run_score(const ExperimentConfig& cfg) {
    const detail::StageTimer timer("score");
    detail::ArtifactStore store{Paths{cfg.out_dir}};
    const Paths& paths = store.paths();

    struct Task {
        SweepCell cell;
        detail::ScoredDataset ds;
        int member;
        fs::path file;
    };
    std::vector<Task> tasks;
    const std::vector<SweepCell> cells = enumerate_cells(cfg);
    for (const SweepCell& cell : cells) {
        const int e_needed = *std::max_element(cell.ensembles.begin(), cell.ensembles.end());
        for (const auto& ds : detail::cell_datasets(cfg, paths, cell)) {
            for (int k = 0; k < e_needed; ++k) {
                const fs::path file =
                    paths.member_scores(cell.env, cell.label, cell.delta, cell.m_samples, k,
                                        ds.name);
                if (fs::exists(file)) continue;
                tasks.push_back({cell, ds, k, file});
            }
        }
    }

    // Warm the caches serially: loads are idempotent, but doing them here
    // keeps the worker loop free of long lock holds.
    for (const auto& t : tasks) {
        store.normalized(t.ds.dir);
        store.model(paths.model_file(t.cell.env, t.cell.model, t.member));
    }

    detail::pool_run(static_cast<int>(tasks.size()), cfg.jobs, [&](int i) {
        const Task& t = tasks[i];
        const auto start = std::chrono::steady_clock::now();
        const std::vector<Trajectory>& trajs = store.normalized(t.ds.dir);
        const std::vector<const Trajectory*> subset =
            detail::scoring_subset(trajs, t.cell.delta, t.ds.cap);
        if (subset.empty()) throw EmptyDataset("no trajectory longer than delta in " +
                                               t.ds.dir.string());
        const AnyModel& model =
            store.model(paths.model_file(t.cell.env, t.cell.model, t.member));

        RolloutConfig rc;
        rc.delta = t.cell.delta;
        rc.m_samples = t.cell.m_samples;
        rc.mean_sampling = t.cell.mean_sampling;
        const uint64_t seed = detail::cell_score_seed(cfg, t.cell.delta, t.cell.m_samples);
        const std::vector<std::vector<double>> sums =
            member_l1_sums(model, subset, rc, seed, t.member);

        std::vector<ScoreSeries> series;
        series.reserve(subset.size());
        for (size_t r = 0; r < subset.size(); ++r) {
            ScoreSeries s;
            s.traj_id = subset[r]->id;
            s.delta = t.cell.delta;
            s.samples = samples_per_member(t.cell.model, t.cell.m_samples);
            s.scores = sums[r];
            series.push_back(std::move(s));
        }
        write_scores_csv(t.file, series);

        char buf[192];
        std::snprintf(buf, sizeof(buf), "%s: scored in %.1f s", t.file.string().c_str(),
                      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                          .count());
        detail::log_line("score", buf);
    });

    // Assemble ensemble scores A_t from the cached member sums.
    for (const SweepCell& cell : cells) {
        const int spm = samples_per_member(cell.model, cell.m_samples);
        for (const auto& ds : detail::cell_datasets(cfg, paths, cell)) {
            for (int e : cell.ensembles) {
                const fs::path out_file = paths.ensemble_scores(cell.env, cell.label, cell.delta,
                                                                cell.m_samples, e, ds.name);
                std::vector<std::vector<ScoreSeries>> members;
                for (int k = 0; k < e; ++k) {
                    members.push_back(read_scores_csv(paths.member_scores(
                        cell.env, cell.label, cell.delta, cell.m_samples, k, ds.name)));
                }
                std::vector<ScoreSeries> combined = members[0];
                for (auto& s : combined) {
                    s.samples = spm * e;
                    for (int k = 1; k < e; ++k) {
                        const ScoreSeries& other = members[k][&s - combined.data()];
                        if (other.traj_id != s.traj_id ||
                            other.scores.size() != s.scores.size()) {
                            throw CorruptRecord("member score files disagree under " +
                                                paths.cell_dir(cell.env, cell.label, cell.delta,
                                                               cell.m_samples)
                                                    .string());
                        }
                        for (size_t i = 0; i < s.scores.size(); ++i) {
                            s.scores[i] += other.scores[i];
                        }
                    }
                    const double denom = static_cast<double>(spm) * e;
                    for (double& v : s.scores) v /= denom;
                }
                write_scores_csv(out_file, combined);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// detect

inline void run_detect(const ExperimentConfig& cfg) {
    const detail::StageTimer timer("detect");
    const Paths paths{cfg.out_dir};
    for (const SweepCell& cell : enumerate_cells(cfg)) {
        for (int e : cell.ensembles) {
            const std::vector<ScoreSeries> nominal = read_scores_csv(paths.ensemble_scores(
                cell.env, cell.label, cell.delta, cell.m_samples, e, "nominal_val"));
            const NominalStats stats = nominal_score_stats(nominal);
            for (const auto& kind : cell.kinds) {
                const std::vector<ScoreSeries> series = read_scores_csv(paths.ensemble_scores(
                    cell.env, cell.label, cell.delta, cell.m_samples, e, kind));
                std::vector<std::pair<int, std::vector<int>>> alarms;
                alarms.reserve(series.size());
                for (const auto& s : series) {
                    alarms.emplace_back(s.traj_id, cusum_alarms(s, cfg.cusum, stats));
                }
                write_alarms_csv(
                    paths.alarm_file(cell.env, cell.label, cell.delta, cell.m_samples, e, kind),
                    alarms);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// eval

inline void run_eval(const ExperimentConfig& cfg) {
    const detail::StageTimer timer("eval");
    const Paths paths{cfg.out_dir};
    const std::vector<SweepCell> cells = enumerate_cells(cfg);

    // Model checkpoints are the upstream artifacts scores were derived from;
    // insist on them before touching any score file.
    for (const SweepCell& cell : cells) {
        const int e_needed = *std::max_element(cell.ensembles.begin(), cell.ensembles.end());
        for (int k = 0; k < e_needed; ++k) {
            const fs::path file = paths.model_file(cell.env, cell.model, k);
            if (!fs::exists(file)) throw MissingArtifact(file.string());
        }
    }

    std::vector<ReportRow> rows;
    for (const auto& block : cfg.sweep) {
        for (const auto& env : block.envs) {
            for (const auto& label : block.models) {
                for (int delta : block.deltas) {
                    for (int e : block.ensembles) {
                        for (const auto& kind : block.kinds) {
                            const auto index = detail::read_traj_index(
                                paths.dataset_dir(env, Split::AnomalousTest, kind));
                            std::map<int, std::pair<int, int>> inject_by_id;  // id -> (inject, T)
                            for (const auto& t : index) {
                                if (!t.inject_step) {
                                    throw CorruptRecord("missing inject_step in test manifest for " +
                                                        env + "/" + kind);
                                }
                                inject_by_id[t.id] = {*t.inject_step, t.length};
                            }
                            const std::vector<ScoreSeries> series =
                                read_scores_csv(paths.ensemble_scores(env, label, delta,
                                                                      block.m_samples, e, kind));
                            const auto alarms = read_alarms_csv(paths.alarm_file(
                                env, label, delta, block.m_samples, e, kind));
                            std::vector<SeriesEval> evals;
                            evals.reserve(series.size());
                            for (const auto& s : series) {
                                const auto it = inject_by_id.find(s.traj_id);
                                if (it == inject_by_id.end()) {
                                    throw CorruptRecord("score series for unknown trajectory " +
                                                        std::to_string(s.traj_id));
                                }
                                const int inject = it->second.first;
                                SeriesEval ev;
                                ev.auc = series_auc(s.scores, s.delta, inject);
                                const auto alarm_it = alarms.find(s.traj_id);
                                const AlarmOutcome oc = delay_and_miss(
                                    alarm_it == alarms.end() ? std::vector<int>{}
                                                             : alarm_it->second,
                                    inject);
                                ev.delay = oc.delay;
                                ev.false_alarms = oc.false_alarms;
                                ev.pre_steps = inject - s.delta;
                                evals.push_back(ev);
                            }
                            ReportRow row;
                            row.env = env;
                            row.kind = kind;
                            row.model = label;
                            row.delta = delta;
                            row.m_samples = block.m_samples;
                            row.ensemble = e;
                            row.metrics = aggregate(evals);
                            rows.push_back(std::move(row));
                        }
                    }
                }
            }
        }
    }
    write_report_csv(paths.metrics_csv(), rows);
    detail::log_line("eval", paths.metrics_csv().string() + ": " +
                                 std::to_string(rows.size()) + " rows");
}

// ---------------------------------------------------------------------------
// report

inline void run_report(const ExperimentConfig& cfg) {
    const detail::StageTimer timer("report");
    const Paths paths{cfg.out_dir};
    const std::vector<ReportRow> rows = read_report_csv(paths.metrics_csv());
    write_report_csv(paths.report_csv(), rows);
    write_groups_csv(paths.groups_csv(), group_rows(rows));
    detail::log_line("report", paths.report_csv().string() + ": " +
                                   std::to_string(rows.size()) + " rows");
}

// ---------------------------------------------------------------------------
// all

inline void run_all(const ExperimentConfig& cfg) {
    run_gen_data(cfg);
    run_train(cfg);
    run_score(cfg);
    run_detect(cfg);
    run_eval(cfg);
    run_report(cfg);
}

}  // namespace oodd
