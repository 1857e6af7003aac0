#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "oodd/anomaly.hpp"
#include "oodd/env.hpp"
#include "oodd/errors.hpp"
#include "oodd/rng.hpp"
#include "oodd/tensor.hpp"
#include "oodd/threadpool.hpp"

namespace oodd {

/// Prints a double with 17 significant digits, enough for a bit-exact
/// strtod round-trip.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct Trajectory {
    int id = 0;
    EnvKind env = EnvKind::CartPole;
    Tensor2 observations;       // T x d, what the policy saw
    std::vector<int> actions;   // length T, the policy's chosen actions
    std::optional<int> inject_step;
    std::optional<AnomalySpec> anomaly;

    int length() const { return observations.rows; }
};

enum class Split { NominalTrain, NominalVal, AnomalousTest };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::NominalTrain: return "nominal_train";
        case Split::NominalVal: return "nominal_val";
        case Split::AnomalousTest: return "anomalous_test";
    }
    throw ConfigError("split", "invalid split tag");
}

inline Split parse_split(const std::string& name) {
    for (Split s : {Split::NominalTrain, Split::NominalVal, Split::AnomalousTest}) {
        if (name == split_name(s)) return s;
    }
    throw ConfigError("split", "unknown split '" + name + "'");
}

struct DatasetManifest {
    EnvKind env = EnvKind::CartPole;
    Split split = Split::NominalTrain;
    std::optional<AnomalyKind> anomaly_kind;
    int count = 0;
    int horizon = 0;
    uint64_t global_seed = 0;
    // Standardization statistics; always the nominal_train statistics, copied
    // verbatim into val/test manifests so no split leaks into them.
    std::vector<double> feature_means;
    std::vector<double> feature_stds;
    std::vector<bool> constant_features;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<Trajectory> trajectories;
};

// ---------------------------------------------------------------------------
// Rollouts

inline Trajectory rollout_nominal(EnvKind env, int horizon, uint64_t traj_seed) {
    const EnvParams params = default_params(env, horizon);
    Trajectory traj;
    traj.env = env;
    traj.observations = Tensor2(0, obs_dim(env));
    std::vector<double> flat;
    EnvState s = reset(env, traj_seed);
    while (!s.done) {
        flat.insert(flat.end(), s.obs.begin(), s.obs.end());
        const Action a = nominal_policy(env, s.obs);
        traj.actions.push_back(a.index);
        s = step(env, params, s, a);
    }
    traj.observations.rows = static_cast<int>(traj.actions.size());
    traj.observations.data = std::move(flat);
    return traj;
}

inline Trajectory rollout_anomalous(EnvKind env, const AnomalySpec& spec, int horizon,
                                    uint64_t traj_seed) {
    const EnvParams nominal = default_params(env, horizon);
    const bool sensor = is_sensor_injected(spec.kind);
    const bool wind = spec.kind == AnomalyKind::WindL2R || spec.kind == AnomalyKind::WindR2L;
    const bool dynamics_params = spec.kind == AnomalyKind::GravityManipulation ||
                                 spec.kind == AnomalyKind::ComponentManipulation;
    const EnvParams corrupted = dynamics_params ? corrupt_dynamics(spec, nominal) : nominal;

    Trajectory traj;
    traj.env = env;
    traj.observations = Tensor2(0, obs_dim(env));
    traj.inject_step = spec.inject_step;
    traj.anomaly = spec;

    Rng corr_rng(spec.rng_seed);
    std::vector<double> flat;
    EnvState s = reset(env, traj_seed); // true state; sensors corrupt only the view of it
    int t = 0;
    while (!s.done) {
        std::vector<double> seen = s.obs;
        if (sensor && t >= spec.inject_step) {
            seen = corrupt_observation(spec, s.obs, t, corr_rng);
        }
        flat.insert(flat.end(), seen.begin(), seen.end());
        const Action a = nominal_policy(env, seen);
        traj.actions.push_back(a.index);
        Action executed = a;
        if (wind && t >= spec.inject_step) {
            executed = corrupt_action(spec, a, env, corr_rng);
        }
        s = step(env, t >= spec.inject_step ? corrupted : nominal, s, executed);
        ++t;
    }
    traj.observations.rows = static_cast<int>(traj.actions.size());
    traj.observations.data = std::move(flat);
    return traj;
}

// ---------------------------------------------------------------------------
// Generation

inline std::vector<Trajectory> generate_nominal(EnvKind env, int count, int horizon, uint64_t seed,
                                                int jobs = 1) {
    if (count < 1) throw ConfigError("count", "must be >= 1");
    std::vector<Trajectory> out(count);
    parallel_for(count, jobs, [&](int i) {
        out[i] = rollout_nominal(env, horizon, mix_seed(seed, static_cast<uint64_t>(i)));
        out[i].id = i;
    });
    return out;
}

/// Samples a spec whose injection step falls inside this trajectory's nominal
/// lifetime, so every anomalous trajectory has both segments.
inline AnomalySpec sample_spec_for_trajectory(AnomalyKind kind, EnvKind env, int horizon,
                                              uint64_t seed, int traj_id, int nominal_length) {
    for (int attempt = 0; attempt < 10000; ++attempt) {
        const AnomalySpec spec =
            sample_spec(kind, env, horizon,
                        mix_seed(seed, static_cast<uint64_t>(traj_id),
                                 static_cast<uint64_t>(1000 + attempt)));
        if (spec.inject_step < nominal_length) return spec;
    }
    throw Error("could not place an injection step inside the nominal rollout (trajectory " +
                std::to_string(traj_id) + ")");
}

inline std::vector<Trajectory> generate_anomalous(EnvKind env, AnomalyKind kind, int count,
                                                  int horizon, uint64_t seed, int jobs = 1) {
    if (count < 1) throw ConfigError("count", "must be >= 1");
    std::vector<Trajectory> out(count);
    parallel_for(count, jobs, [&](int i) {
        const uint64_t traj_seed = mix_seed(seed, static_cast<uint64_t>(i));
        const int nominal_length = rollout_nominal(env, horizon, traj_seed).length();
        const AnomalySpec spec =
            sample_spec_for_trajectory(kind, env, horizon, seed, i, nominal_length);
        out[i] = rollout_anomalous(env, spec, horizon, traj_seed);
        out[i].id = i;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Feature statistics and normalization

inline void compute_feature_stats(const std::vector<Trajectory>& trajs, DatasetManifest& manifest) {
    if (trajs.empty()) throw EmptyDataset("feature statistics need at least one trajectory");
    const int d = trajs.front().observations.cols;
    std::vector<double> sum(d, 0.0), sumsq(d, 0.0);
    long long n = 0;
    for (const auto& t : trajs) {
        for (int i = 0; i < t.observations.rows; ++i) {
            const double* row = t.observations.row(i);
            for (int j = 0; j < d; ++j) {
                sum[j] += row[j];
                sumsq[j] += row[j] * row[j];
            }
        }
        n += t.observations.rows;
    }
    manifest.feature_means.resize(d);
    manifest.feature_stds.resize(d);
    manifest.constant_features.assign(d, false);
    for (int j = 0; j < d; ++j) {
        const double mean = sum[j] / static_cast<double>(n);
        double var = sumsq[j] / static_cast<double>(n) - mean * mean;
        if (var < 0.0) var = 0.0;
        manifest.feature_means[j] = mean;
        if (var < 1e-24) {
            manifest.feature_stds[j] = 1.0; // constant feature: divisor 1, flagged
            manifest.constant_features[j] = true;
        } else {
            manifest.feature_stds[j] = std::sqrt(var);
        }
    }
}

inline Trajectory normalize(const Trajectory& traj, const DatasetManifest& manifest) {
    const int d = traj.observations.cols;
    if (static_cast<int>(manifest.feature_means.size()) != d ||
        static_cast<int>(manifest.feature_stds.size()) != d) {
        throw ShapeMismatch("normalize: manifest statistics do not match observation dimension");
    }
    Trajectory out = traj;
    for (int i = 0; i < out.observations.rows; ++i) {
        double* row = out.observations.row(i);
        for (int j = 0; j < d; ++j) {
            row[j] = (row[j] - manifest.feature_means[j]) / manifest.feature_stds[j];
        }
    }
    return out;
}

inline Trajectory denormalize(const Trajectory& traj, const DatasetManifest& manifest) {
    const int d = traj.observations.cols;
    Trajectory out = traj;
    for (int i = 0; i < out.observations.rows; ++i) {
        double* row = out.observations.row(i);
        for (int j = 0; j < d; ++j) {
            row[j] = row[j] * manifest.feature_stds[j] + manifest.feature_means[j];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace detail {

inline nlohmann::json spec_to_json(const AnomalySpec& spec) {
    nlohmann::json j;
    j["kind"] = anomaly_name(spec.kind);
    j["inject_step"] = spec.inject_step;
    j["feature_mask"] = std::vector<int>(spec.feature_mask.begin(), spec.feature_mask.end());
    j["sampled_params"] = spec.sampled_params;
    j["rng_seed"] = spec.rng_seed;
    return j;
}

inline AnomalySpec spec_from_json(const nlohmann::json& j) {
    AnomalySpec spec;
    spec.kind = parse_anomaly(j.at("kind").get<std::string>());
    spec.inject_step = j.at("inject_step").get<int>();
    for (int v : j.at("feature_mask").get<std::vector<int>>()) spec.feature_mask.push_back(v != 0);
    spec.sampled_params = j.at("sampled_params").get<std::map<std::string, double>>();
    spec.rng_seed = j.at("rng_seed").get<uint64_t>();
    return spec;
}

inline std::string traj_filename(int id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "traj_%05d.csv", id);
    return buf;
}

}  // namespace detail

inline void save_dataset(const Dataset& dataset, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());

    const int d = obs_dim(dataset.manifest.env);
    nlohmann::json j;
    j["env"] = env_name(dataset.manifest.env);
    j["split"] = split_name(dataset.manifest.split);
    if (dataset.manifest.anomaly_kind) j["anomaly_kind"] = anomaly_name(*dataset.manifest.anomaly_kind);
    j["count"] = dataset.manifest.count;
    j["horizon"] = dataset.manifest.horizon;
    j["global_seed"] = dataset.manifest.global_seed;
    // Statistics as 17-digit strings: JSON floats round-trip is left to the
    // parser, strings make the bit-exactness explicit.
    auto fmt_vec = [](const std::vector<double>& v) {
        std::vector<std::string> out;
        out.reserve(v.size());
        for (double x : v) out.push_back(format_double(x));
        return out;
    };
    j["feature_means"] = fmt_vec(dataset.manifest.feature_means);
    j["feature_stds"] = fmt_vec(dataset.manifest.feature_stds);
    j["constant_features"] = std::vector<int>(dataset.manifest.constant_features.begin(),
                                              dataset.manifest.constant_features.end());
    nlohmann::json trajs = nlohmann::json::array();
    for (const auto& t : dataset.trajectories) {
        nlohmann::json tj;
        tj["id"] = t.id;
        tj["length"] = t.length();
        if (t.inject_step) tj["inject_step"] = *t.inject_step;
        if (t.anomaly) tj["anomaly"] = detail::spec_to_json(*t.anomaly);
        trajs.push_back(tj);
    }
    j["trajectories"] = trajs;

    {
        std::ofstream f(fs::path(dir) / "manifest.json");
        if (!f) throw IoError("cannot write manifest in " + dir);
        f << j.dump(2) << "\n";
    }
    for (const auto& t : dataset.trajectories) {
        std::ofstream f(fs::path(dir) / detail::traj_filename(t.id));
        if (!f) throw IoError("cannot write trajectory file in " + dir);
        f << "step,a";
        for (int k = 0; k < d; ++k) f << ",o_" << k;
        f << "\n";
        for (int i = 0; i < t.observations.rows; ++i) {
            f << i << "," << t.actions[i];
            const double* row = t.observations.row(i);
            for (int k = 0; k < d; ++k) f << "," << format_double(row[k]);
            f << "\n";
        }
        if (!f) throw IoError("write failed in " + dir);
    }
}

inline Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path manifest_path = fs::path(dir) / "manifest.json";
    std::ifstream mf(manifest_path);
    if (!mf) throw IoError("cannot open " + manifest_path.string());
    nlohmann::json j;
    try {
        mf >> j;
    } catch (const std::exception& e) {
        throw CorruptRecord("manifest.json does not parse: " + std::string(e.what()));
    }

    Dataset ds;
    try {
        ds.manifest.env = parse_env(j.at("env").get<std::string>());
        ds.manifest.split = parse_split(j.at("split").get<std::string>());
        if (j.contains("anomaly_kind")) {
            ds.manifest.anomaly_kind = parse_anomaly(j.at("anomaly_kind").get<std::string>());
        }
        ds.manifest.count = j.at("count").get<int>();
        ds.manifest.horizon = j.at("horizon").get<int>();
        ds.manifest.global_seed = j.at("global_seed").get<uint64_t>();
        for (const auto& s : j.at("feature_means")) {
            ds.manifest.feature_means.push_back(std::stod(s.get<std::string>()));
        }
        for (const auto& s : j.at("feature_stds")) {
            ds.manifest.feature_stds.push_back(std::stod(s.get<std::string>()));
        }
        for (int v : j.at("constant_features").get<std::vector<int>>()) {
            ds.manifest.constant_features.push_back(v != 0);
        }
    } catch (const nlohmann::json::exception& e) {
        throw CorruptRecord("manifest.json missing or mistyped field: " + std::string(e.what()));
    }

    const int d = obs_dim(ds.manifest.env);
    if (static_cast<int>(ds.manifest.feature_means.size()) != d ||
        static_cast<int>(ds.manifest.feature_stds.size()) != d) {
        throw ManifestMismatch("feature statistics dimension does not match environment");
    }
    const auto& trajs_meta = j.at("trajectories");
    if (static_cast<int>(trajs_meta.size()) != ds.manifest.count) {
        throw ManifestMismatch("manifest count " + std::to_string(ds.manifest.count) +
                               " != trajectory records " + std::to_string(trajs_meta.size()));
    }
    int files_present = 0;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("traj_", 0) == 0 && name.size() > 4 &&
            name.substr(name.size() - 4) == ".csv") {
            ++files_present;
        }
    }
    if (files_present != ds.manifest.count) {
        throw ManifestMismatch("manifest count " + std::to_string(ds.manifest.count) +
                               " != trajectory files present " + std::to_string(files_present));
    }

    for (const auto& tj : trajs_meta) {
        Trajectory t;
        t.id = tj.at("id").get<int>();
        t.env = ds.manifest.env;
        if (tj.contains("inject_step")) t.inject_step = tj.at("inject_step").get<int>();
        if (tj.contains("anomaly")) t.anomaly = detail::spec_from_json(tj.at("anomaly"));
        const int expect_len = tj.at("length").get<int>();

        const fs::path csv = fs::path(dir) / detail::traj_filename(t.id);
        std::ifstream f(csv);
        if (!f) throw IoError("cannot open " + csv.string());
        std::string line;
        if (!std::getline(f, line)) throw CorruptRecord(csv.string() + ": empty file");
        std::vector<double> flat;
        int row_index = 0;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            std::vector<std::string> fields;
            std::stringstream ss(line);
            std::string field;
            while (std::getline(ss, field, ',')) fields.push_back(field);
            if (static_cast<int>(fields.size()) != 2 + d) {
                throw CorruptRecord(csv.string() + ": row " + std::to_string(row_index) + " has " +
                                    std::to_string(fields.size()) + " fields, want " +
                                    std::to_string(2 + d));
            }
            try {
                if (std::stoi(fields[0]) != row_index) {
                    throw CorruptRecord(csv.string() + ": non-contiguous step index at row " +
                                        std::to_string(row_index));
                }
                const int a = std::stoi(fields[1]);
                if (a < 0 || a >= action_count(ds.manifest.env)) {
                    throw CorruptRecord(csv.string() + ": action out of range at row " +
                                        std::to_string(row_index));
                }
                t.actions.push_back(a);
                for (int k = 0; k < d; ++k) {
                    size_t pos = 0;
                    const double v = std::stod(fields[2 + k], &pos);
                    if (pos != fields[2 + k].size()) {
                        throw CorruptRecord(csv.string() + ": trailing junk in numeric field");
                    }
                    flat.push_back(v);
                }
            } catch (const CorruptRecord&) {
                throw;
            } catch (const std::exception&) {
                throw CorruptRecord(csv.string() + ": unparseable field at row " +
                                    std::to_string(row_index));
            }
            ++row_index;
        }
        if (row_index != expect_len) {
            throw ManifestMismatch(csv.string() + ": manifest length " +
                                   std::to_string(expect_len) + " != rows " +
                                   std::to_string(row_index));
        }
        t.observations = Tensor2(row_index, d);
        t.observations.data = std::move(flat);
        ds.trajectories.push_back(std::move(t));
    }
    return ds;
}

}  // namespace oodd
