#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "oodd/dataset.hpp"
#include "oodd/errors.hpp"
#include "oodd/rollout.hpp"

namespace oodd {

/// Homogeneous set of trained models scored jointly.
struct Ensemble {
    std::vector<AnyModel> members;

    int size() const { return static_cast<int>(members.size()); }
    ModelKind kind() const { return model_kind(members.front()); }
    const ModelMeta& meta() const { return model_meta(members.front()); }

    void validate() const {
        if (members.empty()) throw ConfigError("ensemble", "needs at least one member");
        const ModelMeta& m0 = meta();
        for (const AnyModel& m : members) {
            const ModelMeta& mm = model_meta(m);
            if (model_kind(m) != kind()) throw ConfigError("ensemble", "mixed model kinds");
            if (mm.env != m0.env || mm.d != m0.d) {
                throw ConfigError("ensemble", "members disagree on environment");
            }
            if (mm.feature_means != m0.feature_means || mm.feature_stds != m0.feature_stds) {
                throw ConfigError("ensemble", "members disagree on normalization statistics");
            }
        }
    }
};

/// Per-timestep anomaly scores A_t of one trajectory; entry i is
/// t = delta + i, so the series covers t = delta .. T−1.
struct ScoreSeries {
    int traj_id = 0;
    int delta = 1;
    int samples = 0; // M·e samples averaged into each score
    std::vector<double> scores;
};

struct CusumConfig {
    double threshold = 0.01;
    double drift = 0.0018;
    bool standardize = true;

    bool operator==(const CusumConfig&) const = default;

    void validate() const {
        if (!(threshold > 0.0)) throw ConfigError("cusum.threshold", "must be > 0");
        if (drift < 0.0) throw ConfigError("cusum.drift", "must be >= 0");
    }
};

struct NominalStats {
    double mean = 0.0;
    double std = 1.0;
};

// ---------------------------------------------------------------------------
// Scoring

/// Assembles ensemble scores A_t = (Σ_members sums) / (M·e) from per-member
/// L1 sums (as produced by member_l1_sums).
inline std::vector<ScoreSeries> combine_member_sums(
    const std::vector<std::vector<std::vector<double>>>& member_sums,
    const std::vector<const Trajectory*>& trajs, int delta, int samples_per_member_count) {
    const int e = static_cast<int>(member_sums.size());
    if (e == 0) throw ConfigError("ensemble", "no member score sums");
    const double denom = static_cast<double>(samples_per_member_count) * e;
    std::vector<ScoreSeries> out;
    out.reserve(trajs.size());
    for (size_t i = 0; i < trajs.size(); ++i) {
        ScoreSeries s;
        s.traj_id = trajs[i]->id;
        s.delta = delta;
        s.samples = samples_per_member_count * e;
        s.scores.resize(member_sums[0][i].size());
        for (int m = 0; m < e; ++m) {
            if (member_sums[m][i].size() != s.scores.size()) {
                throw ShapeMismatch("combine_member_sums: member series lengths differ");
            }
            for (size_t k = 0; k < s.scores.size(); ++k) s.scores[k] += member_sums[m][i][k];
        }
        for (double& v : s.scores) v /= denom;
        out.push_back(std::move(s));
    }
    return out;
}

/// Scores trajectories with every ensemble member; trajectories must already
/// be normalized with the ensemble's statistics.
inline std::vector<ScoreSeries> score_dataset(const Ensemble& ensemble,
                                              const std::vector<const Trajectory*>& trajs,
                                              const RolloutConfig& cfg, uint64_t score_seed) {
    ensemble.validate();
    cfg.validate();
    std::vector<std::vector<std::vector<double>>> sums;
    sums.reserve(ensemble.members.size());
    for (int m = 0; m < ensemble.size(); ++m) {
        sums.push_back(member_l1_sums(ensemble.members[m], trajs, cfg, score_seed, m));
    }
    return combine_member_sums(sums, trajs, cfg.delta,
                               samples_per_member(ensemble.kind(), cfg.m_samples));
}

inline ScoreSeries score_trajectory(const Ensemble& ensemble, const Trajectory& traj,
                                    const RolloutConfig& cfg, uint64_t score_seed) {
    return score_dataset(ensemble, {&traj}, cfg, score_seed).front();
}

/// Pooled mean and standard deviation of nominal-validation scores; the
/// standard deviation is floored at 1e-8 so standardization never divides by
/// zero.
inline NominalStats nominal_score_stats(const std::vector<ScoreSeries>& series) {
    long long n = 0;
    double sum = 0.0;
    for (const auto& s : series) {
        for (double v : s.scores) {
            sum += v;
            ++n;
        }
    }
    if (n == 0) throw EmptyDataset("nominal score statistics");
    const double mean = sum / static_cast<double>(n);
    double sq = 0.0;
    for (const auto& s : series) {
        for (double v : s.scores) sq += (v - mean) * (v - mean);
    }
    double sd = std::sqrt(sq / static_cast<double>(n));
    if (!(sd > 1e-8)) sd = 1e-8;
    return {mean, sd};
}

inline NominalStats nominal_score_stats(const Ensemble& ensemble,
                                        const std::vector<const Trajectory*>& nominal_val,
                                        const RolloutConfig& cfg, uint64_t score_seed) {
    if (nominal_val.empty()) throw EmptyDataset("nominal validation set");
    return nominal_score_stats(score_dataset(ensemble, nominal_val, cfg, score_seed));
}

// ---------------------------------------------------------------------------
// CUSUM

/// One-sided CUSUM over a score series: x_t = (A_t − mean)/std when
/// standardizing, g_t = max(0, g_{t−1} + x_t − drift), alarm whenever
/// g_t > threshold (g resets to 0 after each alarm). Returns absolute alarm
/// times t (the series starts at t = delta).
inline std::vector<int> cusum_alarms(const ScoreSeries& series, const CusumConfig& cfg,
                                     const NominalStats& stats) {
    cfg.validate();
    std::vector<int> alarms;
    double g = 0.0;
    for (size_t i = 0; i < series.scores.size(); ++i) {
        double x = series.scores[i];
        if (cfg.standardize) x = (x - stats.mean) / stats.std;
        g = std::max(0.0, g + x - cfg.drift);
        if (g > cfg.threshold) {
            alarms.push_back(series.delta + static_cast<int>(i));
            g = 0.0;
        }
    }
    return alarms;
}

// ---------------------------------------------------------------------------
// CSV serialization

inline void write_scores_csv(const std::filesystem::path& path,
                             const std::vector<ScoreSeries>& series) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "traj_id,t,score\n";
    for (const auto& s : series) {
        for (size_t i = 0; i < s.scores.size(); ++i) {
            out << s.traj_id << ',' << (s.delta + static_cast<int>(i)) << ','
                << format_double(s.scores[i]) << '\n';
        }
    }
    if (!out) throw IoError("failed writing " + path.string());
}

/// Reads a score CSV back into per-trajectory series (rows must be grouped by
/// trajectory and consecutive in t, as written by write_scores_csv).
inline std::vector<ScoreSeries> read_scores_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifact(path.string());
    std::string line;
    if (!std::getline(in, line) || line != "traj_id,t,score") {
        throw CorruptRecord(path.string() + ": bad header");
    }
    std::vector<ScoreSeries> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const size_t c1 = line.find(',');
        const size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
        if (c2 == std::string::npos) throw CorruptRecord(path.string() + ": " + line);
        try {
            const int id = std::stoi(line.substr(0, c1));
            const int t = std::stoi(line.substr(c1 + 1, c2 - c1 - 1));
            char* end = nullptr;
            const std::string sval = line.substr(c2 + 1);
            const double v = std::strtod(sval.c_str(), &end);
            if (end == sval.c_str() || *end != '\0') {
                throw CorruptRecord(path.string() + ": bad score '" + sval + "'");
            }
            if (out.empty() || out.back().traj_id != id) {
                ScoreSeries s;
                s.traj_id = id;
                s.delta = t;
                out.push_back(std::move(s));
            } else if (t != out.back().delta + static_cast<int>(out.back().scores.size())) {
                throw CorruptRecord(path.string() + ": non-contiguous t for trajectory " +
                                    std::to_string(id));
            }
            out.back().scores.push_back(v);
        } catch (const std::invalid_argument&) {
            throw CorruptRecord(path.string() + ": " + line);
        } catch (const std::out_of_range&) {
            throw CorruptRecord(path.string() + ": " + line);
        }
    }
    return out;
}

inline void write_alarms_csv(const std::filesystem::path& path,
                             const std::vector<std::pair<int, std::vector<int>>>& alarms) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "traj_id,alarm_t\n";
    for (const auto& [id, times] : alarms) {
        for (int t : times) out << id << ',' << t << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
}

/// Returns (trajectory id → alarm times); trajectories without alarms are
/// absent.
inline std::map<int, std::vector<int>> read_alarms_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifact(path.string());
    std::string line;
    if (!std::getline(in, line) || line != "traj_id,alarm_t") {
        throw CorruptRecord(path.string() + ": bad header");
    }
    std::map<int, std::vector<int>> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const size_t c1 = line.find(',');
        if (c1 == std::string::npos) throw CorruptRecord(path.string() + ": " + line);
        try {
            out[std::stoi(line.substr(0, c1))].push_back(std::stoi(line.substr(c1 + 1)));
        } catch (const std::invalid_argument&) {
            throw CorruptRecord(path.string() + ": " + line);
        } catch (const std::out_of_range&) {
            throw CorruptRecord(path.string() + ": " + line);
        }
    }
    return out;
}

}  // namespace oodd
