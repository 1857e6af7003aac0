#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "oodd/dataset.hpp"
#include "oodd/errors.hpp"

namespace oodd {

// ---------------------------------------------------------------------------
// AUC

/// Area under the ROC curve via the Mann–Whitney statistic: the probability
/// that a positive-labeled score ranks above a negative one, with ties
/// counted 1/2. Throws SingleClass unless both labels are present.
inline double auc(const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
    if (scores.size() != labels.size()) throw ShapeMismatch("auc: scores/labels size mismatch");
    const size_t n = scores.size();
    size_t n_pos = 0;
    for (uint8_t l : labels) n_pos += (l != 0);
    const size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw SingleClass();

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // Average ranks across tied groups, then U = Σ ranks(pos) − n_pos(n_pos+1)/2.
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>((i + 1) + (j + 1));
        for (size_t k = i; k <= j; ++k) {
            if (labels[order[k]] != 0) rank_sum_pos += avg_rank;
        }
        i = j + 1;
    }
    const double u =
        rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// AUC of one anomalous score series: scores at t >= inject_step are
/// positives, earlier ones negatives. The series starts at t = delta.
inline double series_auc(const std::vector<double>& scores, int delta, int inject_step) {
    std::vector<uint8_t> labels(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) {
        labels[i] = (delta + static_cast<int>(i) >= inject_step) ? 1 : 0;
    }
    return auc(scores, labels);
}

// ---------------------------------------------------------------------------
// Alarm accounting

struct AlarmOutcome {
    std::optional<int> delay;  // first alarm at/after injection − inject_step
    int false_alarms = 0;      // alarms strictly before injection
};

/// Splits a trajectory's alarm times against its injection step: detection
/// delay is measured from the first alarm at or after injection; alarms
/// before it count as false.
inline AlarmOutcome delay_and_miss(const std::vector<int>& alarms, int inject_step) {
    AlarmOutcome out;
    for (int t : alarms) {
        if (t < inject_step) {
            ++out.false_alarms;
        } else {
            if (!out.delay) out.delay = t - inject_step;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation

/// Per-trajectory evaluation inputs for one experimental cell.
struct SeriesEval {
    double auc = 0.0;
    std::optional<int> delay;  // absent when the anomaly was never detected
    int false_alarms = 0;      // pre-injection alarms
    int pre_steps = 0;         // scored pre-injection timesteps (inject − delta)
};

struct MetricSummary {
    double mean_auc = 0.0;
    double mean_delay = 0.0;  // over detected trajectories; NaN if none detected
    double miss_rate = 0.0;
    double far = 0.0;  // pooled: Σ false alarms / Σ pre-injection steps
    int count = 0;
};

inline MetricSummary aggregate(const std::vector<SeriesEval>& evals) {
    if (evals.empty()) throw EmptySet("aggregate over zero trajectories");
    MetricSummary s;
    s.count = static_cast<int>(evals.size());
    double delay_sum = 0.0;
    int detected = 0;
    long long false_alarms = 0, pre_steps = 0;
    for (const auto& e : evals) {
        s.mean_auc += e.auc;
        if (e.delay) {
            delay_sum += *e.delay;
            ++detected;
        }
        false_alarms += e.false_alarms;
        pre_steps += e.pre_steps;
    }
    s.mean_auc /= s.count;
    s.miss_rate = static_cast<double>(s.count - detected) / s.count;
    s.mean_delay = detected > 0 ? delay_sum / detected : std::nan("");
    s.far = pre_steps > 0 ? static_cast<double>(false_alarms) / static_cast<double>(pre_steps)
                          : 0.0;
    return s;
}

// ---------------------------------------------------------------------------
// Report rows

/// One row of the final report: metrics for a single
/// (environment, anomaly kind, model, delta, M, e) cell.
struct ReportRow {
    std::string env;
    std::string kind;
    std::string model;
    int delta = 1;
    int m_samples = 8;
    int ensemble = 1;
    MetricSummary metrics;
};

/// Group average over anomaly kinds (sensor-injected vs dynamics-injected).
struct GroupRow {
    std::string env;
    std::string model;
    int delta = 1;
    int m_samples = 8;
    int ensemble = 1;
    std::string group;  // "sensor" or "dynamics"
    double mean_auc = 0.0;
    int kinds = 0;
};

inline void write_report_csv(const std::filesystem::path& path,
                             const std::vector<ReportRow>& rows) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "env,kind,model,delta,m,e,mean_auc,mean_delay,miss_rate,far,count\n";
    for (const auto& r : rows) {
        out << r.env << ',' << r.kind << ',' << r.model << ',' << r.delta << ',' << r.m_samples
            << ',' << r.ensemble << ',' << format_double(r.metrics.mean_auc) << ','
            << format_double(r.metrics.mean_delay) << ',' << format_double(r.metrics.miss_rate)
            << ',' << format_double(r.metrics.far) << ',' << r.metrics.count << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
}

inline std::vector<ReportRow> read_report_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifact(path.string());
    std::string line;
    if (!std::getline(in, line) ||
        line != "env,kind,model,delta,m,e,mean_auc,mean_delay,miss_rate,far,count") {
        throw CorruptRecord(path.string() + ": bad header");
    }
    std::vector<ReportRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        size_t pos = 0;
        while (true) {
            const size_t c = line.find(',', pos);
            cols.push_back(line.substr(pos, c - pos));
            if (c == std::string::npos) break;
            pos = c + 1;
        }
        if (cols.size() != 11) throw CorruptRecord(path.string() + ": " + line);
        auto to_double = [&](const std::string& s) {
            char* end = nullptr;
            const double v = std::strtod(s.c_str(), &end);
            if (end == s.c_str()) throw CorruptRecord(path.string() + ": bad number '" + s + "'");
            return v;
        };
        try {
            ReportRow r;
            r.env = cols[0];
            r.kind = cols[1];
            r.model = cols[2];
            r.delta = std::stoi(cols[3]);
            r.m_samples = std::stoi(cols[4]);
            r.ensemble = std::stoi(cols[5]);
            r.metrics.mean_auc = to_double(cols[6]);
            r.metrics.mean_delay = to_double(cols[7]);
            r.metrics.miss_rate = to_double(cols[8]);
            r.metrics.far = to_double(cols[9]);
            r.metrics.count = std::stoi(cols[10]);
            rows.push_back(std::move(r));
        } catch (const std::invalid_argument&) {
            throw CorruptRecord(path.string() + ": " + line);
        } catch (const std::out_of_range&) {
            throw CorruptRecord(path.string() + ": " + line);
        }
    }
    return rows;
}

inline void write_groups_csv(const std::filesystem::path& path,
                             const std::vector<GroupRow>& rows) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "env,model,delta,m,e,group,mean_auc,kinds\n";
    for (const auto& r : rows) {
        out << r.env << ',' << r.model << ',' << r.delta << ',' << r.m_samples << ','
            << r.ensemble << ',' << r.group << ',' << format_double(r.mean_auc) << ','
            << r.kinds << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
}

/// Averages report rows into sensor/dynamics group rows, grouping by
/// (env, model, delta, M, e). Rows arrive in sweep order, so groups come out
/// deterministically ordered by first appearance.
inline std::vector<GroupRow> group_rows(const std::vector<ReportRow>& rows) {
    struct Key {
        std::string env, model;
        int delta, m, e;
        bool sensor;
        bool operator==(const Key&) const = default;
    };
    std::vector<Key> keys;
    std::vector<GroupRow> out;
    for (const auto& r : rows) {
        const AnomalyKind kind = parse_anomaly(r.kind);
        const Key k{r.env, r.model, r.delta, r.m_samples, r.ensemble, is_sensor_injected(kind)};
        auto it = std::find(keys.begin(), keys.end(), k);
        size_t idx;
        if (it == keys.end()) {
            keys.push_back(k);
            GroupRow g;
            g.env = r.env;
            g.model = r.model;
            g.delta = r.delta;
            g.m_samples = r.m_samples;
            g.ensemble = r.ensemble;
            g.group = k.sensor ? "sensor" : "dynamics";
            out.push_back(std::move(g));
            idx = out.size() - 1;
        } else {
            idx = static_cast<size_t>(it - keys.begin());
        }
        out[idx].mean_auc += r.metrics.mean_auc;
        out[idx].kinds += 1;
    }
    for (auto& g : out) {
        if (g.kinds > 0) g.mean_auc /= g.kinds;
    }
    return out;
}

}  // namespace oodd
