// Detection-layer tests: ensemble score assembly, nominal score statistics,
// CUSUM hand recursions and invariances, and CSV round trips.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "oodd/detection.hpp"
#include "oodd/predictors.hpp"

using namespace oodd;

namespace {

std::vector<Trajectory> ar1_trajectories(int n, int len, uint64_t seed) {
    std::vector<Trajectory> out;
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        Trajectory t;
        t.id = i;
        t.observations = Tensor2(len, 2);
        double a = rng.gaussian() * 0.25, b = rng.gaussian() * 0.25;
        for (int r = 0; r < len; ++r) {
            t.observations.at(r, 0) = a;
            t.observations.at(r, 1) = b;
            a = 0.8 * a + 0.1 * rng.gaussian();
            b = 0.5 * b + 0.2 * rng.gaussian();
        }
        t.actions.assign(static_cast<size_t>(len), 0);
        out.push_back(std::move(t));
    }
    return out;
}

TrainConfig tiny_config(uint64_t seed) {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batches_per_epoch = 5;
    cfg.batch = 8;
    cfg.tbptt = 8;
    cfg.hidden = 16;
    cfg.val_trajectories = 4;
    cfg.seed = seed;
    return cfg;
}

const NpnModel& tiny_npn(int which) {
    static const NpnModel m0 =
        train_npn(ar1_trajectories(16, 25, 51), ar1_trajectories(4, 25, 52), tiny_config(1));
    static const NpnModel m1 =
        train_npn(ar1_trajectories(16, 25, 51), ar1_trajectories(4, 25, 52), tiny_config(2));
    return which == 0 ? m0 : m1;
}

const RiqnModel& tiny_riqn() {
    static const RiqnModel m =
        train_riqn(ar1_trajectories(16, 25, 51), ar1_trajectories(4, 25, 52), tiny_config(3));
    return m;
}

std::vector<const Trajectory*> pointers(const std::vector<Trajectory>& trajs) {
    std::vector<const Trajectory*> out;
    for (const Trajectory& t : trajs) out.push_back(&t);
    return out;
}

ScoreSeries make_series(int delta, std::vector<double> scores) {
    ScoreSeries s;
    s.traj_id = 0;
    s.delta = delta;
    s.scores = std::move(scores);
    return s;
}

}  // namespace

TEST_CASE("ensemble scores average member sums over M times e samples") {
    const auto trajs = ar1_trajectories(2, 10, 61);
    const auto ptrs = pointers(trajs);

    // Hand case: two members, two samples per member, known sums.
    std::vector<std::vector<std::vector<double>>> sums = {
        {{2.0, 4.0}, {6.0}},
        {{4.0, 8.0}, {10.0}},
    };
    const auto series = combine_member_sums(sums, ptrs, 3, 2);
    REQUIRE(series.size() == 2);
    REQUIRE(series[0].delta == 3);
    REQUIRE(series[0].samples == 4);
    REQUIRE(series[0].scores == std::vector<double>{1.5, 3.0});
    REQUIRE(series[1].scores == std::vector<double>{4.0});

    REQUIRE_THROWS_AS(combine_member_sums({}, ptrs, 1, 2), ConfigError);
    sums[1][0].pop_back();
    REQUIRE_THROWS_AS(combine_member_sums(sums, ptrs, 3, 2), ShapeMismatch);
}

TEST_CASE("an ensemble of identical deterministic members scores like one member") {
    const auto trajs = ar1_trajectories(3, 15, 62);
    const auto ptrs = pointers(trajs);
    RolloutConfig cfg;
    cfg.delta = 1;
    cfg.m_samples = 8;

    Ensemble solo;
    solo.members.push_back(AnyModel(tiny_npn(0)));
    Ensemble duo;
    duo.members.push_back(AnyModel(tiny_npn(0)));
    duo.members.push_back(AnyModel(tiny_npn(0)));

    const auto a = score_dataset(solo, ptrs, cfg, 7);
    const auto b = score_dataset(duo, ptrs, cfg, 7);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].samples == 1);
        REQUIRE(b[i].samples == 2);
        REQUIRE(a[i].scores == b[i].scores);
    }
    // Deterministic families are member-order symmetric.
    Ensemble ab, ba;
    ab.members = {AnyModel(tiny_npn(0)), AnyModel(tiny_npn(1))};
    ba.members = {AnyModel(tiny_npn(1)), AnyModel(tiny_npn(0))};
    const auto sab = score_dataset(ab, ptrs, cfg, 7);
    const auto sba = score_dataset(ba, ptrs, cfg, 7);
    for (size_t i = 0; i < sab.size(); ++i) REQUIRE(sab[i].scores == sba[i].scores);

    REQUIRE(score_trajectory(solo, trajs[0], cfg, 7).scores == a[0].scores);
    // The quantile family reports M*e averaged samples.
    Ensemble rq;
    rq.members.push_back(AnyModel(tiny_riqn()));
    REQUIRE(score_dataset(rq, ptrs, cfg, 7)[0].samples == 8);
}

TEST_CASE("ensemble validation rejects ill-formed member sets") {
    Ensemble empty;
    REQUIRE_THROWS_AS(empty.validate(), ConfigError);

    Ensemble mixed;
    mixed.members = {AnyModel(tiny_riqn()), AnyModel(tiny_npn(0))};
    REQUIRE_THROWS_AS(mixed.validate(), ConfigError);

    Ensemble stats;
    stats.members = {AnyModel(tiny_npn(0)), AnyModel(tiny_npn(1))};
    for (AnyModel& m : stats.members) {
        model_meta(m).feature_means = {0.0, 0.0};
        model_meta(m).feature_stds = {1.0, 1.0};
    }
    stats.validate();  // same statistics: fine
    model_meta(stats.members[1]).feature_means[0] += 0.5;
    REQUIRE_THROWS_AS(stats.validate(), ConfigError);

    Ensemble envs;
    envs.members = {AnyModel(tiny_npn(0)), AnyModel(tiny_npn(1))};
    model_meta(envs.members[1]).env = EnvKind::Acrobot;
    REQUIRE_THROWS_AS(envs.validate(), ConfigError);
}

TEST_CASE("cusum reproduces hand recursions and reports absolute alarm times") {
    CusumConfig cfg;
    cfg.threshold = 4.0;
    cfg.drift = 0.5;
    cfg.standardize = false;
    const NominalStats stats{0.0, 1.0};

    // g: 1.5, 3.0, 4.5 -> alarm at the third entry, then reset and rebuild.
    const auto alarms = cusum_alarms(make_series(3, {2.0, 2.0, 2.0, 2.0, 2.0}), cfg, stats);
    REQUIRE(alarms == std::vector<int>{5});

    cfg.threshold = 1.0;
    REQUIRE(cusum_alarms(make_series(3, {2.0, 2.0, 2.0}), cfg, stats) ==
            std::vector<int>{3, 4, 5});

    // Negative excursions clamp at zero: a deep dip does not bank credit.
    cfg.threshold = 4.0;
    REQUIRE(cusum_alarms(make_series(0, {2.0, -100.0, 2.0, 2.0, 2.0}), cfg, stats) ==
            std::vector<int>{4});

    REQUIRE(cusum_alarms(make_series(0, {}), cfg, stats).empty());

    CusumConfig bad;
    bad.threshold = 0.0;
    REQUIRE_THROWS_AS(cusum_alarms(make_series(0, {1.0}), bad, stats), ConfigError);
    bad.threshold = 1.0;
    bad.drift = -0.1;
    REQUIRE_THROWS_AS(cusum_alarms(make_series(0, {1.0}), bad, stats), ConfigError);
}

TEST_CASE("scores equal to the drift never alarm") {
    CusumConfig cfg;  // defaults: threshold 0.01, drift 0.0018, standardize
    cfg.standardize = false;
    const std::vector<double> scores(1000, cfg.drift);
    REQUIRE(cusum_alarms(make_series(1, scores), cfg, NominalStats{0.0, 1.0}).empty());
}

TEST_CASE("standardization with unit statistics matches the raw recursion") {
    Rng rng(5);
    std::vector<double> scores;
    for (int i = 0; i < 300; ++i) scores.push_back(rng.gaussian() * 0.25);
    CusumConfig raw;
    raw.threshold = 1.5;
    raw.drift = 0.1;
    raw.standardize = false;
    CusumConfig std_cfg = raw;
    std_cfg.standardize = true;
    REQUIRE(cusum_alarms(make_series(2, scores), raw, NominalStats{0.0, 1.0}) ==
            cusum_alarms(make_series(2, scores), std_cfg, NominalStats{0.0, 1.0}));

    // Affine covariance on exactly representable values: y = 1 + 2 x with
    // stats (1, 2) alarms exactly where x does with stats (0, 1).
    std::vector<double> x, y;
    Rng r2(9);
    for (int i = 0; i < 200; ++i) {
        const double v = (static_cast<double>(r2.uniform_int(17)) - 8.0) * 0.25;
        x.push_back(v);
        y.push_back(1.0 + 2.0 * v);
    }
    REQUIRE(cusum_alarms(make_series(0, x), std_cfg, NominalStats{0.0, 1.0}) ==
            cusum_alarms(make_series(0, y), std_cfg, NominalStats{1.0, 2.0}));
}

TEST_CASE("raising the threshold never makes the first alarm earlier") {
    Rng rng(31);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> scores;
        double level = 0.0;
        for (int i = 0; i < 150; ++i) {
            level += rng.gaussian() * 0.1;
            scores.push_back(level + rng.gaussian());
        }
        const ScoreSeries s = make_series(1, scores);
        CusumConfig cfg;
        cfg.drift = 0.2;
        cfg.standardize = false;
        int prev_first = -1;
        bool prev_alarmed = true;
        for (double th : {0.5, 1.0, 2.0, 4.0, 8.0}) {
            cfg.threshold = th;
            const auto alarms = cusum_alarms(s, cfg, NominalStats{0.0, 1.0});
            if (alarms.empty()) {
                prev_alarmed = false;
                continue;
            }
            // Once a threshold stops alarming, larger ones must stay silent.
            REQUIRE(prev_alarmed);
            REQUIRE(alarms.front() >= prev_first);
            prev_first = alarms.front();
        }
    }
}

TEST_CASE("nominal score statistics pool every timestep") {
    std::vector<ScoreSeries> series;
    series.push_back(make_series(1, {0.0, 2.0}));
    series.push_back(make_series(1, {4.0}));
    const NominalStats st = nominal_score_stats(series);
    REQUIRE(st.mean == Catch::Approx(2.0).margin(1e-15));
    REQUIRE(st.std == Catch::Approx(std::sqrt(8.0 / 3.0)).margin(1e-12));

    // Standardizing by the pooled statistics recenters exactly.
    std::vector<ScoreSeries> zs = series;
    for (auto& s : zs) {
        for (double& v : s.scores) v = (v - st.mean) / st.std;
    }
    const NominalStats z = nominal_score_stats(zs);
    REQUIRE(std::abs(z.mean) < 1e-12);
    REQUIRE(z.std == Catch::Approx(1.0).margin(1e-12));

    // Constant scores floor the deviation instead of dividing by zero.
    const NominalStats flat = nominal_score_stats({make_series(1, {0.7, 0.7, 0.7})});
    REQUIRE(flat.std == 1e-8);

    REQUIRE_THROWS_AS(nominal_score_stats(std::vector<ScoreSeries>{}), EmptyDataset);
    REQUIRE_THROWS_AS(nominal_score_stats({make_series(1, {})}), EmptyDataset);
}

TEST_CASE("score csv files round-trip and reject damage") {
    const auto dir = std::filesystem::temp_directory_path() / "oodd_test_detection_csv";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    const auto path = dir / "scores.csv";

    std::vector<ScoreSeries> series;
    series.push_back(make_series(2, {0.125, -3.5, 1e-17}));
    series.back().traj_id = 4;
    series.push_back(make_series(5, {0.1 + 0.2}));
    series.back().traj_id = 9;
    write_scores_csv(path, series);
    const auto back = read_scores_csv(path);
    REQUIRE(back.size() == 2);
    REQUIRE(back[0].traj_id == 4);
    REQUIRE(back[0].delta == 2);
    REQUIRE(back[0].scores == series[0].scores);
    REQUIRE(back[1].traj_id == 9);
    REQUIRE(back[1].delta == 5);
    REQUIRE(back[1].scores == series[1].scores);

    REQUIRE_THROWS_AS(read_scores_csv(dir / "absent.csv"), MissingArtifact);
    {
        std::ofstream out(dir / "header.csv");
        out << "wrong,header,line\n1,2,3\n";
    }
    REQUIRE_THROWS_AS(read_scores_csv(dir / "header.csv"), CorruptRecord);
    {
        std::ofstream out(dir / "gap.csv");
        out << "traj_id,t,score\n1,2,0.5\n1,4,0.5\n";
    }
    REQUIRE_THROWS_AS(read_scores_csv(dir / "gap.csv"), CorruptRecord);
    {
        std::ofstream out(dir / "token.csv");
        out << "traj_id,t,score\n1,2,zz\n";
    }
    REQUIRE_THROWS_AS(read_scores_csv(dir / "token.csv"), CorruptRecord);

    std::filesystem::remove_all(dir);
}

TEST_CASE("alarm csv files round-trip and reject damage") {
    const auto dir = std::filesystem::temp_directory_path() / "oodd_test_detection_alarms";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    const auto path = dir / "alarms.csv";

    const std::vector<std::pair<int, std::vector<int>>> alarms = {
        {3, {5, 9, 12}},
        {7, {100}},
    };
    write_alarms_csv(path, alarms);
    const auto back = read_alarms_csv(path);
    REQUIRE(back.size() == 2);
    REQUIRE(back.at(3) == std::vector<int>{5, 9, 12});
    REQUIRE(back.at(7) == std::vector<int>{100});

    REQUIRE_THROWS_AS(read_alarms_csv(dir / "absent.csv"), MissingArtifact);
    {
        std::ofstream out(dir / "bad.csv");
        out << "traj_id,alarm_t\nx,5\n";
    }
    REQUIRE_THROWS_AS(read_alarms_csv(dir / "bad.csv"), CorruptRecord);

    std::filesystem::remove_all(dir);
}
