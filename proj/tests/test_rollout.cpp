// Rollout and scoring-session tests: sampling-mode equivalences, batch
// composition invariance, ragged-batch compaction, shape contracts, error
// paths, and bit-exact checkpoint round trips for every model family.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "oodd/model_io.hpp"
#include "oodd/predictors.hpp"
#include "oodd/rollout.hpp"

using namespace oodd;

namespace {

std::vector<Trajectory> ar1_trajectories(int n, int len, uint64_t seed, int first_id = 0) {
    std::vector<Trajectory> out;
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        Trajectory t;
        t.id = first_id + i;
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

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batches_per_epoch = 5;
    cfg.batch = 8;
    cfg.tbptt = 8;
    cfg.hidden = 16;
    cfg.val_trajectories = 4;
    cfg.seed = 17;
    return cfg;
}

const std::vector<Trajectory>& train_set() {
    static const std::vector<Trajectory> t = ar1_trajectories(24, 30, 101);
    return t;
}

const std::vector<Trajectory>& val_set() {
    static const std::vector<Trajectory> v = ar1_trajectories(4, 30, 202);
    return v;
}

const RiqnModel& tiny_riqn() {
    static const RiqnModel m = train_riqn(train_set(), val_set(), tiny_config());
    return m;
}

const NpnModel& tiny_npn() {
    static const NpnModel m = train_npn(train_set(), val_set(), tiny_config());
    return m;
}

const NriqnModel& tiny_nriqn() {
    static const NriqnModel m = train_nriqn(train_set(), val_set(), tiny_config());
    return m;
}

const ForestModel& tiny_forest() {
    static const ForestModel m = [] {
        ForestConfig fc;
        fc.n_trees = 10;
        fc.max_depth = 6;
        fc.sample_cap = 2000;
        return train_forest(train_set(), val_set(), tiny_config(), fc);
    }();
    return m;
}

std::vector<const Trajectory*> pointers(const std::vector<Trajectory>& trajs) {
    std::vector<const Trajectory*> out;
    for (const Trajectory& t : trajs) out.push_back(&t);
    return out;
}

}  // namespace

TEST_CASE("mean sampling is bitwise identical to plain sampling at delta one") {
    const auto trajs = ar1_trajectories(6, 20, 303);
    const auto ptrs = pointers(trajs);
    RolloutConfig plain;
    plain.delta = 1;
    plain.m_samples = 8;
    RolloutConfig mean = plain;
    mean.mean_sampling = true;

    REQUIRE(member_l1_sums(tiny_riqn(), ptrs, plain, 99, 0) ==
            member_l1_sums(tiny_riqn(), ptrs, mean, 99, 0));
    REQUIRE(member_l1_sums(tiny_nriqn(), ptrs, plain, 99, 0) ==
            member_l1_sums(tiny_nriqn(), ptrs, mean, 99, 0));
}

TEST_CASE("mean sampling is bitwise identical to plain sampling with one sample") {
    const auto trajs = ar1_trajectories(5, 20, 404);
    const auto ptrs = pointers(trajs);
    RolloutConfig plain;
    plain.delta = 3;
    plain.m_samples = 1;
    RolloutConfig mean = plain;
    mean.mean_sampling = true;

    REQUIRE(member_l1_sums(tiny_riqn(), ptrs, plain, 77, 2) ==
            member_l1_sums(tiny_riqn(), ptrs, mean, 77, 2));
    REQUIRE(member_l1_sums(tiny_nriqn(), ptrs, plain, 77, 2) ==
            member_l1_sums(tiny_nriqn(), ptrs, mean, 77, 2));
}

TEST_CASE("scores do not depend on batch composition") {
    const auto trajs = ar1_trajectories(3, 18, 505);
    const auto ptrs = pointers(trajs);
    RolloutConfig cfg;
    cfg.delta = 2;
    cfg.m_samples = 4;

    const auto batched = member_l1_sums(tiny_riqn(), ptrs, cfg, 31, 1);
    REQUIRE(batched.size() == 3);
    for (size_t i = 0; i < trajs.size(); ++i) {
        const auto solo = member_l1_sums(tiny_riqn(), {&trajs[i]}, cfg, 31, 1);
        REQUIRE(solo.size() == 1);
        REQUIRE(solo[0] == batched[i]);
    }
}

TEST_CASE("ragged batches compact finished trajectories without disturbing others") {
    auto trajs = ar1_trajectories(3, 14, 606);
    // Shorten trajectories 0 and 2 so they finish at different times.
    trajs[0].observations.rows = 9;
    trajs[0].observations.data.resize(9 * 2);
    trajs[0].actions.resize(9);
    trajs[2].observations.rows = 7;
    trajs[2].observations.data.resize(7 * 2);
    trajs[2].actions.resize(7);
    const auto ptrs = pointers(trajs);
    RolloutConfig cfg;
    cfg.delta = 2;
    cfg.m_samples = 3;

    for (const auto* model_tag : {"riqn", "npn", "nriqn", "forest"}) {
        std::vector<std::vector<double>> batched, solo0, solo1, solo2;
        auto run = [&](const auto& model) {
            batched = member_l1_sums(model, ptrs, cfg, 13, 0);
            solo0 = member_l1_sums(model, {&trajs[0]}, cfg, 13, 0);
            solo1 = member_l1_sums(model, {&trajs[1]}, cfg, 13, 0);
            solo2 = member_l1_sums(model, {&trajs[2]}, cfg, 13, 0);
        };
        if (std::string(model_tag) == "riqn") run(tiny_riqn());
        if (std::string(model_tag) == "npn") run(tiny_npn());
        if (std::string(model_tag) == "nriqn") run(tiny_nriqn());
        if (std::string(model_tag) == "forest") run(tiny_forest());
        INFO("model " << model_tag);
        REQUIRE(batched.size() == 3);
        REQUIRE(batched[0].size() == 9 - cfg.delta);
        REQUIRE(batched[1].size() == 14 - cfg.delta);
        REQUIRE(batched[2].size() == 7 - cfg.delta);
        REQUIRE(batched[0] == solo0[0]);
        REQUIRE(batched[1] == solo1[0]);
        REQUIRE(batched[2] == solo2[0]);
    }
}

TEST_CASE("rollout sample shapes follow the family contract") {
    Tensor2 history(5, 2);
    Rng fill(9);
    for (double& v : history.data) v = fill.gaussian() * 0.2;
    RolloutConfig cfg;
    cfg.delta = 2;
    cfg.m_samples = 3;

    Rng r1(21);
    const Tensor2 riqn = rollout(tiny_riqn(), history, cfg, r1);
    REQUIRE(riqn.rows == 3);
    REQUIRE(riqn.cols == 2);
    REQUIRE(all_finite(riqn));

    Rng r2(21);
    const Tensor2 nriqn = rollout(tiny_nriqn(), history, cfg, r2);
    REQUIRE(nriqn.rows == 3);
    REQUIRE(nriqn.cols == 2);

    Rng r3(21);
    const Tensor2 npn = rollout(tiny_npn(), history, cfg, r3);
    REQUIRE(npn.rows == 1);
    REQUIRE(npn.cols == 2);

    Rng r4(21);
    const Tensor2 forest = rollout(tiny_forest(), history, cfg, r4);
    REQUIRE(forest.rows == 1);
    REQUIRE(forest.cols == 2);
}

TEST_CASE("deterministic families ignore the random stream and the member index") {
    const auto trajs = ar1_trajectories(4, 16, 707);
    const auto ptrs = pointers(trajs);
    RolloutConfig cfg;
    cfg.delta = 2;
    cfg.m_samples = 6;

    REQUIRE(member_l1_sums(tiny_npn(), ptrs, cfg, 11, 0) ==
            member_l1_sums(tiny_npn(), ptrs, cfg, 5000, 3));
    REQUIRE(member_l1_sums(tiny_forest(), ptrs, cfg, 11, 0) ==
            member_l1_sums(tiny_forest(), ptrs, cfg, 5000, 3));

    // The quantile model must actually consume its stream: different member
    // indices draw different taus and give different scores.
    REQUIRE(member_l1_sums(tiny_riqn(), ptrs, cfg, 11, 0) !=
            member_l1_sums(tiny_riqn(), ptrs, cfg, 11, 1));
}

TEST_CASE("deterministic member scores match step-by-step rollouts") {
    const auto trajs = ar1_trajectories(1, 12, 808);
    const Trajectory& traj = trajs[0];
    RolloutConfig cfg;
    cfg.delta = 2;
    cfg.m_samples = 5;

    auto check = [&](const auto& model) {
        const auto sums = member_l1_sums(model, {&traj}, cfg, 42, 0);
        REQUIRE(sums.size() == 1);
        REQUIRE(static_cast<int>(sums[0].size()) == traj.length() - cfg.delta);
        for (int k = 0; k + cfg.delta < traj.length(); ++k) {
            Tensor2 prefix(k + 1, 2);
            std::copy(traj.observations.data.begin(),
                      traj.observations.data.begin() + (k + 1) * 2, prefix.data.begin());
            Rng rng(1);
            const Tensor2 pred = rollout(model, prefix, cfg, rng);
            REQUIRE(pred.rows == 1);
            double sum = 0.0;
            for (int j = 0; j < 2; ++j) {
                sum += std::abs(traj.observations.at(k + cfg.delta, j) - pred.at(0, j));
            }
            REQUIRE(sums[0][k] == Catch::Approx(sum).margin(1e-12));
        }
    };
    check(tiny_npn());
    check(tiny_forest());
}

TEST_CASE("histories shorter than the horizon are rejected") {
    const auto trajs = ar1_trajectories(1, 3, 909);
    RolloutConfig cfg;
    cfg.delta = 3;
    cfg.m_samples = 2;
    REQUIRE_THROWS_AS(member_l1_sums(tiny_riqn(), {&trajs[0]}, cfg, 1, 0), HistoryTooShort);

    Tensor2 empty(0, 2);
    Rng rng(1);
    REQUIRE_THROWS_AS(rollout(tiny_riqn(), empty, cfg, rng), HistoryTooShort);

    RolloutConfig bad;
    bad.delta = 0;
    REQUIRE_THROWS_AS(member_l1_sums(tiny_riqn(), {&trajs[0]}, bad, 1, 0), ConfigError);
    bad.delta = 1;
    bad.m_samples = 0;
    REQUIRE_THROWS_AS(member_l1_sums(tiny_riqn(), {&trajs[0]}, bad, 1, 0), ConfigError);
}

TEST_CASE("the model variant dispatches to the underlying family") {
    REQUIRE(model_kind(AnyModel(tiny_riqn())) == ModelKind::Riqn);
    REQUIRE(model_kind(AnyModel(tiny_npn())) == ModelKind::Npn);
    REQUIRE(model_kind(AnyModel(tiny_nriqn())) == ModelKind::Nriqn);
    REQUIRE(model_kind(AnyModel(tiny_forest())) == ModelKind::Forest);
    REQUIRE(model_meta(AnyModel(tiny_riqn())).d == 2);

    const auto trajs = ar1_trajectories(3, 15, 111);
    const auto ptrs = pointers(trajs);
    RolloutConfig cfg;
    cfg.delta = 1;
    cfg.m_samples = 4;
    REQUIRE(member_l1_sums(AnyModel(tiny_riqn()), ptrs, cfg, 8, 0) ==
            member_l1_sums(tiny_riqn(), ptrs, cfg, 8, 0));
    REQUIRE(member_l1_sums(AnyModel(tiny_forest()), ptrs, cfg, 8, 0) ==
            member_l1_sums(tiny_forest(), ptrs, cfg, 8, 0));
}

TEST_CASE("checkpoints round-trip bit-exactly for every family") {
    const auto dir = std::filesystem::temp_directory_path() / "oodd_test_model_io";
    std::filesystem::remove_all(dir);
    const auto trajs = ar1_trajectories(4, 16, 212);
    const auto ptrs = pointers(trajs);
    RolloutConfig cfg;
    cfg.delta = 2;
    cfg.m_samples = 4;

    const std::vector<std::pair<std::string, AnyModel>> models = {
        {"riqn", AnyModel(tiny_riqn())},
        {"npn", AnyModel(tiny_npn())},
        {"nriqn", AnyModel(tiny_nriqn())},
        {"forest", AnyModel(tiny_forest())},
    };
    for (const auto& [name, model] : models) {
        INFO("family " << name);
        const auto path = dir / (name + ".json");
        save_model(model, path);
        const AnyModel back = load_model(path);
        REQUIRE(model_kind(back) == model_kind(model));
        REQUIRE(model_meta(back).val_losses == model_meta(model).val_losses);
        REQUIRE(member_l1_sums(back, ptrs, cfg, 19, 0) ==
                member_l1_sums(model, ptrs, cfg, 19, 0));
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("loading a missing or damaged checkpoint fails loudly") {
    const auto dir = std::filesystem::temp_directory_path() / "oodd_test_model_io_bad";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);

    REQUIRE_THROWS_AS(load_model(dir / "absent.json"), MissingArtifact);

    {
        std::ofstream out(dir / "garbage.json");
        out << "{ this is not json";
    }
    REQUIRE_THROWS_AS(load_model(dir / "garbage.json"), CorruptRecord);

    {
        std::ofstream out(dir / "wrong.json");
        out << R"({"format":"something-else","version":1})";
    }
    REQUIRE_THROWS_AS(load_model(dir / "wrong.json"), CorruptRecord);

    // Tamper with a stored weight: numbers are kept as strings, so replacing
    // one with a non-numeric token must be caught on load.
    const auto good = dir / "good.json";
    save_model(AnyModel(tiny_npn()), good);
    nlohmann::json doc;
    {
        std::ifstream in(good);
        in >> doc;
    }
    doc["nets"][0]["trunk"]["fc1"]["w"]["data"][0] = "zz";
    {
        std::ofstream out(dir / "tampered.json");
        out << doc.dump();
    }
    REQUIRE_THROWS_AS(load_model(dir / "tampered.json"), CorruptRecord);

    doc = nlohmann::json();
    {
        std::ifstream in(good);
        in >> doc;
    }
    doc["nets"].erase(1);  // one net per feature is required
    {
        std::ofstream out(dir / "short.json");
        out << doc.dump();
    }
    REQUIRE_THROWS_AS(load_model(dir / "short.json"), CorruptRecord);

    std::filesystem::remove_all(dir);
}
