#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "oodd/env.hpp"
#include "oodd/errors.hpp"
#include "oodd/rng.hpp"

namespace oodd {

enum class AnomalyKind {
    IIDNoise,
    SensorShutdown,
    CalibrationFailure,
    SensorDrift,
    WindL2R,
    WindR2L,
    GravityManipulation,
    ComponentManipulation,
};

inline constexpr int kAnomalyKindCount = 8;

inline bool is_sensor_injected(AnomalyKind kind) {
    return static_cast<int>(kind) < 4;
}

inline const char* anomaly_name(AnomalyKind kind) {
    switch (kind) {
        case AnomalyKind::IIDNoise: return "iid_noise";
        case AnomalyKind::SensorShutdown: return "sensor_shutdown";
        case AnomalyKind::CalibrationFailure: return "calibration_failure";
        case AnomalyKind::SensorDrift: return "sensor_drift";
        case AnomalyKind::WindL2R: return "wind_l2r";
        case AnomalyKind::WindR2L: return "wind_r2l";
        case AnomalyKind::GravityManipulation: return "gravity_manipulation";
        case AnomalyKind::ComponentManipulation: return "component_manipulation";
    }
    throw ConfigError("anomaly", "invalid kind tag");
}

inline AnomalyKind parse_anomaly(const std::string& name) {
    for (int i = 0; i < kAnomalyKindCount; ++i) {
        auto kind = static_cast<AnomalyKind>(i);
        if (name == anomaly_name(kind)) return kind;
    }
    throw ConfigError("anomaly", "unknown anomaly kind '" + name + "'");
}

inline std::vector<AnomalyKind> all_anomaly_kinds() {
    std::vector<AnomalyKind> kinds;
    for (int i = 0; i < kAnomalyKindCount; ++i) kinds.push_back(static_cast<AnomalyKind>(i));
    return kinds;
}

struct AnomalySpec {
    AnomalyKind kind = AnomalyKind::IIDNoise;
    int inject_step = 1;
    std::vector<bool> feature_mask;            // one true entry for sensor kinds, empty mask otherwise
    std::map<std::string, double> sampled_params;
    uint64_t rng_seed = 0;

    double param(const std::string& name) const {
        auto it = sampled_params.find(name);
        if (it == sampled_params.end()) {
            throw ConfigError("anomaly." + name, "missing sampled parameter");
        }
        return it->second;
    }
};

namespace detail {

struct ComponentRange {
    const char* name;
    double lo, hi, clamp_lo;
};

inline std::vector<ComponentRange> component_ranges(EnvKind env) {
    if (env == EnvKind::CartPole) {
        // Length/mass ranges include 0; the lower clamps keep the ODEs
        // well-posed while degrading the dynamics as intended.
        return {{"pole_half_length", 0.0, 2.0, 0.05}, {"pole_mass", 0.0, 1.0, 0.01}};
    }
    return {{"link1_length", 0.5, 2.0, 0.5},
            {"link2_length", 0.5, 2.0, 0.5},
            {"link1_mass", 0.5, 2.0, 0.5},
            {"link2_mass", 0.5, 2.0, 0.5}};
}

}  // namespace detail

/// Draws anomaly magnitude/time/feature parameters for one trajectory.
inline AnomalySpec sample_spec(AnomalyKind kind, EnvKind env, int horizon, uint64_t seed) {
    if (horizon < 10) throw ConfigError("horizon", "anomaly sampling needs horizon >= 10");
    const int d = obs_dim(env);
    const bool cartpole = env == EnvKind::CartPole;

    Rng rng(mix_seed(seed, 0xA0u));
    AnomalySpec spec;
    spec.kind = kind;
    spec.rng_seed = mix_seed(seed, 0xA1u);

    const int lo = horizon / 10;
    const int hi = 9 * horizon / 10;
    spec.inject_step = lo + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(hi - lo + 1)));

    spec.feature_mask.assign(d, false);
    if (is_sensor_injected(kind)) {
        spec.feature_mask[rng.uniform_int(static_cast<uint64_t>(d))] = true;
    }

    switch (kind) {
        case AnomalyKind::IIDNoise:
            spec.sampled_params["mean"] = cartpole ? 1.0 : 2.0;
            spec.sampled_params["std"] = 2.0;
            break;
        case AnomalyKind::SensorShutdown:
            break;
        case AnomalyKind::CalibrationFailure:
            spec.sampled_params["factor"] = cartpole ? 3.0 : 10.0;
            break;
        case AnomalyKind::SensorDrift:
            spec.sampled_params["rate"] = cartpole ? 2e-4 : 5e-3;
            break;
        case AnomalyKind::WindL2R:
        case AnomalyKind::WindR2L:
            spec.sampled_params["prob"] = 0.66;
            break;
        case AnomalyKind::GravityManipulation:
            spec.sampled_params["gravity"] =
                cartpole ? rng.uniform_in(9.0, 11.0) : rng.uniform_in(10.0, 11.0);
            break;
        case AnomalyKind::ComponentManipulation: {
            const auto ranges = detail::component_ranges(env);
            const auto& r = ranges[rng.uniform_int(ranges.size())];
            spec.sampled_params[r.name] = std::max(rng.uniform_in(r.lo, r.hi), r.clamp_lo);
            break;
        }
    }
    return spec;
}

/// Applies a sensor-injected transform to the observation the policy and the
/// detector will see. Identity before the injection step.
inline std::vector<double> corrupt_observation(const AnomalySpec& spec,
                                               const std::vector<double>& obs, int t, Rng& rng) {
    if (!is_sensor_injected(spec.kind)) {
        throw WrongKind(std::string(anomaly_name(spec.kind)) + " is not sensor-injected");
    }
    if (t < spec.inject_step) return obs;
    std::vector<double> out = obs;
    for (size_t j = 0; j < obs.size(); ++j) {
        if (j >= spec.feature_mask.size() || !spec.feature_mask[j]) continue;
        switch (spec.kind) {
            case AnomalyKind::IIDNoise:
                out[j] += rng.gaussian(spec.param("mean"), spec.param("std"));
                break;
            case AnomalyKind::SensorShutdown:
                out[j] = 0.0;
                break;
            case AnomalyKind::CalibrationFailure:
                out[j] *= spec.param("factor");
                break;
            case AnomalyKind::SensorDrift:
                out[j] += rng.gaussian() * spec.param("rate") * static_cast<double>(t - spec.inject_step);
                break;
            default:
                break;
        }
    }
    return out;
}

/// Replaces gravity or the sampled component attributes; everything else is
/// passed through untouched.
inline EnvParams corrupt_dynamics(const AnomalySpec& spec, const EnvParams& params) {
    if (spec.kind != AnomalyKind::GravityManipulation &&
        spec.kind != AnomalyKind::ComponentManipulation) {
        throw WrongKind(std::string(anomaly_name(spec.kind)) + " does not alter dynamics parameters");
    }
    EnvParams out = params;
    if (spec.kind == AnomalyKind::GravityManipulation) {
        out.gravity = spec.param("gravity");
        return out;
    }
    for (const auto& [name, value] : spec.sampled_params) {
        if (name == "pole_half_length") out.cartpole.pole_half_length = value;
        else if (name == "pole_mass") out.cartpole.pole_mass = value;
        else if (name == "link1_length") out.acrobot.link1_length = value;
        else if (name == "link2_length") out.acrobot.link2_length = value;
        else if (name == "link1_mass") out.acrobot.link1_mass = value;
        else if (name == "link2_mass") out.acrobot.link2_mass = value;
        else throw ConfigError("anomaly." + name, "unknown component attribute");
    }
    return out;
}

/// Wind: with probability p the action opposing the wind weakens one notch
/// toward the wind direction. Acrobot has a noop to pass through; CartPole's
/// two-action space flips the opposing action outright.
inline Action corrupt_action(const AnomalySpec& spec, Action action, EnvKind env, Rng& rng) {
    if (spec.kind != AnomalyKind::WindL2R && spec.kind != AnomalyKind::WindR2L) {
        throw WrongKind(std::string(anomaly_name(spec.kind)) + " does not alter actions");
    }
    const double u = rng.uniform();
    if (u >= spec.param("prob")) return action;
    const bool l2r = spec.kind == AnomalyKind::WindL2R;
    if (env == EnvKind::Acrobot) {
        // actions: 0 -> torque -1, 1 -> noop, 2 -> torque +1
        if (l2r) return Action{std::min(action.index + 1, 2)};
        return Action{std::max(action.index - 1, 0)};
    }
    // CartPole: 0 -> left, 1 -> right
    return Action{l2r ? 1 : 0};
}

}  // namespace oodd
