#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "oodd/errors.hpp"
#include "oodd/rng.hpp"

namespace oodd {

enum class EnvKind { CartPole, Acrobot };

inline int obs_dim(EnvKind kind) { return kind == EnvKind::CartPole ? 4 : 6; }
inline int action_count(EnvKind kind) { return kind == EnvKind::CartPole ? 2 : 3; }

inline const char* env_name(EnvKind kind) {
    return kind == EnvKind::CartPole ? "cartpole" : "acrobot";
}

inline EnvKind parse_env(const std::string& name) {
    if (name == "cartpole") return EnvKind::CartPole;
    if (name == "acrobot") return EnvKind::Acrobot;
    throw UnsupportedEnv("unknown environment '" + name + "'");
}

struct CartPoleParams {
    double cart_mass = 1.0;        // kg
    double pole_mass = 0.1;        // kg
    double pole_half_length = 0.5; // m
    double force_magnitude = 10.0; // N
    double dt = 0.02;              // s
};

struct AcrobotParams {
    double link1_length = 1.0; // m
    double link2_length = 1.0; // m
    double link1_mass = 1.0;   // kg
    double link2_mass = 1.0;   // kg
    double dt = 0.2;           // s
};

struct EnvParams {
    double gravity = 9.8; // m/s^2
    CartPoleParams cartpole;
    AcrobotParams acrobot;
    int horizon = 500;

    void validate() const {
        auto positive = [](double v, const char* what) {
            if (!(v > 0.0)) throw ConfigError(what, "must be strictly positive");
        };
        positive(gravity, "gravity");
        positive(cartpole.cart_mass, "cartpole.cart_mass");
        positive(cartpole.pole_mass, "cartpole.pole_mass");
        positive(cartpole.pole_half_length, "cartpole.pole_half_length");
        positive(cartpole.force_magnitude, "cartpole.force_magnitude");
        positive(acrobot.link1_length, "acrobot.link1_length");
        positive(acrobot.link2_length, "acrobot.link2_length");
        positive(acrobot.link1_mass, "acrobot.link1_mass");
        positive(acrobot.link2_mass, "acrobot.link2_mass");
        // Acrobot's reference implementation integrates at 0.2 s, so the cap
        // sits above that while still rejecting runaway step sizes.
        if (!(cartpole.dt > 0.0 && cartpole.dt <= 0.25)) {
            throw ConfigError("cartpole.dt", "must lie in (0, 0.25]");
        }
        if (!(acrobot.dt > 0.0 && acrobot.dt <= 0.25)) {
            throw ConfigError("acrobot.dt", "must lie in (0, 0.25]");
        }
        if (horizon < 1) throw ConfigError("horizon", "must be >= 1");
    }
};

struct EnvState {
    std::vector<double> obs;
    int step_index = 0;
    bool done = false;
};

struct Action {
    int index = 0;
};

inline void check_action(EnvKind kind, Action a) {
    if (a.index < 0 || a.index >= action_count(kind)) {
        throw ConfigError("action", "index " + std::to_string(a.index) + " out of range for " +
                                        env_name(kind));
    }
}

inline EnvParams default_params(EnvKind kind, int horizon = 500) {
    EnvParams p;
    p.horizon = horizon;
    (void)kind; // published defaults are identical records; kind selects usage
    return p;
}

inline constexpr double kCartPoleAngleLimit = 12.0 * 2.0 * M_PI / 360.0; // 12 degrees
inline constexpr double kCartPolePositionLimit = 2.4;
inline constexpr double kAcrobotMaxVel1 = 4.0 * M_PI;
inline constexpr double kAcrobotMaxVel2 = 9.0 * M_PI;

inline EnvState reset(EnvKind kind, uint64_t seed) {
    Rng rng(mix_seed(seed));
    EnvState s;
    s.step_index = 0;
    s.done = false;
    if (kind == EnvKind::CartPole) {
        s.obs.resize(4);
        for (int i = 0; i < 4; ++i) s.obs[i] = rng.uniform_in(-0.05, 0.05);
    } else {
        const double th1 = rng.uniform_in(-0.1, 0.1);
        const double th2 = rng.uniform_in(-0.1, 0.1);
        const double w1 = rng.uniform_in(-0.1, 0.1);
        const double w2 = rng.uniform_in(-0.1, 0.1);
        s.obs = {std::cos(th1), std::sin(th1), std::cos(th2), std::sin(th2), w1, w2};
    }
    return s;
}

/// Cart and pole angular accelerations for an arbitrary applied force. The
/// zero-force case is only reachable through this hook (the action space has
/// no noop), which lets tests probe the unstable equilibrium directly.
inline std::pair<double, double> cartpole_accels(const EnvParams& p, const double* obs,
                                                 double force) {
    const double total_mass = p.cartpole.cart_mass + p.cartpole.pole_mass;
    const double polemass_length = p.cartpole.pole_mass * p.cartpole.pole_half_length;
    const double theta = obs[2];
    const double theta_dot = obs[3];
    const double costheta = std::cos(theta);
    const double sintheta = std::sin(theta);
    const double temp = (force + polemass_length * theta_dot * theta_dot * sintheta) / total_mass;
    const double theta_acc =
        (p.gravity * sintheta - costheta * temp) /
        (p.cartpole.pole_half_length *
         (4.0 / 3.0 - p.cartpole.pole_mass * costheta * costheta / total_mass));
    const double x_acc = temp - polemass_length * theta_acc * costheta / total_mass;
    return {x_acc, theta_acc};
}

namespace detail {

struct AcrobotCoeffs {
    double m1, m2, l1, lc1, lc2, i1, i2, g;
};

inline AcrobotCoeffs acrobot_coeffs(const EnvParams& p) {
    AcrobotCoeffs c;
    c.m1 = p.acrobot.link1_mass;
    c.m2 = p.acrobot.link2_mass;
    c.l1 = p.acrobot.link1_length;
    c.lc1 = 0.5 * p.acrobot.link1_length; // centers of mass at the link midpoints
    c.lc2 = 0.5 * p.acrobot.link2_length;
    c.i1 = 1.0; // reference implementation uses unit link inertia
    c.i2 = 1.0;
    c.g = p.gravity;
    return c;
}

// Equations of motion in (theta1, theta2, dtheta1, dtheta2) coordinates.
inline void acrobot_dsdt(const AcrobotCoeffs& c, const double s[4], double torque,
                         double out[4]) {
    const double theta1 = s[0], theta2 = s[1], d1t = s[2], d2t = s[3];
    const double cos2 = std::cos(theta2);
    const double sin2 = std::sin(theta2);
    const double d1 = c.m1 * c.lc1 * c.lc1 +
                      c.m2 * (c.l1 * c.l1 + c.lc2 * c.lc2 + 2.0 * c.l1 * c.lc2 * cos2) + c.i1 +
                      c.i2;
    const double d2 = c.m2 * (c.lc2 * c.lc2 + c.l1 * c.lc2 * cos2) + c.i2;
    const double phi2 = c.m2 * c.lc2 * c.g * std::cos(theta1 + theta2 - M_PI / 2.0);
    const double phi1 = -c.m2 * c.l1 * c.lc2 * d2t * d2t * sin2 -
                        2.0 * c.m2 * c.l1 * c.lc2 * d2t * d1t * sin2 +
                        (c.m1 * c.lc1 + c.m2 * c.l1) * c.g * std::cos(theta1 - M_PI / 2.0) + phi2;
    const double dd2 =
        (torque + d2 / d1 * phi1 - c.m2 * c.l1 * c.lc2 * d1t * d1t * sin2 - phi2) /
        (c.m2 * c.lc2 * c.lc2 + c.i2 - d2 * d2 / d1);
    const double dd1 = -(d2 * dd2 + phi1) / d1;
    out[0] = d1t;
    out[1] = d2t;
    out[2] = dd1;
    out[3] = dd2;
}

inline double wrap_pi(double x) {
    while (x > M_PI) x -= 2.0 * M_PI;
    while (x < -M_PI) x += 2.0 * M_PI;
    return x;
}

inline void acrobot_rk4(const AcrobotCoeffs& c, double s[4], double torque, double h) {
    double k1[4], k2[4], k3[4], k4[4], tmp[4];
    acrobot_dsdt(c, s, torque, k1);
    for (int i = 0; i < 4; ++i) tmp[i] = s[i] + 0.5 * h * k1[i];
    acrobot_dsdt(c, tmp, torque, k2);
    for (int i = 0; i < 4; ++i) tmp[i] = s[i] + 0.5 * h * k2[i];
    acrobot_dsdt(c, tmp, torque, k3);
    for (int i = 0; i < 4; ++i) tmp[i] = s[i] + h * k3[i];
    acrobot_dsdt(c, tmp, torque, k4);
    for (int i = 0; i < 4; ++i) {
        s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

inline void decode_acrobot(const std::vector<double>& obs, double s[4]) {
    s[0] = std::atan2(obs[1], obs[0]);
    s[1] = std::atan2(obs[3], obs[2]);
    s[2] = obs[4];
    s[3] = obs[5];
}

}  // namespace detail

/// Total mechanical energy of the acrobot (kinetic + potential, zero level at
/// the pivot). The hanging rest state sits at -(m1*lc1 + m2*l1 + m2*lc2)*g.
inline double acrobot_energy(const EnvParams& p, const std::vector<double>& obs) {
    const auto c = detail::acrobot_coeffs(p);
    double s[4];
    detail::decode_acrobot(obs, s);
    const double cos2 = std::cos(s[1]);
    const double d1 = c.m1 * c.lc1 * c.lc1 +
                      c.m2 * (c.l1 * c.l1 + c.lc2 * c.lc2 + 2.0 * c.l1 * c.lc2 * cos2) + c.i1 +
                      c.i2;
    const double d2 = c.m2 * (c.lc2 * c.lc2 + c.l1 * c.lc2 * cos2) + c.i2;
    const double m22 = c.m2 * c.lc2 * c.lc2 + c.i2;
    const double w1 = s[2], w2 = s[3];
    const double ke = 0.5 * d1 * w1 * w1 + d2 * w1 * w2 + 0.5 * m22 * w2 * w2;
    const double pe = -(c.m1 * c.lc1 + c.m2 * c.l1) * c.g * std::cos(s[0]) -
                      c.m2 * c.lc2 * c.g * std::cos(s[0] + s[1]);
    return ke + pe;
}

inline double acrobot_torque(Action a) { return static_cast<double>(a.index - 1); }

inline EnvState step(EnvKind kind, const EnvParams& params, const EnvState& state, Action action) {
    if (state.done) throw StepAfterDone();
    check_action(kind, action);
    EnvState next;
    next.step_index = state.step_index + 1;
    if (kind == EnvKind::CartPole) {
        const double force =
            action.index == 1 ? params.cartpole.force_magnitude : -params.cartpole.force_magnitude;
        const auto [x_acc, theta_acc] = cartpole_accels(params, state.obs.data(), force);
        const double tau = params.cartpole.dt;
        next.obs.resize(4);
        next.obs[0] = state.obs[0] + tau * state.obs[1];
        next.obs[1] = state.obs[1] + tau * x_acc;
        next.obs[2] = state.obs[2] + tau * state.obs[3];
        next.obs[3] = state.obs[3] + tau * theta_acc;
        const bool fell = std::abs(next.obs[0]) > kCartPolePositionLimit ||
                          std::abs(next.obs[2]) > kCartPoleAngleLimit;
        next.done = fell || next.step_index >= params.horizon;
    } else {
        const auto c = detail::acrobot_coeffs(params);
        double s[4];
        detail::decode_acrobot(state.obs, s);
        detail::acrobot_rk4(c, s, acrobot_torque(action), params.acrobot.dt);
        s[0] = detail::wrap_pi(s[0]);
        s[1] = detail::wrap_pi(s[1]);
        s[2] = std::clamp(s[2], -kAcrobotMaxVel1, kAcrobotMaxVel1);
        s[3] = std::clamp(s[3], -kAcrobotMaxVel2, kAcrobotMaxVel2);
        next.obs = {std::cos(s[0]), std::sin(s[0]), std::cos(s[1]), std::sin(s[1]), s[2], s[3]};
        const bool goal = -std::cos(s[0]) - std::cos(s[1] + s[0]) > 1.0;
        next.done = goal || next.step_index >= params.horizon;
    }
    for (double v : next.obs) {
        if (!std::isfinite(v)) throw NumericError("non-finite observation produced by step");
    }
    return next;
}

// Scripted controllers standing in for trained policies. Constants are frozen
// after an offline gain search; see the survival/goal-rate tests. The cart
// gains are kept comparable to the pole gains so the controller genuinely
// consumes every observation channel, as a trained policy would.
inline constexpr double kCartPoleGains[4] = {2.0, 1.0, 6.0, 1.0};
inline constexpr double kAcrobotTargetEnergy = 12.0;

inline Action nominal_policy(EnvKind kind, const std::vector<double>& obs) {
    if (kind == EnvKind::CartPole) {
        double score = 0.0;
        for (int i = 0; i < 4; ++i) score += kCartPoleGains[i] * obs[i];
        return Action{score > 0.0 ? 1 : 0};
    }
    // Energy pumping at the actuated joint: the motor adds mechanical energy
    // at rate torque * theta2_dot, so the torque sign follows theta2_dot until
    // the target energy is banked and opposes it beyond.
    EnvParams p = default_params(EnvKind::Acrobot);
    const double e = acrobot_energy(p, obs);
    const double u = obs[5] * (kAcrobotTargetEnergy - e);
    if (u > 0.0) return Action{2};
    if (u < 0.0) return Action{0};
    return Action{2};
}

inline Action nominal_policy(EnvKind kind, const EnvState& state) {
    return nominal_policy(kind, state.obs);
}

}  // namespace oodd
