#pragma once

#include <cmath>

namespace oodd {

/// Asymmetric quantile Huber loss. With residual δ = target − prediction:
///   L_κ(δ) = ½δ²            if |δ| ≤ κ
///            κ(|δ| − ½κ)    otherwise
///   loss   = |τ − 1{δ<0}| · L_κ(δ)/κ
inline double quantile_huber_loss(double prediction, double target, double tau, double kappa) {
    const double delta = target - prediction;
    const double ad = std::abs(delta);
    const double huber = ad <= kappa ? 0.5 * delta * delta : kappa * (ad - 0.5 * kappa);
    const double weight = std::abs(tau - (delta < 0.0 ? 1.0 : 0.0));
    return weight * huber / kappa;
}

/// d(loss)/d(prediction).
inline double quantile_huber_loss_dpred(double prediction, double target, double tau,
                                        double kappa) {
    const double delta = target - prediction;
    const double dhuber = std::abs(delta) <= kappa ? delta : (delta > 0.0 ? kappa : -kappa);
    const double weight = std::abs(tau - (delta < 0.0 ? 1.0 : 0.0));
    return -weight * dhuber / kappa;
}

}  // namespace oodd
