#pragma once

#include <cmath>
#include <stdexcept>

#include "causalgnn/random.hpp"
#include "causalgnn/tape.hpp"
#include "causalgnn/tensor.hpp"

namespace cgnn {

inline constexpr double kLogVarClampLo = -20.0;
inline constexpr double kLogVarClampHi = 20.0;
inline constexpr double kLogTwoPi = 1.8378770664093454836;

struct ReparamSample {
    Tape::NodeId z;       // differentiable through mu and log_var
    double log_density;   // log q(z | mu, log_var), closed form
};

/// z = mu + exp(log_var/2) * eps with fixed standard-normal eps. log_var is
/// clamped to [-20, 20] before exponentiation; clamps are counted by the tape.
inline ReparamSample gaussian_reparam(Tape& tape, Tape::NodeId mu, Tape::NodeId log_var, const Tensor& eps) {
    const Tensor& m = tape.value(mu);
    if (!m.same_shape(tape.value(log_var)))
        throw std::invalid_argument("gaussian_reparam shape mismatch " + m.shape_str() + " vs " +
                                    tape.value(log_var).shape_str());
    if (!m.same_shape(eps))
        throw std::invalid_argument("gaussian_reparam eps shape mismatch");
    const Tape::NodeId lv = tape.clamp(log_var, kLogVarClampLo, kLogVarClampHi);
    const Tape::NodeId sigma = tape.exp(tape.scale(lv, 0.5));
    const Tape::NodeId z = tape.add(mu, tape.mul(sigma, tape.constant(eps)));

    // log N(z; mu, e^lv) = sum -0.5*(log 2pi + lv + eps^2)
    double logq = 0.0;
    const Tensor& lvv = tape.value(lv);
    for (int i = 0; i < eps.size(); ++i)
        logq += -0.5 * (kLogTwoPi + lvv.data[i] + eps.data[i] * eps.data[i]);
    return {z, logq};
}

/// Sample eps ~ N(0, I) of the given shape.
inline Tensor standard_normal(int rows, int cols, Rng& rng) {
    Tensor t(rows, cols);
    for (double& v : t.data) v = rng.normal();
    return t;
}

/// Plain-tensor diagonal-Gaussian log density.
inline double gaussian_log_density(const Tensor& x, const Tensor& mu, const Tensor& log_var) {
    if (!x.same_shape(mu) || !x.same_shape(log_var))
        throw std::invalid_argument("gaussian_log_density shape mismatch");
    double s = 0.0;
    for (int i = 0; i < x.size(); ++i) {
        const double lv = std::min(std::max(log_var.data[i], kLogVarClampLo), kLogVarClampHi);
        const double d = x.data[i] - mu.data[i];
        s += -0.5 * (kLogTwoPi + lv + d * d * std::exp(-lv));
    }
    return s;
}

inline double std_normal_log_density(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data) s += -0.5 * (kLogTwoPi + v * v);
    return s;
}

/// Closed-form KL(N(mu, diag e^lv) || N(0, I)) on plain tensors.
inline double kl_diag_gaussian_std(const Tensor& mu, const Tensor& log_var) {
    if (!mu.same_shape(log_var)) throw std::invalid_argument("kl shape mismatch");
    double s = 0.0;
    for (int i = 0; i < mu.size(); ++i)
        s += std::exp(log_var.data[i]) + mu.data[i] * mu.data[i] - 1.0 - log_var.data[i];
    return 0.5 * s;
}

/// Plain-tensor Bernoulli log likelihood from logits, optionally weighted.
/// targets must be exactly 0 or 1.
inline double bernoulli_log_lik(const Tensor& logits, const Tensor& targets, const Tensor* weights = nullptr) {
    if (!logits.same_shape(targets)) throw std::invalid_argument("bernoulli_log_lik shape mismatch");
    if (weights && !logits.same_shape(*weights)) throw std::invalid_argument("bernoulli_log_lik weight shape mismatch");
    double s = 0.0;
    for (int i = 0; i < logits.size(); ++i) {
        const double t = targets.data[i];
        if (t != 0.0 && t != 1.0)
            throw std::invalid_argument("bernoulli_log_lik target not binary: " + std::to_string(t));
        const double term = t * logits.data[i] - softplus_stable(logits.data[i]);
        s += weights ? weights->data[i] * term : term;
    }
    return s;
}

inline double logit(double p) {
    const double q = std::min(std::max(p, 1e-12), 1.0 - 1e-12);
    return std::log(q / (1.0 - q));
}

}  // namespace cgnn
