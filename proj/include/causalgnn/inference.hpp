#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "causalgnn/model.hpp"
#include "causalgnn/prob.hpp"
#include "causalgnn/scm.hpp"

namespace cgnn {

/// Weight convention for marginal inference. eq3 includes the prior density
/// p(z) in the weight (the mathematically consistent estimator); alg1_literal
/// drops it, matching the printed algorithm verbatim.
enum class WeightMode { eq3, alg1_literal };

struct ImportanceEstimate {
    double log_mean;     // log( (1/n) sum w_k )
    double stderr_log;   // delta-method standard error of log_mean
};

/// Stable reduction of log-weights: logsumexp minus log n, with the standard
/// error of the log of the weight mean via the delta method.
inline ImportanceEstimate reduce_log_weights(const std::vector<double>& lw) {
    const int n = static_cast<int>(lw.size());
    if (n < 1) throw std::invalid_argument("importance sampling needs n >= 1");
    const double m = *std::max_element(lw.begin(), lw.end());
    double s = 0.0;
    for (double v : lw) s += std::exp(v - m);
    const double log_mean = m + std::log(s / n);
    double se = 0.0;
    if (n > 1) {
        const double mean_a = s / n;
        double var_a = 0.0;
        for (double v : lw) {
            const double a = std::exp(v - m) - mean_a;
            var_a += a * a;
        }
        var_a /= (n - 1);
        se = std::sqrt(var_a / n) / mean_a;
    }
    return {log_mean, se};
}

struct QueryResult {
    std::vector<uint8_t> assignment;
    std::string regime_label;
    double log_prob{0.0};
    int n{0};
    double stderr_log{0.0};
    uint64_t seed{0};
};

/// Encoder/decoder pair bound to one regime. The normal binding wraps an
/// IvgaeModel; tests may install hand-set functions (e.g. oracle logits).
struct InferenceModel {
    int d{0};
    int latent_dim{0};
    std::string regime_label;
    std::vector<uint8_t> mask;
    std::vector<int> constant_value;  // -1 where not a Constant target
    std::vector<double> regime_marginal;  // known marginal of intervened nodes
    std::function<EncodeResult(const std::vector<uint8_t>&)> encode_fn;
    std::function<Tensor(const Tensor&)> decode_fn;  // [d, latent] -> logits [d, 1]
};

inline InferenceModel bind_inference(const IvgaeModel& m, const RegimeContext& ctx) {
    InferenceModel im;
    im.d = m.graph.d;
    im.latent_dim = m.latent_dim;
    im.regime_label = ctx.regime.label();
    im.mask = ctx.mask;
    im.constant_value.assign(m.graph.d, -1);
    im.regime_marginal.assign(m.graph.d, 0.0);
    for (const auto& [name, r] : ctx.regime.targets())
        for (int i = 0; i < m.graph.d; ++i)
            if (m.var_names[i] == name) {
                im.regime_marginal[i] = r.kind == Replacement::Kind::constant ? r.value : r.coin_prob;
                if (r.kind == Replacement::Kind::constant) im.constant_value[i] = r.value;
            }
    im.encode_fn = [&m, ctx](const std::vector<uint8_t>& v) { return encode(m, v, ctx); };
    im.decode_fn = [&m, ctx](const Tensor& z) { return decode(m, z, ctx); };
    return im;
}

/// Plug-in inference model: prior proposal (mu = 0, log_var = 0) and constant
/// decoder logits encoding the given per-node probabilities. With these the
/// importance weights are exact and estimates match the encoded values.
inline InferenceModel plugin_inference(int d, int latent_dim, const std::vector<uint8_t>& mask,
                                       const std::vector<double>& p_one, const std::string& label = "plugin") {
    InferenceModel im;
    im.d = d;
    im.latent_dim = latent_dim;
    im.regime_label = label;
    im.mask = mask;
    im.constant_value.assign(d, -1);
    im.regime_marginal = p_one;
    im.encode_fn = [d, latent_dim](const std::vector<uint8_t>&) {
        return EncodeResult{Tensor::zeros(d, latent_dim), Tensor::zeros(d, latent_dim)};
    };
    Tensor logits(d, 1);
    for (int i = 0; i < d; ++i) logits.at(i, 0) = logit(p_one[i]);
    im.decode_fn = [logits](const Tensor&) { return logits; };
    return im;
}

/// Alg.-1 marginal inference: log p-hat(v | do) by importance sampling with
/// the encoder as proposal. Reconstruction terms of intervened nodes are
/// excluded, matching the training objective.
inline QueryResult marginal_log_prob(const InferenceModel& im, const std::vector<uint8_t>& v, int n, uint64_t seed,
                                     WeightMode mode = WeightMode::eq3) {
    if (n < 1) throw std::invalid_argument("marginal_log_prob requires n >= 1");
    if (static_cast<int>(v.size()) != im.d) throw std::invalid_argument("assignment size mismatch");
    for (int i = 0; i < im.d; ++i)
        if (im.constant_value[i] >= 0 && v[i] != im.constant_value[i])
            throw std::invalid_argument("assignment inconsistent with Constant intervention target");

    const EncodeResult q = im.encode_fn(v);
    Tensor targets(im.d, 1), weights(im.d, 1);
    for (int i = 0; i < im.d; ++i) {
        targets.at(i, 0) = v[i];
        weights.at(i, 0) = im.mask[i] ? 0.0 : 1.0;
    }

    Rng rng(Rng::derive(seed, 0x71756572ULL));
    std::vector<double> lw(n);
    Tensor z(im.d, im.latent_dim);
    for (int k = 0; k < n; ++k) {
        double logq = 0.0;
        for (int i = 0; i < z.size(); ++i) {
            const double eps = rng.normal();
            const double lv = std::min(std::max(q.log_var.data[i], kLogVarClampLo), kLogVarClampHi);
            z.data[i] = q.mu.data[i] + std::exp(0.5 * lv) * eps;
            logq += -0.5 * (kLogTwoPi + lv + eps * eps);
        }
        const Tensor logits = im.decode_fn(z);
        double w = bernoulli_log_lik(logits, targets, &weights) - logq;
        if (mode == WeightMode::eq3) w += std_normal_log_density(z);
        if (!std::isfinite(w))
            throw numeric_error("non-finite importance weight at sample " + std::to_string(k));
        lw[k] = w;
    }
    const ImportanceEstimate est = reduce_log_weights(lw);
    return {v, im.regime_label, est.log_mean, n, est.stderr_log, seed};
}

/// Model marginal P(V_i = 1 | do) for every node: decoder Bernoulli
/// parameters averaged over n prior latent samples. Because the decoder
/// factorizes over nodes given z, this is the exact summation over all
/// assignments for each sample.
inline std::vector<double> decoder_marginals(const InferenceModel& im, int n, uint64_t seed) {
    if (n < 1) throw std::invalid_argument("decoder_marginals requires n >= 1");
    Rng rng(Rng::derive(seed, 0x6d617267ULL));
    std::vector<double> p(im.d, 0.0);
    Tensor z(im.d, im.latent_dim);
    for (int k = 0; k < n; ++k) {
        for (double& e : z.data) e = rng.normal();
        const Tensor logits = im.decode_fn(z);
        for (int i = 0; i < im.d; ++i) p[i] += sigmoid_stable(logits.at(i, 0));
    }
    for (double& v : p) v /= n;
    return p;
}

/// P-hat(Y=1 | do) from an inference model bound to that regime.
inline double estimate_marginal(const InferenceModel& im, int y_index, int n, uint64_t seed) {
    if (y_index < 0 || y_index >= im.d) throw std::invalid_argument("estimate_marginal: bad node index");
    if (im.mask[y_index]) return im.regime_marginal[y_index];
    return decoder_marginals(im, n, seed)[y_index];
}

/// ATE(X, Y) estimated from a model trained on both atomic regimes of X.
inline double estimate_ate(const IvgaeModel& m, const std::string& x, const std::string& y, int n, uint64_t seed) {
    if (x == y) throw std::invalid_argument("estimate_ate: treatment equals outcome");
    const Intervention do0 = Intervention::assign(x, 0);
    const Intervention do1 = Intervention::assign(x, 1);
    if (!m.has_trained_regime(do0) || !m.has_trained_regime(do1))
        throw std::invalid_argument("estimate_ate: model was not trained on regimes do(" + x + "=0) and do(" + x + "=1)");
    int yi = -1;
    for (int i = 0; i < m.graph.d; ++i)
        if (m.var_names[i] == y) yi = i;
    if (yi < 0) throw std::invalid_argument("estimate_ate: unknown outcome " + y);

    const RegimeContext c0 = m.make_context(do0);
    const RegimeContext c1 = m.make_context(do1);
    const double p1 = estimate_marginal(bind_inference(m, c1), yi, n, Rng::derive(seed, 1));
    const double p0 = estimate_marginal(bind_inference(m, c0), yi, n, Rng::derive(seed, 2));
    return p1 - p0;
}

/// ATE from two pre-bound inference models (regimes do(X=1), do(X=0)).
inline double estimate_ate_with(const InferenceModel& im1, const InferenceModel& im0, int y_index, int n,
                                uint64_t seed) {
    return estimate_marginal(im1, y_index, n, Rng::derive(seed, 1)) -
           estimate_marginal(im0, y_index, n, Rng::derive(seed, 2));
}

/// The literal Alg.-1 route for small d: P-hat(Y=y | do) as the sum of
/// exp(marginal_log_prob(v)) over all assignments v consistent with the
/// regime's Constant targets and with Y = y.
inline double marginal_by_enumeration(const InferenceModel& im, int y_index, int y_value, int n, uint64_t seed,
                                      WeightMode mode = WeightMode::eq3) {
    if (im.d > 12) throw std::invalid_argument("assignment enumeration limited to 12 variables");
    double total = 0.0;
    std::vector<uint8_t> v(im.d);
    for (uint32_t a = 0; a < (1u << im.d); ++a) {
        bool consistent = true;
        for (int i = 0; i < im.d; ++i) {
            v[i] = (a >> (im.d - 1 - i)) & 1u;
            if (im.constant_value[i] >= 0 && v[i] != im.constant_value[i]) consistent = false;
        }
        if (!consistent || v[y_index] != y_value) continue;
        total += std::exp(marginal_log_prob(im, v, n, Rng::derive(seed, a), mode).log_prob);
    }
    return total;
}

struct DensityReport {
    std::string regime_label;
    std::vector<std::string> nodes;
    std::vector<double> model_p1;
    std::vector<double> oracle_p1;
    std::vector<double> abs_error;

    double max_abs_error() const {
        double m = 0.0;
        for (double e : abs_error) m = std::max(m, e);
        return m;
    }
};

/// Per-node marginals under one regime: model (decoder marginals over n
/// prior samples; intervened nodes from the regime definition) against the
/// exact oracle.
inline DensityReport density_table(const IvgaeModel& m, const Scm& scm, const Intervention& iv, int n,
                                   uint64_t seed) {
    const RegimeContext ctx = m.make_context(iv);
    const InferenceModel im = bind_inference(m, ctx);
    const std::vector<double> model_p = decoder_marginals(im, n, seed);
    const DistributionTable oracle = exact_joint(scm, iv);

    DensityReport rep;
    rep.regime_label = iv.label();
    rep.nodes = m.var_names;
    rep.model_p1.resize(m.graph.d);
    rep.oracle_p1.resize(m.graph.d);
    rep.abs_error.resize(m.graph.d);
    for (int i = 0; i < m.graph.d; ++i) {
        rep.model_p1[i] = im.mask[i] ? im.regime_marginal[i] : model_p[i];
        rep.oracle_p1[i] = oracle.marginal(m.var_names[i]);
        rep.abs_error[i] = std::abs(rep.model_p1[i] - rep.oracle_p1[i]);
    }
    return rep;
}

}  // namespace cgnn
