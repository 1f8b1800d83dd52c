#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "causalgnn/dataset.hpp"
#include "causalgnn/inference.hpp"
#include "causalgnn/model.hpp"
#include "causalgnn/optim.hpp"

namespace cgnn {

struct TrainConfig {
    int steps{6000};
    int batch{16};           // per regime per step; budget = batch * regimes
    double learning_rate{1e-3};
    double rms_decay{0.99};
    double rms_epsilon{1e-8};
    uint64_t seed{0};
    int latent_dim{4};
    int hidden{16};
    int eval_every{250};
    int is_samples{50};      // importance samples for log p(x) evaluation
    int eval_rows{256};      // row cap for the log p(x) evaluation
    int nan_fail_threshold{25};

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["steps"] = steps;
        j["batch"] = batch;
        j["learning_rate"] = learning_rate;
        j["rms_decay"] = rms_decay;
        j["rms_epsilon"] = rms_epsilon;
        j["seed"] = seed;
        j["latent_dim"] = latent_dim;
        j["hidden"] = hidden;
        j["eval_every"] = eval_every;
        j["is_samples"] = is_samples;
        j["eval_rows"] = eval_rows;
        j["nan_fail_threshold"] = nan_fail_threshold;
        return j;
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        if (j.contains("steps")) c.steps = j["steps"].get<int>();
        if (j.contains("batch")) c.batch = j["batch"].get<int>();
        if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
        if (j.contains("rms_decay")) c.rms_decay = j["rms_decay"].get<double>();
        if (j.contains("rms_epsilon")) c.rms_epsilon = j["rms_epsilon"].get<double>();
        if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
        if (j.contains("latent_dim")) c.latent_dim = j["latent_dim"].get<int>();
        if (j.contains("hidden")) c.hidden = j["hidden"].get<int>();
        if (j.contains("eval_every")) c.eval_every = j["eval_every"].get<int>();
        if (j.contains("is_samples")) c.is_samples = j["is_samples"].get<int>();
        if (j.contains("eval_rows")) c.eval_rows = j["eval_rows"].get<int>();
        if (j.contains("nan_fail_threshold")) c.nan_fail_threshold = j["nan_fail_threshold"].get<int>();
        return c;
    }
};

struct RegimeMetrics {
    std::string regime_label;
    double train_elbo{0.0};
    double valid_elbo{0.0};
    double test_elbo{0.0};
    double valid_logp{0.0};
    double test_logp{0.0};
};

struct TrainTrace {
    std::vector<std::vector<double>> step_elbo;  // [regime][step], NaN-free (skipped steps omitted)
    double initial_train_elbo{0.0};
    std::vector<RegimeMetrics> final_metrics;    // on the restored best-validation model
    double best_valid_elbo{-std::numeric_limits<double>::infinity()};
    int best_step{0};
    long clamp_events{0};
    int nan_steps{0};
    bool failed{false};

    double mean_train_elbo() const { return mean_of(&RegimeMetrics::train_elbo); }
    double mean_valid_elbo() const { return mean_of(&RegimeMetrics::valid_elbo); }
    double mean_test_elbo() const { return mean_of(&RegimeMetrics::test_elbo); }
    double mean_valid_logp() const { return mean_of(&RegimeMetrics::valid_logp); }
    double mean_test_logp() const { return mean_of(&RegimeMetrics::test_logp); }

private:
    double mean_of(double RegimeMetrics::* field) const {
        double s = 0.0;
        for (const auto& m : final_metrics) s += m.*field;
        return final_metrics.empty() ? 0.0 : s / final_metrics.size();
    }
};

namespace detail {

enum class Split { train, valid, test };

inline std::pair<int, int> split_range(const RegimeDataset& ds, Split s) {
    switch (s) {
        case Split::train: return {0, ds.train_end};
        case Split::valid: return {ds.train_end, ds.valid_end};
        default: return {ds.valid_end, ds.n};
    }
}

/// Mean per-datum ELBO over a whole split, evaluated in chunks with a fixed
/// noise stream.
inline double split_elbo(const IvgaeModel& m, const RegimeDataset& ds, const RegimeContext& ctx, Split split,
                         uint64_t noise_seed) {
    const auto [lo, hi] = split_range(ds, split);
    if (lo >= hi) throw std::invalid_argument("empty split");
    Rng rng(Rng::derive(noise_seed, 0x65766c31ULL));
    const int chunk = 512;
    double total = 0.0;
    for (int base = lo; base < hi; base += chunk) {
        const int count = std::min(chunk, hi - base);
        std::vector<const uint8_t*> rows(count);
        for (int i = 0; i < count; ++i) rows[i] = ds.row(base + i);
        Tape tape;
        std::vector<BoundLayer> enc, dec;
        for (const auto& l : m.encoder) enc.push_back(bind_layer(tape, l));
        for (const auto& l : m.decoder) dec.push_back(bind_layer(tape, l));
        Tensor eps = standard_normal(count * m.graph.d, m.latent_dim, rng);
        total += causal_elbo_on_tape(tape, m, enc, dec, ctx, rows, eps).value * count;
    }
    return total / (hi - lo);
}

/// Mean per-datum importance-sampled log p(v | do) over (a capped number of
/// rows of) a split.
inline double split_logp(const IvgaeModel& m, const RegimeDataset& ds, const RegimeContext& ctx, Split split,
                         int is_samples, int row_cap, uint64_t seed) {
    const auto [lo, hi] = split_range(ds, split);
    const int count = std::min(row_cap, hi - lo);
    if (count <= 0) throw std::invalid_argument("empty split");
    const InferenceModel im = bind_inference(m, ctx);
    double total = 0.0;
    std::vector<uint8_t> v(ds.d);
    for (int i = 0; i < count; ++i) {
        const uint8_t* r = ds.row(lo + i);
        std::copy(r, r + ds.d, v.begin());
        total += marginal_log_prob(im, v, is_samples, Rng::derive(seed, 0x6c6f6770ULL + i)).log_prob;
    }
    return total / count;
}

}  // namespace detail

/// One training run: per step, one batch per regime and one RMSProp update on
/// the summed negative causal ELBO. The model left in place is the
/// best-validation-ELBO checkpoint; fully deterministic given config.seed.
inline TrainTrace train(IvgaeModel& model, const std::vector<RegimeDataset>& datasets, const TrainConfig& cfg) {
    if (datasets.empty()) throw std::invalid_argument("train requires at least one regime dataset");
    for (const auto& ds : datasets) {
        if (ds.train_end != ds.n * 8 / 10 || ds.valid_end != ds.n * 9 / 10)
            throw std::invalid_argument("dataset split is not 80/10/10");
        if (ds.train_count() < 1 || ds.valid_count() < 1 || ds.test_count() < 1)
            throw std::invalid_argument("dataset too small for an 80/10/10 split");
    }
    const int regimes = static_cast<int>(datasets.size());
    std::vector<RegimeContext> ctxs;
    for (const auto& ds : datasets) ctxs.push_back(model.make_context(ds.regime));

    TrainTrace trace;
    trace.step_elbo.assign(regimes, {});

    std::vector<Tensor*> params = model.parameters();
    RmsProp opt(params, {cfg.learning_rate, cfg.rms_decay, cfg.rms_epsilon});
    Rng batch_rng(Rng::derive(cfg.seed, 0x62617463ULL));
    Rng eps_rng(Rng::derive(cfg.seed, 0x65707320ULL));

    auto valid_elbo_mean = [&](uint64_t stream) {
        double s = 0.0;
        for (int r = 0; r < regimes; ++r)
            s += detail::split_elbo(model, datasets[r], ctxs[r], detail::Split::valid, Rng::derive(cfg.seed, stream + r));
        return s / regimes;
    };
    auto snapshot = [&] {
        std::vector<Tensor> copy;
        for (Tensor* p : params) copy.push_back(*p);
        return copy;
    };
    auto restore = [&](const std::vector<Tensor>& copy) {
        for (size_t i = 0; i < params.size(); ++i) *params[i] = copy[i];
    };

    {
        double s = 0.0;
        for (int r = 0; r < regimes; ++r)
            s += detail::split_elbo(model, datasets[r], ctxs[r], detail::Split::train, Rng::derive(cfg.seed, 0x696e6974ULL + r));
        trace.initial_train_elbo = s / regimes;
    }
    trace.best_valid_elbo = valid_elbo_mean(0x76616c30ULL);
    trace.best_step = 0;
    std::vector<Tensor> best = snapshot();

    int consecutive_nan = 0;
    for (int step = 0; step < cfg.steps; ++step) {
        // Draw batches and noise before the guarded region so the RNG streams
        // advance identically whether or not the step aborts.
        std::vector<std::vector<const uint8_t*>> batch_rows(regimes);
        std::vector<Tensor> eps(regimes);
        for (int r = 0; r < regimes; ++r) {
            batch_rows[r].resize(cfg.batch);
            for (int b = 0; b < cfg.batch; ++b) {
                const int idx = static_cast<int>(batch_rng.uniform01() * datasets[r].train_count());
                batch_rows[r][b] = datasets[r].row(std::min(idx, datasets[r].train_count() - 1));
            }
            eps[r] = standard_normal(cfg.batch * model.graph.d, model.latent_dim, eps_rng);
        }

        try {
            Tape tape;
            std::vector<BoundLayer> enc, dec;
            for (const auto& l : model.encoder) enc.push_back(bind_layer(tape, l));
            for (const auto& l : model.decoder) dec.push_back(bind_layer(tape, l));

            Tape::NodeId loss = -1;
            for (int r = 0; r < regimes; ++r) {
                ElboParts parts = causal_elbo_on_tape(tape, model, enc, dec, ctxs[r], batch_rows[r], eps[r]);
                trace.step_elbo[r].push_back(parts.value);
                Tape::NodeId neg = tape.scale(parts.elbo, -1.0);
                loss = loss < 0 ? neg : tape.add(loss, neg);
            }
            tape.backward(loss);

            std::vector<Tensor> grads;
            grads.reserve(params.size());
            std::vector<Tape::NodeId> param_nodes;
            for (const BoundLayer& l : enc) {
                param_nodes.push_back(l.w_msg);
                param_nodes.push_back(l.b_msg);
                param_nodes.push_back(l.w_upd);
                param_nodes.push_back(l.b_upd);
            }
            for (const BoundLayer& l : dec) {
                param_nodes.push_back(l.w_msg);
                param_nodes.push_back(l.b_msg);
                param_nodes.push_back(l.w_upd);
                param_nodes.push_back(l.b_upd);
            }
            for (Tape::NodeId id : param_nodes) grads.push_back(tape.grad(id));
            opt.step(params, grads);
            trace.clamp_events += tape.clamp_events();
            consecutive_nan = 0;
        } catch (const numeric_error&) {
            ++trace.nan_steps;
            if (++consecutive_nan >= cfg.nan_fail_threshold) {
                trace.failed = true;
                break;
            }
            continue;
        }

        if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) {
            const double ve = valid_elbo_mean(0x76616c31ULL + static_cast<uint64_t>(step) * 131);
            if (ve > trace.best_valid_elbo) {
                trace.best_valid_elbo = ve;
                trace.best_step = step + 1;
                best = snapshot();
            }
        }
    }

    if (!trace.failed && cfg.steps > 0 && (cfg.eval_every <= 0 || cfg.steps % std::max(cfg.eval_every, 1) != 0)) {
        const double ve = valid_elbo_mean(0x76616c66ULL);
        if (ve > trace.best_valid_elbo) {
            trace.best_valid_elbo = ve;
            trace.best_step = cfg.steps;
            best = snapshot();
        }
    }

    restore(best);
    model.trained_regimes.clear();
    for (const auto& ds : datasets) model.trained_regimes.push_back(ds.regime);

    for (int r = 0; r < regimes; ++r) {
        RegimeMetrics met;
        met.regime_label = datasets[r].regime.label();
        met.train_elbo = detail::split_elbo(model, datasets[r], ctxs[r], detail::Split::train, Rng::derive(cfg.seed, 0x66747231ULL + r));
        met.valid_elbo = detail::split_elbo(model, datasets[r], ctxs[r], detail::Split::valid, Rng::derive(cfg.seed, 0x66767231ULL + r));
        met.test_elbo = detail::split_elbo(model, datasets[r], ctxs[r], detail::Split::test, Rng::derive(cfg.seed, 0x66747331ULL + r));
        if (!trace.failed) {
            met.valid_logp = detail::split_logp(model, datasets[r], ctxs[r], detail::Split::valid, cfg.is_samples,
                                                cfg.eval_rows, Rng::derive(cfg.seed, 0x6c767231ULL + r));
            met.test_logp = detail::split_logp(model, datasets[r], ctxs[r], detail::Split::test, cfg.is_samples,
                                               cfg.eval_rows, Rng::derive(cfg.seed, 0x6c747231ULL + r));
        }
        trace.final_metrics.push_back(met);
    }
    return trace;
}

}  // namespace cgnn
