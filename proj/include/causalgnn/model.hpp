#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "causalgnn/dataset.hpp"
#include "causalgnn/gnn.hpp"
#include "causalgnn/graph.hpp"
#include "causalgnn/prob.hpp"

namespace cgnn {

/// Intervention context shared by encoder and decoder: the structural part
/// (aggregation matrix with parent edges of targets cut) plus the content
/// part (per-node mask bit and clamped value, carried as node features).
struct RegimeContext {
    Intervention regime;
    std::vector<uint8_t> mask;     // 1 if node is intervened
    std::vector<double> content;   // Constant value, or coin probability
    Tensor agg;                    // aggregation matrix under the regime
};

/// Interventional variational graph auto-encoder: encoder and decoder are
/// interventional GNN stacks over the same causal graph. The encoder maps
/// node values to per-node (mu, log_var); the decoder maps a latent sample
/// plus the intervention context to per-node Bernoulli logits.
struct IvgaeModel {
    static constexpr int kVersion = 1;

    GraphSpec graph;
    std::vector<std::string> var_names;
    int latent_dim{4};
    int hidden{16};
    uint64_t init_seed{0};
    std::vector<GnnLayerParams> encoder;
    std::vector<GnnLayerParams> decoder;
    std::vector<Intervention> trained_regimes;

    static constexpr int kEncoderInDim = 3;  // value, mask, content

    static IvgaeModel create(const GraphSpec& graph, std::vector<std::string> names, int latent_dim, int hidden,
                             uint64_t seed) {
        if (static_cast<int>(names.size()) != graph.d)
            throw std::invalid_argument("variable name count does not match graph");
        IvgaeModel m;
        m.graph = graph;
        m.var_names = std::move(names);
        m.latent_dim = latent_dim;
        m.hidden = hidden;
        m.init_seed = seed;
        Rng rng(Rng::derive(seed, 0x696e6974ULL));
        // Hidden layers Xavier; output heads start at zero so a fresh model
        // emits mu = 0, log_var = 0 and logits 0 (p = 0.5).
        m.encoder.push_back(GnnLayerParams::init(kEncoderInDim, hidden, Activation::tanh, rng));
        m.encoder.push_back(GnnLayerParams::init(hidden, 2 * latent_dim, Activation::identity, rng, true));
        m.decoder.push_back(GnnLayerParams::init(latent_dim + 2, hidden, Activation::tanh, rng));
        m.decoder.push_back(GnnLayerParams::init(hidden, 1, Activation::identity, rng, true));
        return m;
    }

    std::vector<Tensor*> parameters() {
        std::vector<Tensor*> out;
        for (auto& l : encoder)
            for (Tensor* t : l.params()) out.push_back(t);
        for (auto& l : decoder)
            for (Tensor* t : l.params()) out.push_back(t);
        return out;
    }

    RegimeContext make_context(const Intervention& iv) const {
        RegimeContext ctx;
        ctx.regime = iv;
        ctx.mask = target_mask(var_names, iv);
        ctx.content.assign(graph.d, 0.0);
        for (const auto& [name, r] : iv.targets()) {
            for (int i = 0; i < graph.d; ++i)
                if (var_names[i] == name)
                    ctx.content[i] = r.kind == Replacement::Kind::constant ? static_cast<double>(r.value) : r.coin_prob;
        }
        ctx.agg = graph.aggregation_matrix(ctx.mask);
        return ctx;
    }

    bool has_trained_regime(const Intervention& iv) const {
        for (const auto& r : trained_regimes)
            if (intervention_to_json(r) == intervention_to_json(iv)) return true;
        return false;
    }
};

struct EncodeResult {
    Tensor mu;       // [d, latent_dim]
    Tensor log_var;  // [d, latent_dim]
};

namespace detail {

/// Node-feature block for a batch of assignments under one regime:
/// rows grouped per item, columns [value, mask, content].
inline Tensor encoder_input(const IvgaeModel& m, const RegimeContext& ctx, const std::vector<const uint8_t*>& rows) {
    const int d = m.graph.d;
    Tensor in(static_cast<int>(rows.size()) * d, IvgaeModel::kEncoderInDim);
    for (size_t b = 0; b < rows.size(); ++b)
        for (int i = 0; i < d; ++i) {
            const int r = static_cast<int>(b) * d + i;
            in.at(r, 0) = rows[b][i];
            in.at(r, 1) = ctx.mask[i];
            in.at(r, 2) = ctx.content[i];
        }
    return in;
}

inline Tensor context_features(const IvgaeModel& m, const RegimeContext& ctx, int batch) {
    const int d = m.graph.d;
    Tensor f(batch * d, 2);
    for (int b = 0; b < batch; ++b)
        for (int i = 0; i < d; ++i) {
            f.at(b * d + i, 0) = ctx.mask[i];
            f.at(b * d + i, 1) = ctx.content[i];
        }
    return f;
}

struct EncoderNodes {
    Tape::NodeId mu;
    Tape::NodeId log_var;  // already clamped
};

inline EncoderNodes encode_on_tape(Tape& tape, const IvgaeModel& m, const std::vector<BoundLayer>& enc,
                                   Tape::NodeId input, Tape::NodeId agg) {
    Tape::NodeId out = stack_forward(tape, enc, input, agg, m.graph.d);
    Tape::NodeId mu = tape.slice_cols(out, 0, m.latent_dim);
    Tape::NodeId lv = tape.clamp(tape.slice_cols(out, m.latent_dim, 2 * m.latent_dim), kLogVarClampLo, kLogVarClampHi);
    return {mu, lv};
}

inline Tape::NodeId decode_on_tape(Tape& tape, const IvgaeModel& m, const std::vector<BoundLayer>& dec,
                                   Tape::NodeId z, Tape::NodeId ctx_features, Tape::NodeId agg) {
    Tape::NodeId in = tape.concat_cols(z, ctx_features);
    return stack_forward(tape, dec, in, agg, m.graph.d);
}

}  // namespace detail

/// Variational parameters of q(Z | v, do) for a single assignment.
inline EncodeResult encode(const IvgaeModel& m, const std::vector<uint8_t>& v, const RegimeContext& ctx) {
    if (static_cast<int>(v.size()) != m.graph.d) throw std::invalid_argument("encode: assignment size mismatch");
    Tape tape;
    std::vector<BoundLayer> enc;
    for (const auto& l : m.encoder) enc.push_back(bind_layer(tape, l));
    Tape::NodeId input = tape.constant(detail::encoder_input(m, ctx, {v.data()}));
    Tape::NodeId agg = tape.constant(ctx.agg);
    auto nodes = detail::encode_on_tape(tape, m, enc, input, agg);
    return {tape.value(nodes.mu), tape.value(nodes.log_var)};
}

/// Per-node Bernoulli logits for a latent sample z ([d, latent_dim]).
inline Tensor decode(const IvgaeModel& m, const Tensor& z, const RegimeContext& ctx) {
    if (z.rows != m.graph.d || z.cols != m.latent_dim)
        throw std::invalid_argument("decode: latent shape " + z.shape_str() + " mismatch");
    Tape tape;
    std::vector<BoundLayer> dec;
    for (const auto& l : m.decoder) dec.push_back(bind_layer(tape, l));
    Tape::NodeId zn = tape.constant(z);
    Tape::NodeId cf = tape.constant(detail::context_features(m, ctx, 1));
    Tape::NodeId agg = tape.constant(ctx.agg);
    return tape.value(detail::decode_on_tape(tape, m, dec, zn, cf, agg));
}

struct ElboParts {
    Tape::NodeId elbo;   // scalar, mean over the batch
    double value;
};

/// Causal ELBO of one batch under one regime, built on the given tape:
/// E_q[log p(V | Z, do)] - KL(q(Z | V, do) || N(0, I)), one reparameterized
/// sample per datum, reconstruction masked to non-intervened nodes.
inline ElboParts causal_elbo_on_tape(Tape& tape, const IvgaeModel& m, const std::vector<BoundLayer>& enc,
                                     const std::vector<BoundLayer>& dec, const RegimeContext& ctx,
                                     const std::vector<const uint8_t*>& rows, const Tensor& eps) {
    const int d = m.graph.d;
    const int batch = static_cast<int>(rows.size());
    if (eps.rows != batch * d || eps.cols != m.latent_dim)
        throw std::invalid_argument("causal_elbo: eps shape mismatch");

    Tape::NodeId input = tape.constant(detail::encoder_input(m, ctx, rows));
    Tape::NodeId agg = tape.constant(ctx.agg);
    auto q = detail::encode_on_tape(tape, m, enc, input, agg);
    Tape::NodeId sigma = tape.exp(tape.scale(q.log_var, 0.5));
    Tape::NodeId z = tape.add(q.mu, tape.mul(sigma, tape.constant(eps)));

    Tape::NodeId cf = tape.constant(detail::context_features(m, ctx, batch));
    Tape::NodeId logits = detail::decode_on_tape(tape, m, dec, z, cf, agg);

    Tensor targets(batch * d, 1);
    Tensor weights(batch * d, 1);
    for (int b = 0; b < batch; ++b)
        for (int i = 0; i < d; ++i) {
            targets.at(b * d + i, 0) = rows[b][i];
            weights.at(b * d + i, 0) = ctx.mask[i] ? 0.0 : 1.0;
        }
    Tape::NodeId recon = tape.bernoulli_log_lik(logits, tape.constant(targets), tape.constant(weights));
    Tape::NodeId kl = tape.kl_std_normal(q.mu, q.log_var);
    Tape::NodeId elbo = tape.scale(tape.sub(recon, kl), 1.0 / batch);
    return {elbo, tape.value(elbo).scalar_value()};
}

/// Plain evaluation of the causal ELBO (no gradient), deterministic given the
/// noise seed.
inline double causal_elbo(const IvgaeModel& m, const RegimeContext& ctx, const std::vector<const uint8_t*>& rows,
                          uint64_t noise_seed) {
    Tape tape;
    std::vector<BoundLayer> enc, dec;
    for (const auto& l : m.encoder) enc.push_back(bind_layer(tape, l));
    for (const auto& l : m.decoder) dec.push_back(bind_layer(tape, l));
    Rng rng(Rng::derive(noise_seed, 0x656c626fULL));
    Tensor eps = standard_normal(static_cast<int>(rows.size()) * m.graph.d, m.latent_dim, rng);
    return causal_elbo_on_tape(tape, m, enc, dec, ctx, rows, eps).value;
}

// ---- checkpoint serialization ----

inline nlohmann::json layer_to_json(const GnnLayerParams& l) {
    nlohmann::json j;
    j["in_dim"] = l.in_dim;
    j["out_dim"] = l.out_dim;
    j["act"] = l.act == Activation::tanh ? "tanh" : "identity";
    j["w_msg"] = l.w_msg.data;
    j["b_msg"] = l.b_msg.data;
    j["w_upd"] = l.w_upd.data;
    j["b_upd"] = l.b_upd.data;
    return j;
}

inline GnnLayerParams layer_from_json(const nlohmann::json& j) {
    GnnLayerParams l;
    l.in_dim = j.at("in_dim").get<int>();
    l.out_dim = j.at("out_dim").get<int>();
    l.act = j.at("act").get<std::string>() == "tanh" ? Activation::tanh : Activation::identity;
    l.w_msg = Tensor(l.in_dim, l.out_dim, j.at("w_msg").get<std::vector<double>>());
    l.b_msg = Tensor(1, l.out_dim, j.at("b_msg").get<std::vector<double>>());
    l.w_upd = Tensor(l.in_dim + l.out_dim, l.out_dim, j.at("w_upd").get<std::vector<double>>());
    l.b_upd = Tensor(1, l.out_dim, j.at("b_upd").get<std::vector<double>>());
    return l;
}

inline nlohmann::json model_to_json(const IvgaeModel& m) {
    nlohmann::json j;
    j["version"] = IvgaeModel::kVersion;
    j["variables"] = m.var_names;
    j["latent_dim"] = m.latent_dim;
    j["hidden"] = m.hidden;
    j["init_seed"] = m.init_seed;
    j["self_loops"] = m.graph.self_loops;
    nlohmann::json adj = nlohmann::json::array();
    for (const auto& row : m.graph.adj) adj.push_back(std::vector<int>(row.begin(), row.end()));
    j["adjacency"] = adj;
    j["encoder"] = nlohmann::json::array();
    for (const auto& l : m.encoder) j["encoder"].push_back(layer_to_json(l));
    j["decoder"] = nlohmann::json::array();
    for (const auto& l : m.decoder) j["decoder"].push_back(layer_to_json(l));
    j["trained_regimes"] = nlohmann::json::array();
    for (const auto& r : m.trained_regimes) j["trained_regimes"].push_back(intervention_to_json(r));
    return j;
}

inline IvgaeModel model_from_json(const nlohmann::json& j) {
    if (j.at("version").get<int>() != IvgaeModel::kVersion)
        throw std::invalid_argument("unsupported checkpoint version");
    IvgaeModel m;
    m.var_names = j.at("variables").get<std::vector<std::string>>();
    m.latent_dim = j.at("latent_dim").get<int>();
    m.hidden = j.at("hidden").get<int>();
    m.init_seed = j.at("init_seed").get<uint64_t>();
    Adjacency adj;
    for (const auto& row : j.at("adjacency")) {
        std::vector<int> r = row.get<std::vector<int>>();
        adj.emplace_back(r.begin(), r.end());
    }
    m.graph = GraphSpec(std::move(adj), j.at("self_loops").get<bool>());
    for (const auto& l : j.at("encoder")) m.encoder.push_back(layer_from_json(l));
    for (const auto& l : j.at("decoder")) m.decoder.push_back(layer_from_json(l));
    for (const auto& r : j.at("trained_regimes")) m.trained_regimes.push_back(intervention_from_json(r));
    return m;
}

inline void save_model(const IvgaeModel& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path);
    out << model_to_json(m).dump(2) << "\n";
}

inline IvgaeModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open checkpoint " + path);
    nlohmann::json j;
    in >> j;
    return model_from_json(j);
}

}  // namespace cgnn
