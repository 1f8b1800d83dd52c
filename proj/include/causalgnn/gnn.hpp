#pragma once

#include <stdexcept>
#include <vector>

#include "causalgnn/graph.hpp"
#include "causalgnn/random.hpp"
#include "causalgnn/tape.hpp"
#include "causalgnn/tensor.hpp"

namespace cgnn {

enum class Activation { identity, tanh };

/// One message-passing layer. The message map psi and the update map phi are
/// shared across all nodes:
///   m_i = act(W_msg d_j + b_msg) summed over the (intervened) neighborhood,
///   h_i = act(W_upd [d_i || m_i] + b_upd).
struct GnnLayerParams {
    int in_dim{0};
    int out_dim{0};
    Activation act{Activation::tanh};
    Tensor w_msg;  // [in_dim, out_dim]
    Tensor b_msg;  // [1, out_dim]
    Tensor w_upd;  // [in_dim + out_dim, out_dim]
    Tensor b_upd;  // [1, out_dim]

    static GnnLayerParams init(int in_dim, int out_dim, Activation act, Rng& rng, bool zero_init = false) {
        GnnLayerParams p;
        p.in_dim = in_dim;
        p.out_dim = out_dim;
        p.act = act;
        p.w_msg = Tensor::zeros(in_dim, out_dim);
        p.b_msg = Tensor::zeros(1, out_dim);
        p.w_upd = Tensor::zeros(in_dim + out_dim, out_dim);
        p.b_upd = Tensor::zeros(1, out_dim);
        if (!zero_init) {
            xavier(p.w_msg, rng);
            xavier(p.w_upd, rng);
        }
        return p;
    }

    std::vector<Tensor*> params() { return {&w_msg, &b_msg, &w_upd, &b_upd}; }
    std::vector<const Tensor*> params() const { return {&w_msg, &b_msg, &w_upd, &b_upd}; }

private:
    static void xavier(Tensor& w, Rng& rng) {
        const double bound = std::sqrt(6.0 / (w.rows + w.cols));
        for (double& v : w.data) v = rng.uniform(-bound, bound);
    }
};

/// Layer parameters registered on a tape for one forward/backward pass.
struct BoundLayer {
    const GnnLayerParams* meta;
    Tape::NodeId w_msg, b_msg, w_upd, b_upd;
};

inline BoundLayer bind_layer(Tape& tape, const GnnLayerParams& p) {
    return {&p, tape.param(p.w_msg), tape.param(p.b_msg), tape.param(p.w_upd), tape.param(p.b_upd)};
}

inline Tape::NodeId apply_activation(Tape& tape, Tape::NodeId x, Activation act) {
    return act == Activation::tanh ? tape.tanh(x) : x;
}

/// Forward pass of one layer over a batch of graphs that share the regime.
/// features holds `batch` consecutive d-row blocks; agg is the aggregation
/// matrix from GraphSpec::aggregation_matrix for the regime's targets.
inline Tape::NodeId layer_forward(Tape& tape, const BoundLayer& layer, Tape::NodeId features,
                                  Tape::NodeId agg_const, int node_count) {
    const Activation act = layer.meta->act;
    Tape::NodeId msg = apply_activation(tape, tape.add(tape.matmul(features, layer.w_msg), layer.b_msg), act);
    Tape::NodeId agg = tape.aggregate_blocks(agg_const, msg, node_count);
    Tape::NodeId comb = tape.concat_cols(features, agg);
    return apply_activation(tape, tape.add(tape.matmul(comb, layer.w_upd), layer.b_upd), act);
}

inline Tape::NodeId stack_forward(Tape& tape, const std::vector<BoundLayer>& layers, Tape::NodeId features,
                                  Tape::NodeId agg_const, int node_count) {
    Tape::NodeId h = features;
    for (const BoundLayer& l : layers) h = layer_forward(tape, l, h, agg_const, node_count);
    return h;
}

/// Plain (non-tape) convenience: one layer on d x f node features under
/// do(targets). Equivalent to the tape path.
inline Tensor layer_forward(const GnnLayerParams& p, const Tensor& features, const GraphSpec& graph,
                            const std::vector<uint8_t>& targets) {
    if (features.rows != graph.d)
        throw std::invalid_argument("feature rows " + features.shape_str() + " do not match graph size");
    if (features.cols != p.in_dim)
        throw std::invalid_argument("feature cols " + features.shape_str() + " do not match layer in_dim");
    Tape tape;
    BoundLayer bl = bind_layer(tape, p);
    Tape::NodeId f = tape.constant(features);
    Tape::NodeId s = tape.constant(graph.aggregation_matrix(targets));
    return tape.value(layer_forward(tape, bl, f, s, graph.d));
}

inline Tensor stack_forward(const std::vector<GnnLayerParams>& layers, const Tensor& features,
                            const GraphSpec& graph, const std::vector<uint8_t>& targets) {
    Tape tape;
    std::vector<BoundLayer> bound;
    bound.reserve(layers.size());
    for (const auto& l : layers) bound.push_back(bind_layer(tape, l));
    Tape::NodeId f = tape.constant(features);
    Tape::NodeId s = tape.constant(graph.aggregation_matrix(targets));
    return tape.value(stack_forward(tape, bound, f, s, graph.d));
}

}  // namespace cgnn
