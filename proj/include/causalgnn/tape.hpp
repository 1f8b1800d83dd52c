#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "causalgnn/tensor.hpp"

namespace cgnn {

inline double sigmoid_stable(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus_stable(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

/// Reverse-mode autodiff over Tensor values. The tape is dynamic: it is built
/// fresh for every forward pass and discarded after backward(). Every forward
/// op validates shapes and rejects non-finite results with numeric_error.
class Tape {
public:
    using NodeId = int;

    enum class Op {
        leaf,
        matmul,
        add,
        sub,
        mul,
        scale,
        sum,
        sigmoid,
        tanh_fn,
        softplus,
        exp_fn,
        log_fn,
        clamp,
        concat_cols,
        slice_cols,
        aggregate_blocks,
        kl_std_normal,
        bernoulli_log_lik,
    };

    /// Leaf with no gradient (inputs, masks, aggregation matrices).
    NodeId constant(Tensor v) { return push(Op::leaf, std::move(v), -1, -1, -1, false); }

    /// Leaf whose gradient is accumulated by backward().
    NodeId param(Tensor v) { return push(Op::leaf, std::move(v), -1, -1, -1, true); }

    NodeId matmul(NodeId a, NodeId b) {
        Tensor out = matmul_plain(val(a), val(b));
        return push(Op::matmul, std::move(out), a, b);
    }

    NodeId add(NodeId a, NodeId b) { return binary(Op::add, a, b); }
    NodeId sub(NodeId a, NodeId b) { return binary(Op::sub, a, b); }
    NodeId mul(NodeId a, NodeId b) { return binary(Op::mul, a, b); }

    NodeId scale(NodeId a, double c) {
        Tensor out = val(a);
        for (double& v : out.data) v *= c;
        NodeId id = push(Op::scale, std::move(out), a);
        nodes_[id].c0 = c;
        return id;
    }

    /// Sum of all elements, producing a 1x1 scalar.
    NodeId sum(NodeId a) {
        double s = 0.0;
        for (double v : val(a).data) s += v;
        return push(Op::sum, Tensor::scalar(s), a);
    }

    NodeId sigmoid(NodeId a) { return unary(Op::sigmoid, a, [](double x) { return sigmoid_stable(x); }); }
    NodeId tanh(NodeId a) { return unary(Op::tanh_fn, a, [](double x) { return std::tanh(x); }); }
    NodeId softplus(NodeId a) { return unary(Op::softplus, a, [](double x) { return softplus_stable(x); }); }
    NodeId exp(NodeId a) { return unary(Op::exp_fn, a, [](double x) { return std::exp(x); }); }
    NodeId log(NodeId a) { return unary(Op::log_fn, a, [](double x) { return std::log(x); }); }

    /// Elementwise clip to [lo, hi]. Elements actually clipped are counted in
    /// clamp_events(); the gradient is zero outside the open interval.
    NodeId clamp(NodeId a, double lo, double hi) {
        Tensor out = val(a);
        for (double& v : out.data) {
            if (v < lo) {
                v = lo;
                ++clamp_events_;
            } else if (v > hi) {
                v = hi;
                ++clamp_events_;
            }
        }
        NodeId id = push(Op::clamp, std::move(out), a);
        nodes_[id].c0 = lo;
        nodes_[id].c1 = hi;
        return id;
    }

    NodeId concat_cols(NodeId a, NodeId b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.rows != tb.rows)
            throw std::invalid_argument("concat_cols row mismatch " + ta.shape_str() + " vs " + tb.shape_str());
        Tensor out(ta.rows, ta.cols + tb.cols);
        for (int i = 0; i < ta.rows; ++i) {
            for (int j = 0; j < ta.cols; ++j) out.at(i, j) = ta.at(i, j);
            for (int j = 0; j < tb.cols; ++j) out.at(i, ta.cols + j) = tb.at(i, j);
        }
        return push(Op::concat_cols, std::move(out), a, b);
    }

    /// Columns [begin, end) of a.
    NodeId slice_cols(NodeId a, int begin, int end) {
        const Tensor& ta = val(a);
        if (begin < 0 || end > ta.cols || begin >= end)
            throw std::invalid_argument("slice_cols range invalid for " + ta.shape_str());
        Tensor out(ta.rows, end - begin);
        for (int i = 0; i < ta.rows; ++i)
            for (int j = begin; j < end; ++j) out.at(i, j - begin) = ta.at(i, j);
        NodeId id = push(Op::slice_cols, std::move(out), a);
        nodes_[id].i0 = begin;
        nodes_[id].i1 = end;
        return id;
    }

    /// Applies the same small aggregation matrix S (d x d, constant) to each
    /// consecutive d-row block of x. Used for per-graph message aggregation
    /// over a batch that shares one regime.
    NodeId aggregate_blocks(NodeId s_const, NodeId x, int block_rows) {
        const Tensor& s = val(s_const);
        const Tensor& tx = val(x);
        if (s.rows != block_rows || s.cols != block_rows)
            throw std::invalid_argument("aggregation matrix must be " + std::to_string(block_rows) + " square, got " + s.shape_str());
        if (tx.rows % block_rows != 0)
            throw std::invalid_argument("row count " + tx.shape_str() + " not a multiple of block size");
        Tensor out(tx.rows, tx.cols);
        const int blocks = tx.rows / block_rows;
        for (int b = 0; b < blocks; ++b)
            block_matmul(s, tx, out, b * block_rows, block_rows, false);
        NodeId id = push(Op::aggregate_blocks, std::move(out), s_const, x);
        nodes_[id].i0 = block_rows;
        return id;
    }

    /// 0.5 * sum(exp(lv) + mu^2 - 1 - lv): KL(N(mu, diag e^lv) || N(0, I)).
    NodeId kl_std_normal(NodeId mu, NodeId log_var) {
        const Tensor& m = val(mu);
        const Tensor& lv = val(log_var);
        if (!m.same_shape(lv))
            throw std::invalid_argument("kl_std_normal shape mismatch " + m.shape_str() + " vs " + lv.shape_str());
        double s = 0.0;
        for (int i = 0; i < m.size(); ++i)
            s += std::exp(lv.data[i]) + m.data[i] * m.data[i] - 1.0 - lv.data[i];
        return push(Op::kl_std_normal, Tensor::scalar(0.5 * s), mu, log_var);
    }

    /// sum w * (t*log sigmoid(x) + (1-t)*log(1-sigmoid(x))), computed from
    /// logits via t*x - softplus(x). targets must be 0/1; weights optional.
    NodeId bernoulli_log_lik(NodeId logits, NodeId targets, NodeId weights = -1) {
        const Tensor& x = val(logits);
        const Tensor& t = val(targets);
        if (!x.same_shape(t))
            throw std::invalid_argument("bernoulli_log_lik shape mismatch " + x.shape_str() + " vs " + t.shape_str());
        const Tensor* w = nullptr;
        if (weights >= 0) {
            w = &val(weights);
            if (!x.same_shape(*w))
                throw std::invalid_argument("bernoulli_log_lik weight shape mismatch " + x.shape_str() + " vs " + w->shape_str());
        }
        double s = 0.0;
        for (int i = 0; i < x.size(); ++i) {
            const double ti = t.data[i];
            if (ti != 0.0 && ti != 1.0)
                throw std::invalid_argument("bernoulli_log_lik target not binary: " + std::to_string(ti));
            const double term = ti * x.data[i] - softplus_stable(x.data[i]);
            s += w ? w->data[i] * term : term;
        }
        return push(Op::bernoulli_log_lik, Tensor::scalar(s), logits, targets, weights);
    }

    const Tensor& value(NodeId id) const { return nodes_[id].value; }

    /// Gradient of the last backward() loss w.r.t. node id; zeros if the node
    /// was unreachable from the loss.
    const Tensor& grad(NodeId id) {
        Node& n = nodes_[id];
        if (n.grad.size() == 0) n.grad = Tensor::zeros(n.value.rows, n.value.cols);
        return n.grad;
    }

    /// Reverse pass from a scalar loss. Accumulates into param leaves.
    void backward(NodeId loss) {
        if (!nodes_[loss].value.is_scalar())
            throw std::invalid_argument("backward requires a scalar loss, got " + nodes_[loss].value.shape_str());
        nodes_[loss].grad = Tensor::scalar(1.0);
        for (NodeId id = loss; id >= 0; --id) {
            Node& n = nodes_[id];
            if (n.grad.size() == 0 || n.op == Op::leaf) continue;
            propagate(n);
        }
        for (NodeId id = 0; id <= loss; ++id)
            if (nodes_[id].needs_grad && nodes_[id].grad.size() != 0)
                check_finite(nodes_[id].grad, "backward");
    }

    long clamp_events() const { return clamp_events_; }
    size_t size() const { return nodes_.size(); }

    void reset() {
        nodes_.clear();
        clamp_events_ = 0;
    }

private:
    struct Node {
        Op op;
        int a{-1}, b{-1}, c{-1};
        Tensor value;
        Tensor grad;
        bool needs_grad{false};
        double c0{0.0}, c1{0.0};
        int i0{0}, i1{0};
    };

    std::vector<Node> nodes_;
    long clamp_events_{0};

    const Tensor& val(NodeId id) const {
        if (id < 0 || id >= static_cast<int>(nodes_.size()))
            throw std::invalid_argument("invalid tape node id");
        return nodes_[id].value;
    }

    NodeId push(Op op, Tensor value, int a, int b = -1, int c = -1, bool force_grad = false) {
        if (op != Op::leaf) check_finite(value, op_name(op));
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.c = c;
        n.value = std::move(value);
        n.needs_grad = force_grad || (a >= 0 && nodes_[a].needs_grad) || (b >= 0 && nodes_[b].needs_grad) ||
                       (c >= 0 && nodes_[c].needs_grad);
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size()) - 1;
    }

    template <class F>
    NodeId unary(Op op, NodeId a, F f) {
        Tensor out = val(a);
        for (double& v : out.data) v = f(v);
        return push(op, std::move(out), a);
    }

    enum class Broadcast { same, row, scalar };

    Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* opname) const {
        if (a.same_shape(b)) return Broadcast::same;
        if (b.rows == 1 && b.cols == a.cols) return Broadcast::row;
        if (b.rows == 1 && b.cols == 1) return Broadcast::scalar;
        throw std::invalid_argument(std::string(opname) + " shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }

    NodeId binary(Op op, NodeId a, NodeId b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        const Broadcast bc = broadcast_kind(ta, tb, op_name(op));
        Tensor out(ta.rows, ta.cols);
        for (int i = 0; i < ta.rows; ++i) {
            for (int j = 0; j < ta.cols; ++j) {
                const double bv = bc == Broadcast::same ? tb.at(i, j) : (bc == Broadcast::row ? tb.at(0, j) : tb.data[0]);
                const double av = ta.at(i, j);
                out.at(i, j) = op == Op::add ? av + bv : (op == Op::sub ? av - bv : av * bv);
            }
        }
        return push(op, std::move(out), a, b);
    }

    void accumulate(NodeId id, const Tensor& g) {
        if (id < 0 || !nodes_[id].needs_grad) return;
        Node& n = nodes_[id];
        if (n.grad.size() == 0) n.grad = Tensor::zeros(n.value.rows, n.value.cols);
        for (int i = 0; i < g.size(); ++i) n.grad.data[i] += g.data[i];
    }

    /// Add g into the (possibly broadcast) operand id, reducing over the
    /// broadcast dimensions.
    void accumulate_reduced(NodeId id, const Tensor& g) {
        if (id < 0) return;
        Node& n = nodes_[id];
        if (!n.needs_grad) return;
        if (n.grad.size() == 0) n.grad = Tensor::zeros(n.value.rows, n.value.cols);
        if (n.value.same_shape(g)) {
            for (int i = 0; i < g.size(); ++i) n.grad.data[i] += g.data[i];
        } else if (n.value.rows == 1 && n.value.cols == g.cols) {
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < g.cols; ++j) n.grad.data[j] += g.at(i, j);
        } else {  // scalar
            double s = 0.0;
            for (double v : g.data) s += v;
            n.grad.data[0] += s;
        }
    }

    void propagate(Node& n) {
        const Tensor& g = n.grad;
        switch (n.op) {
            case Op::leaf:
                break;
            case Op::matmul: {
                if (wants(n.a)) accumulate(n.a, matmul_a_bt(g, nodes_[n.b].value));
                if (wants(n.b)) accumulate(n.b, matmul_at_b(nodes_[n.a].value, g));
                break;
            }
            case Op::add: {
                if (wants(n.a)) accumulate(n.a, g);
                if (wants(n.b)) accumulate_reduced(n.b, g);
                break;
            }
            case Op::sub: {
                if (wants(n.a)) accumulate(n.a, g);
                if (wants(n.b)) {
                    Tensor neg = g;
                    for (double& v : neg.data) v = -v;
                    accumulate_reduced(n.b, neg);
                }
                break;
            }
            case Op::mul: {
                const Tensor& ta = nodes_[n.a].value;
                const Tensor& tb = nodes_[n.b].value;
                if (wants(n.a)) {
                    Tensor ga(ta.rows, ta.cols);
                    for (int i = 0; i < ta.rows; ++i)
                        for (int j = 0; j < ta.cols; ++j) {
                            const double bv = tb.same_shape(ta) ? tb.at(i, j)
                                              : (tb.rows == 1 && tb.cols == ta.cols) ? tb.at(0, j)
                                                                                     : tb.data[0];
                            ga.at(i, j) = g.at(i, j) * bv;
                        }
                    accumulate(n.a, ga);
                }
                if (wants(n.b)) {
                    Tensor gb(ta.rows, ta.cols);
                    for (int i = 0; i < ta.size(); ++i) gb.data[i] = g.data[i] * ta.data[i];
                    accumulate_reduced(n.b, gb);
                }
                break;
            }
            case Op::scale: {
                if (wants(n.a)) {
                    Tensor ga = g;
                    for (double& v : ga.data) v *= n.c0;
                    accumulate(n.a, ga);
                }
                break;
            }
            case Op::sum: {
                if (wants(n.a)) {
                    const Tensor& ta = nodes_[n.a].value;
                    accumulate(n.a, Tensor::full(ta.rows, ta.cols, g.data[0]));
                }
                break;
            }
            case Op::sigmoid: {
                if (wants(n.a)) {
                    Tensor ga = g;
                    for (int i = 0; i < ga.size(); ++i) {
                        const double s = n.value.data[i];
                        ga.data[i] *= s * (1.0 - s);
                    }
                    accumulate(n.a, ga);
                }
                break;
            }
            case Op::tanh_fn: {
                if (wants(n.a)) {
                    Tensor ga = g;
                    for (int i = 0; i < ga.size(); ++i) {
                        const double t = n.value.data[i];
                        ga.data[i] *= 1.0 - t * t;
                    }
                    accumulate(n.a, ga);
                }
                break;
            }
            case Op::softplus: {
                if (wants(n.a)) {
                    const Tensor& x = nodes_[n.a].value;
                    Tensor ga = g;
                    for (int i = 0; i < ga.size(); ++i) ga.data[i] *= sigmoid_stable(x.data[i]);
                    accumulate(n.a, ga);
                }
                break;
            }
            case Op::exp_fn: {
                if (wants(n.a)) {
                    Tensor ga = g;
                    for (int i = 0; i < ga.size(); ++i) ga.data[i] *= n.value.data[i];
                    accumulate(n.a, ga);
                }
                break;
            }
            case Op::log_fn: {
                if (wants(n.a)) {
                    const Tensor& x = nodes_[n.a].value;
                    Tensor ga = g;
                    for (int i = 0; i < ga.size(); ++i) ga.data[i] /= x.data[i];
                    accumulate(n.a, ga);
                }
                break;
            }
            case Op::clamp: {
                if (wants(n.a)) {
                    const Tensor& x = nodes_[n.a].value;
                    Tensor ga = g;
                    for (int i = 0; i < ga.size(); ++i)
                        if (x.data[i] <= n.c0 || x.data[i] >= n.c1) ga.data[i] = 0.0;
                    accumulate(n.a, ga);
                }
                break;
            }
            case Op::concat_cols: {
                const Tensor& ta = nodes_[n.a].value;
                const Tensor& tb = nodes_[n.b].value;
                if (wants(n.a)) {
                    Tensor ga(ta.rows, ta.cols);
                    for (int i = 0; i < ta.rows; ++i)
                        for (int j = 0; j < ta.cols; ++j) ga.at(i, j) = g.at(i, j);
                    accumulate(n.a, ga);
                }
                if (wants(n.b)) {
                    Tensor gb(tb.rows, tb.cols);
                    for (int i = 0; i < tb.rows; ++i)
                        for (int j = 0; j < tb.cols; ++j) gb.at(i, j) = g.at(i, ta.cols + j);
                    accumulate(n.b, gb);
                }
                break;
            }
            case Op::slice_cols: {
                if (wants(n.a)) {
                    const Tensor& ta = nodes_[n.a].value;
                    Tensor ga = Tensor::zeros(ta.rows, ta.cols);
                    for (int i = 0; i < g.rows; ++i)
                        for (int j = 0; j < g.cols; ++j) ga.at(i, n.i0 + j) = g.at(i, j);
                    accumulate(n.a, ga);
                }
                break;
            }
            case Op::aggregate_blocks: {
                if (wants(n.b)) {
                    const Tensor& s = nodes_[n.a].value;
                    Tensor gx = Tensor::zeros(g.rows, g.cols);
                    const int blocks = g.rows / n.i0;
                    for (int b = 0; b < blocks; ++b)
                        block_matmul(s, g, gx, b * n.i0, n.i0, true);
                    accumulate(n.b, gx);
                }
                break;
            }
            case Op::kl_std_normal: {
                const double gs = g.data[0];
                const Tensor& mu = nodes_[n.a].value;
                const Tensor& lv = nodes_[n.b].value;
                if (wants(n.a)) {
                    Tensor gm = mu;
                    for (double& v : gm.data) v *= gs;
                    accumulate(n.a, gm);
                }
                if (wants(n.b)) {
                    Tensor gl(lv.rows, lv.cols);
                    for (int i = 0; i < lv.size(); ++i) gl.data[i] = gs * 0.5 * (std::exp(lv.data[i]) - 1.0);
                    accumulate(n.b, gl);
                }
                break;
            }
            case Op::bernoulli_log_lik: {
                if (wants(n.a)) {
                    const double gs = g.data[0];
                    const Tensor& x = nodes_[n.a].value;
                    const Tensor& t = nodes_[n.b].value;
                    const Tensor* w = n.c >= 0 ? &nodes_[n.c].value : nullptr;
                    Tensor gx(x.rows, x.cols);
                    for (int i = 0; i < x.size(); ++i) {
                        const double wi = w ? w->data[i] : 1.0;
                        gx.data[i] = gs * wi * (t.data[i] - sigmoid_stable(x.data[i]));
                    }
                    accumulate(n.a, gx);
                }
                break;
            }
        }
    }

    bool wants(NodeId id) const { return id >= 0 && nodes_[id].needs_grad; }

    /// y-rows [row0, row0+d) = S * x-rows [row0, row0+d)  (transposed=false)
    /// or S^T * ...                                        (transposed=true, accumulating)
    static void block_matmul(const Tensor& s, const Tensor& x, Tensor& y, int row0, int d, bool transposed) {
        const int f = x.cols;
        for (int i = 0; i < d; ++i) {
            for (int j = 0; j < d; ++j) {
                const double sv = transposed ? s.at(j, i) : s.at(i, j);
                if (sv == 0.0) continue;
                const double* xr = &x.data[static_cast<size_t>(row0 + j) * f];
                double* yr = &y.data[static_cast<size_t>(row0 + i) * f];
                for (int k = 0; k < f; ++k) yr[k] += sv * xr[k];
            }
        }
    }

    static const char* op_name(Op op) {
        switch (op) {
            case Op::leaf: return "leaf";
            case Op::matmul: return "matmul";
            case Op::add: return "add";
            case Op::sub: return "sub";
            case Op::mul: return "mul";
            case Op::scale: return "scale";
            case Op::sum: return "sum";
            case Op::sigmoid: return "sigmoid";
            case Op::tanh_fn: return "tanh";
            case Op::softplus: return "softplus";
            case Op::exp_fn: return "exp";
            case Op::log_fn: return "log";
            case Op::clamp: return "clamp";
            case Op::concat_cols: return "concat_cols";
            case Op::slice_cols: return "slice_cols";
            case Op::aggregate_blocks: return "aggregate_blocks";
            case Op::kl_std_normal: return "kl_std_normal";
            case Op::bernoulli_log_lik: return "bernoulli_log_lik";
        }
        return "?";
    }
};

}  // namespace cgnn
