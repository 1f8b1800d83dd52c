#pragma once

#include <stdexcept>
#include <vector>

#include "causalgnn/tensor.hpp"

namespace cgnn {

struct RmsPropConfig {
    double learning_rate{1e-3};
    double decay{0.99};
    double epsilon{1e-8};
};

/// RMSProp with per-parameter running squared-gradient averages. The state is
/// keyed one-to-one with the parameter list passed at construction.
class RmsProp {
public:
    RmsProp(const std::vector<Tensor*>& params, RmsPropConfig cfg = {}) : cfg_(cfg) {
        if (cfg.decay <= 0.0 || cfg.decay >= 1.0) throw std::invalid_argument("rmsprop decay must be in (0,1)");
        if (cfg.epsilon <= 0.0) throw std::invalid_argument("rmsprop epsilon must be positive");
        avg_sq_.reserve(params.size());
        for (const Tensor* p : params) avg_sq_.push_back(Tensor::zeros(p->rows, p->cols));
    }

    /// avg <- decay*avg + (1-decay)*g^2;  p <- p - lr * g / (sqrt(avg) + eps)
    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
        if (params.size() != avg_sq_.size() || grads.size() != avg_sq_.size())
            throw std::invalid_argument("rmsprop state/parameter count mismatch");
        for (size_t k = 0; k < params.size(); ++k) {
            Tensor& p = *params[k];
            const Tensor& g = grads[k];
            Tensor& a = avg_sq_[k];
            if (!p.same_shape(g) || !p.same_shape(a))
                throw std::invalid_argument("rmsprop gradient shape mismatch " + p.shape_str() + " vs " + g.shape_str());
            for (int i = 0; i < p.size(); ++i) {
                const double gi = g.data[i];
                a.data[i] = cfg_.decay * a.data[i] + (1.0 - cfg_.decay) * gi * gi;
                p.data[i] -= cfg_.learning_rate * gi / (std::sqrt(a.data[i]) + cfg_.epsilon);
            }
        }
    }

    const Tensor& avg_sq(size_t k) const { return avg_sq_.at(k); }
    const RmsPropConfig& config() const { return cfg_; }

private:
    RmsPropConfig cfg_;
    std::vector<Tensor> avg_sq_;
};

}  // namespace cgnn
