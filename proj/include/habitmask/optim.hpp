#pragma once

#include <cmath>
#include <vector>

#include "habitmask/autodiff.hpp"

namespace habitmask::num {

struct SgdConfig {
    double learning_rate = 0.05;
    double momentum = 0.9;
    double weight_decay = 0.0;
    // Global gradient-norm clip; <= 0 disables.
    double clip_norm = 5.0;
    // Multiply the learning rate by `decay_factor` every `decay_every` epochs.
    int decay_every = 10;
    double decay_factor = 0.5;
};

// Momentum SGD: v <- mu v + g; p <- p - lr v.
template <typename T>
class SgdMomentum {
public:
    SgdMomentum(std::vector<Var<T>> params, SgdConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        for (const auto& p : params_) velocity_.emplace_back(p.dims());
    }

    double learning_rate_for_epoch(int epoch) const {
        if (cfg_.decay_every <= 0) return cfg_.learning_rate;
        return cfg_.learning_rate * std::pow(cfg_.decay_factor, epoch / cfg_.decay_every);
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step(double lr) {
        double scale = 1.0;
        if (cfg_.clip_norm > 0) {
            double sq = 0;
            for (const auto& p : params_)
                for (T g : p.grad().data()) sq += double(g) * double(g);
            const double norm = std::sqrt(sq);
            if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
        }
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& value = params_[i].mutable_value();
            const auto& grad = params_[i].grad();
            auto& vel = velocity_[i];
            for (std::size_t k = 0; k < value.size(); ++k) {
                const T g = static_cast<T>(scale) * grad[k] + static_cast<T>(cfg_.weight_decay) * value[k];
                vel[k] = static_cast<T>(cfg_.momentum) * vel[k] + g;
                value[k] -= static_cast<T>(lr) * vel[k];
            }
        }
    }

private:
    std::vector<Var<T>> params_;
    std::vector<Tensor<T>> velocity_;
    SgdConfig cfg_;
};

}  // namespace habitmask::num
