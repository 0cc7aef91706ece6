#pragma once

// Two ways of combining the skeleton and RGB channels: project both
// penultimate features to a common width and classify their weighted sum,
// or take a convex combination of the two class-probability vectors.

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "habitmask/autodiff.hpp"
#include "habitmask/params.hpp"

namespace habitmask {

enum class FusionMode { Feature, Score };

std::string to_string(FusionMode mode);
// Accepts "feature" / "score"; throws ContractError otherwise.
FusionMode parse_fusion_mode(const std::string& text);

struct FusionConfig {
    FusionMode mode = FusionMode::Feature;
    double w_skel = 0.5;
    double w_rgb = 0.5;
    std::size_t dim = 64;
    // Feature mode only: learn the pair as softmax of two logits, starting
    // from (w_skel, w_rgb).
    bool learnable_weights = false;

    // Throws ContractError unless weights are non-negative and sum to 1.
    void validate() const;
    nlohmann::json to_json() const;
    static FusionConfig from_json(const nlohmann::json& j);
};

template <typename T>
class FeatureFusion {
public:
    FeatureFusion(std::size_t skel_dim, std::size_t rgb_dim, std::size_t num_classes, FusionConfig cfg,
                  std::uint64_t seed = 3);

    // f_s: (b, d_s), f_r: (b, d_r) -> logits (b, i)
    num::Var<T> forward(const num::Var<T>& f_s, const num::Var<T>& f_r) const;
    // Effective (w_skel, w_rgb) pair.
    std::pair<T, T> weights() const;

    const FusionConfig& config() const noexcept { return cfg_; }
    num::ParamStore<T>& params() noexcept { return params_; }
    const num::ParamStore<T>& params() const noexcept { return params_; }

private:
    FusionConfig cfg_;
    std::size_t skel_dim_, rgb_dim_;
    num::ParamStore<T> params_;
    num::Var<T> proj_s_, proj_r_, head_w_, head_b_, mix_;
};

// out = w_skel p_s + w_rgb p_r. Rows of both inputs must be probability
// vectors (non-negative, summing to 1 within 1e-6) or ContractError.
template <typename T>
num::Tensor<T> score_fuse(const num::Tensor<T>& p_s, const num::Tensor<T>& p_r, const FusionConfig& cfg);

}  // namespace habitmask
