#pragma once

// RGB appearance channel: two 3D-convolutional pathways, one over every
// frame with narrow channels and one over a temporally subsampled stream
// with wider channels, pooled and concatenated before a linear head.

#include <array>
#include <cstdint>

#include <nlohmann/json.hpp>

#include "habitmask/autodiff.hpp"
#include "habitmask/params.hpp"

namespace habitmask {

// Keeps frames 0, stride, 2*stride, ... of a (c, L, w, h) clip.
// Throws ContractError unless stride divides L.
template <typename T>
num::Tensor<T> temporal_subsample(const num::Tensor<T>& clip, std::size_t stride);

namespace num {
// Same selection along axis 2 of a (b, c, L, w, h) Var.
template <typename T>
Var<T> temporal_subsample(const Var<T>& batch, std::size_t stride);
}  // namespace num

struct RgbNetConfig {
    std::size_t num_classes = 30;
    std::size_t channels = 3;
    // Spatial patch size of the first (strided) convolution in both pathways.
    std::size_t patch = 4;
    std::size_t full_stride = 1;
    std::size_t sub_stride = 4;
    std::array<std::size_t, 2> full_widths{8, 16};
    std::array<std::size_t, 2> sub_widths{16, 32};
    // Pixels enter as (x - input_mean) / input_std.
    double input_mean = 0.5;
    double input_std = 0.25;
    std::uint64_t seed = 2;

    std::size_t feature_dim() const { return full_widths[1] + sub_widths[1]; }
    nlohmann::json to_json() const;
    static RgbNetConfig from_json(const nlohmann::json& j);
};

template <typename T>
struct RgbOutput {
    num::Var<T> logits;   // (b, i)
    num::Var<T> feature;  // (b, feature_dim)
};

template <typename T>
class RgbNet {
public:
    explicit RgbNet(RgbNetConfig cfg = {});

    // batch: (b, c, L, w, h) with values in [0, 1].
    RgbOutput<T> forward(const num::Var<T>& batch) const;

    const RgbNetConfig& config() const noexcept { return cfg_; }
    num::ParamStore<T>& params() noexcept { return params_; }
    const num::ParamStore<T>& params() const noexcept { return params_; }

private:
    struct Pathway {
        num::Var<T> w1, b1, w2, b2;
    };
    num::Var<T> run_pathway(const num::Var<T>& x, const Pathway& p, bool temporal) const;

    RgbNetConfig cfg_;
    num::ParamStore<T> params_;
    Pathway full_, sub_;
    num::Var<T> head_w_, head_b_;
};

}  // namespace habitmask
