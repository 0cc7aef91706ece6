#pragma once

// Skeleton channel: graph convolution over the body graph, a GRU run along
// time for every joint, and joint self-attention that yields both the pooled
// clip feature and the per-joint weight vector used for masking.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "habitmask/autodiff.hpp"
#include "habitmask/datamodel.hpp"
#include "habitmask/params.hpp"

namespace habitmask {

struct BodyGraph {
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    num::Tensor<double> adjacency;   // (m, m) 0/1, no self-loops
    num::Tensor<double> normalized;  // D^-1/2 (A + I) D^-1/2
};

// 14-edge tree over the canonical 15-joint order.
BodyGraph build_adjacency();
// Normalized adjacency for an arbitrary edge list over m joints.
BodyGraph make_graph(std::size_t m, std::vector<std::pair<std::size_t, std::size_t>> edges);

// (L, 15, 3) tensor of one person's track: x and y mapped to [0, 1] inside
// that frame's bbox, third feature the joint confidence.
num::Tensor<float> skeleton_tensor(std::span<const PersonFrame> track);

namespace num {

// relu(A_hat X W) for every frame. x: (b, L, m, f_in), w: (f_in, f_out).
template <typename T>
Var<T> graph_conv(const Var<T>& x, const Tensor<T>& a_hat, const Var<T>& w);

// Gated recurrent cell shared across joints. Gate blocks are ordered
// (update z, reset r, candidate n); n = tanh(x Wn + bn + r * (h Un + bUn)).
template <typename T>
struct GruParams {
    Var<T> wx;  // (f, 3h)
    Var<T> bx;  // (3h)
    Var<T> uh;  // (h, 3h)
    Var<T> bh;  // (3h)
};

// h: (b, L, m, f) -> final hidden state (b, m, hidden) from a zero state.
template <typename T>
Var<T> temporal_recur(const Var<T>& h, const GruParams<T>& p);

template <typename T>
struct AttentionParams {
    Var<T> w;  // (hidden, a)
    Var<T> c;  // (a)
    Var<T> u;  // (a, 1)
};

template <typename T>
struct AttentionOutput {
    Var<T> weights;  // (b, m), rows sum to 1
    Var<T> pooled;   // (b, hidden)
};

// s_j = u . tanh(W h_j + c); weights = softmax_j(s); pooled = sum_j weights_j h_j.
template <typename T>
AttentionOutput<T> joint_attention(const Var<T>& hm, const AttentionParams<T>& p);

}  // namespace num

struct SkeletonNetConfig {
    std::size_t num_classes = 30;
    std::size_t gc1 = 16;
    std::size_t gc2 = 32;
    std::size_t hidden = 64;
    std::size_t attention = 32;
    std::uint64_t seed = 1;
    // Subtract each joint's mean x and y over the clip before anything else.
    bool center_time = true;
    // Per (joint, feature) input standardization, 45 values each, applied
    // as (x - mean) / std after centering. Empty means identity.
    std::vector<double> input_mean;
    std::vector<double> input_std;

    nlohmann::json to_json() const;
    static SkeletonNetConfig from_json(const nlohmann::json& j);
};

// Mean and standard deviation (floored at 1e-3) of each of x, y and conf,
// pooled over all joints and frames of a set of (L, 15, 3) tensors and
// repeated per joint. With center_time, x and y are centered per clip first.
std::pair<std::vector<double>, std::vector<double>> skeleton_input_stats(
    std::span<const num::Tensor<float>> skeletons, bool center_time = true);

// (b, L, 15, 3) -> same shape with x and y of every joint centered over L.
template <typename T>
num::Var<T> center_over_time(const num::Var<T>& batch);

template <typename T>
struct SkeletonOutput {
    num::Var<T> logits;   // (b, i)
    num::Var<T> feature;  // (b, hidden)
    num::Var<T> weights;  // (b, m)
};

template <typename T>
class SkeletonNet {
public:
    explicit SkeletonNet(SkeletonNetConfig cfg = {});

    // batch: (b, L, 15, 3)
    SkeletonOutput<T> forward(const num::Var<T>& batch) const;

    const SkeletonNetConfig& config() const noexcept { return cfg_; }
    num::ParamStore<T>& params() noexcept { return params_; }
    const num::ParamStore<T>& params() const noexcept { return params_; }
    const num::Tensor<T>& adjacency() const noexcept { return a_hat_; }

private:
    SkeletonNetConfig cfg_;
    num::ParamStore<T> params_;
    num::Tensor<T> a_hat_;
    num::Var<T> gc1_, gc2_, head_w_, head_b_;
    num::Var<T> in_scale_, in_shift_;  // undefined without input statistics
    num::GruParams<T> gru_;
    num::AttentionParams<T> attn_;
};

}  // namespace habitmask
