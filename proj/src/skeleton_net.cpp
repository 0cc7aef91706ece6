#include "habitmask/skeleton_net.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "habitmask/errors.hpp"

namespace habitmask {

BodyGraph make_graph(std::size_t m, std::vector<std::pair<std::size_t, std::size_t>> edges) {
    BodyGraph g;
    g.adjacency = num::Tensor<double>({m, m});
    for (const auto& [a, b] : edges) {
        if (a >= m || b >= m || a == b) throw InvalidGeometry("body graph edge out of range or self-loop");
        g.adjacency.at(a, b) = 1.0;
        g.adjacency.at(b, a) = 1.0;
    }
    g.edges = std::move(edges);
    std::vector<double> inv_sqrt_deg(m);
    for (std::size_t i = 0; i < m; ++i) {
        double deg = 1.0;
        for (std::size_t j = 0; j < m; ++j) deg += g.adjacency.at(i, j);
        inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
    }
    g.normalized = num::Tensor<double>({m, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const double a = g.adjacency.at(i, j) + (i == j ? 1.0 : 0.0);
            g.normalized.at(i, j) = inv_sqrt_deg[i] * a * inv_sqrt_deg[j];
        }
    return g;
}

BodyGraph build_adjacency() {
    return make_graph(kNumJoints, {{0, 1}, {1, 2}, {1, 3}, {1, 4}, {3, 5}, {5, 7}, {4, 6}, {6, 8},
                                   {1, 9}, {1, 10}, {9, 11}, {11, 13}, {10, 12}, {12, 14}});
}

num::Tensor<float> skeleton_tensor(std::span<const PersonFrame> track) {
    if (track.empty()) throw EmptyInput("skeleton_tensor: empty track");
    num::Tensor<float> out({track.size(), kNumJoints, 3});
    for (std::size_t t = 0; t < track.size(); ++t) {
        const BBox& b = track[t].bbox;
        if (!b.valid()) throw InvalidGeometry("skeleton_tensor: degenerate bbox at frame " + std::to_string(t));
        for (std::size_t j = 0; j < kNumJoints; ++j) {
            const Joint& jt = track[t].skeleton.joints[j];
            out.at(t, j, 0) = static_cast<float>(std::clamp((jt.x - b.x_min) / b.width(), 0.0, 1.0));
            out.at(t, j, 1) = static_cast<float>(std::clamp((jt.y - b.y_min) / b.height(), 0.0, 1.0));
            out.at(t, j, 2) = static_cast<float>(jt.conf);
        }
    }
    return out;
}

namespace num {

template <typename T>
Var<T> graph_conv(const Var<T>& x, const Tensor<T>& a_hat, const Var<T>& w) {
    const Shape& xd = x.dims();
    if (xd.size() != 4 || w.value().rank() != 2 || w.dims()[0] != xd[3]) {
        throw ShapeError("graph_conv: input " + shape_str(xd) + " weight " + shape_str(w.dims()));
    }
    const std::size_t rows = xd[0] * xd[1] * xd[2];
    const Var<T> mixed = reshape(joint_mix(x, a_hat), {rows, xd[3]});
    return relu(reshape(matmul(mixed, w), {xd[0], xd[1], xd[2], w.dims()[1]}));
}

template <typename T>
Var<T> temporal_recur(const Var<T>& h, const GruParams<T>& p) {
    const Shape& hd = h.dims();
    if (hd.size() != 4 || hd[1] == 0) throw ShapeError("temporal_recur: input " + shape_str(hd));
    const std::size_t b = hd[0], L = hd[1], m = hd[2], f = hd[3];
    if (p.wx.value().rank() != 2 || p.wx.dims()[0] != f || p.wx.dims()[1] % 3 != 0) {
        throw ShapeError("temporal_recur: wx " + shape_str(p.wx.dims()) + " for features " + std::to_string(f));
    }
    const std::size_t hid = p.wx.dims()[1] / 3;
    if (p.uh.dims() != Shape{hid, 3 * hid} || p.bx.dims() != Shape{3 * hid} || p.bh.dims() != Shape{3 * hid}) {
        throw ShapeError("temporal_recur: recurrent parameter shapes disagree with hidden size " + std::to_string(hid));
    }
    // Input projections for all steps at once: (b, L, m, 3h).
    const Var<T> gx = reshape(add_bias(matmul(reshape(h, {b * L * m, f}), p.wx), p.bx), {b, L, m * 3 * hid});
    Var<T> state = Var<T>::constant(Tensor<T>({b * m, hid}));
    for (std::size_t t = 0; t < L; ++t) {
        const Var<T> gxt = reshape(slice(gx, 1, t, t + 1), {b * m, 3 * hid});
        const Var<T> gh = add_bias(matmul(state, p.uh), p.bh);
        const Var<T> zr = sigmoid(add(slice(gxt, 1, 0, 2 * hid), slice(gh, 1, 0, 2 * hid)));
        const Var<T> z = slice(zr, 1, 0, hid);
        const Var<T> r = slice(zr, 1, hid, 2 * hid);
        const Var<T> n = tanh(add(slice(gxt, 1, 2 * hid, 3 * hid), mul(r, slice(gh, 1, 2 * hid, 3 * hid))));
        // h' = (1 - z) n + z h = n + z (h - n)
        state = add(n, mul(z, sub(state, n)));
    }
    return reshape(state, {b, m, hid});
}

template <typename T>
AttentionOutput<T> joint_attention(const Var<T>& hm, const AttentionParams<T>& p) {
    const Shape& hd = hm.dims();
    if (hd.size() != 3) throw ShapeError("joint_attention: input " + shape_str(hd));
    const std::size_t b = hd[0], m = hd[1], hid = hd[2];
    const Var<T> proj = tanh(add_bias(matmul(reshape(hm, {b * m, hid}), p.w), p.c));
    const Var<T> scores = reshape(matmul(proj, p.u), {b, m});
    AttentionOutput<T> out;
    out.weights = softmax(scores, 1);
    out.pooled = weighted_sum(out.weights, hm);
    return out;
}

template Var<float> graph_conv(const Var<float>&, const Tensor<float>&, const Var<float>&);
template Var<double> graph_conv(const Var<double>&, const Tensor<double>&, const Var<double>&);
template Var<float> temporal_recur(const Var<float>&, const GruParams<float>&);
template Var<double> temporal_recur(const Var<double>&, const GruParams<double>&);
template AttentionOutput<float> joint_attention(const Var<float>&, const AttentionParams<float>&);
template AttentionOutput<double> joint_attention(const Var<double>&, const AttentionParams<double>&);

}  // namespace num

nlohmann::json SkeletonNetConfig::to_json() const {
    return {{"num_classes", num_classes}, {"gc1", gc1},           {"gc2", gc2},
            {"hidden", hidden},           {"attention", attention}, {"seed", seed},
            {"center_time", center_time}, {"input_mean", input_mean},   {"input_std", input_std}};
}

SkeletonNetConfig SkeletonNetConfig::from_json(const nlohmann::json& j) {
    SkeletonNetConfig c;
    c.num_classes = j.value("num_classes", c.num_classes);
    c.gc1 = j.value("gc1", c.gc1);
    c.gc2 = j.value("gc2", c.gc2);
    c.hidden = j.value("hidden", c.hidden);
    c.attention = j.value("attention", c.attention);
    c.seed = j.value("seed", c.seed);
    c.center_time = j.value("center_time", c.center_time);
    c.input_mean = j.value("input_mean", c.input_mean);
    c.input_std = j.value("input_std", c.input_std);
    return c;
}

std::pair<std::vector<double>, std::vector<double>> skeleton_input_stats(
    std::span<const num::Tensor<float>> skeletons, bool center_time) {
    // Pooled over joints so that position still tells joints apart.
    std::array<double, 3> sum{}, sq{};
    std::size_t count = 0;
    for (const auto& s : skeletons) {
        if (s.rank() != 3 || s.dim(1) != kNumJoints || s.dim(2) != 3) {
            throw ShapeError("skeleton_input_stats: expected (L, 15, 3), got " + num::shape_str(s.dims()));
        }
        const std::size_t frames = s.dim(0);
        std::array<double, kNumJoints * 3> offset{};
        if (center_time && frames > 0) {
            for (std::size_t t = 0; t < frames; ++t)
                for (std::size_t k = 0; k < kNumJoints * 3; ++k)
                    if (k % 3 != 2) offset[k] += s[t * kNumJoints * 3 + k];
            for (auto& o : offset) o /= double(frames);
        }
        for (std::size_t r = 0; r < frames * kNumJoints; ++r) {
            for (std::size_t f = 0; f < 3; ++f) {
                const double v = s[r * 3 + f] - offset[(r % kNumJoints) * 3 + f];
                sum[f] += v;
                sq[f] += v * v;
            }
            ++count;
        }
    }
    if (count == 0) throw EmptyInput("skeleton_input_stats: no frames");
    std::vector<double> mean(kNumJoints * 3), sd(kNumJoints * 3);
    for (std::size_t f = 0; f < 3; ++f) {
        const double m = sum[f] / double(count);
        const double d = std::max(1e-3, std::sqrt(std::max(0.0, sq[f] / double(count) - m * m)));
        for (std::size_t j = 0; j < kNumJoints; ++j) {
            mean[j * 3 + f] = m;
            sd[j * 3 + f] = d;
        }
    }
    return {mean, sd};
}

template <typename T>
num::Var<T> center_over_time(const num::Var<T>& batch) {
    const num::Shape& d = batch.dims();
    if (d.size() != 4 || d[2] != kNumJoints || d[3] != 3) {
        throw ShapeError("center_over_time: expected (b, L, 15, 3), got " + num::shape_str(d));
    }
    const std::size_t b = d[0], frames = d[1];
    num::Tensor<T> c({frames, frames});
    for (std::size_t i = 0; i < frames; ++i)
        for (std::size_t j = 0; j < frames; ++j) c.at(i, j) = static_cast<T>((i == j ? 1.0 : 0.0) - 1.0 / double(frames));
    // Time takes the joint-axis slot of joint_mix.
    const num::Var<T> xy = num::reshape(num::slice(batch, 3, 0, 2), {b, 1, frames, kNumJoints * 2});
    const num::Var<T> centered = num::reshape(num::joint_mix(xy, c), {b, frames, kNumJoints, 2});
    return num::concat<T>({centered, num::slice(batch, 3, 2, 3)}, 3);
}

template num::Var<float> center_over_time(const num::Var<float>&);
template num::Var<double> center_over_time(const num::Var<double>&);

template <typename T>
SkeletonNet<T>::SkeletonNet(SkeletonNetConfig cfg) : cfg_(cfg) {
    if (cfg_.num_classes < 2 || cfg_.gc1 == 0 || cfg_.gc2 == 0 || cfg_.hidden == 0 || cfg_.attention == 0) {
        throw ContractError("skeleton net: invalid widths");
    }
    a_hat_ = build_adjacency().normalized.cast<T>();
    std::mt19937_64 rng(cfg_.seed);
    const std::size_t h = cfg_.hidden;
    gc1_ = params_.add("skel.gc1.w", num::he_uniform<T>({3, cfg_.gc1}, 3, rng));
    gc2_ = params_.add("skel.gc2.w", num::he_uniform<T>({cfg_.gc1, cfg_.gc2}, cfg_.gc1, rng));
    gru_.wx = params_.add("skel.gru.wx", num::glorot_uniform<T>({cfg_.gc2, 3 * h}, cfg_.gc2, h, rng));
    gru_.bx = params_.add("skel.gru.bx", num::Tensor<T>({3 * h}));
    gru_.uh = params_.add("skel.gru.uh", num::glorot_uniform<T>({h, 3 * h}, h, h, rng));
    gru_.bh = params_.add("skel.gru.bh", num::Tensor<T>({3 * h}));
    attn_.w = params_.add("skel.attn.w", num::glorot_uniform<T>({h, cfg_.attention}, h, cfg_.attention, rng));
    attn_.c = params_.add("skel.attn.c", num::Tensor<T>({cfg_.attention}));
    attn_.u = params_.add("skel.attn.u", num::glorot_uniform<T>({cfg_.attention, 1}, cfg_.attention, 1, rng));
    head_w_ = params_.add("skel.head.w", num::glorot_uniform<T>({h, cfg_.num_classes}, h, cfg_.num_classes, rng));
    head_b_ = params_.add("skel.head.b", num::Tensor<T>({cfg_.num_classes}));

    constexpr std::size_t kF = kNumJoints * 3;
    if (!cfg_.input_mean.empty() || !cfg_.input_std.empty()) {
        if (cfg_.input_mean.size() != kF || cfg_.input_std.size() != kF) {
            throw ShapeError("skeleton net: input statistics need 45 values each");
        }
        num::Tensor<T> scale({kF, kF}), shift({kF});
        for (std::size_t k = 0; k < kF; ++k) {
            if (!(cfg_.input_std[k] > 0)) throw ContractError("skeleton net: input std must be positive");
            scale.at(k, k) = static_cast<T>(1.0 / cfg_.input_std[k]);
            shift[k] = static_cast<T>(-cfg_.input_mean[k] / cfg_.input_std[k]);
        }
        in_scale_ = num::Var<T>::constant(std::move(scale));
        in_shift_ = num::Var<T>::constant(std::move(shift));
    }
}

template <typename T>
SkeletonOutput<T> SkeletonNet<T>::forward(const num::Var<T>& batch) const {
    const num::Shape& d = batch.dims();
    if (d.size() != 4 || d[2] != kNumJoints || d[3] != 3) {
        throw ShapeError("skeleton batch must be (b, L, 15, 3), got " + num::shape_str(d));
    }
    num::Var<T> x = cfg_.center_time ? center_over_time(batch) : batch;
    if (in_scale_.defined()) {
        const std::size_t rows = d[0] * d[1];
        x = num::reshape(num::add_bias(num::matmul(num::reshape(x, {rows, kNumJoints * 3}), in_scale_), in_shift_),
                         d);
    }
    const num::Var<T> x1 = num::graph_conv(x, a_hat_, gc1_);
    const num::Var<T> x2 = num::graph_conv(x1, a_hat_, gc2_);
    const num::Var<T> hm = num::temporal_recur(x2, gru_);
    const auto att = num::joint_attention(hm, attn_);
    SkeletonOutput<T> out;
    out.feature = att.pooled;
    out.weights = att.weights;
    out.logits = num::add_bias(num::matmul(att.pooled, head_w_), head_b_);
    return out;
}

template class SkeletonNet<float>;
template class SkeletonNet<double>;

}  // namespace habitmask
