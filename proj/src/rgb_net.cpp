#include "habitmask/rgb_net.hpp"

#include <algorithm>
#include <random>

#include "habitmask/errors.hpp"

namespace habitmask {

template <typename T>
num::Tensor<T> temporal_subsample(const num::Tensor<T>& clip, std::size_t stride) {
    if (clip.rank() != 4) throw ShapeError("temporal_subsample: clip must be (c, L, w, h)");
    const std::size_t C = clip.dim(0), L = clip.dim(1), plane = clip.dim(2) * clip.dim(3);
    if (stride == 0 || L % stride != 0) {
        throw ContractError("temporal_subsample: stride " + std::to_string(stride) + " does not divide " +
                            std::to_string(L) + " frames");
    }
    const std::size_t out_len = L / stride;
    num::Tensor<T> out({C, out_len, clip.dim(2), clip.dim(3)});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < out_len; ++t)
            std::copy_n(clip.ptr() + (c * L + t * stride) * plane, plane, out.ptr() + (c * out_len + t) * plane);
    return out;
}

template num::Tensor<float> temporal_subsample(const num::Tensor<float>&, std::size_t);
template num::Tensor<double> temporal_subsample(const num::Tensor<double>&, std::size_t);

namespace num {

template <typename T>
Var<T> temporal_subsample(const Var<T>& batch, std::size_t stride) {
    if (batch.value().rank() != 5) throw ShapeError("temporal_subsample: batch must be (b, c, L, w, h)");
    const std::size_t L = batch.dims()[2];
    if (stride == 0 || L % stride != 0) {
        throw ContractError("temporal_subsample: stride " + std::to_string(stride) + " does not divide " +
                            std::to_string(L) + " frames");
    }
    if (stride == 1) return batch;
    std::vector<Var<T>> frames;
    for (std::size_t t = 0; t < L; t += stride) frames.push_back(slice(batch, 2, t, t + 1));
    return concat(frames, 2);
}

template Var<float> temporal_subsample(const Var<float>&, std::size_t);
template Var<double> temporal_subsample(const Var<double>&, std::size_t);

}  // namespace num

nlohmann::json RgbNetConfig::to_json() const {
    return {{"num_classes", num_classes}, {"channels", channels},       {"patch", patch},
            {"full_stride", full_stride}, {"sub_stride", sub_stride},   {"full_widths", full_widths},
            {"sub_widths", sub_widths},   {"input_mean", input_mean}, {"input_std", input_std},
            {"seed", seed}};
}

RgbNetConfig RgbNetConfig::from_json(const nlohmann::json& j) {
    RgbNetConfig c;
    c.num_classes = j.value("num_classes", c.num_classes);
    c.channels = j.value("channels", c.channels);
    c.patch = j.value("patch", c.patch);
    c.full_stride = j.value("full_stride", c.full_stride);
    c.sub_stride = j.value("sub_stride", c.sub_stride);
    c.full_widths = j.value("full_widths", c.full_widths);
    c.sub_widths = j.value("sub_widths", c.sub_widths);
    c.input_mean = j.value("input_mean", c.input_mean);
    c.input_std = j.value("input_std", c.input_std);
    c.seed = j.value("seed", c.seed);
    return c;
}

template <typename T>
RgbNet<T>::RgbNet(RgbNetConfig cfg) : cfg_(cfg) {
    if (cfg_.num_classes < 2 || cfg_.channels == 0 || cfg_.patch == 0 || cfg_.full_stride == 0 || cfg_.sub_stride == 0 ||
        !(cfg_.input_std > 0)) {
        throw ContractError("rgb net: invalid configuration");
    }
    std::mt19937_64 rng(cfg_.seed);
    const std::size_t c = cfg_.channels, p = cfg_.patch;
    auto make = [&](const std::string& name, std::array<std::size_t, 2> widths, std::array<std::size_t, 3> k2) {
        Pathway pw;
        const std::size_t fan1 = c * p * p;
        pw.w1 = params_.add("rgb." + name + ".conv1.w", num::he_uniform<T>({widths[0], c, 1, p, p}, fan1, rng));
        pw.b1 = params_.add("rgb." + name + ".conv1.b", num::Tensor<T>({widths[0]}));
        const std::size_t fan2 = widths[0] * k2[0] * k2[1] * k2[2];
        pw.w2 = params_.add("rgb." + name + ".conv2.w",
                            num::he_uniform<T>({widths[1], widths[0], k2[0], k2[1], k2[2]}, fan2, rng));
        pw.b2 = params_.add("rgb." + name + ".conv2.b", num::Tensor<T>({widths[1]}));
        return pw;
    };
    full_ = make("full", cfg_.full_widths, {3, 3, 3});
    sub_ = make("sub", cfg_.sub_widths, {1, 3, 3});
    const std::size_t d = cfg_.feature_dim();
    head_w_ = params_.add("rgb.head.w", num::glorot_uniform<T>({d, cfg_.num_classes}, d, cfg_.num_classes, rng));
    head_b_ = params_.add("rgb.head.b", num::Tensor<T>({cfg_.num_classes}));
}

template <typename T>
num::Var<T> RgbNet<T>::run_pathway(const num::Var<T>& x, const Pathway& p, bool temporal) const {
    const std::size_t P = cfg_.patch;
    num::Conv3dParams patchify;
    patchify.stride = {1, P, P};
    num::Var<T> h = num::relu(num::conv3d(x, p.w1, p.b1, patchify));
    const std::size_t tpool = temporal && h.dims()[2] >= 2 ? 2 : 1;
    h = num::max_pool3d(h, {tpool, 2, 2}, {tpool, 2, 2});
    num::Conv3dParams same;
    same.pad = {temporal ? std::size_t{1} : std::size_t{0}, 1, 1};
    h = num::relu(num::conv3d(h, p.w2, p.b2, same));
    return num::global_avg_pool(h);
}

template <typename T>
RgbOutput<T> RgbNet<T>::forward(const num::Var<T>& batch) const {
    const num::Shape& d = batch.dims();
    if (d.size() != 5 || d[1] != cfg_.channels) {
        throw ShapeError("rgb batch must be (b, " + std::to_string(cfg_.channels) + ", L, w, h), got " +
                         num::shape_str(d));
    }
    if (d[3] % (2 * cfg_.patch) != 0 || d[4] % (2 * cfg_.patch) != 0) {
        throw ShapeError("rgb batch: frame side must be a multiple of " + std::to_string(2 * cfg_.patch));
    }
    const num::Var<T> x = num::affine(batch, static_cast<T>(1.0 / cfg_.input_std),
                                      static_cast<T>(-cfg_.input_mean / cfg_.input_std));
    const auto full = run_pathway(num::temporal_subsample(x, cfg_.full_stride), full_, true);
    const auto sub = run_pathway(num::temporal_subsample(x, cfg_.sub_stride), sub_, false);
    RgbOutput<T> out;
    out.feature = num::concat<T>({full, sub}, 1);
    out.logits = num::add_bias(num::matmul(out.feature, head_w_), head_b_);
    return out;
}

template class RgbNet<float>;
template class RgbNet<double>;

}  // namespace habitmask
