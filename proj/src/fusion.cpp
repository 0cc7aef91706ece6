#include "habitmask/fusion.hpp"

#include <cmath>
#include <random>

#include "habitmask/errors.hpp"

namespace habitmask {

std::string to_string(FusionMode mode) { return mode == FusionMode::Feature ? "feature" : "score"; }

FusionMode parse_fusion_mode(const std::string& text) {
    if (text == "feature") return FusionMode::Feature;
    if (text == "score") return FusionMode::Score;
    throw ContractError("unknown fusion mode '" + text + "'");
}

void FusionConfig::validate() const {
    if (!(w_skel >= 0 && w_rgb >= 0) || std::abs(w_skel + w_rgb - 1.0) > 1e-9) {
        throw ContractError("fusion weights must be non-negative and sum to 1");
    }
    if (dim == 0) throw ContractError("fusion dimension must be positive");
    if (learnable_weights && (w_skel == 0 || w_rgb == 0)) {
        throw ContractError("learnable fusion weights must start strictly inside (0, 1)");
    }
}

nlohmann::json FusionConfig::to_json() const {
    return {{"mode", to_string(mode)}, {"w_skel", w_skel}, {"w_rgb", w_rgb}, {"dim", dim},
            {"learnable_weights", learnable_weights}};
}

FusionConfig FusionConfig::from_json(const nlohmann::json& j) {
    FusionConfig c;
    c.mode = parse_fusion_mode(j.value("mode", to_string(c.mode)));
    c.w_skel = j.value("w_skel", c.w_skel);
    c.w_rgb = j.value("w_rgb", c.w_rgb);
    c.dim = j.value("dim", c.dim);
    c.learnable_weights = j.value("learnable_weights", c.learnable_weights);
    c.validate();
    return c;
}

template <typename T>
FeatureFusion<T>::FeatureFusion(std::size_t skel_dim, std::size_t rgb_dim, std::size_t num_classes, FusionConfig cfg,
                                std::uint64_t seed)
    : cfg_(cfg), skel_dim_(skel_dim), rgb_dim_(rgb_dim) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t d = cfg_.dim;
    proj_s_ = params_.add("fuse.proj_skel.w", num::glorot_uniform<T>({skel_dim, d}, skel_dim, d, rng));
    proj_r_ = params_.add("fuse.proj_rgb.w", num::glorot_uniform<T>({rgb_dim, d}, rgb_dim, d, rng));
    head_w_ = params_.add("fuse.head.w", num::glorot_uniform<T>({d, num_classes}, d, num_classes, rng));
    head_b_ = params_.add("fuse.head.b", num::Tensor<T>({num_classes}));
    if (cfg_.learnable_weights) {
        mix_ = params_.add("fuse.mix", num::Tensor<T>({2}, std::vector<T>{static_cast<T>(std::log(cfg_.w_skel)),
                                                                          static_cast<T>(std::log(cfg_.w_rgb))}));
    }
}

template <typename T>
std::pair<T, T> FeatureFusion<T>::weights() const {
    if (!cfg_.learnable_weights) return {static_cast<T>(cfg_.w_skel), static_cast<T>(cfg_.w_rgb)};
    const auto w = num::softmax_values(mix_.value(), 0);
    return {w[0], w[1]};
}

template <typename T>
num::Var<T> FeatureFusion<T>::forward(const num::Var<T>& f_s, const num::Var<T>& f_r) const {
    if (f_s.value().rank() != 2 || f_r.value().rank() != 2 || f_s.dims()[0] != f_r.dims()[0] ||
        f_s.dims()[1] != skel_dim_ || f_r.dims()[1] != rgb_dim_) {
        throw ShapeError("feature_fuse: features " + num::shape_str(f_s.dims()) + " and " + num::shape_str(f_r.dims()));
    }
    const num::Var<T> ps = num::matmul(f_s, proj_s_);
    const num::Var<T> pr = num::matmul(f_r, proj_r_);
    num::Var<T> fused;
    if (cfg_.learnable_weights) {
        const num::Var<T> w = num::softmax(mix_, 0);
        fused = num::add(num::mul_scalar(ps, num::slice(w, 0, 0, 1)), num::mul_scalar(pr, num::slice(w, 0, 1, 2)));
    } else {
        fused = num::add(num::scale(ps, static_cast<T>(cfg_.w_skel)), num::scale(pr, static_cast<T>(cfg_.w_rgb)));
    }
    return num::add_bias(num::matmul(fused, head_w_), head_b_);
}

template <typename T>
num::Tensor<T> score_fuse(const num::Tensor<T>& p_s, const num::Tensor<T>& p_r, const FusionConfig& cfg) {
    cfg.validate();
    if (p_s.rank() != 2 || p_s.dims() != p_r.dims()) {
        throw ShapeError("score_fuse: " + num::shape_str(p_s.dims()) + " vs " + num::shape_str(p_r.dims()));
    }
    const std::size_t b = p_s.dim(0), n = p_s.dim(1);
    for (const auto* p : {&p_s, &p_r}) {
        for (std::size_t r = 0; r < b; ++r) {
            double s = 0;
            for (std::size_t k = 0; k < n; ++k) {
                const double v = double((*p)[r * n + k]);
                if (!(v >= 0)) throw ContractError("score_fuse: negative or non-finite probability");
                s += v;
            }
            if (std::abs(s - 1.0) > 1e-6) throw ContractError("score_fuse: row " + std::to_string(r) + " sums to " + std::to_string(s));
        }
    }
    num::Tensor<T> out(p_s.dims());
    const T ws = static_cast<T>(cfg.w_skel), wr = static_cast<T>(cfg.w_rgb);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ws * p_s[i] + wr * p_r[i];
    return out;
}

template class FeatureFusion<float>;
template class FeatureFusion<double>;
template num::Tensor<float> score_fuse(const num::Tensor<float>&, const num::Tensor<float>&, const FusionConfig&);
template num::Tensor<double> score_fuse(const num::Tensor<double>&, const num::Tensor<double>&, const FusionConfig&);

}  // namespace habitmask
