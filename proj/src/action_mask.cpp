#include "habitmask/action_mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "habitmask/errors.hpp"

namespace habitmask {

MaskConfig MaskConfig::for_side(std::size_t side, double ratio, double p) {
    MaskConfig c;
    c.side = side;
    c.lx = c.ly = double(side) * ratio;
    c.p = p;
    c.validate();
    return c;
}

void MaskConfig::validate() const {
    if (k == 0) throw ContractError("mask config: k must be at least 1");
    if (!(p >= 0.0 && p <= 1.0)) throw ContractError("mask config: p must lie in [0, 1]");
    if (side == 0) throw ContractError("mask config: side must be positive");
    if (!(lx > 0 && lx <= double(side) && ly > 0 && ly <= double(side))) {
        throw ContractError("mask config: child mask size must lie in (0, side]");
    }
    if (!(min_conf >= 0.0 && min_conf <= 1.0)) throw ContractError("mask config: min_conf must lie in [0, 1]");
}

std::vector<std::size_t> top_k_joints(std::span<const double> weights, std::size_t k) {
    if (k > weights.size()) {
        throw ContractError("top_k_joints: k=" + std::to_string(k) + " exceeds " + std::to_string(weights.size()));
    }
    std::vector<std::size_t> idx(weights.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::partial_sort(idx.begin(), idx.begin() + std::ptrdiff_t(k), idx.end(), [&](std::size_t a, std::size_t b) {
        return weights[a] > weights[b] || (weights[a] == weights[b] && a < b);
    });
    idx.resize(k);
    return idx;
}

ActionMask::ActionMask(std::size_t side, double p) : side_(side), p_(p), omega_(side * side, 0) {}

std::size_t ActionMask::area() const { return std::size_t(std::count(omega_.begin(), omega_.end(), 1)); }

bool ActionMask::contains(const ActionMask& other) const {
    if (other.side_ != side_) return false;
    for (std::size_t i = 0; i < omega_.size(); ++i)
        if (other.omega_[i] && !omega_[i]) return false;
    return true;
}

ActionMask build_mask(std::span<const Point> centers, const MaskConfig& cfg) {
    cfg.validate();
    ActionMask mask(cfg.side, cfg.p);
    const double hx = cfg.lx / 2, hy = cfg.ly / 2;
    const auto S = static_cast<std::ptrdiff_t>(cfg.side);
    for (const auto& [cx, cy] : centers) {
        // Integer pixels strictly inside (c - h, c + h), clipped to the frame.
        const auto x0 = std::max<std::ptrdiff_t>(0, std::ptrdiff_t(std::floor(cx - hx)) + 1);
        const auto x1 = std::min<std::ptrdiff_t>(S - 1, std::ptrdiff_t(std::ceil(cx + hx)) - 1);
        const auto y0 = std::max<std::ptrdiff_t>(0, std::ptrdiff_t(std::floor(cy - hy)) + 1);
        const auto y1 = std::min<std::ptrdiff_t>(S - 1, std::ptrdiff_t(std::ceil(cy + hy)) - 1);
        for (std::ptrdiff_t x = x0; x <= x1; ++x)
            for (std::ptrdiff_t y = y0; y <= y1; ++y) mask.set(std::size_t(x), std::size_t(y));
    }
    return mask;
}

template <typename T>
num::Tensor<T> apply_mask(const num::Tensor<T>& frame, const ActionMask& mask) {
    if (frame.rank() != 3 || frame.dim(1) != mask.side() || frame.dim(2) != mask.side()) {
        throw ShapeError("apply_mask: frame " + num::shape_str(frame.dims()) + " vs mask side " +
                         std::to_string(mask.side()));
    }
    num::Tensor<T> out = frame;
    const T p = static_cast<T>(mask.p());
    const std::size_t S = mask.side();
    for (std::size_t c = 0; c < frame.dim(0); ++c)
        for (std::size_t x = 0; x < S; ++x)
            for (std::size_t y = 0; y < S; ++y)
                if (!mask.inside(x, y)) out[(c * S + x) * S + y] *= p;
    return out;
}

std::vector<Point> mask_centers(std::span<const double> weights, const Skeleton& crop_joints, const MaskConfig& cfg) {
    if (weights.size() != kNumJoints) throw ShapeError("mask_centers: expected 15 joint weights");
    std::vector<Point> centers;
    for (std::size_t j : top_k_joints(weights, kNumJoints)) {
        if (centers.size() == cfg.k) break;
        const Joint& jt = crop_joints.joints[j];
        if (jt.conf < cfg.min_conf) continue;
        centers.push_back({jt.x, jt.y});
    }
    return centers;
}

template <typename T>
num::Tensor<T> mask_frames(const num::Tensor<T>& clip, std::span<const double> weights,
                           std::span<const Skeleton> crop_joints, const MaskConfig& cfg) {
    cfg.validate();
    if (clip.rank() != 4 || clip.dim(2) != cfg.side || clip.dim(3) != cfg.side) {
        throw ShapeError("mask_frames: clip " + num::shape_str(clip.dims()) + " vs side " + std::to_string(cfg.side));
    }
    const std::size_t C = clip.dim(0), L = clip.dim(1), plane = cfg.side * cfg.side;
    if (crop_joints.size() != L) {
        throw ContractError("mask_frames: " + std::to_string(crop_joints.size()) + " skeletons for " +
                            std::to_string(L) + " frames");
    }
    num::Tensor<T> out(clip.dims());
    const auto frames = static_cast<std::ptrdiff_t>(L);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ti = 0; ti < frames; ++ti) {
        const auto t = static_cast<std::size_t>(ti);
        const auto centers = mask_centers(weights, crop_joints[t], cfg);
        const ActionMask mask = build_mask(centers, cfg);
        num::Tensor<T> frame({C, cfg.side, cfg.side});
        for (std::size_t c = 0; c < C; ++c)
            std::copy_n(clip.ptr() + (c * L + t) * plane, plane, frame.ptr() + c * plane);
        const auto masked = apply_mask(frame, mask);
        for (std::size_t c = 0; c < C; ++c)
            std::copy_n(masked.ptr() + c * plane, plane, out.ptr() + (c * L + t) * plane);
    }
    return out;
}

ClipTensor mask_clip(const ClipTensor& clip, std::span<const double> weights, std::span<const Skeleton> crop_joints,
                     const MaskConfig& cfg) {
    return ClipTensor(mask_frames(clip.pixels(), weights, crop_joints, cfg));
}

Skeleton to_crop_space(const PersonFrame& person, std::size_t side) {
    const BBox& b = person.bbox;
    if (!b.valid()) throw InvalidGeometry("to_crop_space: degenerate bbox");
    Skeleton s;
    for (std::size_t j = 0; j < kNumJoints; ++j) {
        const Joint& jt = person.skeleton.joints[j];
        s.joints[j] = {(jt.x - b.x_min) / b.width() * double(side), (jt.y - b.y_min) / b.height() * double(side), jt.conf};
    }
    return s;
}

template num::Tensor<float> apply_mask(const num::Tensor<float>&, const ActionMask&);
template num::Tensor<double> apply_mask(const num::Tensor<double>&, const ActionMask&);
template num::Tensor<float> mask_frames(const num::Tensor<float>&, std::span<const double>, std::span<const Skeleton>,
                                        const MaskConfig&);
template num::Tensor<double> mask_frames(const num::Tensor<double>&, std::span<const double>,
                                         std::span<const Skeleton>, const MaskConfig&);

}  // namespace habitmask
