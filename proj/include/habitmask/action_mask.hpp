#pragma once

// Attention-driven action masks: the k most attended joints each open an
// l_x by l_y window in crop space; pixels outside every window are scaled
// by p.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "habitmask/datamodel.hpp"
#include "habitmask/tensor.hpp"

namespace habitmask {

struct MaskConfig {
    std::size_t k = 3;
    double lx = 16;
    double ly = 16;
    double p = 0.3;
    std::size_t side = 64;
    // Joints below this confidence are passed over for the next-ranked one.
    double min_conf = 0.05;

    // Child windows sized side * ratio (0.25 gives 64 for 256 crops).
    static MaskConfig for_side(std::size_t side, double ratio = 0.25, double p = 0.3);
    // Throws ContractError when an invariant fails.
    void validate() const;
};

using Point = std::array<double, 2>;

// Indices of the k largest weights, descending; ties go to the lower index.
std::vector<std::size_t> top_k_joints(std::span<const double> weights, std::size_t k);

class ActionMask {
public:
    ActionMask() = default;
    ActionMask(std::size_t side, double p);

    std::size_t side() const noexcept { return side_; }
    double p() const noexcept { return p_; }
    bool inside(std::size_t x, std::size_t y) const { return omega_[x * side_ + y] != 0; }
    void set(std::size_t x, std::size_t y) { omega_[x * side_ + y] = 1; }
    std::size_t area() const;
    // True when every pixel of `other` is also in this mask.
    bool contains(const ActionMask& other) const;

    friend bool operator==(const ActionMask&, const ActionMask&) = default;

private:
    std::size_t side_ = 0;
    double p_ = 1.0;
    std::vector<std::uint8_t> omega_;  // x-major, like (w, h) frames
};

// Omega(x, y) iff some center has |x - cx| < lx/2 and |y - cy| < ly/2.
ActionMask build_mask(std::span<const Point> centers, const MaskConfig& cfg);

// frame: (c, S, S). Inside Omega values are kept, outside multiplied by p.
template <typename T>
num::Tensor<T> apply_mask(const num::Tensor<T>& frame, const ActionMask& mask);

// Crop-space centers for one frame: walk joints by descending weight,
// skip those under cfg.min_conf, stop after cfg.k.
std::vector<Point> mask_centers(std::span<const double> weights, const Skeleton& crop_joints, const MaskConfig& cfg);

// clip: (c, L, S, S); one skeleton per frame in crop pixel coordinates.
template <typename T>
num::Tensor<T> mask_frames(const num::Tensor<T>& clip, std::span<const double> weights,
                           std::span<const Skeleton> crop_joints, const MaskConfig& cfg);

ClipTensor mask_clip(const ClipTensor& clip, std::span<const double> weights, std::span<const Skeleton> crop_joints,
                     const MaskConfig& cfg);

// Maps a person's joints from frame pixels into the side x side crop of its bbox.
Skeleton to_crop_space(const PersonFrame& person, std::size_t side);

}  // namespace habitmask
