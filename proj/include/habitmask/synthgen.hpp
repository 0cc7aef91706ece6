#pragma once

// Synthetic habitual-behavior clips. Every category has a joint-motion
// signature (which joints oscillate, and how) and a texture that is painted
// over the same joints. Distractor patches drawn from the same texture
// family clutter the rest of the frame.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "habitmask/datamodel.hpp"
#include "habitmask/manifest.hpp"

namespace habitmask {

inline constexpr std::size_t kMaxSynthCategories = 30;

struct SynthConfig {
    std::size_t num_categories = 30;
    std::size_t clips_per_category = 40;
    std::size_t frames = 32;
    std::size_t side = 64;
    std::uint64_t seed = 1;
    // Per-frame Gaussian joint jitter, pixels.
    double jitter = 1.0;
    // Distractor patches per frame.
    std::size_t clutter = 6;
    std::size_t patch = 8;
    // Peak displacement of the signature motion, pixels.
    double motion = 2.5;
    // Per-pixel Gaussian background noise.
    double noise = 0.05;
    // Bound of the whole-body random walk, pixels.
    double drift = 1.0;

    // Throws ContractError when a field is out of range.
    void validate() const;
    nlohmann::json to_json() const;
    static SynthConfig from_json(const nlohmann::json& j);
};

enum class MotionKind { Horizontal, Vertical, Diagonal, AntiDiagonal, Clockwise, CounterClockwise };

struct CategorySignature {
    std::vector<std::size_t> joints;  // 1 to 3 joint indices
    MotionKind motion = MotionKind::Horizontal;
    std::size_t cycles = 1;  // oscillations per clip
    std::size_t color = 0;    // index into the palette
    std::size_t pattern = 0;  // index into the pattern set
};

CategorySignature category_signature(std::size_t category);

// (3, patch, patch) texture of a category, indexed (c, dx, dy).
num::Tensor<float> category_texture(std::size_t category, std::size_t patch);

// Top-left pixel of the patch painted over a joint: the rounded joint
// position minus half the patch, clamped so the patch stays in the frame.
std::array<std::size_t, 2> patch_origin(const Joint& j, std::size_t patch, std::size_t side);

struct SynthClip {
    ClipTensor clip;  // (3, L, S, S), values on the 1/255 grid
    ClipAnnotation annotation;
    std::size_t category = 0;
    std::vector<std::size_t> signal_joints;
};

// Pure function of its arguments. Throws ContractError for a bad category or config.
SynthClip gen_clip(std::size_t category, const SynthConfig& cfg, std::uint64_t seed);

// Seed of clip `index` under dataset seed `seed`.
std::uint64_t clip_seed(std::uint64_t seed, std::size_t index);

// Category of clip `index`: clips are laid out category-major.
inline std::size_t clip_category(const SynthConfig& cfg, std::size_t index) {
    return index / cfg.clips_per_category;
}

// Every clip of the dataset in index order, generated in parallel.
std::vector<SynthClip> gen_clips(const SynthConfig& cfg);

// Writes clips/<id>.hclip and clips/<id>.jsonl plus manifest.json under
// out_dir and returns the manifest. IO failures raise IoError naming the path.
Manifest gen_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace habitmask
