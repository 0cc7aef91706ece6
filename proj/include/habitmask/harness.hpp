#pragma once

// Dataset handling, stratified splitting, two-stage training, evaluation
// and dataset statistics.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "habitmask/action_mask.hpp"
#include "habitmask/checkpoint.hpp"
#include "habitmask/datamodel.hpp"
#include "habitmask/fusion.hpp"
#include "habitmask/manifest.hpp"
#include "habitmask/optim.hpp"
#include "habitmask/rgb_net.hpp"
#include "habitmask/skeleton_net.hpp"
#include "habitmask/synthgen.hpp"

namespace habitmask {

// ---- splitting ----

struct SplitSpec {
    // train, test, val
    std::array<double, 3> ratios{0.7, 0.2, 0.1};
    std::uint64_t seed = 0;
};

struct SplitResult {
    Manifest train, test, val;
};

// Per-category counts from largest remainders (ties favor train, then test),
// members drawn by a seeded shuffle, output in input order.
// Throws SplitError naming a category with fewer than 3 clips and
// ContractError for bad ratios.
SplitResult split(const Manifest& manifest, const SplitSpec& spec);

// Index form of split over a label list: (train, test, val) index sets.
std::array<std::vector<std::size_t>, 3> split_indices(const std::vector<std::string>& labels, const SplitSpec& spec);

// Per-category (train, test, val) counts the split will produce for n clips.
std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& ratios);

// ---- in-memory dataset ----

// One clip, pixels kept at 8-bit precision.
struct Sample {
    std::size_t label = 0;
    num::Tensor<float> skeleton;      // (L, 15, 3)
    std::vector<Skeleton> crop;       // per frame, crop pixel coordinates
    std::vector<std::uint8_t> pixels;  // (c, L, S, S)
};

class Dataset {
public:
    Dataset() = default;
    Dataset(LabelSpace labels, std::size_t channels, std::size_t frames, std::size_t side);

    // Clips of a synthetic config, generated in parallel.
    static Dataset synthesize(const SynthConfig& cfg);
    // Clips listed by a manifest. Each .hclip holds the person crop; the
    // annotation's first person supplies the skeleton. Throws ContractError
    // for labels outside `labels` and ShapeError for inconsistent clips.
    static Dataset load(const Manifest& manifest, const LabelSpace& labels = LabelSpace::habitual_behaviors());

    void add(std::size_t label, const ClipTensor& clip, const std::vector<PersonFrame>& track);

    Dataset subset(const std::vector<std::size_t>& indices) const;

    const LabelSpace& labels() const noexcept { return labels_; }
    std::size_t size() const noexcept { return samples_.size(); }
    std::size_t channels() const noexcept { return channels_; }
    std::size_t frames() const noexcept { return frames_; }
    std::size_t side() const noexcept { return side_; }
    const Sample& operator[](std::size_t i) const { return samples_.at(i); }
    std::vector<std::size_t> targets() const;

    // (c, L, S, S) pixels of clip i.
    num::Tensor<float> clip(std::size_t i) const;

private:
    LabelSpace labels_;
    std::size_t channels_ = 3, frames_ = 0, side_ = 0;
    std::vector<Sample> samples_;
};

// ---- models ----

enum class Variant { Skel, Rgb, FuseFeature, FuseScore };
std::string to_string(Variant v);
// Accepts skel, rgb, fuse-feature, fuse-score; ContractError otherwise.
Variant parse_variant(const std::string& text);

struct TrainConfig {
    Variant variant = Variant::Skel;
    bool mask = false;
    std::size_t batch = 18;
    std::size_t epochs = 20;         // per channel stage
    std::size_t fusion_epochs = 10;  // feature-fusion head stage
    num::SgdConfig sgd{.decay_every = 6};
    // Learning rate of the RGB stage; 0 reuses sgd.learning_rate.
    double rgb_learning_rate = 0;
    std::uint64_t seed = 1;
    MaskConfig mask_cfg;
    FusionConfig fusion;
    SkeletonNetConfig skel;
    RgbNetConfig rgb;
    // 64-bit arithmetic throughout (slower; used for reproducibility checks).
    bool double_precision = false;

    bool uses_skeleton() const;
    bool uses_rgb() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct CurvePoint {
    std::string stage;  // "skel", "rgb" or "fuse"
    std::size_t epoch = 0;
    double train_loss = 0;
    double val_acc = 0;
};

struct TrainResult {
    num::Checkpoint checkpoint;
    std::vector<CurvePoint> curve;
};

// Called after every epoch; used for progress output.
using EpochHook = std::function<void(const CurvePoint&)>;

// Trains the configured variant. With mask on, the skeleton is trained
// first and its attention weights (held fixed) mask the RGB clips of the
// later stages. Each stage keeps the parameters of its best validation
// epoch. Throws NumericError when a loss turns non-finite.
TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set,
                  const EpochHook& hook = {});

// Randomly initialized model for the dataset geometry, as a checkpoint.
num::Checkpoint init_checkpoint(const TrainConfig& cfg, const Dataset& like);

void write_curve_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& curve);

// Stages train independently of the variant that contains them, so a
// fused checkpoint already holds the skel-only and rgb-only models (and the
// score-fusion model) for the same config and seed. Returns that model;
// throws ContractError when `ckpt` lacks a channel the target needs.
// Skel targets drop the mask flag, which does not affect the skeleton.
num::Checkpoint project_checkpoint(const num::Checkpoint& ckpt, Variant target);

// ---- evaluation ----

struct EvalReport {
    double accuracy = 0;
    std::vector<std::string> categories;
    std::vector<double> per_category;  // NaN for categories without clips
    std::vector<std::vector<std::size_t>> confusion;  // [truth][prediction]
    std::vector<CurvePoint> loss_curve;

    nlohmann::json to_json() const;
};

EvalReport report_from_predictions(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                   const std::vector<std::string>& categories);

// Class probabilities (n, classes) of every clip. Throws ContractError when
// the dataset's label space differs from the checkpoint's.
num::Tensor<double> predict_proba(const num::Checkpoint& ckpt, const Dataset& data, std::size_t batch = 32);
EvalReport evaluate(const num::Checkpoint& ckpt, const Dataset& data, std::size_t batch = 32);

// Skeleton attention weights (n, 15) of a checkpoint that has a skeleton channel.
num::Tensor<double> attention_weights(const num::Checkpoint& ckpt, const Dataset& data, std::size_t batch = 32);

// ---- ablation ladder ----

struct LadderConfig {
    SynthConfig data;
    TrainConfig train;
    // Each seed sets the data seed, the split seed and the training seed.
    std::vector<std::uint64_t> seeds{1, 2, 3};
    bool with_mask = true;

    nlohmann::json to_json() const;
    static LadderConfig from_json(const nlohmann::json& j);
};

struct LadderRow {
    std::string name;  // e.g. "skel", "fuse-feature+mask"
    Variant variant = Variant::Skel;
    bool mask = false;
    std::vector<double> accuracy;     // test accuracy per seed
    std::vector<double> cpu_seconds;  // data generation plus the stages this rung needs, per seed
    double mean() const;
};

struct LadderReport {
    std::vector<LadderRow> rows;
    const LadderRow& row(const std::string& name) const;
    nlohmann::json to_json() const;
};

// Trains fused models with the mask off (and on) for every seed and reads
// every rung off them via project_checkpoint. Rows: skel, rgb, fuse-score,
// fuse-feature, then rgb+mask, fuse-score+mask, fuse-feature+mask.
LadderReport run_ladder(const LadderConfig& cfg, const EpochHook& hook = {});

// ---- statistics ----

struct StatsReport {
    std::size_t clips = 0;
    std::size_t frames = 0;
    std::map<std::string, std::size_t> per_category;
    std::map<std::string, std::size_t> frames_per_category;
    std::map<std::size_t, std::size_t> persons_per_frame;  // persons -> frame count
    std::map<std::string, std::vector<std::string>> emotions;

    nlohmann::json to_json() const;
};

StatsReport stats(const Manifest& manifest, const LabelSpace& labels = LabelSpace::habitual_behaviors());
StatsReport stats(const std::vector<ClipAnnotation>& annotations,
                  const LabelSpace& labels = LabelSpace::habitual_behaviors());

// Emotion attributes recorded for a behavior name (empty when unknown).
std::vector<std::string> emotion_lookup(const std::string& behavior);

}  // namespace habitmask
