#include "habitmask/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <numbers>
#include <random>

#include "habitmask/errors.hpp"

namespace habitmask {

namespace {

// Upright frontal pose as fractions of the crop side.
constexpr std::array<std::array<double, 2>, kNumJoints> kTemplate{{
    {0.50, 0.17},  // nose
    {0.50, 0.25},  // head bottom
    {0.50, 0.09},  // head top
    {0.62, 0.29},  // left shoulder
    {0.38, 0.29},  // right shoulder
    {0.68, 0.43},  // left elbow
    {0.32, 0.43},  // right elbow
    {0.71, 0.56},  // left wrist
    {0.29, 0.56},  // right wrist
    {0.57, 0.58},  // left hip
    {0.43, 0.58},  // right hip
    {0.59, 0.74},  // left knee
    {0.41, 0.74},  // right knee
    {0.59, 0.90},  // left ankle
    {0.41, 0.90},  // right ankle
}};

const std::vector<std::vector<std::size_t>>& joint_sets() {
    static const std::vector<std::vector<std::size_t>> sets{
        {7}, {8}, {7, 8}, {0}, {2}, {0, 7}, {2, 8}, {11, 12}, {13, 14}, {5, 7, 8},
    };
    return sets;
}

constexpr std::array<std::array<float, 3>, 6> kPalette{{
    {0.90f, 0.15f, 0.15f},
    {0.15f, 0.80f, 0.20f},
    {0.20f, 0.30f, 0.95f},
    {0.95f, 0.85f, 0.10f},
    {0.85f, 0.20f, 0.85f},
    {0.10f, 0.85f, 0.85f},
}};
constexpr float kDark = 0.08f;
constexpr std::size_t kPatterns = 5;

bool pattern_on(std::size_t pattern, std::size_t u, std::size_t v, std::size_t p) {
    const std::size_t bu = u * 4 / p, bv = v * 4 / p;
    switch (pattern) {
        case 0: return bv % 2 == 1;
        case 1: return bu % 2 == 1;
        case 2: return (bu + bv) % 2 == 1;
        case 3: return ((u + v) * 4 / p) % 2 == 1;
        default: {
            const long du = 2 * long(u) + 1 - long(p), dv = 2 * long(v) + 1 - long(p);
            return std::labs(du) < long(p) / 2 + 1 && std::labs(dv) < long(p) / 2 + 1;
        }
    }
}

float quantize(double v) {
    return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0f;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

void paint(num::Tensor<double>& frame, const num::Tensor<float>& tex, std::array<std::size_t, 2> origin) {
    const std::size_t side = frame.dim(1), p = tex.dim(1);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t u = 0; u < p; ++u)
            for (std::size_t v = 0; v < p; ++v) {
                frame[(c * side + origin[0] + u) * side + origin[1] + v] = tex.at(c, u, v);
            }
}

}  // namespace

void SynthConfig::validate() const {
    if (num_categories < 2 || num_categories > kMaxSynthCategories) {
        throw ContractError("synth: num_categories must be in [2, 30]");
    }
    if (clips_per_category == 0) throw ContractError("synth: clips_per_category must be positive");
    if (frames < 4) throw ContractError("synth: need at least 4 frames");
    if (patch < 4 || patch * 4 > side) throw ContractError("synth: patch must be in [4, side / 4]");
    if (!(jitter >= 0) || !(motion >= 0) || !(noise >= 0) || !(drift >= 0)) {
        throw ContractError("synth: jitter, motion, drift and noise must be non-negative");
    }
}

nlohmann::json SynthConfig::to_json() const {
    return {{"num_categories", num_categories},
            {"clips_per_category", clips_per_category},
            {"frames", frames},
            {"side", side},
            {"seed", seed},
            {"jitter", jitter},
            {"clutter", clutter},
            {"patch", patch},
            {"motion", motion},
            {"noise", noise},
            {"drift", drift}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
    SynthConfig c;
    c.num_categories = j.value("num_categories", c.num_categories);
    c.clips_per_category = j.value("clips_per_category", c.clips_per_category);
    c.frames = j.value("frames", c.frames);
    c.side = j.value("side", c.side);
    c.seed = j.value("seed", c.seed);
    c.jitter = j.value("jitter", c.jitter);
    c.clutter = j.value("clutter", c.clutter);
    c.patch = j.value("patch", c.patch);
    c.motion = j.value("motion", c.motion);
    c.noise = j.value("noise", c.noise);
    c.drift = j.value("drift", c.drift);
    return c;
}

CategorySignature category_signature(std::size_t category) {
    if (category >= kMaxSynthCategories) throw ContractError("synth: category out of range");
    CategorySignature s;
    s.joints = joint_sets()[category % joint_sets().size()];
    s.motion = static_cast<MotionKind>(category % 6);
    s.cycles = 1 + category / 6;
    s.color = category % kPalette.size();
    s.pattern = category / kPalette.size();
    return s;
}

num::Tensor<float> category_texture(std::size_t category, std::size_t patch) {
    const CategorySignature s = category_signature(category);
    num::Tensor<float> tex({3, patch, patch});
    for (std::size_t u = 0; u < patch; ++u)
        for (std::size_t v = 0; v < patch; ++v) {
            const bool on = pattern_on(s.pattern % kPatterns, u, v, patch);
            for (std::size_t c = 0; c < 3; ++c) tex.at(c, u, v) = on ? kPalette[s.color][c] : kDark;
        }
    return tex;
}

std::array<std::size_t, 2> patch_origin(const Joint& j, std::size_t patch, std::size_t side) {
    const auto axis = [&](double coord) {
        const double lo = std::round(coord) - double(patch / 2);
        return static_cast<std::size_t>(std::clamp(lo, 0.0, double(side - patch)));
    };
    return {axis(j.x), axis(j.y)};
}

std::uint64_t clip_seed(std::uint64_t seed, std::size_t index) {
    return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(index)));
}

SynthClip gen_clip(std::size_t category, const SynthConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (category >= cfg.num_categories) throw ContractError("synth: category out of range");
    const std::size_t L = cfg.frames, S = cfg.side, P = cfg.patch;
    const double side = double(S);
    const CategorySignature sig = category_signature(category);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    SynthClip out;
    out.category = category;
    out.signal_joints = sig.joints;

    // Skeleton track.
    const double scale = 1.0 - 0.05 * unit(rng);
    const double amp = cfg.motion * (0.8 + 0.4 * unit(rng));
    // Gestures share their timing up to a small per-clip shift.
    const double phase = 0.5 * std::numbers::pi + 0.8 * (unit(rng) - 0.5);
    double off_x = 0, off_y = 0, vel_x = 0, vel_y = 0;
    std::vector<Skeleton> track(L);
    for (std::size_t t = 0; t < L; ++t) {
        vel_x = 0.7 * vel_x + 0.15 * cfg.drift * gauss(rng);
        vel_y = 0.7 * vel_y + 0.15 * cfg.drift * gauss(rng);
        off_x = std::clamp(off_x + vel_x, -cfg.drift, cfg.drift);
        off_y = std::clamp(off_y + vel_y, -cfg.drift, cfg.drift);
        const double w = 2.0 * std::numbers::pi * double(sig.cycles) * double(t) / double(L) + phase;
        double dx = 0, dy = 0;
        switch (sig.motion) {
            case MotionKind::Horizontal: dx = amp * std::sin(w); break;
            case MotionKind::Vertical: dy = amp * std::sin(w); break;
            case MotionKind::Diagonal: dx = dy = amp * std::sqrt(0.5) * std::sin(w); break;
            case MotionKind::AntiDiagonal:
                dx = amp * std::sqrt(0.5) * std::sin(w);
                dy = -dx;
                break;
            case MotionKind::Clockwise:
                dx = amp * std::cos(w);
                dy = amp * std::sin(w);
                break;
            case MotionKind::CounterClockwise:
                dx = amp * std::cos(w);
                dy = -amp * std::sin(w);
                break;
        }
        for (std::size_t j = 0; j < kNumJoints; ++j) {
            Joint& jt = track[t].joints[j];
            jt.x = side * (0.5 + scale * (kTemplate[j][0] - 0.5)) + off_x;
            jt.y = side * (0.5 + scale * (kTemplate[j][1] - 0.5)) + off_y;
            if (std::find(sig.joints.begin(), sig.joints.end(), j) != sig.joints.end()) {
                jt.x += dx;
                jt.y += dy;
            }
            jt.x = std::clamp(jt.x + cfg.jitter * gauss(rng), 0.0, side);
            jt.y = std::clamp(jt.y + cfg.jitter * gauss(rng), 0.0, side);
            jt.conf = 0.75 + 0.25 * unit(rng);
        }
    }

    // Distractors: other categories' textures, drifting slowly, started away
    // from the signal patches.
    struct Distractor {
        std::size_t category;
        double x, y, vx = 0, vy = 0;
    };
    std::vector<Distractor> distractors;
    const double max_origin = double(S - P);
    std::uniform_int_distribution<std::size_t> other(0, cfg.num_categories - 2);
    for (std::size_t d = 0; d < cfg.clutter; ++d) {
        std::size_t c = other(rng);
        if (c >= category) ++c;
        double x = 0, y = 0;
        for (int attempt = 0; attempt < 32; ++attempt) {
            x = max_origin * unit(rng);
            y = max_origin * unit(rng);
            bool clear = true;
            for (std::size_t j : sig.joints) {
                const auto o = patch_origin(track[0].joints[j], P, S);
                if (std::abs(x - double(o[0])) < double(P) && std::abs(y - double(o[1])) < double(P)) clear = false;
            }
            if (clear) break;
        }
        distractors.push_back({c, x, y});
    }

    std::vector<num::Tensor<float>> textures;
    for (std::size_t c = 0; c < cfg.num_categories; ++c) textures.push_back(category_texture(c, P));

    out.clip = ClipTensor(3, L, S, S);
    num::Tensor<double> frame({3, S, S});
    for (std::size_t t = 0; t < L; ++t) {
        frame.fill(0.5);
        for (auto& d : distractors) {
            if (t > 0) {
                d.vx = 0.8 * d.vx + 0.3 * gauss(rng);
                d.vy = 0.8 * d.vy + 0.3 * gauss(rng);
                d.x = std::clamp(d.x + d.vx, 0.0, max_origin);
                d.y = std::clamp(d.y + d.vy, 0.0, max_origin);
            }
            paint(frame, textures[d.category],
                  {static_cast<std::size_t>(std::lround(d.x)), static_cast<std::size_t>(std::lround(d.y))});
        }
        for (std::size_t j : sig.joints) paint(frame, textures[category], patch_origin(track[t].joints[j], P, S));
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t x = 0; x < S; ++x)
                for (std::size_t y = 0; y < S; ++y) {
                    out.clip.at(c, t, x, y) = quantize(frame.at(c, x, y) + cfg.noise * gauss(rng));
                }
    }

    const std::string label = LabelSpace::habitual_behaviors().name(category);
    char id[40];
    std::snprintf(id, sizeof id, "synth_%02zu_%016llx", category, static_cast<unsigned long long>(seed));
    out.annotation.clip_id = id;
    for (std::size_t t = 0; t < L; ++t) {
        PersonFrame pf;
        pf.person_id = "P1";
        pf.bbox = {0.0, 0.0, side, side};
        pf.skeleton = track[t];
        pf.labels = {label};
        out.annotation.frames.push_back({t, {pf}});
    }
    return out;
}

std::vector<SynthClip> gen_clips(const SynthConfig& cfg) {
    cfg.validate();
    const std::size_t n = cfg.num_categories * cfg.clips_per_category;
    std::vector<SynthClip> clips(n);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < n; ++i) clips[i] = gen_clip(clip_category(cfg, i), cfg, clip_seed(cfg.seed, i));
    return clips;
}

Manifest gen_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
    cfg.validate();
    const std::filesystem::path clip_dir = out_dir / "clips";
    std::error_code ec;
    std::filesystem::create_directories(clip_dir, ec);
    if (ec) throw IoError("cannot create " + clip_dir.string() + ": " + ec.message());

    const std::size_t n = cfg.num_categories * cfg.clips_per_category;
    Manifest m;
    m.cfg = cfg.to_json();
    m.base_dir = out_dir;
    m.clips.resize(n);
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < n; ++i) {
        try {
            const SynthClip c = gen_clip(clip_category(cfg, i), cfg, clip_seed(cfg.seed, i));
            char stem[32];
            std::snprintf(stem, sizeof stem, "clip_%05zu", i);
            const std::string clip_rel = std::string("clips/") + stem + ".hclip";
            const std::string ann_rel = std::string("clips/") + stem + ".jsonl";
            write_clip(out_dir / clip_rel, c.clip);
            write_annotation_file(out_dir / ann_rel, c.annotation);
            m.clips[i] = {clip_rel, ann_rel, c.annotation.frames.front().persons.front().labels.front()};
        } catch (...) {
#pragma omp critical(habitmask_gen_dataset)
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    write_manifest(out_dir / "manifest.json", m);
    return m;
}

}  // namespace habitmask
