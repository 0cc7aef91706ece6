#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "habitmask/action_mask.hpp"
#include "habitmask/checkpoint.hpp"
#include "habitmask/errors.hpp"
#include "habitmask/harness.hpp"
#include "habitmask/synthgen.hpp"

namespace fs = std::filesystem;
using namespace habitmask;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return json::parse(ss.str());
    } catch (const json::parse_error& e) {
        throw ParseError(1, path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

// Synthetic manifests name their category count; anything else uses the
// full label space.
LabelSpace labels_for(const Manifest& m) {
    const LabelSpace all = LabelSpace::habitual_behaviors();
    if (!m.cfg.is_object() || !m.cfg.contains("num_categories")) return all;
    const auto n = m.cfg["num_categories"].get<std::size_t>();
    if (n == 0 || n > all.size()) throw SchemaError("manifest cfg: num_categories out of range");
    return LabelSpace(std::vector<std::string>(all.categories().begin(), all.categories().begin() + long(n)));
}

LabelSpace labels_of(const num::Checkpoint& ck) {
    if (!ck.config.contains("labels")) throw SchemaError("checkpoint config lacks labels");
    return LabelSpace(ck.config["labels"].get<std::vector<std::string>>());
}

// Paths of `m` re-expressed relative to `dir`.
Manifest rebase(const Manifest& m, const fs::path& dir) {
    Manifest out = m;
    out.base_dir = dir;
    const fs::path target = fs::absolute(dir);
    for (std::size_t i = 0; i < m.clips.size(); ++i) {
        out.clips[i].path = fs::relative(fs::absolute(m.clip_path(i)), target).generic_string();
        out.clips[i].annotation_path = fs::relative(fs::absolute(m.annotation_path(i)), target).generic_string();
    }
    return out;
}

std::array<double, 3> parse_ratios(const std::string& text) {
    std::array<double, 3> r{};
    std::stringstream ss(text);
    std::string part;
    std::size_t n = 0;
    while (std::getline(ss, part, ',')) {
        if (n == 3) throw ContractError("--ratios needs three values");
        try {
            r[n++] = std::stod(part);
        } catch (const std::exception&) {
            throw ContractError("--ratios: cannot parse \"" + part + "\"");
        }
    }
    if (n != 3) throw ContractError("--ratios needs three values");
    return r;
}

void write_ppm(const fs::path& path, const num::Tensor<float>& frame) {
    // frame: (3, w, h), element (c, x, y)
    const std::size_t w = frame.dim(1), h = frame.dim(2);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P6\n" << w << ' ' << h << "\n255\n";
    std::vector<unsigned char> row(w * 3);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const float v = std::clamp(frame[(c * w + x) * h + y], 0.0f, 1.0f);
                row[x * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
            }
        out.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
    }
    if (!out) throw IoError("short write to " + path.string());
}

void print_progress(const CurvePoint& p) {
    std::fprintf(stderr, "%-4s epoch %3zu  loss %.4f  val %.3f\n", p.stage.c_str(), p.epoch, p.train_loss, p.val_acc);
}

int cmd_synth_gen(const std::string& config, const std::string& out) {
    SynthConfig cfg;
    if (!config.empty()) cfg = SynthConfig::from_json(read_json(config));
    const Manifest m = gen_dataset(cfg, out);
    std::printf("wrote %zu clips to %s\n", m.clips.size(), (fs::path(out) / "manifest.json").string().c_str());
    return 0;
}

int cmd_split(const std::string& manifest, const std::string& ratios, std::uint64_t seed, std::string out) {
    const Manifest m = read_manifest(manifest);
    SplitSpec spec{parse_ratios(ratios), seed};
    const SplitResult r = split(m, spec);
    if (out.empty()) out = m.base_dir.empty() ? "." : m.base_dir.string();
    fs::create_directories(out);
    const std::pair<const char*, const Manifest*> parts[] = {{"train", &r.train}, {"test", &r.test}, {"val", &r.val}};
    for (const auto& [name, part] : parts) {
        const fs::path path = fs::path(out) / (std::string(name) + ".json");
        write_manifest(path, rebase(*part, out));
        std::printf("%-5s %5zu clips -> %s\n", name, part->clips.size(), path.string().c_str());
    }
    return 0;
}

struct TrainArgs {
    std::string config, train_manifest, val_manifest, out = "run";
    std::string variant, mask = "off", fusion;
    double w_skel = -1, lr = -1;
    long epochs = -1, fusion_epochs = -1, batch = -1;
    long long seed = -1;
    bool double_precision = false;
};

int cmd_train(const TrainArgs& a) {
    TrainConfig cfg;
    if (!a.config.empty()) cfg = TrainConfig::from_json(read_json(a.config));
    if (!a.variant.empty()) cfg.variant = parse_variant(a.variant);
    if (!a.fusion.empty()) {
        const Variant v = a.fusion == "feature" ? Variant::FuseFeature : Variant::FuseScore;
        if (!a.variant.empty() && cfg.variant != v) {
            throw ContractError("--fusion " + a.fusion + " conflicts with --variant " + a.variant);
        }
        cfg.variant = v;
    }
    cfg.mask = a.mask == "on";
    if (a.w_skel >= 0) {
        cfg.fusion.w_skel = a.w_skel;
        cfg.fusion.w_rgb = 1.0 - a.w_skel;
    }
    if (a.lr > 0) cfg.sgd.learning_rate = a.lr;
    if (a.epochs >= 0) cfg.epochs = std::size_t(a.epochs);
    if (a.fusion_epochs >= 0) cfg.fusion_epochs = std::size_t(a.fusion_epochs);
    if (a.batch > 0) cfg.batch = std::size_t(a.batch);
    if (a.seed >= 0) cfg.seed = std::uint64_t(a.seed);
    if (a.double_precision) cfg.double_precision = true;

    const Manifest tm = read_manifest(a.train_manifest);
    const LabelSpace labels = labels_for(tm);
    const Dataset train_set = Dataset::load(tm, labels);
    const Dataset val_set = Dataset::load(read_manifest(a.val_manifest), labels);
    if (cfg.mask && cfg.mask_cfg.side != train_set.side()) {
        const MaskConfig d = MaskConfig::for_side(train_set.side(), 0.25, cfg.mask_cfg.p);
        cfg.mask_cfg.side = d.side;
        cfg.mask_cfg.lx = d.lx;
        cfg.mask_cfg.ly = d.ly;
    }

    const TrainResult r = train(cfg, train_set, val_set, print_progress);
    fs::create_directories(a.out);
    const fs::path ckpt = fs::path(a.out) / "model.hckp";
    num::write_checkpoint(ckpt, r.checkpoint);
    write_curve_csv(fs::path(a.out) / "curve.csv", r.curve);
    std::printf("checkpoint %s\n", ckpt.string().c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& manifest, const std::string& out, std::size_t batch) {
    const num::Checkpoint ck = num::read_checkpoint(ckpt_path);
    const Dataset data = Dataset::load(read_manifest(manifest), labels_of(ck));
    const EvalReport r = evaluate(ck, data, batch);
    std::printf("accuracy %.4f on %zu clips\n", r.accuracy, data.size());
    if (!out.empty()) write_json(out, r.to_json());
    return 0;
}

int cmd_mask_render(const std::string& clip_path, std::string annotation, const std::string& ckpt_path,
                    const std::string& out) {
    const num::Checkpoint ck = num::read_checkpoint(ckpt_path);
    const TrainConfig tc = TrainConfig::from_json(ck.config.at("train"));
    if (annotation.empty()) annotation = fs::path(clip_path).replace_extension(".jsonl").string();
    const ClipTensor clip = read_clip(clip_path);
    const ClipAnnotation ann = read_annotation_file(annotation);

    // Any label of the checkpoint will do; only the skeleton path runs.
    const LabelSpace labels = labels_of(ck);
    Dataset one(labels, clip.channels(), clip.frames(), clip.width());
    std::vector<PersonFrame> track;
    for (const auto& f : ann.frames) {
        if (f.persons.empty()) throw SchemaError(ann.clip_id + ": frame without a person");
        track.push_back(f.persons.front());
    }
    one.add(0, clip, track);
    const num::Tensor<double> w = attention_weights(ck, one, 1);
    const std::vector<double> weights(w.data().begin(), w.data().end());

    MaskConfig mc = tc.mask_cfg;
    if (mc.side != clip.width()) {
        const MaskConfig d = MaskConfig::for_side(clip.width(), 0.25, mc.p);
        mc.side = d.side;
        mc.lx = d.lx;
        mc.ly = d.ly;
    }
    const ClipTensor masked = mask_clip(clip, weights, one[0].crop, mc);

    fs::create_directories(out);
    for (std::size_t t = 0; t < clip.frames(); ++t) {
        char name[64];
        std::snprintf(name, sizeof name, "frame_%03zu.ppm", t);
        write_ppm(fs::path(out) / name, clip.frame(t));
        std::snprintf(name, sizeof name, "masked_%03zu.ppm", t);
        write_ppm(fs::path(out) / name, masked.frame(t));
    }
    json info = {{"clip", clip_path}, {"weights", weights}, {"top_k", top_k_joints(weights, mc.k)}};
    write_json(fs::path(out) / "attention.json", info);
    std::printf("wrote %zu frame pairs to %s\n", clip.frames(), out.c_str());
    return 0;
}

int cmd_stats(const std::string& manifest, const std::string& out) {
    const StatsReport r = stats(read_manifest(manifest));
    const json j = r.to_json();
    if (out.empty()) {
        std::cout << j.dump(2) << '\n';
    } else {
        write_json(out, j);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Habitual-behavior recognition with skeleton-guided action masks"};
    app.require_subcommand(1);

    std::string config, out, manifest, ratios = "0.7,0.2,0.1", ckpt, clip, annotation;
    std::uint64_t seed = 0;
    std::size_t batch = 32;

    auto* gen = app.add_subcommand("synth-gen", "Generate a synthetic clip dataset");
    gen->add_option("--config", config, "SynthConfig JSON (defaults when omitted)");
    gen->add_option("--out", out, "Output directory")->required();

    auto* sp = app.add_subcommand("split", "Stratified train/test/val split of a manifest");
    sp->add_option("--manifest", manifest, "Input manifest")->required();
    sp->add_option("--ratios", ratios, "train,test,val");
    sp->add_option("--seed", seed, "Shuffle seed");
    sp->add_option("--out", out, "Directory for train.json, test.json, val.json (default: next to the manifest)");

    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "Train a model variant");
    tr->add_option("--config", ta.config, "TrainConfig JSON");
    tr->add_option("--train", ta.train_manifest, "Training manifest")->required();
    tr->add_option("--val", ta.val_manifest, "Validation manifest")->required();
    tr->add_option("--variant", ta.variant, "skel|rgb|fuse-feature|fuse-score")
        ->check(CLI::IsMember({"skel", "rgb", "fuse-feature", "fuse-score"}));
    tr->add_option("--mask", ta.mask, "on|off")->check(CLI::IsMember({"on", "off"}));
    tr->add_option("--fusion", ta.fusion, "feature|score")->check(CLI::IsMember({"feature", "score"}));
    tr->add_option("--w-skel", ta.w_skel, "Skeleton fusion weight (RGB gets the rest)")->check(CLI::Range(0.0, 1.0));
    tr->add_option("--lr", ta.lr, "Learning rate");
    tr->add_option("--epochs", ta.epochs, "Epochs per channel stage");
    tr->add_option("--fusion-epochs", ta.fusion_epochs, "Epochs of the feature-fusion stage");
    tr->add_option("--batch", ta.batch, "Batch size");
    tr->add_option("--seed", ta.seed, "Seed");
    tr->add_flag("--double", ta.double_precision, "64-bit arithmetic");
    tr->add_option("--out", ta.out, "Output directory for model.hckp and curve.csv");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    ev->add_option("--ckpt", ckpt, "Checkpoint")->required();
    ev->add_option("--manifest", manifest, "Manifest to evaluate")->required();
    ev->add_option("--out", out, "Report JSON");
    ev->add_option("--batch", batch, "Evaluation batch size");

    auto* mr = app.add_subcommand("mask-render", "Render the action mask of a clip as PPM frames");
    mr->add_option("--clip", clip, ".hclip file")->required();
    mr->add_option("--annotation", annotation, "Annotation (default: the clip path with .jsonl)");
    mr->add_option("--ckpt", ckpt, "Checkpoint with a skeleton channel")->required();
    mr->add_option("--out", out, "Output directory")->required();

    auto* st = app.add_subcommand("stats", "Dataset statistics");
    st->add_option("--manifest", manifest, "Manifest")->required();
    st->add_option("--out", out, "Report JSON (stdout when omitted)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) return cmd_synth_gen(config, out);
        if (*sp) return cmd_split(manifest, ratios, seed, out);
        if (*tr) return cmd_train(ta);
        if (*ev) return cmd_eval(ckpt, manifest, out, batch);
        if (*mr) return cmd_mask_render(clip, annotation, ckpt, out);
        if (*st) return cmd_stats(manifest, out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
