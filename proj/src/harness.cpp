#include "habitmask/harness.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <set>
#include <tuple>

#include "habitmask/errors.hpp"

namespace habitmask {

namespace {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

// ---- splitting ----

std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& ratios) {
    double total = 0;
    for (double r : ratios) {
        if (!(r >= 0) || !std::isfinite(r)) throw ContractError("split ratios must be finite and non-negative");
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ContractError("split ratios must sum to 1");
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double exact = double(n) * ratios[i];
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        frac[i] = exact - double(counts[i]);
        assigned += counts[i];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[order[i % 3]];
    return counts;
}

std::array<std::vector<std::size_t>, 3> split_indices(const std::vector<std::string>& labels, const SplitSpec& spec) {
    std::map<std::string, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(i);
    std::array<std::vector<std::size_t>, 3> parts;
    for (auto& [label, members] : by_label) {
        if (members.size() < 3) {
            throw SplitError("category \"" + label + "\" has " + std::to_string(members.size()) +
                             " clips; at least 3 are needed");
        }
        const auto counts = split_counts(members.size(), spec.ratios);
        std::mt19937_64 rng(mix64(spec.seed ^ fnv1a(label)));
        std::shuffle(members.begin(), members.end(), rng);
        std::size_t pos = 0;
        for (std::size_t p = 0; p < 3; ++p) {
            parts[p].insert(parts[p].end(), members.begin() + long(pos), members.begin() + long(pos + counts[p]));
            pos += counts[p];
        }
    }
    for (auto& p : parts) std::sort(p.begin(), p.end());
    return parts;
}

SplitResult split(const Manifest& manifest, const SplitSpec& spec) {
    std::vector<std::string> labels;
    for (const auto& c : manifest.clips) labels.push_back(c.label);
    const auto parts = split_indices(labels, spec);
    std::array<Manifest, 3> out;
    for (std::size_t p = 0; p < 3; ++p) {
        out[p].format_version = manifest.format_version;
        out[p].cfg = manifest.cfg;
        out[p].base_dir = manifest.base_dir;
        for (std::size_t i : parts[p]) out[p].clips.push_back(manifest.clips[i]);
    }
    return {std::move(out[0]), std::move(out[1]), std::move(out[2])};
}

// ---- dataset ----

Dataset::Dataset(LabelSpace labels, std::size_t channels, std::size_t frames, std::size_t side)
    : labels_(std::move(labels)), channels_(channels), frames_(frames), side_(side) {}

namespace {

Sample make_sample(std::size_t label, const ClipTensor& clip, const std::vector<PersonFrame>& track, std::size_t side) {
    Sample s;
    s.label = label;
    s.skeleton = skeleton_tensor(track);
    for (const auto& pf : track) s.crop.push_back(to_crop_space(pf, side));
    const auto& px = clip.pixels().storage();
    s.pixels.resize(px.size());
    for (std::size_t i = 0; i < px.size(); ++i) {
        s.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(px[i], 0.0f, 1.0f) * 255.0f));
    }
    return s;
}

std::vector<PersonFrame> first_person_track(const ClipAnnotation& a) {
    std::vector<PersonFrame> track;
    for (const auto& f : a.frames) {
        if (f.persons.empty()) throw SchemaError(a.clip_id + ": frame " + std::to_string(f.frame_idx) + " has no person");
        track.push_back(f.persons.front());
    }
    return track;
}

}  // namespace

void Dataset::add(std::size_t label, const ClipTensor& clip, const std::vector<PersonFrame>& track) {
    if (label >= labels_.size()) throw ContractError("dataset: label index out of range");
    if (clip.channels() != channels_ || clip.frames() != frames_ || clip.width() != side_ || clip.height() != side_) {
        throw ShapeError("dataset: clip " + num::shape_str(clip.pixels().dims()) + " does not match (" +
                         std::to_string(channels_) + ", " + std::to_string(frames_) + ", " + std::to_string(side_) +
                         ", " + std::to_string(side_) + ")");
    }
    if (track.size() != frames_) throw ShapeError("dataset: annotation frame count differs from clip");
    samples_.push_back(make_sample(label, clip, track, side_));
}

Dataset Dataset::synthesize(const SynthConfig& cfg) {
    cfg.validate();
    const LabelSpace all = LabelSpace::habitual_behaviors();
    std::vector<std::string> names(all.categories().begin(), all.categories().begin() + long(cfg.num_categories));
    Dataset d(LabelSpace(names), 3, cfg.frames, cfg.side);
    const std::size_t n = cfg.num_categories * cfg.clips_per_category;
    d.samples_.resize(n);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < n; ++i) {
        const SynthClip c = gen_clip(clip_category(cfg, i), cfg, clip_seed(cfg.seed, i));
        d.samples_[i] = make_sample(c.category, c.clip, first_person_track(c.annotation), cfg.side);
    }
    return d;
}

Dataset Dataset::load(const Manifest& manifest, const LabelSpace& labels) {
    if (manifest.clips.empty()) throw EmptyInput("dataset: manifest lists no clips");
    Dataset d;
    for (std::size_t i = 0; i < manifest.clips.size(); ++i) {
        const ClipTensor clip = read_clip(manifest.clip_path(i));
        const ClipAnnotation ann = read_annotation_file(manifest.annotation_path(i));
        if (i == 0) d = Dataset(labels, clip.channels(), clip.frames(), clip.width());
        if (!labels.contains(manifest.clips[i].label)) {
            throw ContractError("dataset: label \"" + manifest.clips[i].label + "\" is not in the label space");
        }
        d.add(labels.index_of(manifest.clips[i].label), clip, first_person_track(ann));
    }
    return d;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
    Dataset d(labels_, channels_, frames_, side_);
    for (std::size_t i : indices) d.samples_.push_back(samples_.at(i));
    return d;
}

std::vector<std::size_t> Dataset::targets() const {
    std::vector<std::size_t> t;
    for (const auto& s : samples_) t.push_back(s.label);
    return t;
}

num::Tensor<float> Dataset::clip(std::size_t i) const {
    const auto& px = samples_.at(i).pixels;
    num::Tensor<float> out({channels_, frames_, side_, side_});
    for (std::size_t k = 0; k < px.size(); ++k) out[k] = static_cast<float>(px[k]) / 255.0f;
    return out;
}

// ---- configuration ----

std::string to_string(Variant v) {
    switch (v) {
        case Variant::Skel: return "skel";
        case Variant::Rgb: return "rgb";
        case Variant::FuseFeature: return "fuse-feature";
        case Variant::FuseScore: return "fuse-score";
    }
    return "skel";
}

Variant parse_variant(const std::string& text) {
    for (Variant v : {Variant::Skel, Variant::Rgb, Variant::FuseFeature, Variant::FuseScore}) {
        if (text == to_string(v)) return v;
    }
    throw ContractError("unknown variant \"" + text + "\" (expected skel, rgb, fuse-feature or fuse-score)");
}

bool TrainConfig::uses_skeleton() const { return variant != Variant::Rgb || mask; }
bool TrainConfig::uses_rgb() const { return variant != Variant::Skel; }

namespace {

nlohmann::json mask_to_json(const MaskConfig& m) {
    return {{"k", m.k}, {"lx", m.lx}, {"ly", m.ly}, {"p", m.p}, {"side", m.side}, {"min_conf", m.min_conf}};
}

MaskConfig mask_from_json(const nlohmann::json& j) {
    MaskConfig m;
    m.k = j.value("k", m.k);
    m.lx = j.value("lx", m.lx);
    m.ly = j.value("ly", m.ly);
    m.p = j.value("p", m.p);
    m.side = j.value("side", m.side);
    m.min_conf = j.value("min_conf", m.min_conf);
    return m;
}

nlohmann::json sgd_to_json(const num::SgdConfig& s) {
    return {{"learning_rate", s.learning_rate}, {"momentum", s.momentum},       {"weight_decay", s.weight_decay},
            {"clip_norm", s.clip_norm},         {"decay_every", s.decay_every}, {"decay_factor", s.decay_factor}};
}

num::SgdConfig sgd_from_json(const nlohmann::json& j) {
    num::SgdConfig s;
    s.learning_rate = j.value("learning_rate", s.learning_rate);
    s.momentum = j.value("momentum", s.momentum);
    s.weight_decay = j.value("weight_decay", s.weight_decay);
    s.clip_norm = j.value("clip_norm", s.clip_norm);
    s.decay_every = j.value("decay_every", s.decay_every);
    s.decay_factor = j.value("decay_factor", s.decay_factor);
    return s;
}

nlohmann::json curve_to_json(const std::vector<CurvePoint>& curve) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : curve) {
        arr.push_back({{"stage", c.stage}, {"epoch", c.epoch}, {"train_loss", c.train_loss}, {"val_acc", c.val_acc}});
    }
    return arr;
}

std::vector<CurvePoint> curve_from_json(const nlohmann::json& j) {
    std::vector<CurvePoint> out;
    if (!j.is_array()) return out;
    for (const auto& c : j) {
        out.push_back({c.value("stage", std::string()), c.value("epoch", std::size_t{0}), c.value("train_loss", 0.0),
                       c.value("val_acc", 0.0)});
    }
    return out;
}

}  // namespace

nlohmann::json TrainConfig::to_json() const {
    return {{"variant", to_string(variant)},
            {"mask", mask},
            {"batch", batch},
            {"epochs", epochs},
            {"fusion_epochs", fusion_epochs},
            {"sgd", sgd_to_json(sgd)},
            {"rgb_learning_rate", rgb_learning_rate},
            {"seed", seed},
            {"mask_cfg", mask_to_json(mask_cfg)},
            {"fusion", fusion.to_json()},
            {"skel", skel.to_json()},
            {"rgb", rgb.to_json()},
            {"double_precision", double_precision}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    if (j.contains("variant")) c.variant = parse_variant(j["variant"].get<std::string>());
    c.mask = j.value("mask", c.mask);
    c.batch = j.value("batch", c.batch);
    c.epochs = j.value("epochs", c.epochs);
    c.fusion_epochs = j.value("fusion_epochs", c.fusion_epochs);
    if (j.contains("sgd")) c.sgd = sgd_from_json(j["sgd"]);
    c.rgb_learning_rate = j.value("rgb_learning_rate", c.rgb_learning_rate);
    c.seed = j.value("seed", c.seed);
    if (j.contains("mask_cfg")) c.mask_cfg = mask_from_json(j["mask_cfg"]);
    if (j.contains("fusion")) c.fusion = FusionConfig::from_json(j["fusion"]);
    if (j.contains("skel")) c.skel = SkeletonNetConfig::from_json(j["skel"]);
    if (j.contains("rgb")) c.rgb = RgbNetConfig::from_json(j["rgb"]);
    c.double_precision = j.value("double_precision", c.double_precision);
    return c;
}

// ---- models ----

namespace {

struct Geometry {
    std::vector<std::string> labels;
    std::size_t channels = 3, frames = 0, side = 0;
};

template <typename T>
struct Model {
    TrainConfig cfg;
    Geometry geo;
    std::unique_ptr<SkeletonNet<T>> skel;
    std::unique_ptr<RgbNet<T>> rgb;
    std::unique_ptr<FeatureFusion<T>> fuse;

    Model(TrainConfig c, Geometry g) : cfg(std::move(c)), geo(std::move(g)) {
        if (cfg.batch == 0) throw ContractError("train: batch size must be positive");
        cfg.fusion.validate();
        if (cfg.mask && cfg.uses_rgb()) {
            cfg.mask_cfg.validate();
            if (cfg.mask_cfg.side != geo.side) {
                throw ContractError("mask side " + std::to_string(cfg.mask_cfg.side) + " differs from clip side " +
                                    std::to_string(geo.side));
            }
        }
        const std::size_t classes = geo.labels.size();
        if (cfg.uses_skeleton()) {
            SkeletonNetConfig sc = cfg.skel;
            sc.num_classes = classes;
            skel = std::make_unique<SkeletonNet<T>>(sc);
        }
        if (cfg.uses_rgb()) {
            RgbNetConfig rc = cfg.rgb;
            rc.num_classes = classes;
            rc.channels = geo.channels;
            rgb = std::make_unique<RgbNet<T>>(rc);
        }
        if (cfg.variant == Variant::FuseFeature) {
            fuse = std::make_unique<FeatureFusion<T>>(skel->config().hidden, rgb->config().feature_dim(), classes,
                                                      cfg.fusion, cfg.seed ^ 0x5eedULL);
        }
    }

    std::vector<num::NamedTensor> export_values() const {
        std::vector<num::NamedTensor> out;
        for (const num::ParamStore<T>* s : stores()) {
            auto v = s->export_values();
            out.insert(out.end(), v.begin(), v.end());
        }
        return out;
    }

    void import_values(const std::vector<num::NamedTensor>& values) {
        for (num::ParamStore<T>* s : stores()) s->import_values(values);
    }

    std::vector<num::ParamStore<T>*> stores() const {
        std::vector<num::ParamStore<T>*> out;
        if (skel) out.push_back(&skel->params());
        if (rgb) out.push_back(&rgb->params());
        if (fuse) out.push_back(&fuse->params());
        return out;
    }

    num::Checkpoint checkpoint(const std::vector<CurvePoint>& curve) const {
        num::Checkpoint ck;
        ck.config = {{"train", cfg.to_json()},
                     {"labels", geo.labels},
                     {"channels", geo.channels},
                     {"frames", geo.frames},
                     {"side", geo.side},
                     {"curve", curve_to_json(curve)}};
        ck.params = export_values();
        return ck;
    }
};

Geometry geometry_of(const Dataset& d) { return {d.labels().categories(), d.channels(), d.frames(), d.side()}; }

Geometry geometry_of(const num::Checkpoint& ck) {
    const auto& c = ck.config;
    if (!c.contains("labels") || !c.contains("frames") || !c.contains("side") || !c.contains("train")) {
        throw SchemaError("checkpoint config lacks model geometry");
    }
    return {c["labels"].get<std::vector<std::string>>(), c.value("channels", std::size_t{3}),
            c["frames"].get<std::size_t>(), c["side"].get<std::size_t>()};
}

template <typename T>
Model<T> model_from_checkpoint(const num::Checkpoint& ck) {
    Model<T> m(TrainConfig::from_json(ck.config["train"]), geometry_of(ck));
    m.import_values(ck.params);
    return m;
}

void check_compatible(const Geometry& g, const Dataset& d) {
    if (g.labels != d.labels().categories()) {
        throw ContractError("label space of the data (" + std::to_string(d.labels().size()) +
                            " categories) differs from the model's (" + std::to_string(g.labels.size()) + ")");
    }
    if (g.channels != d.channels() || g.frames != d.frames() || g.side != d.side()) {
        throw ContractError("clip geometry of the data differs from the model's");
    }
}

using WeightTable = std::vector<std::vector<double>>;

template <typename T>
num::Tensor<T> skel_batch(const Dataset& d, std::span<const std::size_t> idx) {
    const std::size_t L = d.frames();
    num::Tensor<T> out({idx.size(), L, kNumJoints, 3});
    const std::size_t per = L * kNumJoints * 3;
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto& src = d[idx[b]].skeleton.storage();
        std::copy(src.begin(), src.end(), out.ptr() + b * per);
    }
    return out;
}

template <typename T>
num::Tensor<T> rgb_batch(const Dataset& d, std::span<const std::size_t> idx, const WeightTable* weights,
                         const MaskConfig& mcfg) {
    const std::size_t per = d.channels() * d.frames() * d.side() * d.side();
    num::Tensor<T> out({idx.size(), d.channels(), d.frames(), d.side(), d.side()});
    for (std::size_t b = 0; b < idx.size(); ++b) {
        num::Tensor<float> clip = d.clip(idx[b]);
        if (weights) clip = mask_frames<float>(clip, (*weights)[idx[b]], d[idx[b]].crop, mcfg);
        std::copy(clip.storage().begin(), clip.storage().end(), out.ptr() + b * per);
    }
    return out;
}

std::vector<std::size_t> labels_of(const Dataset& d, std::span<const std::size_t> idx) {
    std::vector<std::size_t> out;
    for (std::size_t i : idx) out.push_back(d[i].label);
    return out;
}

std::vector<std::size_t> iota(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

template <typename T>
std::size_t argmax_row(const num::Tensor<T>& t, std::size_t row) {
    const std::size_t n = t.dim(1);
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j) {
        if (t[row * n + j] > t[row * n + best]) best = j;
    }
    return best;
}

// Runs fn(batch indices) over [0, n) in chunks.
template <typename Fn>
void for_batches(std::size_t n, std::size_t batch, Fn&& fn) {
    const auto all = iota(n);
    for (std::size_t s = 0; s < n; s += batch) {
        fn(std::span<const std::size_t>(all.data() + s, std::min(batch, n - s)));
    }
}

template <typename T>
WeightTable skel_attention(const Model<T>& m, const Dataset& d, std::size_t batch) {
    WeightTable out(d.size());
    for_batches(d.size(), batch, [&](std::span<const std::size_t> idx) {
        const auto o = m.skel->forward(num::Var<T>::constant(skel_batch<T>(d, idx)));
        const auto& w = o.weights.value();
        for (std::size_t b = 0; b < idx.size(); ++b) {
            out[idx[b]].assign(w.ptr() + b * kNumJoints, w.ptr() + (b + 1) * kNumJoints);
        }
    });
    return out;
}

// Penultimate features of both channels, (n, dim).
template <typename T>
std::pair<num::Tensor<T>, num::Tensor<T>> channel_features(const Model<T>& m, const Dataset& d,
                                                          const WeightTable* weights, std::size_t batch) {
    const std::size_t ds = m.skel->config().hidden, dr = m.rgb->config().feature_dim();
    num::Tensor<T> fs({d.size(), ds}), fr({d.size(), dr});
    for_batches(d.size(), batch, [&](std::span<const std::size_t> idx) {
        const auto so = m.skel->forward(num::Var<T>::constant(skel_batch<T>(d, idx)));
        const auto ro = m.rgb->forward(num::Var<T>::constant(rgb_batch<T>(d, idx, weights, m.cfg.mask_cfg)));
        for (std::size_t b = 0; b < idx.size(); ++b) {
            std::copy_n(so.feature.value().ptr() + b * ds, ds, fs.ptr() + idx[b] * ds);
            std::copy_n(ro.feature.value().ptr() + b * dr, dr, fr.ptr() + idx[b] * dr);
        }
    });
    return {std::move(fs), std::move(fr)};
}

template <typename T>
num::Tensor<T> gather_rows(const num::Tensor<T>& t, std::span<const std::size_t> idx) {
    const std::size_t w = t.dim(1);
    num::Tensor<T> out({idx.size(), w});
    for (std::size_t b = 0; b < idx.size(); ++b) std::copy_n(t.ptr() + idx[b] * w, w, out.ptr() + b * w);
    return out;
}

template <typename T>
num::Tensor<double> to_double(const num::Tensor<T>& t) {
    return t.template cast<double>();
}

// Class probabilities of every clip in d.
template <typename T>
num::Tensor<double> model_proba(const Model<T>& m, const Dataset& d, std::size_t batch) {
    const std::size_t classes = m.geo.labels.size();
    num::Tensor<double> out({d.size(), classes});
    WeightTable weights;
    const WeightTable* wp = nullptr;
    if (m.cfg.mask && m.rgb) {
        weights = skel_attention(m, d, batch);
        wp = &weights;
    }
    for_batches(d.size(), batch, [&](std::span<const std::size_t> idx) {
        num::Tensor<double> p;
        switch (m.cfg.variant) {
            case Variant::Skel: {
                const auto o = m.skel->forward(num::Var<T>::constant(skel_batch<T>(d, idx)));
                p = to_double(num::softmax_values(o.logits.value(), 1));
                break;
            }
            case Variant::Rgb: {
                const auto o = m.rgb->forward(num::Var<T>::constant(rgb_batch<T>(d, idx, wp, m.cfg.mask_cfg)));
                p = to_double(num::softmax_values(o.logits.value(), 1));
                break;
            }
            case Variant::FuseScore: {
                const auto so = m.skel->forward(num::Var<T>::constant(skel_batch<T>(d, idx)));
                const auto ro = m.rgb->forward(num::Var<T>::constant(rgb_batch<T>(d, idx, wp, m.cfg.mask_cfg)));
                p = score_fuse<double>(to_double(num::softmax_values(so.logits.value(), 1)),
                                       to_double(num::softmax_values(ro.logits.value(), 1)), m.cfg.fusion);
                break;
            }
            case Variant::FuseFeature: {
                const auto so = m.skel->forward(num::Var<T>::constant(skel_batch<T>(d, idx)));
                const auto ro = m.rgb->forward(num::Var<T>::constant(rgb_batch<T>(d, idx, wp, m.cfg.mask_cfg)));
                const auto logits = m.fuse->forward(so.feature, ro.feature);
                p = to_double(num::softmax_values(logits.value(), 1));
                break;
            }
        }
        for (std::size_t b = 0; b < idx.size(); ++b) std::copy_n(p.ptr() + b * classes, classes, out.ptr() + idx[b] * classes);
    });
    return out;
}

// One optimization stage: momentum SGD over shuffled minibatches, keeping
// the parameters of the best validation epoch.
template <typename T, typename LossFn, typename PredictFn>
void run_stage(const std::string& name, std::vector<num::Var<T>> params, std::size_t n_train, std::size_t n_val,
               const std::vector<std::size_t>& val_targets, std::size_t epochs, double lr, const TrainConfig& cfg,
               std::uint64_t stage_salt, LossFn&& loss_fn, PredictFn&& predict_fn, std::vector<CurvePoint>& curve,
               const EpochHook& hook) {
    num::SgdConfig sc = cfg.sgd;
    sc.learning_rate = lr;
    num::SgdMomentum<T> opt(params, sc);
    std::vector<num::Tensor<T>> best;
    double best_acc = -1;
    std::mt19937_64 rng(mix64(cfg.seed ^ stage_salt));
    std::vector<std::size_t> order = iota(n_train);
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        const double epoch_lr = opt.learning_rate_for_epoch(int(epoch));
        double loss_sum = 0;
        for (std::size_t s = 0; s < n_train; s += cfg.batch) {
            const std::span<const std::size_t> idx(order.data() + s, std::min(cfg.batch, n_train - s));
            opt.zero_grad();
            const num::Var<T> loss = loss_fn(idx);
            const double lv = double(loss.value()[0]);
            if (!std::isfinite(lv)) {
                throw NumericError(name + " stage: loss became " + std::to_string(lv) + " in epoch " +
                                   std::to_string(epoch + 1) + "; lower the learning rate");
            }
            num::backprop(loss);
            opt.step(epoch_lr);
            loss_sum += lv * double(idx.size());
        }
        CurvePoint pt{name, curve.size() + 1, loss_sum / double(std::max<std::size_t>(n_train, 1)), 0.0};
        if (n_val > 0) {
            const std::vector<std::size_t> pred = predict_fn();
            std::size_t correct = 0;
            for (std::size_t i = 0; i < n_val; ++i) correct += pred[i] == val_targets[i];
            pt.val_acc = double(correct) / double(n_val);
        }
        curve.push_back(pt);
        if (hook) hook(pt);
        if (n_val == 0 || pt.val_acc > best_acc) {
            best_acc = pt.val_acc;
            best.clear();
            for (const auto& p : params) best.push_back(p.value());
        }
    }
    if (!best.empty()) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i].mutable_value() = best[i];
    }
}

template <typename T>
TrainResult train_impl(const TrainConfig& cfg, const Dataset& tr, const Dataset& va, const EpochHook& hook) {
    if (tr.size() == 0) throw EmptyInput("train: empty training set");
    if (va.size() > 0) check_compatible(geometry_of(tr), va);
    TrainConfig run_cfg = cfg;
    if (run_cfg.uses_skeleton() && run_cfg.skel.input_mean.empty()) {
        std::vector<num::Tensor<float>> skels;
        for (std::size_t i = 0; i < tr.size(); ++i) skels.push_back(tr[i].skeleton);
        std::tie(run_cfg.skel.input_mean, run_cfg.skel.input_std) = skeleton_input_stats(skels, run_cfg.skel.center_time);
    }
    Model<T> m(run_cfg, geometry_of(tr));
    std::vector<CurvePoint> curve;
    const auto val_targets = va.targets();
    const std::size_t eval_batch = std::max<std::size_t>(cfg.batch, 32);

    if (m.skel) {
        run_stage<T>(
            "skel", m.skel->params().vars(), tr.size(), va.size(), val_targets, cfg.epochs, cfg.sgd.learning_rate, cfg,
            0x51e1ULL,
            [&](std::span<const std::size_t> idx) {
                const auto o = m.skel->forward(num::Var<T>::constant(skel_batch<T>(tr, idx)));
                const auto y = labels_of(tr, idx);
                return num::cross_entropy(o.logits, std::span<const std::size_t>(y));
            },
            [&] {
                std::vector<std::size_t> pred(va.size());
                for_batches(va.size(), eval_batch, [&](std::span<const std::size_t> idx) {
                    const auto o = m.skel->forward(num::Var<T>::constant(skel_batch<T>(va, idx)));
                    for (std::size_t b = 0; b < idx.size(); ++b) pred[idx[b]] = argmax_row(o.logits.value(), b);
                });
                return pred;
            },
            curve, hook);
    }

    WeightTable w_tr, w_va;
    const WeightTable* wp_tr = nullptr;
    const WeightTable* wp_va = nullptr;
    if (m.cfg.mask && m.rgb) {
        // Attention is read once from the trained skeleton and held fixed.
        w_tr = skel_attention(m, tr, eval_batch);
        w_va = skel_attention(m, va, eval_batch);
        wp_tr = &w_tr;
        wp_va = &w_va;
    }

    if (m.rgb) {
        const double lr = cfg.rgb_learning_rate > 0 ? cfg.rgb_learning_rate : cfg.sgd.learning_rate;
        run_stage<T>(
            "rgb", m.rgb->params().vars(), tr.size(), va.size(), val_targets, cfg.epochs, lr, cfg, 0x7667ULL,
            [&](std::span<const std::size_t> idx) {
                const auto o = m.rgb->forward(num::Var<T>::constant(rgb_batch<T>(tr, idx, wp_tr, m.cfg.mask_cfg)));
                const auto y = labels_of(tr, idx);
                return num::cross_entropy(o.logits, std::span<const std::size_t>(y));
            },
            [&] {
                std::vector<std::size_t> pred(va.size());
                for_batches(va.size(), eval_batch, [&](std::span<const std::size_t> idx) {
                    const auto o =
                        m.rgb->forward(num::Var<T>::constant(rgb_batch<T>(va, idx, wp_va, m.cfg.mask_cfg)));
                    for (std::size_t b = 0; b < idx.size(); ++b) pred[idx[b]] = argmax_row(o.logits.value(), b);
                });
                return pred;
            },
            curve, hook);
    }

    if (m.fuse) {
        // Channel features are frozen; only the fusion head learns.
        const auto [fs_tr, fr_tr] = channel_features(m, tr, wp_tr, eval_batch);
        const auto [fs_va, fr_va] = channel_features(m, va, wp_va, eval_batch);
        run_stage<T>(
            "fuse", m.fuse->params().vars(), tr.size(), va.size(), val_targets, cfg.fusion_epochs,
            cfg.sgd.learning_rate, cfg, 0xf05eULL,
            [&](std::span<const std::size_t> idx) {
                const auto logits = m.fuse->forward(num::Var<T>::constant(gather_rows(fs_tr, idx)),
                                                    num::Var<T>::constant(gather_rows(fr_tr, idx)));
                const auto y = labels_of(tr, idx);
                return num::cross_entropy(logits, std::span<const std::size_t>(y));
            },
            [&] {
                std::vector<std::size_t> pred(va.size());
                if (va.size() == 0) return pred;
                const auto logits = m.fuse->forward(num::Var<T>::constant(fs_va), num::Var<T>::constant(fr_va));
                for (std::size_t i = 0; i < va.size(); ++i) pred[i] = argmax_row(logits.value(), i);
                return pred;
            },
            curve, hook);
    }
    return {m.checkpoint(curve), curve};
}

bool checkpoint_is_double(const num::Checkpoint& ck) {
    return ck.config.contains("train") && ck.config["train"].value("double_precision", false);
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set, const EpochHook& hook) {
    return cfg.double_precision ? train_impl<double>(cfg, train_set, val_set, hook)
                                : train_impl<float>(cfg, train_set, val_set, hook);
}

num::Checkpoint init_checkpoint(const TrainConfig& cfg, const Dataset& like) {
    if (cfg.double_precision) return Model<double>(cfg, geometry_of(like)).checkpoint({});
    return Model<float>(cfg, geometry_of(like)).checkpoint({});
}

void write_curve_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& curve) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "epoch,train_loss,val_acc,stage\n";
    out.precision(9);
    for (const auto& c : curve) out << c.epoch << ',' << c.train_loss << ',' << c.val_acc << ',' << c.stage << '\n';
    if (!out) throw IoError("short write to " + path.string());
}

num::Checkpoint project_checkpoint(const num::Checkpoint& ckpt, Variant target) {
    if (!ckpt.config.contains("train")) throw SchemaError("checkpoint config lacks the training config");
    const TrainConfig src = TrainConfig::from_json(ckpt.config["train"]);
    TrainConfig dst = src;
    dst.variant = target;
    if (target == Variant::Skel) dst.mask = false;
    if (dst.mask != src.mask) throw ContractError("project_checkpoint: mask setting must match the source");
    const bool need_fuse = target == Variant::FuseFeature;
    if ((dst.uses_skeleton() && !src.uses_skeleton()) || (dst.uses_rgb() && !src.uses_rgb()) ||
        (need_fuse && src.variant != Variant::FuseFeature)) {
        throw ContractError("project_checkpoint: " + to_string(src.variant) + " checkpoint lacks what " +
                            to_string(target) + " needs");
    }
    const auto keep = [&](const std::string& name) {
        if (name.rfind("skel.", 0) == 0) return dst.uses_skeleton();
        if (name.rfind("rgb.", 0) == 0) return dst.uses_rgb();
        if (name.rfind("fuse.", 0) == 0) return need_fuse;
        return true;
    };
    num::Checkpoint out;
    out.config = ckpt.config;
    out.config["train"] = dst.to_json();
    for (const auto& p : ckpt.params)
        if (keep(p.name)) out.params.push_back(p);
    if (ckpt.config.contains("curve")) {
        std::vector<CurvePoint> curve;
        for (const auto& c : curve_from_json(ckpt.config["curve"])) {
            if (keep(c.stage + ".")) curve.push_back(c);
        }
        out.config["curve"] = curve_to_json(curve);
    }
    return out;
}

// ---- ablation ladder ----

nlohmann::json LadderConfig::to_json() const {
    return {{"data", data.to_json()}, {"train", train.to_json()}, {"seeds", seeds}, {"with_mask", with_mask}};
}

LadderConfig LadderConfig::from_json(const nlohmann::json& j) {
    LadderConfig c;
    if (j.contains("data")) c.data = SynthConfig::from_json(j["data"]);
    if (j.contains("train")) c.train = TrainConfig::from_json(j["train"]);
    c.seeds = j.value("seeds", c.seeds);
    c.with_mask = j.value("with_mask", c.with_mask);
    return c;
}

double LadderRow::mean() const {
    if (accuracy.empty()) return std::numeric_limits<double>::quiet_NaN();
    return std::accumulate(accuracy.begin(), accuracy.end(), 0.0) / double(accuracy.size());
}

const LadderRow& LadderReport::row(const std::string& name) const {
    for (const auto& r : rows)
        if (r.name == name) return r;
    throw ContractError("ladder report has no row " + name);
}

nlohmann::json LadderReport::to_json() const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows) {
        out.push_back({{"name", r.name},
                       {"variant", to_string(r.variant)},
                       {"mask", r.mask},
                       {"accuracy", r.accuracy},
                       {"mean", r.mean()},
                       {"cpu_seconds", r.cpu_seconds}});
    }
    return {{"rows", out}};
}

namespace {

double cpu_now() { return double(std::clock()) / double(CLOCKS_PER_SEC); }

}  // namespace

LadderReport run_ladder(const LadderConfig& cfg, const EpochHook& hook) {
    if (cfg.seeds.empty()) throw ContractError("ladder: no seeds");
    LadderReport report;
    const std::vector<Variant> fused_rungs = {Variant::Skel, Variant::Rgb, Variant::FuseScore, Variant::FuseFeature};
    for (bool mask : {false, true}) {
        if (mask && !cfg.with_mask) break;
        for (Variant v : fused_rungs) {
            if (mask && v == Variant::Skel) continue;
            report.rows.push_back({to_string(v) + (mask ? "+mask" : ""), v, mask, {}, {}});
        }
    }
    for (std::uint64_t seed : cfg.seeds) {
        const double t0 = cpu_now();
        SynthConfig sc = cfg.data;
        sc.seed = seed;
        const Dataset all = Dataset::synthesize(sc);
        std::vector<std::string> labels;
        for (std::size_t i = 0; i < all.size(); ++i) labels.push_back(all.labels().name(all[i].label));
        const auto parts = split_indices(labels, {{0.7, 0.2, 0.1}, seed});
        const Dataset tr = all.subset(parts[0]), te = all.subset(parts[1]), va = all.subset(parts[2]);
        const double data_cpu = cpu_now() - t0;

        for (bool mask : {false, true}) {
            if (mask && !cfg.with_mask) break;
            TrainConfig tc = cfg.train;
            tc.variant = Variant::FuseFeature;
            tc.mask = mask;
            tc.seed = seed;
            if (mask) tc.mask_cfg = MaskConfig::for_side(sc.side, 0.25, cfg.train.mask_cfg.p);
            std::map<std::string, double> stage_cpu;
            double mark = cpu_now();
            const TrainResult r = train(tc, tr, va, [&](const CurvePoint& p) {
                const double now = cpu_now();
                stage_cpu[p.stage] += now - mark;
                mark = now;
                if (hook) hook(p);
            });
            for (auto& row : report.rows) {
                if (row.mask != mask) continue;
                const num::Checkpoint ck = project_checkpoint(r.checkpoint, row.variant);
                const double e0 = cpu_now();
                row.accuracy.push_back(evaluate(ck, te).accuracy);
                TrainConfig used = tc;
                used.variant = row.variant;
                double cpu = data_cpu + (cpu_now() - e0);
                if (used.uses_skeleton()) cpu += stage_cpu["skel"];
                if (used.uses_rgb()) cpu += stage_cpu["rgb"];
                if (row.variant == Variant::FuseFeature) cpu += stage_cpu["fuse"];
                row.cpu_seconds.push_back(cpu);
            }
        }
    }
    return report;
}

// ---- evaluation ----

nlohmann::json EvalReport::to_json() const {
    nlohmann::json per = nlohmann::json::object();
    for (std::size_t i = 0; i < categories.size(); ++i) {
        per[categories[i]] = std::isnan(per_category[i]) ? nlohmann::json(nullptr) : nlohmann::json(per_category[i]);
    }
    return {{"accuracy", accuracy},
            {"categories", categories},
            {"per_category", per},
            {"confusion", confusion},
            {"loss_curve", curve_to_json(loss_curve)}};
}

EvalReport report_from_predictions(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                   const std::vector<std::string>& categories) {
    if (truth.size() != predicted.size()) throw ContractError("evaluate: prediction count differs from truth count");
    const std::size_t k = categories.size();
    EvalReport r;
    r.categories = categories;
    r.confusion.assign(k, std::vector<std::size_t>(k, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] >= k || predicted[i] >= k) throw IndexError("evaluate: class index out of range");
        ++r.confusion[truth[i]][predicted[i]];
    }
    std::size_t trace = 0, total = 0;
    r.per_category.assign(k, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t row = 0;
        for (std::size_t p = 0; p < k; ++p) row += r.confusion[c][p];
        trace += r.confusion[c][c];
        total += row;
        if (row > 0) r.per_category[c] = double(r.confusion[c][c]) / double(row);
    }
    r.accuracy = total ? double(trace) / double(total) : 0.0;
    return r;
}

num::Tensor<double> predict_proba(const num::Checkpoint& ckpt, const Dataset& data, std::size_t batch) {
    if (batch == 0) throw ContractError("evaluate: batch size must be positive");
    check_compatible(geometry_of(ckpt), data);
    if (checkpoint_is_double(ckpt)) return model_proba(model_from_checkpoint<double>(ckpt), data, batch);
    return model_proba(model_from_checkpoint<float>(ckpt), data, batch);
}

EvalReport evaluate(const num::Checkpoint& ckpt, const Dataset& data, std::size_t batch) {
    const num::Tensor<double> p = predict_proba(ckpt, data, batch);
    std::vector<std::size_t> pred(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) pred[i] = argmax_row(p, i);
    const auto truth = data.targets();
    EvalReport r = report_from_predictions(truth, pred, data.labels().categories());
    if (ckpt.config.contains("curve")) r.loss_curve = curve_from_json(ckpt.config["curve"]);
    return r;
}

num::Tensor<double> attention_weights(const num::Checkpoint& ckpt, const Dataset& data, std::size_t batch) {
    check_compatible(geometry_of(ckpt), data);
    const auto table = [&]<typename T>(const Model<T>& m) {
        if (!m.skel) throw ContractError("checkpoint has no skeleton channel");
        return skel_attention(m, data, batch);
    };
    const WeightTable w = checkpoint_is_double(ckpt) ? table(model_from_checkpoint<double>(ckpt))
                                                     : table(model_from_checkpoint<float>(ckpt));
    num::Tensor<double> out({data.size(), kNumJoints});
    for (std::size_t i = 0; i < w.size(); ++i) std::copy(w[i].begin(), w[i].end(), out.ptr() + i * kNumJoints);
    return out;
}

// ---- statistics ----

nlohmann::json StatsReport::to_json() const {
    nlohmann::json ppf = nlohmann::json::object();
    for (const auto& [k, v] : persons_per_frame) ppf[std::to_string(k)] = v;
    return {{"clips", clips},
            {"frames", frames},
            {"per_category", per_category},
            {"frames_per_category", frames_per_category},
            {"persons_per_frame", ppf},
            {"emotions", emotions}};
}

StatsReport stats(const std::vector<ClipAnnotation>& annotations, const LabelSpace& labels) {
    StatsReport r;
    for (const auto& a : annotations) {
        ++r.clips;
        r.frames += a.frames.size();
        std::set<std::string> clip_labels;
        for (const auto& f : a.frames) {
            ++r.persons_per_frame[f.persons.size()];
            for (const auto& p : f.persons) clip_labels.insert(p.labels.begin(), p.labels.end());
        }
        for (const auto& l : clip_labels) {
            ++r.per_category[l];
            r.frames_per_category[l] += a.frames.size();
        }
    }
    for (const auto& [name, _] : r.per_category) {
        if (labels.contains(name)) {
            auto e = labels.emotions(name);
            if (!e.empty()) r.emotions[name] = std::move(e);
        }
    }
    return r;
}

StatsReport stats(const Manifest& manifest, const LabelSpace& labels) {
    std::vector<ClipAnnotation> anns;
    for (std::size_t i = 0; i < manifest.clips.size(); ++i) anns.push_back(read_annotation_file(manifest.annotation_path(i)));
    return stats(anns, labels);
}

std::vector<std::string> emotion_lookup(const std::string& behavior) {
    const LabelSpace ls = LabelSpace::habitual_behaviors();
    return ls.contains(behavior) ? ls.emotions(behavior) : std::vector<std::string>{};
}

}  // namespace habitmask
