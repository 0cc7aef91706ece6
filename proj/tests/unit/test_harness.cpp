#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "habitmask/errors.hpp"
#include "habitmask/harness.hpp"

using namespace habitmask;
namespace fs = std::filesystem;

namespace {

Manifest labelled_manifest(const std::vector<std::pair<std::string, std::size_t>>& counts) {
    Manifest m;
    std::size_t k = 0;
    for (const auto& [label, n] : counts)
        for (std::size_t i = 0; i < n; ++i, ++k) {
            const std::string stem = "c" + std::to_string(k);
            m.clips.push_back({stem + ".hclip", stem + ".jsonl", label});
        }
    return m;
}

SynthConfig tiny_data(std::size_t categories = 5, std::size_t per_category = 4) {
    SynthConfig c;
    c.num_categories = categories;
    c.clips_per_category = per_category;
    c.frames = 8;
    c.side = 32;
    c.clutter = 2;
    c.seed = 4;
    return c;
}

TrainConfig tiny_train(Variant v, bool mask) {
    TrainConfig t;
    t.variant = v;
    t.mask = mask;
    t.batch = 4;
    t.epochs = 2;
    t.fusion_epochs = 2;
    t.seed = 9;
    t.mask_cfg = MaskConfig::for_side(32);
    t.skel.hidden = 8;
    t.skel.gc1 = 4;
    t.skel.gc2 = 6;
    t.skel.attention = 4;
    t.fusion.dim = 8;
    return t;
}

std::string params_bytes(const num::Checkpoint& ck) {
    num::Checkpoint bare;
    bare.params = ck.params;
    return num::encode_checkpoint(bare);
}

}  // namespace

TEST_CASE("split counts follow largest remainders") {
    CHECK(split_counts(10, {0.7, 0.2, 0.1}) == std::array<std::size_t, 3>{7, 2, 1});
    CHECK(split_counts(40, {0.7, 0.2, 0.1}) == std::array<std::size_t, 3>{28, 8, 4});
    CHECK(split_counts(3, {0.7, 0.2, 0.1}) == std::array<std::size_t, 3>{2, 1, 0});
    CHECK(split_counts(7, {0.5, 0.25, 0.25}) == std::array<std::size_t, 3>{3, 2, 2});
    CHECK_THROWS_AS(split_counts(10, {0.7, 0.2, 0.2}), ContractError);
    CHECK_THROWS_AS(split_counts(10, {1.1, -0.1, 0.0}), ContractError);
}

TEST_CASE("split: 10 clips per category give 7/2/1") {
    std::vector<std::pair<std::string, std::size_t>> counts;
    for (int c = 0; c < 30; ++c) counts.push_back({"cat" + std::to_string(c), 10});
    const Manifest m = labelled_manifest(counts);
    const SplitResult r = split(m, {{0.7, 0.2, 0.1}, 5});
    CHECK(r.train.clips.size() == 210);
    CHECK(r.test.clips.size() == 60);
    CHECK(r.val.clips.size() == 30);
    std::map<std::string, std::array<std::size_t, 3>> per;
    for (const auto& e : r.train.clips) ++per[e.label][0];
    for (const auto& e : r.test.clips) ++per[e.label][1];
    for (const auto& e : r.val.clips) ++per[e.label][2];
    for (const auto& [label, n] : per) CHECK(n == std::array<std::size_t, 3>{7, 2, 1});
}

TEST_CASE("split names a category that is too small") {
    const Manifest m = labelled_manifest({{"rub hands", 10}, {"touch ear", 2}});
    try {
        split(m, {});
        FAIL("expected SplitError");
    } catch (const SplitError& e) {
        CHECK(std::string(e.what()).find("touch ear") != std::string::npos);
    }
}

TEST_CASE("split seed changes membership but not counts") {
    const Manifest m = labelled_manifest({{"a", 20}, {"b", 13}, {"c", 7}});
    const SplitResult x = split(m, {{0.7, 0.2, 0.1}, 1});
    const SplitResult y = split(m, {{0.7, 0.2, 0.1}, 2});
    const SplitResult x2 = split(m, {{0.7, 0.2, 0.1}, 1});
    CHECK(x.train.clips.size() == y.train.clips.size());
    CHECK(x.test.clips.size() == y.test.clips.size());
    CHECK(x.val.clips.size() == y.val.clips.size());
    const auto paths = [](const Manifest& mm) {
        std::vector<std::string> p;
        for (const auto& e : mm.clips) p.push_back(e.path);
        return p;
    };
    CHECK(paths(x.train) != paths(y.train));
    CHECK(paths(x.train) == paths(x2.train));
    CHECK(paths(x.val) == paths(x2.val));
}

TEST_CASE("split is an exact stratified partition over random manifests") {
    std::mt19937_64 rng(1234);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t cats = 1 + rng() % 12;
        std::vector<std::pair<std::string, std::size_t>> counts;
        for (std::size_t c = 0; c < cats; ++c) counts.push_back({"k" + std::to_string(c), 3 + rng() % 40});
        Manifest m = labelled_manifest(counts);
        std::shuffle(m.clips.begin(), m.clips.end(), rng);
        const SplitSpec spec{{0.7, 0.2, 0.1}, rng()};
        const auto idx = split_indices([&] {
            std::vector<std::string> l;
            for (const auto& e : m.clips) l.push_back(e.label);
            return l;
        }(), spec);

        std::vector<int> seen(m.clips.size(), 0);
        std::map<std::string, std::array<double, 3>> got;
        for (std::size_t part = 0; part < 3; ++part)
            for (std::size_t i : idx[part]) {
                ++seen.at(i);
                got[m.clips[i].label][part] += 1;
            }
        CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
        for (const auto& [label, n] : counts)
            for (std::size_t part = 0; part < 3; ++part) {
                CHECK(std::abs(got[label][part] - spec.ratios[part] * double(n)) < 1.0);
            }
        const auto again = split_indices(
            [&] {
                std::vector<std::string> l;
                for (const auto& e : m.clips) l.push_back(e.label);
                return l;
            }(),
            spec);
        CHECK(again == idx);
    }
}

TEST_CASE("variants parse and configs roundtrip") {
    for (Variant v : {Variant::Skel, Variant::Rgb, Variant::FuseFeature, Variant::FuseScore}) {
        CHECK(parse_variant(to_string(v)) == v);
    }
    CHECK_THROWS_AS(parse_variant("both"), ContractError);
    TrainConfig t = tiny_train(Variant::FuseScore, true);
    t.fusion.mode = FusionMode::Score;
    t.fusion.w_skel = 0.7;
    t.fusion.w_rgb = 0.3;
    t.sgd.learning_rate = 0.02;
    const TrainConfig back = TrainConfig::from_json(t.to_json());
    CHECK(back.to_json() == t.to_json());
    CHECK(back.uses_skeleton());
    CHECK(back.uses_rgb());
    CHECK(tiny_train(Variant::Rgb, true).uses_skeleton());
    CHECK_FALSE(tiny_train(Variant::Rgb, false).uses_skeleton());
    CHECK_FALSE(tiny_train(Variant::Skel, false).uses_rgb());
}

TEST_CASE("two skeleton epochs on 30 x 10 lower the training loss") {
    SynthConfig sc;
    sc.clips_per_category = 10;
    const Dataset all = Dataset::synthesize(sc);
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < all.size(); ++i) labels.push_back(all.labels().name(all[i].label));
    const auto parts = split_indices(labels, {});
    TrainConfig tc;
    tc.epochs = 2;
    tc.sgd.decay_every = 0;
    const TrainResult r = train(tc, all.subset(parts[0]), all.subset(parts[2]));
    REQUIRE(r.curve.size() == 2);
    CHECK(r.curve[0].stage == "skel");
    CHECK(r.curve[1].train_loss < r.curve[0].train_loss);
}

TEST_CASE("64-bit training is bitwise reproducible") {
    const Dataset d = Dataset::synthesize(tiny_data());
    const Dataset va = d.subset({0, 5, 10, 15});
    TrainConfig tc = tiny_train(Variant::FuseFeature, true);
    tc.double_precision = true;
    const std::string a = num::encode_checkpoint(train(tc, d, va).checkpoint);
    const std::string b = num::encode_checkpoint(train(tc, d, va).checkpoint);
    CHECK(a == b);
    tc.seed = 10;
    CHECK(num::encode_checkpoint(train(tc, d, va).checkpoint) != a);
}

TEST_CASE("divergence aborts training") {
    const Dataset d = Dataset::synthesize(tiny_data());
    TrainConfig tc = tiny_train(Variant::Skel, false);
    tc.sgd.learning_rate = 1e30;
    tc.sgd.clip_norm = 0;
    tc.epochs = 5;
    CHECK_THROWS_AS(train(tc, d, d), NumericError);
}

TEST_CASE("mask training needs a mask sized for the clips") {
    const Dataset d = Dataset::synthesize(tiny_data());
    TrainConfig tc = tiny_train(Variant::Rgb, true);
    tc.mask_cfg = MaskConfig::for_side(64);
    CHECK_THROWS_AS(train(tc, d, d), ContractError);
}

TEST_CASE("channels of a fused model equal the separately trained channels") {
    const Dataset d = Dataset::synthesize(tiny_data());
    const Dataset va = d.subset({1, 6, 11, 16});
    for (bool mask : {false, true}) {
        const num::Checkpoint fused = train(tiny_train(Variant::FuseFeature, mask), d, va).checkpoint;
        if (!mask) {
            const num::Checkpoint skel = train(tiny_train(Variant::Skel, false), d, va).checkpoint;
            CHECK(params_bytes(project_checkpoint(fused, Variant::Skel)) == params_bytes(skel));
        }
        const num::Checkpoint rgb = train(tiny_train(Variant::Rgb, mask), d, va).checkpoint;
        CHECK(params_bytes(project_checkpoint(fused, Variant::Rgb)) == params_bytes(rgb));
        const num::Checkpoint score = train(tiny_train(Variant::FuseScore, mask), d, va).checkpoint;
        const num::Checkpoint projected = project_checkpoint(fused, Variant::FuseScore);
        CHECK(params_bytes(projected) == params_bytes(score));
        CHECK(predict_proba(projected, va).storage() == predict_proba(score, va).storage());
    }
    const num::Checkpoint skel = train(tiny_train(Variant::Skel, false), d, va).checkpoint;
    CHECK_THROWS_AS(project_checkpoint(skel, Variant::Rgb), ContractError);
}

TEST_CASE("report from predictions") {
    const std::vector<std::string> cats = {"a", "b", "c"};
    SUBCASE("perfect predictions") {
        const std::vector<std::size_t> t = {0, 1, 2, 2, 1, 0};
        const EvalReport r = report_from_predictions(t, t, cats);
        CHECK(r.accuracy == 1.0);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) CHECK((r.confusion[i][j] == 0) == (i != j));
    }
    SUBCASE("trace over total, and the per-category mean on balanced sets") {
        std::mt19937_64 rng(3);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<std::size_t> t, p;
            for (std::size_t c = 0; c < 3; ++c)
                for (int i = 0; i < 7; ++i) {
                    t.push_back(c);
                    p.push_back(rng() % 3);
                }
            const EvalReport r = report_from_predictions(t, p, cats);
            std::size_t hits = 0;
            for (std::size_t i = 0; i < t.size(); ++i) hits += t[i] == p[i];
            CHECK(r.accuracy == doctest::Approx(double(hits) / double(t.size())).epsilon(1e-15));
            const double mean = std::accumulate(r.per_category.begin(), r.per_category.end(), 0.0) / 3.0;
            CHECK(r.accuracy == doctest::Approx(mean).epsilon(1e-12));
        }
    }
    SUBCASE("categories without clips") {
        const std::vector<std::size_t> t = {0, 0}, p = {0, 1};
        const EvalReport r = report_from_predictions(t, p, cats);
        CHECK(r.accuracy == 0.5);
        CHECK(std::isnan(r.per_category[2]));
        CHECK(r.to_json()["per_category"]["c"].is_null());
    }
    CHECK_THROWS_AS(report_from_predictions(std::vector<std::size_t>{0}, std::vector<std::size_t>{}, cats),
                    ContractError);
    CHECK_THROWS_AS(report_from_predictions(std::vector<std::size_t>{0}, std::vector<std::size_t>{3}, cats),
                    IndexError);
}

TEST_CASE("evaluation ignores batch size and clip order") {
    const Dataset d = Dataset::synthesize(tiny_data());
    for (Variant v : {Variant::Skel, Variant::FuseFeature}) {
        TrainConfig tc = tiny_train(v, v == Variant::FuseFeature);
        const num::Checkpoint ck = init_checkpoint(tc, d);
        const auto p1 = predict_proba(ck, d, 1);
        const auto p7 = predict_proba(ck, d, 7);
        const auto p32 = predict_proba(ck, d, 32);
        CHECK(p1.storage() == p7.storage());
        CHECK(p1.storage() == p32.storage());
        std::vector<std::size_t> perm(d.size());
        std::iota(perm.begin(), perm.end(), 0);
        std::mt19937_64 rng(2);
        std::shuffle(perm.begin(), perm.end(), rng);
        const auto pp = predict_proba(ck, d.subset(perm), 5);
        const std::size_t k = p1.dim(1);
        for (std::size_t i = 0; i < perm.size(); ++i)
            for (std::size_t c = 0; c < k; ++c) CHECK(pp.at(i, c) == p1.at(perm[i], c));
        const EvalReport a = evaluate(ck, d, 3), b = evaluate(ck, d.subset(perm), 11);
        CHECK(a.accuracy == b.accuracy);
        CHECK(a.confusion == b.confusion);
    }
}

TEST_CASE("evaluation rejects a different label space") {
    const Dataset d = Dataset::synthesize(tiny_data(5));
    const Dataset other = Dataset::synthesize(tiny_data(6));
    const num::Checkpoint ck = init_checkpoint(tiny_train(Variant::Skel, false), d);
    CHECK_THROWS_AS(evaluate(ck, other), ContractError);
    CHECK_THROWS_AS(predict_proba(ck, d, 0), ContractError);
}

TEST_CASE("attention weights are per-clip distributions") {
    const Dataset d = Dataset::synthesize(tiny_data());
    const num::Checkpoint ck = init_checkpoint(tiny_train(Variant::Skel, false), d);
    const auto w = attention_weights(ck, d, 3);
    REQUIRE(w.dim(0) == d.size());
    REQUIRE(w.dim(1) == kNumJoints);
    for (std::size_t i = 0; i < d.size(); ++i) {
        double s = 0;
        for (std::size_t j = 0; j < kNumJoints; ++j) {
            CHECK(w.at(i, j) > 0.0);
            s += w.at(i, j);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
    const num::Checkpoint rgb_only = init_checkpoint(tiny_train(Variant::Rgb, false), d);
    CHECK_THROWS_AS(attention_weights(rgb_only, d), ContractError);
}

TEST_CASE("datasets load from a generated manifest") {
    const fs::path dir = fs::temp_directory_path() / "habitmask_test_load";
    fs::remove_all(dir);
    const SynthConfig sc = tiny_data(3, 3);
    gen_dataset(sc, dir);
    const Manifest m = read_manifest(dir / "manifest.json");
    const LabelSpace labels = Dataset::synthesize(sc).labels();
    const Dataset loaded = Dataset::load(m, labels);
    const Dataset direct = Dataset::synthesize(sc);
    REQUIRE(loaded.size() == direct.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].label == direct[i].label);
        CHECK(loaded[i].pixels == direct[i].pixels);
        CHECK(loaded[i].skeleton.storage() == direct[i].skeleton.storage());
    }
    const LabelSpace narrow(std::vector<std::string>{labels.name(0), labels.name(1)});
    CHECK_THROWS_AS(Dataset::load(m, narrow), ContractError);
    fs::remove_all(dir);
}

TEST_CASE("curve CSV") {
    const fs::path p = fs::temp_directory_path() / "habitmask_test_curve.csv";
    write_curve_csv(p, {{"skel", 1, 3.25, 0.5}, {"rgb", 2, 1.5, 0.75}});
    std::ifstream in(p);
    std::string header, l1, l2;
    std::getline(in, header);
    std::getline(in, l1);
    std::getline(in, l2);
    CHECK(header.rfind("epoch,train_loss,val_acc", 0) == 0);
    CHECK(l1 == "1,3.25,0.5,skel");
    CHECK(l2 == "2,1.5,0.75,rgb");
    fs::remove(p);
}

TEST_CASE("stats and emotion lookup") {
    std::vector<ClipAnnotation> anns;
    for (int c = 0; c < 3; ++c) {
        ClipAnnotation a;
        a.clip_id = "clip" + std::to_string(c);
        for (std::size_t t = 0; t < std::size_t(2 + c); ++t) {
            FrameRecord f;
            f.frame_idx = t;
            const std::size_t persons = 1 + (t % 2);
            const auto ids = [&] {
                std::vector<BBox> boxes;
                for (std::size_t p = 0; p < persons; ++p) boxes.push_back({10.0 * double(p), 0, 10.0 * double(p) + 5, 5});
                return boxes;
            }();
            for (std::size_t p = 0; p < persons; ++p) {
                PersonFrame pf;
                pf.person_id = "P" + std::to_string(p + 1);
                pf.bbox = ids[p];
                pf.labels = {c == 2 ? "play with hair" : "rub hands"};
                f.persons.push_back(pf);
            }
            a.frames.push_back(f);
        }
        anns.push_back(a);
    }
    const StatsReport r = stats(anns);
    CHECK(r.clips == 3);
    CHECK(r.frames == 2 + 3 + 4);
    CHECK(r.per_category.at("rub hands") == 2);
    CHECK(r.per_category.at("play with hair") == 1);
    CHECK(r.persons_per_frame.at(1) == 5);
    CHECK(r.persons_per_frame.at(2) == 4);

    const auto anxious = emotion_lookup("rub hands");
    CHECK(std::find(anxious.begin(), anxious.end(), "anxiety/irritability") != anxious.end());
    const auto relaxed = emotion_lookup("play with hair");
    CHECK(std::find(relaxed.begin(), relaxed.end(), "relaxed") != relaxed.end());
    CHECK(emotion_lookup("juggling").empty());
    CHECK(r.emotions.at("rub hands") == anxious);
}
