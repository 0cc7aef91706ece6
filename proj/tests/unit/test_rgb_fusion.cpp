#include <algorithm>
#include <random>

#include "doctest.h"
#include "habitmask/action_mask.hpp"
#include "habitmask/errors.hpp"
#include "habitmask/fusion.hpp"
#include "habitmask/rgb_net.hpp"
#include "../common/channel_catalog.hpp"
#include "test_util.hpp"

using namespace habitmask;
using namespace habitmask::num;
using V = Var<double>;

namespace {

RgbNetConfig small_rgb(std::uint64_t seed = 4) {
    RgbNetConfig c;
    c.num_classes = 5;
    c.seed = seed;
    return c;
}

Tensor<double> random_probs(std::size_t b, std::size_t n, std::mt19937_64& rng) {
    auto logits = testutil::random_tensor({b, n}, rng, -3, 3);
    return softmax_values(logits, 1);
}

std::size_t argmax_row(const Tensor<double>& t, std::size_t r) {
    const std::size_t n = t.dim(1);
    std::size_t best = 0;
    for (std::size_t k = 1; k < n; ++k)
        if (t.at(r, k) > t.at(r, best)) best = k;
    return best;
}

}  // namespace

TEST_CASE("temporal_subsample") {
    std::mt19937_64 rng(41);
    SUBCASE("32 frames at stride 4 keep every fourth frame") {
        Tensor<float> clip({3, 32, 4, 4});
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t t = 0; t < 32; ++t)
                for (std::size_t i = 0; i < 16; ++i) clip[(c * 32 + t) * 16 + i] = float(t);
        const auto sub = temporal_subsample(clip, 4);
        CHECK(sub.dims() == Shape{3, 8, 4, 4});
        for (std::size_t t = 0; t < 8; ++t) CHECK(sub.at(1, t, 2, 3) == float(4 * t));
    }
    SUBCASE("stride 1 is the identity") {
        const auto clip = testutil::random_tensor<float>({3, 6, 4, 4}, rng, 0, 1);
        CHECK(temporal_subsample(clip, 1) == clip);
    }
    SUBCASE("constant clips stay constant") {
        const Tensor<float> clip({3, 8, 4, 4}, 0.25f);
        const auto sub = temporal_subsample(clip, 2);
        for (float v : sub.data()) CHECK(v == 0.25f);
    }
    SUBCASE("stride must divide the length") {
        CHECK_THROWS_AS(temporal_subsample(Tensor<float>({3, 10, 4, 4}), 4), ContractError);
        CHECK_THROWS_AS(temporal_subsample(V::constant(Tensor<double>({1, 3, 10, 4, 4})), 4), ContractError);
    }
    SUBCASE("batched form selects the same frames") {
        const auto clip = testutil::random_tensor({3, 8, 4, 4}, rng);
        const auto batched = temporal_subsample(V::constant(clip.reshaped({1, 3, 8, 4, 4})), 4);
        CHECK(batched.value().reshaped({3, 2, 4, 4}) == temporal_subsample(clip, 4));
    }
}

TEST_CASE("rgb network") {
    std::mt19937_64 rng(42);
    SUBCASE("zero input gives the head bias") {
        auto cfg = small_rgb();
        cfg.input_mean = 0.0;
        cfg.input_std = 1.0;
        RgbNet<double> net(cfg);
        auto& b = net.params().get("rgb.head.b").mutable_value();
        for (std::size_t k = 0; k < b.size(); ++k) b[k] = 0.1 * double(k);
        // Zero input with zero conv biases leaves every feature at zero.
        const auto out = net.forward(V::constant(Tensor<double>({1, 3, 8, 16, 16})));
        for (std::size_t k = 0; k < 5; ++k) CHECK(out.logits.value().at(0, k) == b[k]);
    }
    SUBCASE("input at the standardization mean gives the head bias") {
        RgbNet<double> net(small_rgb());
        auto& b = net.params().get("rgb.head.b").mutable_value();
        for (std::size_t k = 0; k < b.size(); ++k) b[k] = -0.2 * double(k);
        Tensor<double> x({1, 3, 8, 16, 16});
        for (auto& v : x.data()) v = net.config().input_mean;
        const auto out = net.forward(V::constant(x));
        for (std::size_t k = 0; k < 5; ++k) CHECK(out.logits.value().at(0, k) == doctest::Approx(b[k]).epsilon(1e-12));
    }
    SUBCASE("standardization is (x - mean) / std") {
        auto id = small_rgb();
        id.input_mean = 0.0;
        id.input_std = 1.0;
        const RgbNet<double> raw(id), net(small_rgb());
        const auto x = testutil::random_tensor({1, 3, 8, 16, 16}, rng, 0, 1);
        Tensor<double> z = x;
        for (auto& v : z.data()) v = (v - net.config().input_mean) / net.config().input_std;
        const auto a = net.forward(V::constant(x)).logits.value();
        const auto c = raw.forward(V::constant(z)).logits.value();
        for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == doctest::Approx(c[k]).epsilon(1e-12));
        id.input_std = 0.0;
        CHECK_THROWS_AS(RgbNet<double>{id}, ContractError);
    }
    SUBCASE("logits are (b, i) and batches do not interact") {
        const RgbNet<double> net(small_rgb());
        const auto x1 = testutil::random_tensor({1, 3, 8, 16, 16}, rng, 0, 1);
        const auto x2 = testutil::random_tensor({2, 3, 8, 16, 16}, rng, 0, 1);
        const auto both = net.forward(concat<double>({V::constant(x1), V::constant(x2)}, 0));
        CHECK(both.logits.dims() == Shape{3, 5});
        CHECK(both.feature.dims() == Shape{3, net.config().feature_dim()});
        const auto joined = concat<double>({net.forward(V::constant(x1)).logits, net.forward(V::constant(x2)).logits}, 0);
        CHECK(both.logits.value() == joined.value());
    }
    SUBCASE("frame order matters") {
        const RgbNet<double> net(small_rgb());
        const auto x = testutil::random_tensor({1, 3, 8, 16, 16}, rng, 0, 1);
        Tensor<double> reversed(x.dims());
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t t = 0; t < 8; ++t)
                for (std::size_t i = 0; i < 256; ++i) reversed[(c * 8 + t) * 256 + i] = x[(c * 8 + 7 - t) * 256 + i];
        CHECK_FALSE(net.forward(V::constant(x)).logits.value() == net.forward(V::constant(reversed)).logits.value());
    }
    SUBCASE("a p = 1 mask leaves the output unchanged") {
        const RgbNet<double> net(small_rgb());
        const auto x = testutil::random_tensor({3, 8, 16, 16}, rng, 0, 1);
        std::vector<double> w(15, 1.0 / 15);
        std::vector<Skeleton> joints(8);
        for (auto& s : joints)
            for (auto& j : s.joints) j = {double(rng() % 16), double(rng() % 16), 1.0};
        const auto masked = mask_frames(x, w, joints, MaskConfig::for_side(16, 0.25, 1.0));
        const auto a = net.forward(V::constant(x.reshaped({1, 3, 8, 16, 16}))).logits.value();
        const auto b = net.forward(V::constant(masked.reshaped({1, 3, 8, 16, 16}))).logits.value();
        CHECK(a == b);
    }
    SUBCASE("default widths stay small") { CHECK(RgbNet<float>().params().parameter_count() < 200000); }
    SUBCASE("gradient check on a (2, 3, 8, 16, 16) batch") {
        for (int i = 0; i < 2; ++i) CHECK(channels::rgb_instance(rng, 1e-3).max_rel_err < 1e-3);
    }
    SUBCASE("shape errors") {
        const RgbNet<double> net(small_rgb());
        CHECK_THROWS_AS(net.forward(V::constant(Tensor<double>({1, 1, 8, 16, 16}))), ShapeError);
        CHECK_THROWS_AS(net.forward(V::constant(Tensor<double>({1, 3, 8, 12, 12}))), ShapeError);
    }
}

TEST_CASE("feature fusion") {
    std::mt19937_64 rng(43);
    FusionConfig cfg;
    cfg.dim = 6;
    SUBCASE("zero rgb weight ignores the rgb feature") {
        cfg.w_skel = 1.0;
        cfg.w_rgb = 0.0;
        const FeatureFusion<double> fuse(4, 5, 3, cfg);
        const auto fs = V::constant(testutil::random_tensor({2, 4}, rng));
        const auto a = fuse.forward(fs, V::constant(testutil::random_tensor({2, 5}, rng))).value();
        const auto b = fuse.forward(fs, V::constant(testutil::random_tensor({2, 5}, rng))).value();
        CHECK(a == b);
        // Equivalent to a plain linear classifier on the projected skeleton feature.
        const auto& ps = fuse.params().get("fuse.proj_skel.w").value();
        const auto& hw = fuse.params().get("fuse.head.w").value();
        const auto& hb = fuse.params().get("fuse.head.b").value();
        for (std::size_t r = 0; r < 2; ++r)
            for (std::size_t k = 0; k < 3; ++k) {
                double logit = hb[k];
                for (std::size_t d = 0; d < 6; ++d) {
                    double proj = 0;
                    for (std::size_t i = 0; i < 4; ++i) proj += fs.value().at(r, i) * ps.at(i, d);
                    logit += proj * hw.at(d, k);
                }
                CHECK(a.at(r, k) == doctest::Approx(logit).epsilon(1e-10));
            }
    }
    SUBCASE("equal features through equal projections ignore the weights") {
        auto logits_for = [&](double ws) {
            FusionConfig c = cfg;
            c.w_skel = ws;
            c.w_rgb = 1 - ws;
            FeatureFusion<double> fuse(4, 4, 3, c);
            fuse.params().get("fuse.proj_rgb.w").mutable_value() = fuse.params().get("fuse.proj_skel.w").value();
            std::mt19937_64 local(5);
            const auto f = V::constant(testutil::random_tensor({2, 4}, local));
            return fuse.forward(f, f).value();
        };
        const auto base = logits_for(0.5);
        for (double ws : {0.0, 0.2, 0.9, 1.0}) {
            const auto other = logits_for(ws);
            for (std::size_t i = 0; i < base.size(); ++i) CHECK(other[i] == doctest::Approx(base[i]).epsilon(1e-12));
        }
    }
    SUBCASE("learnable weights start at the configured pair") {
        cfg.w_skel = 0.25;
        cfg.w_rgb = 0.75;
        cfg.learnable_weights = true;
        const FeatureFusion<double> fuse(4, 5, 3, cfg);
        CHECK(fuse.weights().first == doctest::Approx(0.25));
        CHECK(fuse.weights().second == doctest::Approx(0.75));
    }
    SUBCASE("gradient check") {
        for (int i = 0; i < 4; ++i) CHECK(channels::fusion_instance(rng, 1e-3).max_rel_err < 1e-3);
    }
    SUBCASE("invalid configuration") {
        cfg.w_skel = 0.7;
        cfg.w_rgb = 0.7;
        CHECK_THROWS_AS(FeatureFusion<double>(4, 5, 3, cfg), ContractError);
        CHECK_THROWS_AS(parse_fusion_mode("average"), ContractError);
    }
}

TEST_CASE("score fusion") {
    std::mt19937_64 rng(44);
    FusionConfig cfg;
    cfg.mode = FusionMode::Score;
    SUBCASE("degenerate and convex cases") {
        const auto ps = random_probs(3, 7, rng), pr = random_probs(3, 7, rng);
        cfg.w_skel = 1;
        cfg.w_rgb = 0;
        CHECK(score_fuse(ps, pr, cfg) == ps);
        for (double ws : {0.1, 0.5, 0.8}) {
            cfg.w_skel = ws;
            cfg.w_rgb = 1 - ws;
            const auto same = score_fuse(ps, ps, cfg);
            for (std::size_t i = 0; i < ps.size(); ++i) CHECK(same[i] == doctest::Approx(ps[i]).epsilon(1e-15));
        }
    }
    SUBCASE("rows stay normalized and inside the hull; agreeing argmax survives") {
        for (int trial = 0; trial < 300; ++trial) {
            const std::size_t n = 2 + rng() % 30;
            auto ps = random_probs(1, n, rng), pr = random_probs(1, n, rng);
            // Force agreement on a common winner.
            const std::size_t j = rng() % n;
            for (auto* p : {&ps, &pr}) {
                const std::size_t cur = argmax_row(*p, 0);
                std::swap(p->at(0, cur), p->at(0, j));
            }
            const double ws = double(rng() % 1001) / 1000.0;
            cfg.w_skel = ws;
            cfg.w_rgb = 1 - ws;
            const auto out = score_fuse(ps, pr, cfg);
            double s = 0;
            for (std::size_t k = 0; k < n; ++k) {
                s += out.at(0, k);
                CHECK(out.at(0, k) >= std::min(ps.at(0, k), pr.at(0, k)) - 1e-15);
                CHECK(out.at(0, k) <= std::max(ps.at(0, k), pr.at(0, k)) + 1e-15);
            }
            CHECK(std::abs(s - 1.0) < 1e-6);
            CHECK(argmax_row(out, 0) == j);
        }
    }
    SUBCASE("unnormalized input is rejected") {
        auto ps = random_probs(2, 4, rng);
        ps.at(1, 0) += 0.01;
        CHECK_THROWS_AS(score_fuse(ps, random_probs(2, 4, rng), cfg), ContractError);
    }
}
