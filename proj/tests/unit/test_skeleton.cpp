#include <algorithm>
#include <cmath>
#include <queue>
#include <random>

#include "doctest.h"
#include "habitmask/errors.hpp"
#include "habitmask/gradcheck.hpp"
#include "habitmask/skeleton_net.hpp"
#include "test_util.hpp"

using namespace habitmask;
using namespace habitmask::num;
using V = Var<double>;

namespace {

SkeletonNetConfig small_config(std::uint64_t seed = 3) {
    SkeletonNetConfig c;
    c.num_classes = 5;
    c.gc1 = 4;
    c.gc2 = 6;
    c.hidden = 8;
    c.attention = 5;
    c.seed = seed;
    return c;
}

GruParams<double> random_gru(std::size_t f, std::size_t h, std::mt19937_64& rng) {
    return {V::parameter(testutil::random_tensor({f, 3 * h}, rng)), V::parameter(testutil::random_tensor({3 * h}, rng)),
            V::parameter(testutil::random_tensor({h, 3 * h}, rng)), V::parameter(testutil::random_tensor({3 * h}, rng))};
}

}  // namespace

TEST_CASE("body graph") {
    const auto g = build_adjacency();
    CHECK(g.edges.size() == 14);
    std::vector<bool> seen(kNumJoints, false);
    std::queue<std::size_t> q;
    q.push(0);
    seen[0] = true;
    while (!q.empty()) {
        const std::size_t u = q.front();
        q.pop();
        for (std::size_t v = 0; v < kNumJoints; ++v)
            if (g.adjacency.at(u, v) == 1.0 && !seen[v]) {
                seen[v] = true;
                q.push(v);
            }
    }
    CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
    for (std::size_t i = 0; i < kNumJoints; ++i) {
        CHECK(g.adjacency.at(i, i) == 0.0);
        for (std::size_t j = 0; j < kNumJoints; ++j) {
            CHECK(g.adjacency.at(i, j) == g.adjacency.at(j, i));
            CHECK(g.normalized.at(i, j) == g.normalized.at(j, i));
        }
    }
    // Head-bottom has degree 6 (plus self-loop): diagonal 1/7.
    CHECK(g.normalized.at(1, 1) == doctest::Approx(1.0 / 7));
    CHECK(g.normalized.at(0, 1) == doctest::Approx(1.0 / std::sqrt(2.0 * 7.0)));

    SUBCASE("regular graph rows sum equally") {
        const auto ring = make_graph(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}});
        for (std::size_t i = 0; i < 5; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < 5; ++j) s += ring.normalized.at(i, j);
            CHECK(s == doctest::Approx(1.0));
        }
    }
}

TEST_CASE("graph_conv") {
    std::mt19937_64 rng(21);
    SUBCASE("edgeless graph and identity weight give relu(x)") {
        const auto g = make_graph(4, {});
        const auto x = testutil::random_tensor({2, 3, 4, 3}, rng);
        Tensor<double> eye({3, 3});
        for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
        const auto y = graph_conv(V::constant(x), g.normalized, V::constant(eye));
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.value()[i] == std::max(0.0, x[i]));
    }
    SUBCASE("a single edge with constant features maps both joints alike") {
        const auto g = make_graph(2, {{0, 1}});
        const auto w = testutil::random_tensor({2, 3}, rng);
        const auto y = graph_conv(V::constant(Tensor<double>({1, 1, 2, 2}, 0.7)), g.normalized, V::constant(w));
        for (std::size_t k = 0; k < 3; ++k) CHECK(y.value().at(0, 0, 0, k) == y.value().at(0, 0, 1, k));
    }
    SUBCASE("matches a direct triple loop") {
        const auto g = build_adjacency();
        const auto x = testutil::random_tensor({2, 3, 15, 3}, rng);
        const auto w = testutil::random_tensor({3, 5}, rng);
        const auto y = graph_conv(V::constant(x), g.normalized, V::constant(w));
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t t = 0; t < 3; ++t)
                for (std::size_t i = 0; i < 15; ++i)
                    for (std::size_t o = 0; o < 5; ++o) {
                        double s = 0;
                        for (std::size_t j = 0; j < 15; ++j)
                            for (std::size_t f = 0; f < 3; ++f) s += g.normalized.at(i, j) * x.at(b, t, j, f) * w.at(f, o);
                        CHECK(y.value().at(b, t, i, o) == doctest::Approx(std::max(0.0, s)).epsilon(1e-10));
                    }
    }
    SUBCASE("commutes with batch concatenation") {
        const auto g = build_adjacency();
        const auto x1 = testutil::random_tensor({1, 4, 15, 3}, rng);
        const auto x2 = testutil::random_tensor({2, 4, 15, 3}, rng);
        const auto w = V::constant(testutil::random_tensor({3, 6}, rng));
        const auto both = graph_conv(concat<double>({V::constant(x1), V::constant(x2)}, 0), g.normalized, w);
        const auto y1 = graph_conv(V::constant(x1), g.normalized, w);
        const auto y2 = graph_conv(V::constant(x2), g.normalized, w);
        const auto joined = concat<double>({y1, y2}, 0);
        CHECK(both.value() == joined.value());
    }
    SUBCASE("shape errors") {
        const auto g = build_adjacency();
        CHECK_THROWS_AS(graph_conv(V::constant(Tensor<double>({1, 2, 15, 3})), g.normalized,
                                   V::constant(Tensor<double>({4, 2}))),
                        ShapeError);
    }
}

TEST_CASE("temporal_recur") {
    std::mt19937_64 rng(22);
    SUBCASE("single step from the zero state") {
        const auto p = random_gru(3, 4, rng);
        const auto x = testutil::random_tensor({1, 1, 2, 3}, rng);
        const auto h = temporal_recur(V::constant(x), p);
        CHECK(h.dims() == Shape{1, 2, 4});
        auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
        for (std::size_t j = 0; j < 2; ++j)
            for (std::size_t k = 0; k < 4; ++k) {
                auto gate = [&](std::size_t block) {
                    double s = p.bx.value()[block * 4 + k];
                    for (std::size_t f = 0; f < 3; ++f) s += x.at(0, 0, j, f) * p.wx.value().at(f, block * 4 + k);
                    return s;
                };
                const double z = sig(gate(0) + p.bh.value()[k]);
                const double r = sig(gate(1) + p.bh.value()[4 + k]);
                const double n = std::tanh(gate(2) + r * p.bh.value()[8 + k]);
                CHECK(h.value().at(0, j, k) == doctest::Approx((1 - z) * n).epsilon(1e-12));
            }
    }
    SUBCASE("constant input saturates monotonically and matches a scalar recurrence") {
        // One feature, one hidden unit, zero biases.
        GruParams<double> p{V::constant(Tensor<double>({1, 3}, std::vector<double>{0.3, -0.2, 1.5})),
                            V::constant(Tensor<double>({3})),
                            V::constant(Tensor<double>({1, 3}, std::vector<double>{0.4, 0.1, 0.6})),
                            V::constant(Tensor<double>({3}))};
        const double x = 0.8;
        double h = 0, prev = 0;
        for (std::size_t L = 1; L <= 12; ++L) {
            const double z = 1 / (1 + std::exp(-(0.3 * x + 0.4 * h)));
            const double r = 1 / (1 + std::exp(-(-0.2 * x + 0.1 * h)));
            const double n = std::tanh(1.5 * x + r * 0.6 * h);
            h = (1 - z) * n + z * h;
            const auto out = temporal_recur(V::constant(Tensor<double>({1, L, 1, 1}, x)), p);
            CHECK(out.value()[0] == doctest::Approx(h).epsilon(1e-12));
            CHECK(h > prev);
            CHECK(h < 1.0);
            prev = h;
        }
    }
    SUBCASE("gradient through eight steps") {
        const auto p = random_gru(3, 4, rng);
        const auto w = testutil::random_tensor({2, 3, 4}, rng);
        auto f = [&](const V& x) { return testutil::weighted_total(temporal_recur(x, p), w); };
        const auto r = fd_check<double>(f, testutil::random_tensor({2, 8, 3, 3}, rng), 1e-6, 1e-3);
        CHECK(r.max_rel_err < 1e-3);
        std::mt19937_64 fixed(5);
        const auto xin = V::constant(testutil::random_tensor({2, 8, 3, 3}, fixed));
        auto ploss = [&]() { return testutil::weighted_total(temporal_recur(xin, p), w); };
        const auto rp = fd_check_parameters<double>(ploss, {p.wx, p.bx, p.uh, p.bh}, 1e-6, 1e-3);
        CHECK(rp.max_rel_err < 1e-3);
    }
    SUBCASE("shape errors") {
        const auto p = random_gru(3, 4, rng);
        CHECK_THROWS_AS(temporal_recur(V::constant(Tensor<double>({1, 2, 2, 5})), p), ShapeError);
    }
}

TEST_CASE("joint_attention") {
    std::mt19937_64 rng(23);
    AttentionParams<double> p{V::constant(testutil::random_tensor({6, 4}, rng)),
                              V::constant(testutil::random_tensor({4}, rng)),
                              V::constant(testutil::random_tensor({4, 1}, rng))};
    SUBCASE("identical joints get equal weight") {
        Tensor<double> hm({2, 15, 6});
        const auto row = testutil::random_tensor({6}, rng);
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t j = 0; j < 15; ++j)
                for (std::size_t k = 0; k < 6; ++k) hm.at(b, j, k) = row[k];
        const auto out = joint_attention(V::constant(hm), p);
        for (double a : out.weights.value().data()) CHECK(a == doctest::Approx(1.0 / 15).epsilon(1e-12));
    }
    SUBCASE("a dominant score takes all the weight") {
        Tensor<double> w({6, 1});
        w.at(0, 0) = 1.0;
        AttentionParams<double> sat{V::constant(w), V::constant(Tensor<double>({1})),
                                    V::constant(Tensor<double>({1, 1}, 1000.0))};
        auto hm = testutil::random_tensor({1, 15, 6}, rng, -0.001, 0.001);
        hm.at(0, 4, 0) = 10.0;
        const auto out = joint_attention(V::constant(hm), sat);
        CHECK(out.weights.value().at(0, 4) == doctest::Approx(1.0).epsilon(1e-12));
        for (std::size_t k = 0; k < 6; ++k) CHECK(out.pooled.value().at(0, k) == doctest::Approx(hm.at(0, 4, k)));
    }
    SUBCASE("pooled feature is the explicit weighted sum") {
        const auto hm = testutil::random_tensor({3, 15, 6}, rng);
        const auto out = joint_attention(V::constant(hm), p);
        for (std::size_t b = 0; b < 3; ++b) {
            double total = 0;
            std::vector<double> s(15);
            for (std::size_t j = 0; j < 15; ++j) {
                for (std::size_t a = 0; a < 4; ++a) {
                    double pre = p.c.value()[a];
                    for (std::size_t k = 0; k < 6; ++k) pre += hm.at(b, j, k) * p.w.value().at(k, a);
                    s[j] += p.u.value().at(a, 0) * std::tanh(pre);
                }
            }
            const double mx = *std::max_element(s.begin(), s.end());
            for (double& v : s) total += (v = std::exp(v - mx));
            for (std::size_t k = 0; k < 6; ++k) {
                double pooled = 0;
                for (std::size_t j = 0; j < 15; ++j) pooled += s[j] / total * hm.at(b, j, k);
                CHECK(out.pooled.value().at(b, k) == doctest::Approx(pooled).epsilon(1e-10));
            }
            double sum = 0;
            for (std::size_t j = 0; j < 15; ++j) sum += out.weights.value().at(b, j);
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("skeleton network") {
    std::mt19937_64 rng(24);
    SUBCASE("zero input gives head-bias logits and uniform weights") {
        const SkeletonNet<double> net;
        const auto out = net.forward(V::constant(Tensor<double>({1, 32, 15, 3})));
        CHECK(out.logits.dims() == Shape{1, 30});
        const auto& bias = net.params().get("skel.head.b").value();
        for (std::size_t k = 0; k < 30; ++k) CHECK(out.logits.value().at(0, k) == bias[k]);
        for (double a : out.weights.value().data()) CHECK(a == doctest::Approx(1.0 / 15).epsilon(1e-12));
    }
    SUBCASE("logits shape is (b, i) for any batch size") {
        const SkeletonNet<double> net(small_config());
        for (std::size_t b = 1; b <= 3; ++b) {
            const auto out = net.forward(V::constant(testutil::random_tensor({b, 4, 15, 3}, rng, 0.0, 1.0)));
            CHECK(out.logits.dims() == Shape{b, 5});
            CHECK(out.weights.dims() == Shape{b, 15});
            CHECK(out.feature.dims() == Shape{b, 8});
        }
    }
    SUBCASE("mirroring the body mirrors the attention weights") {
        const SkeletonNet<double> net(small_config(9));
        const auto x = testutil::random_tensor({2, 6, 15, 3}, rng, 0.0, 1.0);
        Tensor<double> mirrored(x.dims());
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t t = 0; t < 6; ++t)
                for (std::size_t j = 0; j < 15; ++j)
                    for (std::size_t f = 0; f < 3; ++f) mirrored.at(b, t, mirror_joint(j), f) = x.at(b, t, j, f);
        const auto a = net.forward(V::constant(x)).weights.value();
        const auto m = net.forward(V::constant(mirrored)).weights.value();
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t j = 0; j < 15; ++j)
                CHECK(m.at(b, mirror_joint(j)) == doctest::Approx(a.at(b, j)).epsilon(1e-12));
    }
    SUBCASE("confidence only enters through the first layer") {
        SkeletonNet<double> net(small_config());
        auto& w = net.params().get("skel.gc1.w").mutable_value();
        for (std::size_t k = 0; k < w.dim(1); ++k) w.at(2, k) = 0.0;
        auto x = testutil::random_tensor({1, 5, 15, 3}, rng, 0.0, 1.0);
        const auto before = net.forward(V::constant(x)).logits.value();
        for (std::size_t t = 0; t < 5; ++t)
            for (std::size_t j = 0; j < 15; ++j) x.at(0, t, j, 2) = 0.0;
        CHECK(net.forward(V::constant(x)).logits.value() == before);
    }
    SUBCASE("attention weights are normalized") {
        const SkeletonNet<double> net(small_config());
        for (int i = 0; i < 20; ++i) {
            const auto w = net.forward(V::constant(testutil::random_tensor({2, 3, 15, 3}, rng, 0.0, 1.0))).weights.value();
            for (std::size_t b = 0; b < 2; ++b) {
                double s = 0;
                for (std::size_t j = 0; j < 15; ++j) {
                    CHECK(w.at(b, j) >= 0.0);
                    s += w.at(b, j);
                }
                CHECK(std::abs(s - 1.0) < 1e-6);
            }
        }
    }
    SUBCASE("end-to-end gradient on a (2, 8, 15, 3) batch") {
        SkeletonNet<double> net(small_config());
        const auto x = testutil::random_tensor({2, 8, 15, 3}, rng, 0.0, 1.0);
        const auto lw = testutil::random_tensor({2, 5}, rng);
        const auto aw = testutil::random_tensor({2, 15}, rng);
        auto loss_of = [&](const V& in) {
            const auto out = net.forward(in);
            return add(testutil::weighted_total(out.logits, lw), testutil::weighted_total(out.weights, aw));
        };
        const auto rp = fd_check_parameters<double>([&] { return loss_of(V::constant(x)); }, net.params().vars(),
                                                    1e-6, 1e-3, 24);
        CHECK(rp.max_rel_err < 1e-3);
        const auto rx = fd_check<double>(loss_of, x, 1e-6, 1e-3);
        CHECK(rx.max_rel_err < 1e-3);
    }
    SUBCASE("wrong joint count") {
        const SkeletonNet<double> net(small_config());
        CHECK_THROWS_AS(net.forward(V::constant(Tensor<double>({1, 4, 14, 3}))), ShapeError);
    }
}

TEST_CASE("skeleton tensor normalizes into the bbox") {
    PersonFrame p;
    p.person_id = "P1";
    p.bbox = {10, 20, 30, 60};
    for (std::size_t j = 0; j < kNumJoints; ++j) p.skeleton.joints[j] = {10 + double(j), 20 + 2 * double(j), 0.5};
    p.skeleton.joints[14] = {100, -5, 1.0};
    const std::vector<PersonFrame> track = {p, p};
    const auto t = skeleton_tensor(track);
    CHECK(t.dims() == Shape{2, 15, 3});
    CHECK(t.at(1, 3, 0) == doctest::Approx(3.0 / 20));
    CHECK(t.at(1, 3, 1) == doctest::Approx(6.0 / 40));
    CHECK(t.at(0, 14, 0) == 1.0f);
    CHECK(t.at(0, 14, 1) == 0.0f);
    CHECK(t.at(0, 0, 2) == 0.5f);
}
