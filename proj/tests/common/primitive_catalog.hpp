#pragma once

// One finite-difference instance generator per differentiable primitive
// (and per differentiable argument for multi-input ops). Shared by the unit
// tests and the acceptance gradient suite.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "habitmask/autodiff.hpp"

namespace catalog {

using habitmask::num::Shape;
using habitmask::num::Tensor;
using habitmask::num::Var;
namespace ops = habitmask::num;

struct Instance {
    std::function<Var<double>(const Var<double>&)> f;
    Tensor<double> x;
};

struct Primitive {
    std::string name;
    std::function<Instance(std::mt19937_64&)> make;
};

inline Tensor<double> rnd(Shape dims, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor<double> t(std::move(dims));
    for (auto& v : t.data()) v = d(rng);
    return t;
}

inline Tensor<double> away_from_zero(Tensor<double> t, double margin = 1e-2) {
    for (auto& v : t.data())
        if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
    return t;
}

// Spreads values so no two entries are within `gap` of each other (keeps
// max-pool argmax stable under probing).
inline Tensor<double> distinct(Tensor<double> t, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(t.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t r = 0; r < idx.size(); ++r) t[idx[r]] = -1.0 + 2.0 * double(r) / double(idx.size()) + 1e-4;
    return t;
}

inline Var<double> total(const Var<double>& y, const Tensor<double>& w) {
    return ops::sum(ops::mul(y, Var<double>::constant(w)));
}

template <typename Op>
Instance unary_instance(Shape dims, std::mt19937_64& rng, Op op, bool nudge = false) {
    Tensor<double> x = rnd(dims, rng);
    if (nudge) x = away_from_zero(x);
    Tensor<double> probe = op(Var<double>::constant(x)).value();
    Tensor<double> w = rnd(probe.dims(), rng);
    return {[op, w](const Var<double>& v) { return total(op(v), w); }, x};
}

inline std::vector<Primitive> primitives() {
    using V = Var<double>;
    std::vector<Primitive> out;
    auto add_unary = [&](std::string name, Shape dims, std::function<V(const V&)> op, bool nudge = false) {
        out.push_back({std::move(name), [dims, op, nudge](std::mt19937_64& rng) {
                           return unary_instance(dims, rng, op, nudge);
                       }});
    };
    // Binary ops: the probed argument is x, the other is a fixed random constant.
    auto add_binary = [&](std::string name, Shape xdims, Shape odims,
                          std::function<V(const V&, const V&)> op) {
        out.push_back({std::move(name), [xdims, odims, op](std::mt19937_64& rng) {
                           const Tensor<double> other = rnd(odims, rng);
                           Tensor<double> x = rnd(xdims, rng);
                           const Tensor<double> probe = op(V::constant(x), V::constant(other)).value();
                           const Tensor<double> w = rnd(probe.dims(), rng);
                           return Instance{[op, other, w](const V& v) { return total(op(v, V::constant(other)), w); }, x};
                       }});
    };

    add_binary("add", {3, 4}, {3, 4}, [](const V& x, const V& o) { return ops::add(x, o); });
    add_binary("sub.lhs", {3, 4}, {3, 4}, [](const V& x, const V& o) { return ops::sub(x, o); });
    add_binary("sub.rhs", {3, 4}, {3, 4}, [](const V& x, const V& o) { return ops::sub(o, x); });
    add_binary("mul", {3, 4}, {3, 4}, [](const V& x, const V& o) { return ops::mul(x, o); });
    add_unary("scale", {5}, [](const V& x) { return ops::scale(x, 2.5); });
    add_unary("affine", {5}, [](const V& x) { return ops::affine(x, -1.0, 1.0); });
    add_binary("mul_scalar.x", {2, 3}, Shape{1}, [](const V& x, const V& s) { return ops::mul_scalar(x, s); });
    add_binary("mul_scalar.s", Shape{1}, {2, 3}, [](const V& s, const V& x) { return ops::mul_scalar(x, s); });
    add_binary("add_bias.x", {4, 3}, {3}, [](const V& x, const V& b) { return ops::add_bias(x, b); });
    add_binary("add_bias.bias", {3}, {2, 2, 3}, [](const V& b, const V& x) { return ops::add_bias(x, b); });
    add_unary("tanh", {6}, [](const V& x) { return ops::tanh(x); });
    add_unary("sigmoid", {6}, [](const V& x) { return ops::sigmoid(x); });
    add_unary("relu", {8}, [](const V& x) { return ops::relu(x); }, true);
    add_unary("abs", {8}, [](const V& x) { return ops::abs(x); }, true);
    add_binary("matmul.lhs", {3, 4}, {4, 2}, [](const V& a, const V& b) { return ops::matmul(a, b); });
    add_binary("matmul.rhs", {4, 2}, {3, 4}, [](const V& b, const V& a) { return ops::matmul(a, b); });
    add_unary("sum", {2, 3}, [](const V& x) { return ops::sum(x); });
    add_unary("mean", {2, 3}, [](const V& x) { return ops::mean(x); });
    add_unary("sum_axis", {2, 3, 4}, [](const V& x) { return ops::sum_axis(x, 1); });
    add_unary("softmax.axis0", {5, 3}, [](const V& x) { return ops::softmax(x, 0); });
    add_unary("softmax.axis1", {3, 5}, [](const V& x) { return ops::softmax(x, 1); });
    add_unary("reshape", {2, 6}, [](const V& x) { return ops::reshape(x, Shape{3, 4}); });
    add_binary("concat", {2, 3}, {2, 2}, [](const V& x, const V& o) { return ops::concat<double>({o, x}, 1); });
    add_unary("slice", {4, 5}, [](const V& x) { return ops::slice(x, 1, 1, 4); });
    const ops::Conv3dParams cp{{1, 2, 1}, {1, 0, 1}};
    add_binary("conv3d.x", {2, 2, 4, 5, 4}, {3, 2, 3, 2, 3},
               [cp](const V& x, const V& w) { return ops::conv3d(x, w, V(), cp); });
    add_binary("conv3d.w", {3, 2, 3, 2, 3}, {2, 2, 4, 5, 4},
               [cp](const V& w, const V& x) { return ops::conv3d(x, w, V(), cp); });
    add_binary("conv3d.bias", {3}, {1, 2, 4, 5, 4}, [cp](const V& b, const V& x) {
        const Tensor<double> w(Shape{3, 2, 3, 2, 3}, 0.1);
        return ops::conv3d(x, V::constant(w), b, cp);
    });
    out.push_back({"max_pool3d", [](std::mt19937_64& rng) {
                       Tensor<double> x = distinct(rnd({1, 2, 4, 4, 4}, rng), rng);
                       const Tensor<double> w = rnd({1, 2, 2, 2, 2}, rng);
                       return Instance{[w](const V& v) {
                                           return total(ops::max_pool3d(v, {2, 2, 2}, {2, 2, 2}), w);
                                       },
                                       x};
                   }});
    add_unary("avg_pool3d", {1, 2, 4, 4, 4}, [](const V& x) { return ops::avg_pool3d(x, {1, 2, 2}, {1, 2, 2}); });
    add_unary("global_avg_pool", {2, 3, 2, 2, 2}, [](const V& x) { return ops::global_avg_pool(x); });
    out.push_back({"joint_mix", [](std::mt19937_64& rng) {
                       const Tensor<double> adj = rnd({4, 4}, rng);
                       const Tensor<double> x = rnd({2, 3, 4, 2}, rng);
                       const Tensor<double> w = rnd({2, 3, 4, 2}, rng);
                       return Instance{[adj, w](const V& v) { return total(ops::joint_mix(v, adj), w); }, x};
                   }});
    add_binary("weighted_sum.weights", {2, 4}, {2, 4, 3},
               [](const V& a, const V& h) { return ops::weighted_sum(a, h); });
    add_binary("weighted_sum.h", {2, 4, 3}, {2, 4},
               [](const V& h, const V& a) { return ops::weighted_sum(a, h); });
    out.push_back({"cross_entropy", [](std::mt19937_64& rng) {
                       const Tensor<double> x = rnd({4, 6}, rng, -2, 2);
                       std::vector<std::size_t> tg(4);
                       std::uniform_int_distribution<std::size_t> d(0, 5);
                       for (auto& t : tg) t = d(rng);
                       return Instance{[tg](const V& v) { return ops::cross_entropy<double>(v, tg); }, x};
                   }});
    return out;
}

}  // namespace catalog
