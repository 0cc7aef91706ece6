#pragma once

// Direct per-pixel statement of the masking rule, kept deliberately naive.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "habitmask/action_mask.hpp"

namespace oracle {

inline bool in_omega(double x, double y, const std::vector<habitmask::Point>& centers, double lx, double ly) {
    for (const auto& c : centers)
        if (std::abs(x - c[0]) < lx / 2 && std::abs(y - c[1]) < ly / 2) return true;
    return false;
}

// frame (c, S, S) in place.
template <typename T>
void mask_frame(habitmask::num::Tensor<T>& frame, const std::vector<habitmask::Point>& centers, double lx, double ly,
                double p) {
    const std::size_t S = frame.dim(1);
    for (std::size_t c = 0; c < frame.dim(0); ++c)
        for (std::size_t x = 0; x < S; ++x)
            for (std::size_t y = 0; y < S; ++y)
                if (!in_omega(double(x), double(y), centers, lx, ly)) frame.at(c, x, y) = static_cast<T>(p) * frame.at(c, x, y);
}

// Full sort by (weight desc, index asc), confidence filter, first k.
inline std::vector<habitmask::Point> centers(const std::vector<double>& w, const habitmask::Skeleton& s, std::size_t k,
                                             double min_conf) {
    std::vector<std::size_t> idx(w.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return w[a] != w[b] ? w[a] > w[b] : a < b; });
    std::vector<habitmask::Point> out;
    for (std::size_t j : idx) {
        if (out.size() == k) break;
        if (s.joints[j].conf >= min_conf) out.push_back({s.joints[j].x, s.joints[j].y});
    }
    return out;
}

struct Instance {
    habitmask::MaskConfig cfg;
    std::vector<double> weights;
    std::vector<habitmask::Skeleton> joints;
    habitmask::num::Tensor<double> clip;  // (c, L, S, S)
};

inline Instance random_instance(std::mt19937_64& rng, std::size_t side) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Instance in;
    in.cfg.side = side;
    in.cfg.k = 1 + rng() % 4;
    // Mix of integer, half-integer and arbitrary window sizes.
    auto length = [&]() {
        switch (rng() % 3) {
            case 0: return double(1 + rng() % side);
            case 1: return 0.5 + double(rng() % side);
            default: return 0.3 + u(rng) * (double(side) - 0.3);
        }
    };
    in.cfg.lx = length();
    in.cfg.ly = length();
    in.cfg.p = rng() % 5 == 0 ? double(rng() % 2) : u(rng);
    const std::size_t L = 1 + rng() % 4;
    in.weights.resize(habitmask::kNumJoints);
    for (auto& w : in.weights) w = rng() % 4 == 0 ? 0.05 : u(rng);
    const double total = std::accumulate(in.weights.begin(), in.weights.end(), 0.0);
    for (auto& w : in.weights) w /= total;
    for (std::size_t t = 0; t < L; ++t) {
        habitmask::Skeleton s;
        for (auto& j : s.joints) {
            // Integer centers exercise the strict boundary; some fall off-frame.
            const bool integral = rng() % 2 == 0;
            j.x = integral ? double(rng() % (side + 4)) - 2.0 : -2.0 + u(rng) * double(side + 4);
            j.y = integral ? double(rng() % (side + 4)) - 2.0 : -2.0 + u(rng) * double(side + 4);
            j.conf = rng() % 6 == 0 ? 0.01 : u(rng);
        }
        in.joints.push_back(s);
    }
    in.clip = habitmask::num::Tensor<double>({3, L, side, side});
    for (auto& v : in.clip.data()) v = u(rng);
    return in;
}

// Whole-clip oracle.
inline habitmask::num::Tensor<double> mask_clip(const Instance& in) {
    const std::size_t C = in.clip.dim(0), L = in.clip.dim(1), S = in.clip.dim(2);
    habitmask::num::Tensor<double> out = in.clip;
    for (std::size_t t = 0; t < L; ++t) {
        const auto cs = centers(in.weights, in.joints[t], in.cfg.k, in.cfg.min_conf);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t x = 0; x < S; ++x)
                for (std::size_t y = 0; y < S; ++y)
                    if (!in_omega(double(x), double(y), cs, in.cfg.lx, in.cfg.ly))
                        out.at(c, t, x, y) = in.cfg.p * in.clip.at(c, t, x, y);
    }
    return out;
}

}  // namespace oracle
