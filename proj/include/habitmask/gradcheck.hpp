#pragma once

// Central-difference gradient verification. This is test-side machinery: it
// never shares code paths with the backward rules it checks beyond calling
// forward functions.

#include <cmath>
#include <cstddef>
#include <functional>
#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "habitmask/autodiff.hpp"

namespace habitmask::num {

struct FdReport {
    double max_rel_err = 0.0;
    std::size_t worst_coordinate = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
    std::size_t coordinates_checked = 0;
    bool passed = true;
};

// |analytic - numeric| / max(|analytic|, 1e-8)
inline double fd_relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(std::abs(analytic), 1e-8);
}

namespace detail {
inline void fd_record(FdReport& r, std::size_t coord, double analytic, double numeric) {
    const double e = fd_relative_error(analytic, numeric);
    if (r.coordinates_checked == 0 || e > r.max_rel_err) {
        r.max_rel_err = e;
        r.worst_coordinate = coord;
        r.analytic_at_worst = analytic;
        r.numeric_at_worst = numeric;
    }
    ++r.coordinates_checked;
}
}  // namespace detail

// Checks d f / d x for a scalar-valued f at x.
template <typename T>
FdReport fd_check(const std::function<Var<T>(const Var<T>&)>& f, const Tensor<T>& x, T h, double tol) {
    auto xv = Var<T>::parameter(x);
    Var<T> y = f(xv);
    backprop(y);
    const Tensor<T> analytic = xv.grad();
    FdReport r;
    Tensor<T> probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T orig = probe[i];
        probe[i] = orig + h;
        const T fp = f(Var<T>::constant(probe)).value()[0];
        probe[i] = orig - h;
        const T fm = f(Var<T>::constant(probe)).value()[0];
        probe[i] = orig;
        detail::fd_record(r, i, double(analytic[i]), double(fp - fm) / (2.0 * double(h)));
    }
    r.passed = r.max_rel_err < tol;
    return r;
}

// Checks gradients of a scalar loss with respect to each parameter Var by
// perturbing parameter values in place. At most `max_coords` randomly chosen
// coordinates per parameter are probed (all of them when the tensor is small).
template <typename T>
FdReport fd_check_parameters(const std::function<Var<T>()>& loss, std::vector<Var<T>> params, T h, double tol,
                             std::size_t max_coords = 64, std::uint64_t seed = 7) {
    for (auto& p : params) p.zero_grad();
    backprop(loss());
    std::vector<Tensor<T>> analytic;
    for (auto& p : params) analytic.push_back(p.grad());
    std::mt19937_64 rng(seed);
    FdReport r;
    std::size_t global = 0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& value = params[pi].mutable_value();
        std::vector<std::size_t> coords(value.size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (coords.size() > max_coords) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(max_coords);
        }
        for (std::size_t c : coords) {
            const T orig = value[c];
            value[c] = orig + h;
            const T fp = loss().value()[0];
            value[c] = orig - h;
            const T fm = loss().value()[0];
            value[c] = orig;
            detail::fd_record(r, global + c, double(analytic[pi][c]), double(fp - fm) / (2.0 * double(h)));
        }
        global += value.size();
    }
    r.passed = r.max_rel_err < tol;
    return r;
}

}  // namespace habitmask::num
