#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "habitmask/autodiff.hpp"

namespace habitmask::num {

struct NamedTensor {
    std::string name;
    Tensor<float> value;
};

// Ordered, named collection of trainable leaves. Names carry a module prefix
// ("skel.", "rgb.", "fuse.") so several stores can share one checkpoint.
template <typename T>
class ParamStore {
public:
    Var<T> add(std::string name, Tensor<T> init) {
        for (const auto& [n, _] : entries_) {
            if (n == name) throw ContractError("duplicate parameter name " + name);
        }
        auto v = Var<T>::parameter(std::move(init));
        entries_.emplace_back(std::move(name), v);
        return v;
    }

    const Var<T>& get(std::string_view name) const {
        for (const auto& [n, v] : entries_) {
            if (n == name) return v;
        }
        throw ContractError("unknown parameter " + std::string(name));
    }
    Var<T>& get(std::string_view name) {
        return const_cast<Var<T>&>(static_cast<const ParamStore&>(*this).get(name));
    }

    const std::vector<std::pair<std::string, Var<T>>>& entries() const noexcept { return entries_; }

    std::vector<Var<T>> vars() const {
        std::vector<Var<T>> out;
        for (const auto& [_, v] : entries_) out.push_back(v);
        return out;
    }

    void zero_grad() {
        for (auto& [_, v] : entries_) v.zero_grad();
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [_, v] : entries_) n += v.size();
        return n;
    }

    std::vector<NamedTensor> export_values() const {
        std::vector<NamedTensor> out;
        for (const auto& [n, v] : entries_) out.push_back({n, v.value().template cast<float>()});
        return out;
    }

    // Loads every parameter of this store from `values` (extra entries are ignored).
    void import_values(const std::vector<NamedTensor>& values) {
        for (auto& [n, v] : entries_) {
            const NamedTensor* found = nullptr;
            for (const auto& nt : values) {
                if (nt.name == n) found = &nt;
            }
            if (!found) throw ContractError("checkpoint is missing parameter " + n);
            if (found->value.dims() != v.dims()) {
                throw ShapeError("parameter " + n + " has shape " + shape_str(found->value.dims()) + ", expected " +
                                 shape_str(v.dims()));
            }
            v.mutable_value() = found->value.template cast<T>();
        }
    }

    void copy_values_from(const ParamStore& other) {
        for (auto& [n, v] : entries_) v.mutable_value() = other.get(n).value();
    }

private:
    std::vector<std::pair<std::string, Var<T>>> entries_;
};

// Glorot-uniform initialization.
template <typename T>
Tensor<T> glorot_uniform(Shape dims, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor<T> t(std::move(dims));
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
}

// He-uniform initialization for relu layers.
template <typename T>
Tensor<T> he_uniform(Shape dims, std::size_t fan_in, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / double(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor<T> t(std::move(dims));
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
}

}  // namespace habitmask::num
