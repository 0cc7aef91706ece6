#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "habitmask/errors.hpp"

namespace habitmask::num {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           [](std::size_t a, std::size_t b) { return a * b; });
}

std::string shape_str(const Shape& dims);

// Dense row-major array. Values are owned; copies are deep.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape dims, T fill = T{0})
        : dims_(std::move(dims)), data_(shape_size(dims_), fill) {}
    Tensor(Shape dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
        if (data_.size() != shape_size(dims_)) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(dims_));
        }
    }

    const Shape& dims() const noexcept { return dims_; }
    std::size_t rank() const noexcept { return dims_.size(); }
    std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() & noexcept { return data_; }
    std::span<const T> data() const& noexcept { return data_; }
    // A span into a temporary would dangle.
    std::span<const T> data() const&& = delete;
    T* ptr() noexcept { return data_.data(); }
    const T* ptr() const noexcept { return data_.data(); }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    template <typename... Idx>
    T& at(Idx... idx) { return data_[offset({static_cast<std::size_t>(idx)...})]; }
    template <typename... Idx>
    const T& at(Idx... idx) const { return data_[offset({static_cast<std::size_t>(idx)...})]; }

    Tensor reshaped(Shape dims) const {
        if (shape_size(dims) != data_.size()) {
            throw ShapeError("cannot reshape " + shape_str(dims_) + " to " + shape_str(dims));
        }
        return Tensor(std::move(dims), data_);
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (T v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        return Tensor<U>(dims_, std::vector<U>(data_.begin(), data_.end()));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.dims_ == b.dims_ && a.data_ == b.data_;
    }

private:
    std::size_t offset(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != dims_.size()) throw IndexError("index rank mismatch");
        std::size_t off = 0;
        std::size_t axis = 0;
        for (std::size_t i : idx) {
            if (i >= dims_[axis]) throw IndexError("index out of range on axis " + std::to_string(axis));
            off = off * dims_[axis] + i;
            ++axis;
        }
        return off;
    }

    Shape dims_;
    std::vector<T> data_;
};

}  // namespace habitmask::num
