#pragma once

// Tape-free reverse-mode differentiation. Every op returns a Var that owns
// its value and keeps shared references to its inputs; backprop() walks the
// resulting DAG in reverse topological order. Parameters are long-lived leaf
// Vars whose gradients accumulate across backprop() calls until zeroed.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "habitmask/tensor.hpp"

namespace habitmask::num {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until something flows into it
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;
    const char* op = "leaf";
    bool requires_grad = false;
    bool is_leaf = true;

    Tensor<T>& grad_buffer() {
        if (grad.size() != value.size() || grad.dims() != value.dims()) grad = Tensor<T>(value.dims());
        return grad;
    }
};

template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Var constant(Tensor<T> value) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        return Var(std::move(n));
    }
    static Var parameter(Tensor<T> value) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        n->requires_grad = true;
        return Var(std::move(n));
    }

    bool defined() const noexcept { return node_ != nullptr; }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Shape& dims() const { return node_->value.dims(); }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }
    // Gradient of the last backprop root w.r.t. this Var (zeros if none flowed).
    const Tensor<T>& grad() const { return node_->grad_buffer(); }
    Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
    void zero_grad() { node_->grad_buffer().fill(T{0}); }
    const char* op() const { return node_->op; }

    const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

// Populates gradients of every requires_grad node reachable from `root`.
// Leaf gradients accumulate; interior gradients are reset first.
// Throws ContractError if root is not a single scalar.
template <typename T>
void backprop(const Var<T>& root);

// Elementwise
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
// s * a + c
template <typename T> Var<T> affine(const Var<T>& a, T s, T c);
// a * s where s holds one element
template <typename T> Var<T> mul_scalar(const Var<T>& a, const Var<T>& s);
// a (..., n) + bias (n)
template <typename T> Var<T> add_bias(const Var<T>& a, const Var<T>& bias);
template <typename T> Var<T> tanh(const Var<T>& a);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> abs(const Var<T>& a);

// Linear algebra
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);

// Reductions and shape
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);
template <typename T> Var<T> sum_axis(const Var<T>& a, std::size_t axis);
template <typename T> Var<T> softmax(const Var<T>& a, std::size_t axis);
template <typename T> Var<T> reshape(const Var<T>& a, Shape dims);
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);
template <typename T> Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t begin, std::size_t end);

// Video ops on (N, C, D, H, W)
struct Conv3dParams {
    std::array<std::size_t, 3> stride{1, 1, 1};
    std::array<std::size_t, 3> pad{0, 0, 0};
};
// bias may be an undefined Var.
template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Conv3dParams p);
template <typename T>
Var<T> max_pool3d(const Var<T>& x, std::array<std::size_t, 3> kernel, std::array<std::size_t, 3> stride);
template <typename T>
Var<T> avg_pool3d(const Var<T>& x, std::array<std::size_t, 3> kernel, std::array<std::size_t, 3> stride);
// (N, C, D, H, W) -> (N, C)
template <typename T> Var<T> global_avg_pool(const Var<T>& x);

// Skeleton ops
// x: (B, L, m, f), adjacency: (m, m) constant -> (B, L, m, f)
template <typename T> Var<T> joint_mix(const Var<T>& x, const Tensor<T>& adjacency);
// weights: (b, m), h: (b, m, d) -> (b, d), out[b] = sum_j weights[b,j] h[b,j]
template <typename T> Var<T> weighted_sum(const Var<T>& weights, const Var<T>& h);

// Mean over the batch of -log softmax(logits)[target]. Throws IndexError on
// out-of-range targets.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::size_t> targets);

// Plain-tensor helpers shared by ops and callers.
template <typename T>
Tensor<T> softmax_values(const Tensor<T>& logits, std::size_t axis);

}  // namespace habitmask::num
