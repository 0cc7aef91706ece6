#include "habitmask/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "habitmask/kernels.hpp"

namespace habitmask::num {

std::string shape_str(const Shape& dims) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
    os << ')';
    return os.str();
}

namespace {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
    if (!t.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
}

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<NodePtr<T>> inputs, const char* op,
                   std::function<void(Node<T>&)> backward) {
    check_finite(value, op);
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->op = op;
    n->is_leaf = false;
    n->requires_grad = std::any_of(inputs.begin(), inputs.end(), [](const NodePtr<T>& p) { return p->requires_grad; });
    if (n->requires_grad) {
        n->inputs = std::move(inputs);
        n->backward = std::move(backward);
    }
    return Var<T>(std::move(n));
}

void require_same(const Shape& a, const Shape& b, const char* op) {
    if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// Splits dims around `axis` into (outer, len, inner) extents.
std::array<std::size_t, 3> axis_split(const Shape& dims, std::size_t axis) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= dims[i];
    for (std::size_t i = axis + 1; i < dims.size(); ++i) inner *= dims[i];
    return {outer, dims[axis], inner};
}

template <typename T, typename Fwd, typename Deriv>
Var<T> unary(const Var<T>& a, const char* op, Fwd fwd, Deriv deriv) {
    Tensor<T> out(a.dims());
    const auto& in = a.value();
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
    return make_result<T>(std::move(out), {a.node()}, op, [deriv](Node<T>& self) {
        auto& x = *self.inputs[0];
        if (!x.requires_grad) return;
        auto& gx = x.grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * deriv(x.value[i], self.value[i]);
    });
}

}  // namespace

template <typename T>
void backprop(const Var<T>& root) {
    if (!root.defined() || root.size() != 1) {
        throw ContractError("backprop root must be a scalar, got shape " +
                            (root.defined() ? shape_str(root.dims()) : std::string("<undefined>")));
    }
    if (!root.requires_grad()) return;

    // Iterative post-order DFS for a topological order.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node<T>* n : order) {
        if (!n->is_leaf) n->grad_buffer().fill(T{0});
    }
    root.node()->grad_buffer()[0] += T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (!n->is_leaf && n->backward) n->backward(*n);
    }
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same(a.dims(), b.dims(), "add");
    Tensor<T> out(a.dims());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    return make_result<T>(std::move(out), {a.node(), b.node()}, "add", [](Node<T>& self) {
        for (auto& in : self.inputs) {
            if (!in->requires_grad) continue;
            auto& g = in->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same(a.dims(), b.dims(), "sub");
    Tensor<T> out(a.dims());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
    return make_result<T>(std::move(out), {a.node(), b.node()}, "sub", [](Node<T>& self) {
        if (self.inputs[0]->requires_grad) {
            auto& g = self.inputs[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.inputs[1]->requires_grad) {
            auto& g = self.inputs[1]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same(a.dims(), b.dims(), "mul");
    Tensor<T> out(a.dims());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    return make_result<T>(std::move(out), {a.node(), b.node()}, "mul", [](Node<T>& self) {
        auto& x = *self.inputs[0];
        auto& y = *self.inputs[1];
        if (x.requires_grad) {
            auto& g = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.value[i];
        }
        if (y.requires_grad) {
            auto& g = y.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.value[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    return affine(a, s, T{0});
}

template <typename T>
Var<T> affine(const Var<T>& a, T s, T c) {
    return unary<T>(
        a, "affine", [s, c](T x) { return s * x + c; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, const Var<T>& s) {
    if (s.size() != 1) throw ShapeError("mul_scalar: scale must hold one element, got " + shape_str(s.dims()));
    const T sv = s.value()[0];
    Tensor<T> out(a.dims());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * sv;
    return make_result<T>(std::move(out), {a.node(), s.node()}, "mul_scalar", [](Node<T>& self) {
        auto& x = *self.inputs[0];
        auto& k = *self.inputs[1];
        if (x.requires_grad) {
            auto& g = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * k.value[0];
        }
        if (k.requires_grad) {
            T acc = 0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * x.value[i];
            k.grad_buffer()[0] += acc;
        }
    });
}

template <typename T>
Var<T> add_bias(const Var<T>& a, const Var<T>& bias) {
    if (bias.value().rank() != 1 || a.value().rank() == 0 || a.dims().back() != bias.dims()[0]) {
        throw ShapeError("add_bias: " + shape_str(a.dims()) + " + " + shape_str(bias.dims()));
    }
    const std::size_t n = bias.dims()[0];
    const std::size_t rows = a.size() / n;
    Tensor<T> out(a.dims());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = a.value()[r * n + j] + bias.value()[j];
    return make_result<T>(std::move(out), {a.node(), bias.node()}, "add_bias", [rows, n](Node<T>& self) {
        if (self.inputs[0]->requires_grad) {
            auto& g = self.inputs[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.inputs[1]->requires_grad) {
            auto& g = self.inputs[1]->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j];
        }
    });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
    return unary<T>(
        a, "tanh", [](T x) { return std::tanh(x); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    return unary<T>(
        a, "sigmoid",
        [](T x) {
            if (x >= 0) return T{1} / (T{1} + std::exp(-x));
            const T e = std::exp(x);
            return e / (T{1} + e);
        },
        [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    return unary<T>(
        a, "relu", [](T x) { return x > 0 ? x : T{0}; }, [](T x, T) { return x > 0 ? T{1} : T{0}; });
}

template <typename T>
Var<T> abs(const Var<T>& a) {
    return unary<T>(
        a, "abs", [](T x) { return std::abs(x); },
        [](T x, T) { return x > 0 ? T{1} : (x < 0 ? T{-1} : T{0}); });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    if (a.value().rank() != 2 || b.value().rank() != 2 || a.dims()[1] != b.dims()[0]) {
        throw ShapeError("matmul: " + shape_str(a.dims()) + " x " + shape_str(b.dims()));
    }
    const std::size_t m = a.dims()[0], k = a.dims()[1], n = b.dims()[1];
    Tensor<T> out({m, n});
    kernels::gemm(m, k, n, a.value().ptr(), b.value().ptr(), out.ptr());
    return make_result<T>(std::move(out), {a.node(), b.node()}, "matmul", [m, k, n](Node<T>& self) {
        auto& x = *self.inputs[0];
        auto& w = *self.inputs[1];
        if (x.requires_grad) {
            // dX = dY * W^T
            std::vector<T> wt(k * n), dx(m * k);
            kernels::transpose(k, n, w.value.ptr(), wt.data());
            kernels::gemm(m, n, k, self.grad.ptr(), wt.data(), dx.data());
            auto& g = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += dx[i];
        }
        if (w.requires_grad) {
            // dW = X^T * dY
            std::vector<T> xt(m * k), dw(k * n);
            kernels::transpose(m, k, x.value.ptr(), xt.data());
            kernels::gemm(k, m, n, xt.data(), self.grad.ptr(), dw.data());
            auto& g = w.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += dw[i];
        }
    });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
    T acc = 0;
    for (T v : a.value().data()) acc += v;
    return make_result<T>(Tensor<T>(Shape{}, std::vector<T>{acc}), {a.node()}, "sum", [](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
    });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
    if (a.size() == 0) throw ShapeError("mean of empty tensor");
    return scale(sum(a), T{1} / static_cast<T>(a.size()));
}

template <typename T>
Var<T> sum_axis(const Var<T>& a, std::size_t axis) {
    if (axis >= a.value().rank()) throw ShapeError("sum_axis: axis out of range");
    const auto [outer, len, inner] = axis_split(a.dims(), axis);
    Shape od = a.dims();
    od.erase(od.begin() + static_cast<long>(axis));
    Tensor<T> out(od);
    const auto& in = a.value();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += in[(o * len + l) * inner + i];
    return make_result<T>(std::move(out), {a.node()}, "sum_axis", [outer = outer, len = len, inner = inner](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t l = 0; l < len; ++l)
                for (std::size_t i = 0; i < inner; ++i) g[(o * len + l) * inner + i] += self.grad[o * inner + i];
    });
}

template <typename T>
Tensor<T> softmax_values(const Tensor<T>& logits, std::size_t axis) {
    if (axis >= logits.rank()) throw ShapeError("softmax: axis out of range");
    const auto [outer, len, inner] = axis_split(logits.dims(), axis);
    Tensor<T> out(logits.dims());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t l = 0; l < len; ++l) mx = std::max(mx, logits[(o * len + l) * inner + i]);
            T z = 0;
            for (std::size_t l = 0; l < len; ++l) {
                const std::size_t idx = (o * len + l) * inner + i;
                out[idx] = std::exp(logits[idx] - mx);
                z += out[idx];
            }
            for (std::size_t l = 0; l < len; ++l) out[(o * len + l) * inner + i] /= z;
        }
    return out;
}

template <typename T>
Var<T> softmax(const Var<T>& a, std::size_t axis) {
    Tensor<T> out = softmax_values(a.value(), axis);
    const auto [outer, len, inner] = axis_split(a.dims(), axis);
    return make_result<T>(std::move(out), {a.node()}, "softmax", [outer = outer, len = len, inner = inner](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        const auto& y = self.value;
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < inner; ++i) {
                T dot = 0;
                for (std::size_t l = 0; l < len; ++l) {
                    const std::size_t idx = (o * len + l) * inner + i;
                    dot += self.grad[idx] * y[idx];
                }
                for (std::size_t l = 0; l < len; ++l) {
                    const std::size_t idx = (o * len + l) * inner + i;
                    g[idx] += y[idx] * (self.grad[idx] - dot);
                }
            }
    });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape dims) {
    Tensor<T> out = a.value().reshaped(std::move(dims));
    return make_result<T>(std::move(out), {a.node()}, "reshape", [](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& d0 = parts[0].dims();
    if (axis >= d0.size()) throw ShapeError("concat: axis out of range");
    Shape od = d0;
    od[axis] = 0;
    std::vector<std::size_t> lens;
    for (const auto& p : parts) {
        const Shape& d = p.dims();
        if (d.size() != d0.size()) throw ShapeError("concat: rank mismatch");
        for (std::size_t i = 0; i < d.size(); ++i)
            if (i != axis && d[i] != d0[i])
                throw ShapeError("concat: " + shape_str(d) + " incompatible with " + shape_str(d0));
        od[axis] += d[axis];
        lens.push_back(d[axis]);
    }
    const auto [outer, total, inner] = axis_split(od, axis);
    Tensor<T> out(od);
    std::size_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto& in = parts[p].value();
        const std::size_t len = lens[p];
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(in.ptr() + o * len * inner, len * inner, out.ptr() + (o * total + off) * inner);
        off += len;
    }
    std::vector<NodePtr<T>> inputs;
    for (const auto& p : parts) inputs.push_back(p.node());
    return make_result<T>(std::move(out), std::move(inputs), "concat",
                          [outer = outer, total = total, inner = inner, lens](Node<T>& self) {
                              std::size_t off = 0;
                              for (std::size_t p = 0; p < self.inputs.size(); ++p) {
                                  const std::size_t len = lens[p];
                                  if (self.inputs[p]->requires_grad) {
                                      auto& g = self.inputs[p]->grad_buffer();
                                      for (std::size_t o = 0; o < outer; ++o)
                                          for (std::size_t i = 0; i < len * inner; ++i)
                                              g[o * len * inner + i] += self.grad[(o * total + off) * inner + i];
                                  }
                                  off += len;
                              }
                          });
}

template <typename T>
Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
    if (axis >= a.value().rank() || begin >= end || end > a.dims()[axis]) {
        throw ShapeError("slice: [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " of " + shape_str(a.dims()));
    }
    const auto [outer, len, inner] = axis_split(a.dims(), axis);
    Shape od = a.dims();
    od[axis] = end - begin;
    const std::size_t w = end - begin;
    Tensor<T> out(od);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(a.value().ptr() + (o * len + begin) * inner, w * inner, out.ptr() + o * w * inner);
    return make_result<T>(std::move(out), {a.node()}, "slice",
                          [outer = outer, len = len, inner = inner, begin, w](Node<T>& self) {
                              auto& g = self.inputs[0]->grad_buffer();
                              for (std::size_t o = 0; o < outer; ++o)
                                  for (std::size_t i = 0; i < w * inner; ++i)
                                      g[(o * len + begin) * inner + i] += self.grad[o * w * inner + i];
                          });
}

template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Conv3dParams p) {
    const Shape& xd = x.dims();
    const Shape& wd = weight.dims();
    if (xd.size() != 5 || wd.size() != 5 || xd[1] != wd[1]) {
        throw ShapeError("conv3d: input " + shape_str(xd) + " weight " + shape_str(wd));
    }
    if (bias.defined() && (bias.value().rank() != 1 || bias.dims()[0] != wd[0])) {
        throw ShapeError("conv3d: bias " + shape_str(bias.dims()));
    }
    kernels::Conv3dGeometry g;
    g.batch = xd[0];
    g.in_channels = xd[1];
    g.out_channels = wd[0];
    g.in_size = {xd[2], xd[3], xd[4]};
    g.kernel = {wd[2], wd[3], wd[4]};
    g.stride = p.stride;
    g.pad = p.pad;
    if (!g.valid()) throw ShapeError("conv3d: kernel does not fit input " + shape_str(xd));
    const auto os = g.out_size();
    Tensor<T> out({g.batch, g.out_channels, os[0], os[1], os[2]});
    kernels::conv3d_forward(g, x.value().ptr(), weight.value().ptr(), bias.defined() ? bias.value().ptr() : nullptr,
                            out.ptr());
    std::vector<NodePtr<T>> inputs{x.node(), weight.node()};
    if (bias.defined()) inputs.push_back(bias.node());
    return make_result<T>(std::move(out), std::move(inputs), "conv3d", [g](Node<T>& self) {
        auto& xn = *self.inputs[0];
        auto& wn = *self.inputs[1];
        if (xn.requires_grad) {
            std::vector<T> dx(xn.value.size());
            kernels::conv3d_backward_data(g, self.grad.ptr(), wn.value.ptr(), dx.data());
            auto& gx = xn.grad_buffer();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += dx[i];
        }
        const bool has_bias = self.inputs.size() > 2;
        const bool need_bias = has_bias && self.inputs[2]->requires_grad;
        if (wn.requires_grad || need_bias) {
            std::vector<T> dw(wn.value.size());
            std::vector<T> db(need_bias ? g.out_channels : 0);
            kernels::conv3d_backward_weight(g, xn.value.ptr(), self.grad.ptr(), dw.data(),
                                            need_bias ? db.data() : nullptr);
            if (wn.requires_grad) {
                auto& gw = wn.grad_buffer();
                for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += dw[i];
            }
            if (need_bias) {
                auto& gb = self.inputs[2]->grad_buffer();
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += db[i];
            }
        }
    });
}

namespace {

kernels::Pool3dGeometry pool_geometry(const Shape& xd, std::array<std::size_t, 3> kernel,
                                      std::array<std::size_t, 3> stride, const char* op) {
    if (xd.size() != 5) throw ShapeError(std::string(op) + ": expected rank-5 input, got " + shape_str(xd));
    kernels::Pool3dGeometry g;
    g.planes = xd[0] * xd[1];
    g.in_size = {xd[2], xd[3], xd[4]};
    g.kernel = kernel;
    g.stride = stride;
    if (!g.valid()) throw ShapeError(std::string(op) + ": window does not fit " + shape_str(xd));
    return g;
}

}  // namespace

template <typename T>
Var<T> max_pool3d(const Var<T>& x, std::array<std::size_t, 3> kernel, std::array<std::size_t, 3> stride) {
    const auto g = pool_geometry(x.dims(), kernel, stride, "max_pool3d");
    Tensor<T> out({x.dims()[0], x.dims()[1], g.out_extent(0), g.out_extent(1), g.out_extent(2)});
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
    kernels::max_pool3d_forward(g, x.value().ptr(), out.ptr(), argmax->data());
    return make_result<T>(std::move(out), {x.node()}, "max_pool3d", [g, argmax](Node<T>& self) {
        std::vector<T> dx(self.inputs[0]->value.size());
        kernels::max_pool3d_backward(g, self.grad.ptr(), argmax->data(), dx.data());
        auto& gx = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += dx[i];
    });
}

template <typename T>
Var<T> avg_pool3d(const Var<T>& x, std::array<std::size_t, 3> kernel, std::array<std::size_t, 3> stride) {
    const auto g = pool_geometry(x.dims(), kernel, stride, "avg_pool3d");
    Tensor<T> out({x.dims()[0], x.dims()[1], g.out_extent(0), g.out_extent(1), g.out_extent(2)});
    kernels::avg_pool3d_forward(g, x.value().ptr(), out.ptr());
    return make_result<T>(std::move(out), {x.node()}, "avg_pool3d", [g](Node<T>& self) {
        std::vector<T> dx(self.inputs[0]->value.size());
        kernels::avg_pool3d_backward(g, self.grad.ptr(), dx.data());
        auto& gx = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += dx[i];
    });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
    const Shape& xd = x.dims();
    if (xd.size() != 5) throw ShapeError("global_avg_pool: expected rank-5 input, got " + shape_str(xd));
    const std::size_t planes = xd[0] * xd[1];
    const std::size_t vol = xd[2] * xd[3] * xd[4];
    Tensor<T> out({xd[0], xd[1]});
    const T inv = T{1} / static_cast<T>(vol);
    for (std::size_t p = 0; p < planes; ++p) {
        T acc = 0;
        const T* src = x.value().ptr() + p * vol;
        for (std::size_t i = 0; i < vol; ++i) acc += src[i];
        out[p] = acc * inv;
    }
    return make_result<T>(std::move(out), {x.node()}, "global_avg_pool", [planes, vol, inv](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t p = 0; p < planes; ++p) {
            const T gv = self.grad[p] * inv;
            for (std::size_t i = 0; i < vol; ++i) g[p * vol + i] += gv;
        }
    });
}

template <typename T>
Var<T> joint_mix(const Var<T>& x, const Tensor<T>& adjacency) {
    const Shape& xd = x.dims();
    if (xd.size() != 4 || adjacency.rank() != 2 || adjacency.dim(0) != xd[2] || adjacency.dim(1) != xd[2]) {
        throw ShapeError("joint_mix: input " + shape_str(xd) + " adjacency " + shape_str(adjacency.dims()));
    }
    const std::size_t frames = xd[0] * xd[1], m = xd[2], f = xd[3];
    Tensor<T> out(xd);
    kernels::joint_mix(frames, m, f, adjacency.ptr(), x.value().ptr(), out.ptr());
    Tensor<T> adj_t({m, m});
    kernels::transpose(m, m, adjacency.ptr(), adj_t.ptr());
    return make_result<T>(std::move(out), {x.node()}, "joint_mix",
                          [frames, m, f, adj_t = std::move(adj_t)](Node<T>& self) {
                              std::vector<T> dx(self.grad.size());
                              kernels::joint_mix(frames, m, f, adj_t.ptr(), self.grad.ptr(), dx.data());
                              auto& g = self.inputs[0]->grad_buffer();
                              for (std::size_t i = 0; i < g.size(); ++i) g[i] += dx[i];
                          });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& weights, const Var<T>& h) {
    const Shape& wd = weights.dims();
    const Shape& hd = h.dims();
    if (wd.size() != 2 || hd.size() != 3 || wd[0] != hd[0] || wd[1] != hd[1]) {
        throw ShapeError("weighted_sum: weights " + shape_str(wd) + " h " + shape_str(hd));
    }
    const std::size_t b = hd[0], m = hd[1], d = hd[2];
    Tensor<T> out({b, d});
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const T a = weights.value()[i * m + j];
            for (std::size_t k = 0; k < d; ++k) out[i * d + k] += a * h.value()[(i * m + j) * d + k];
        }
    return make_result<T>(std::move(out), {weights.node(), h.node()}, "weighted_sum", [b, m, d](Node<T>& self) {
        auto& wn = *self.inputs[0];
        auto& hn = *self.inputs[1];
        if (wn.requires_grad) {
            auto& g = wn.grad_buffer();
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    T acc = 0;
                    for (std::size_t k = 0; k < d; ++k) acc += self.grad[i * d + k] * hn.value[(i * m + j) * d + k];
                    g[i * m + j] += acc;
                }
        }
        if (hn.requires_grad) {
            auto& g = hn.grad_buffer();
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    const T a = wn.value[i * m + j];
                    for (std::size_t k = 0; k < d; ++k) g[(i * m + j) * d + k] += a * self.grad[i * d + k];
                }
        }
    });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::size_t> targets) {
    const Shape& ld = logits.dims();
    if (ld.size() != 2) throw ShapeError("cross_entropy: logits must be (b, i), got " + shape_str(ld));
    const std::size_t b = ld[0], classes = ld[1];
    if (classes < 2) throw ContractError("cross_entropy: need at least 2 classes");
    if (targets.size() != b) throw ShapeError("cross_entropy: target count does not match batch");
    for (std::size_t t : targets) {
        if (t >= classes) throw IndexError("cross_entropy: target " + std::to_string(t) + " out of range");
    }
    Tensor<T> probs = softmax_values(logits.value(), 1);
    T loss = 0;
    for (std::size_t r = 0; r < b; ++r) {
        const T* row = logits.value().ptr() + r * classes;
        const T mx = *std::max_element(row, row + classes);
        T z = 0;
        for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
        loss += (mx + std::log(z)) - row[targets[r]];
    }
    loss /= static_cast<T>(b);
    std::vector<std::size_t> tg(targets.begin(), targets.end());
    return make_result<T>(Tensor<T>(Shape{}, std::vector<T>{loss}), {logits.node()}, "cross_entropy",
                          [probs = std::move(probs), tg = std::move(tg), b, classes](Node<T>& self) {
                              auto& g = self.inputs[0]->grad_buffer();
                              const T s = self.grad[0] / static_cast<T>(b);
                              for (std::size_t r = 0; r < b; ++r)
                                  for (std::size_t c = 0; c < classes; ++c) {
                                      const T onehot = c == tg[r] ? T{1} : T{0};
                                      g[r * classes + c] += s * (probs[r * classes + c] - onehot);
                                  }
                          });
}

#define HABITMASK_INSTANTIATE(T)                                                                             \
    template void backprop<T>(const Var<T>&);                                                                \
    template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                    \
    template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                                    \
    template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                                    \
    template Var<T> scale<T>(const Var<T>&, T);                                                              \
    template Var<T> affine<T>(const Var<T>&, T, T);                                                          \
    template Var<T> mul_scalar<T>(const Var<T>&, const Var<T>&);                                             \
    template Var<T> add_bias<T>(const Var<T>&, const Var<T>&);                                               \
    template Var<T> tanh<T>(const Var<T>&);                                                                  \
    template Var<T> sigmoid<T>(const Var<T>&);                                                               \
    template Var<T> relu<T>(const Var<T>&);                                                                  \
    template Var<T> abs<T>(const Var<T>&);                                                                   \
    template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                                 \
    template Var<T> sum<T>(const Var<T>&);                                                                   \
    template Var<T> mean<T>(const Var<T>&);                                                                  \
    template Var<T> sum_axis<T>(const Var<T>&, std::size_t);                                                 \
    template Var<T> softmax<T>(const Var<T>&, std::size_t);                                                  \
    template Var<T> reshape<T>(const Var<T>&, Shape);                                                        \
    template Var<T> concat<T>(const std::vector<Var<T>>&, std::size_t);                                      \
    template Var<T> slice<T>(const Var<T>&, std::size_t, std::size_t, std::size_t);                          \
    template Var<T> conv3d<T>(const Var<T>&, const Var<T>&, const Var<T>&, Conv3dParams);                    \
    template Var<T> max_pool3d<T>(const Var<T>&, std::array<std::size_t, 3>, std::array<std::size_t, 3>);    \
    template Var<T> avg_pool3d<T>(const Var<T>&, std::array<std::size_t, 3>, std::array<std::size_t, 3>);    \
    template Var<T> global_avg_pool<T>(const Var<T>&);                                                       \
    template Var<T> joint_mix<T>(const Var<T>&, const Tensor<T>&);                                           \
    template Var<T> weighted_sum<T>(const Var<T>&, const Var<T>&);                                           \
    template Var<T> cross_entropy<T>(const Var<T>&, std::span<const std::size_t>);                           \
    template Tensor<T> softmax_values<T>(const Tensor<T>&, std::size_t);

HABITMASK_INSTANTIATE(float)
HABITMASK_INSTANTIATE(double)
#undef HABITMASK_INSTANTIATE

}  // namespace habitmask::num
