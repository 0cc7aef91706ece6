#pragma once

// Hot numerical loops. Two implementations live side by side:
//
//   kernels::reference  plain serial loops, written for readability; the
//                       oracle the tests compare against.
//   kernels             loop-reordered, OpenMP-parallel versions used by the
//                       autodiff ops.
//
// Forward kernels (gemm, conv3d_forward, pooling, joint_mix) accumulate each
// output element in the same order as the reference, so the two agree
// bitwise. Weight-gradient reductions use SIMD partial sums and agree with
// the reference only to rounding, but remain deterministic run to run.

#include <array>
#include <cstddef>
#include <cstdint>

namespace habitmask::kernels {

struct Conv3dGeometry {
    std::size_t batch = 1;
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::array<std::size_t, 3> in_size{1, 1, 1};   // D, H, W
    std::array<std::size_t, 3> kernel{1, 1, 1};
    std::array<std::size_t, 3> stride{1, 1, 1};
    std::array<std::size_t, 3> pad{0, 0, 0};

    std::size_t out_extent(int axis) const {
        return (in_size[axis] + 2 * pad[axis] - kernel[axis]) / stride[axis] + 1;
    }
    std::array<std::size_t, 3> out_size() const { return {out_extent(0), out_extent(1), out_extent(2)}; }
    std::size_t in_volume() const { return in_size[0] * in_size[1] * in_size[2]; }
    std::size_t out_volume() const { return out_extent(0) * out_extent(1) * out_extent(2); }
    std::size_t kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
    // Valid when every kernel extent fits inside the padded input.
    bool valid() const;
};

struct Pool3dGeometry {
    std::size_t planes = 1;  // batch * channels
    std::array<std::size_t, 3> in_size{1, 1, 1};
    std::array<std::size_t, 3> kernel{1, 1, 1};
    std::array<std::size_t, 3> stride{1, 1, 1};

    std::size_t out_extent(int axis) const { return (in_size[axis] - kernel[axis]) / stride[axis] + 1; }
    std::size_t in_volume() const { return in_size[0] * in_size[1] * in_size[2]; }
    std::size_t out_volume() const { return out_extent(0) * out_extent(1) * out_extent(2); }
    bool valid() const;
};

// C[M,N] = A[M,K] * B[K,N]
template <typename T>
void gemm(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c);

// out[cols, rows] = in[rows, cols]^T
template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out);

// x: (N, Ci, D, H, W); w: (Co, Ci, kd, kh, kw); bias: (Co) or null; y: (N, Co, OD, OH, OW)
template <typename T>
void conv3d_forward(const Conv3dGeometry& g, const T* x, const T* w, const T* bias, T* y);
// dx is overwritten.
template <typename T>
void conv3d_backward_data(const Conv3dGeometry& g, const T* dy, const T* w, T* dx);
// dw (and dbias if non-null) are overwritten.
template <typename T>
void conv3d_backward_weight(const Conv3dGeometry& g, const T* x, const T* dy, T* dw, T* dbias);

// argmax receives the flat in-plane index of each selected input element.
template <typename T>
void max_pool3d_forward(const Pool3dGeometry& g, const T* x, T* y, std::uint32_t* argmax);
template <typename T>
void max_pool3d_backward(const Pool3dGeometry& g, const T* dy, const std::uint32_t* argmax, T* dx);
template <typename T>
void avg_pool3d_forward(const Pool3dGeometry& g, const T* x, T* y);
template <typename T>
void avg_pool3d_backward(const Pool3dGeometry& g, const T* dy, T* dx);

// Per-frame joint mixing Y[t] = A * X[t] for `frames` stacked (m, f) blocks.
template <typename T>
void joint_mix(std::size_t frames, std::size_t m, std::size_t f, const T* adj, const T* x, T* y);

namespace reference {

template <typename T>
void gemm(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c);
template <typename T>
void conv3d_forward(const Conv3dGeometry& g, const T* x, const T* w, const T* bias, T* y);
template <typename T>
void conv3d_backward_data(const Conv3dGeometry& g, const T* dy, const T* w, T* dx);
template <typename T>
void conv3d_backward_weight(const Conv3dGeometry& g, const T* x, const T* dy, T* dw, T* dbias);
template <typename T>
void max_pool3d_forward(const Pool3dGeometry& g, const T* x, T* y, std::uint32_t* argmax);
template <typename T>
void avg_pool3d_forward(const Pool3dGeometry& g, const T* x, T* y);
template <typename T>
void joint_mix(std::size_t frames, std::size_t m, std::size_t f, const T* adj, const T* x, T* y);

}  // namespace reference

}  // namespace habitmask::kernels
