#include <algorithm>
#include <cstring>
#include <limits>
#include <vector>

#include "habitmask/kernels.hpp"

namespace habitmask::kernels {
namespace {

// Output range [lo, hi) along one axis for which in = o*stride + k - pad lands in [0, extent).
struct Range {
    std::size_t lo, hi;
};

Range valid_outputs(std::size_t extent, std::size_t out_extent, std::size_t k, std::size_t stride, std::size_t pad) {
    const long off = long(k) - long(pad);
    long lo = 0;
    if (off < 0) lo = (-off + long(stride) - 1) / long(stride);
    const long last_in = long(extent) - 1 - off;
    if (last_in < 0) return {0, 0};
    long hi = last_in / long(stride) + 1;
    hi = std::min(hi, long(out_extent));
    if (hi < lo) hi = lo;
    return {std::size_t(lo), std::size_t(hi)};
}

}  // namespace

template <typename T>
void gemm(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ii = 0; ii < std::ptrdiff_t(m); ++ii) {
        const std::size_t i = std::size_t(ii);
        T* crow = c + i * n;
        std::fill(crow, crow + n, T{0});
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out) {
    constexpr std::size_t kBlock = 32;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t rb = 0; rb < std::ptrdiff_t(rows); rb += kBlock) {
        const std::size_t r_end = std::min(rows, std::size_t(rb) + kBlock);
        for (std::size_t cb = 0; cb < cols; cb += kBlock) {
            const std::size_t c_end = std::min(cols, cb + kBlock);
            for (std::size_t r = std::size_t(rb); r < r_end; ++r)
                for (std::size_t cc = cb; cc < c_end; ++cc) out[cc * rows + r] = in[r * cols + cc];
        }
    }
}

namespace {

// Unfolds one batch item into a (K, N) matrix, K = Ci*KD*KH*KW rows in the
// weight layout order and N = OD*OH*OW columns; padded taps read as zero.
template <typename T>
void im2col(const Conv3dGeometry& g, const T* x, T* cols) {
    const auto [D, H, W] = g.in_size;
    const auto [OD, OH, OW] = g.out_size();
    const auto [KD, KH, KW] = g.kernel;
    const std::size_t N = OD * OH * OW;
    std::size_t r = 0;
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
        const T* xp = x + ci * D * H * W;
        for (std::size_t kd = 0; kd < KD; ++kd)
            for (std::size_t kh = 0; kh < KH; ++kh)
                for (std::size_t kw = 0; kw < KW; ++kw, ++r) {
                    T* crow = cols + r * N;
                    const Range rd = valid_outputs(D, OD, kd, g.stride[0], g.pad[0]);
                    const Range rh = valid_outputs(H, OH, kh, g.stride[1], g.pad[1]);
                    const Range rw = valid_outputs(W, OW, kw, g.stride[2], g.pad[2]);
                    std::fill(crow, crow + N, T{0});
                    const long woff = long(kw) - long(g.pad[2]);
                    for (std::size_t od = rd.lo; od < rd.hi; ++od) {
                        const std::size_t id = od * g.stride[0] + kd - g.pad[0];
                        for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
                            const std::size_t ih = oh * g.stride[1] + kh - g.pad[1];
                            const T* xrow = xp + (id * H + ih) * W;
                            T* out = crow + (od * OH + oh) * OW;
                            for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) out[ow] = xrow[long(ow * g.stride[2]) + woff];
                        }
                    }
                }
    }
}

// Adds a (K, N) column matrix back onto one batch item of the input gradient.
template <typename T>
void col2im_add(const Conv3dGeometry& g, const T* cols, T* dx) {
    const auto [D, H, W] = g.in_size;
    const auto [OD, OH, OW] = g.out_size();
    const auto [KD, KH, KW] = g.kernel;
    const std::size_t N = OD * OH * OW;
    std::size_t r = 0;
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
        T* dxp = dx + ci * D * H * W;
        for (std::size_t kd = 0; kd < KD; ++kd)
            for (std::size_t kh = 0; kh < KH; ++kh)
                for (std::size_t kw = 0; kw < KW; ++kw, ++r) {
                    const T* crow = cols + r * N;
                    const Range rd = valid_outputs(D, OD, kd, g.stride[0], g.pad[0]);
                    const Range rh = valid_outputs(H, OH, kh, g.stride[1], g.pad[1]);
                    const Range rw = valid_outputs(W, OW, kw, g.stride[2], g.pad[2]);
                    const long woff = long(kw) - long(g.pad[2]);
                    for (std::size_t od = rd.lo; od < rd.hi; ++od) {
                        const std::size_t id = od * g.stride[0] + kd - g.pad[0];
                        for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
                            const std::size_t ih = oh * g.stride[1] + kh - g.pad[1];
                            T* dxrow = dxp + (id * H + ih) * W;
                            const T* in = crow + (od * OH + oh) * OW;
                            for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) dxrow[long(ow * g.stride[2]) + woff] += in[ow];
                        }
                    }
                }
    }
}

}  // namespace

// Each output accumulates bias, then taps in (ci, kd, kh, kw) order, which is
// the reference order; padded taps contribute an exact zero.
template <typename T>
void conv3d_forward(const Conv3dGeometry& g, const T* x, const T* w, const T* bias, T* y) {
    const std::size_t K = g.in_channels * g.kernel_volume();
    const std::size_t N = g.out_volume();
    const std::size_t xvol = g.in_channels * g.in_volume();
#pragma omp parallel
    {
        std::vector<T> cols(K * N);
#pragma omp for schedule(static)
        for (std::ptrdiff_t nn = 0; nn < std::ptrdiff_t(g.batch); ++nn) {
            const std::size_t n = std::size_t(nn);
            im2col(g, x + n * xvol, cols.data());
            for (std::size_t co = 0; co < g.out_channels; ++co) {
                T* yrow = y + (n * g.out_channels + co) * N;
                std::fill(yrow, yrow + N, bias ? bias[co] : T{0});
                const T* wrow = w + co * K;
                for (std::size_t r = 0; r < K; ++r) {
                    const T wv = wrow[r];
                    const T* crow = cols.data() + r * N;
                    for (std::size_t j = 0; j < N; ++j) yrow[j] += wv * crow[j];
                }
            }
        }
    }
}

template <typename T>
void conv3d_backward_data(const Conv3dGeometry& g, const T* dy, const T* w, T* dx) {
    const std::size_t K = g.in_channels * g.kernel_volume();
    const std::size_t N = g.out_volume();
    const std::size_t xvol = g.in_channels * g.in_volume();
#pragma omp parallel
    {
        std::vector<T> cols(K * N);
#pragma omp for schedule(static)
        for (std::ptrdiff_t nn = 0; nn < std::ptrdiff_t(g.batch); ++nn) {
            const std::size_t n = std::size_t(nn);
            std::fill(cols.begin(), cols.end(), T{0});
            for (std::size_t r = 0; r < K; ++r) {
                T* crow = cols.data() + r * N;
                for (std::size_t co = 0; co < g.out_channels; ++co) {
                    const T wv = w[co * K + r];
                    const T* dyrow = dy + (n * g.out_channels + co) * N;
                    for (std::size_t j = 0; j < N; ++j) crow[j] += wv * dyrow[j];
                }
            }
            T* dxn = dx + n * xvol;
            std::fill(dxn, dxn + xvol, T{0});
            col2im_add(g, cols.data(), dxn);
        }
    }
}

// Per-item partial sums are reduced in batch order, so results do not depend
// on the thread count.
template <typename T>
void conv3d_backward_weight(const Conv3dGeometry& g, const T* x, const T* dy, T* dw, T* dbias) {
    const std::size_t K = g.in_channels * g.kernel_volume();
    const std::size_t N = g.out_volume();
    const std::size_t xvol = g.in_channels * g.in_volume();
    const std::size_t wsize = g.out_channels * K;
    std::vector<T> partial(g.batch * wsize);
    std::vector<T> bias_partial(g.batch * g.out_channels);
#pragma omp parallel
    {
        std::vector<T> cols(K * N);
#pragma omp for schedule(static)
        for (std::ptrdiff_t nn = 0; nn < std::ptrdiff_t(g.batch); ++nn) {
            const std::size_t n = std::size_t(nn);
            im2col(g, x + n * xvol, cols.data());
            T* pw = partial.data() + n * wsize;
            for (std::size_t co = 0; co < g.out_channels; ++co) {
                const T* dyrow = dy + (n * g.out_channels + co) * N;
                for (std::size_t r = 0; r < K; ++r) {
                    const T* crow = cols.data() + r * N;
                    T acc = 0;
#pragma omp simd reduction(+ : acc)
                    for (std::size_t j = 0; j < N; ++j) acc += dyrow[j] * crow[j];
                    pw[co * K + r] = acc;
                }
                T bacc = 0;
#pragma omp simd reduction(+ : bacc)
                for (std::size_t j = 0; j < N; ++j) bacc += dyrow[j];
                bias_partial[n * g.out_channels + co] = bacc;
            }
        }
    }
    std::fill(dw, dw + wsize, T{0});
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t i = 0; i < wsize; ++i) dw[i] += partial[n * wsize + i];
    if (dbias) {
        std::fill(dbias, dbias + g.out_channels, T{0});
        for (std::size_t n = 0; n < g.batch; ++n)
            for (std::size_t c = 0; c < g.out_channels; ++c) dbias[c] += bias_partial[n * g.out_channels + c];
    }
}

template <typename T>
void max_pool3d_forward(const Pool3dGeometry& g, const T* x, T* y, std::uint32_t* argmax) {
    const std::size_t H = g.in_size[1], W = g.in_size[2];
    const std::size_t OD = g.out_extent(0), OH = g.out_extent(1), OW = g.out_extent(2);
    const std::size_t ivol = g.in_volume(), ovol = g.out_volume();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t pp = 0; pp < std::ptrdiff_t(g.planes); ++pp) {
        const T* xp = x + std::size_t(pp) * ivol;
        for (std::size_t od = 0; od < OD; ++od)
            for (std::size_t oh = 0; oh < OH; ++oh)
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::uint32_t best_i = 0;
                    for (std::size_t kd = 0; kd < g.kernel[0]; ++kd)
                        for (std::size_t kh = 0; kh < g.kernel[1]; ++kh) {
                            const std::size_t base = ((od * g.stride[0] + kd) * H + oh * g.stride[1] + kh) * W +
                                                     ow * g.stride[2];
                            for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) {
                                if (xp[base + kw] > best) {
                                    best = xp[base + kw];
                                    best_i = static_cast<std::uint32_t>(base + kw);
                                }
                            }
                        }
                    const std::size_t o = std::size_t(pp) * ovol + (od * OH + oh) * OW + ow;
                    y[o] = best;
                    if (argmax) argmax[o] = best_i;
                }
    }
}

template <typename T>
void max_pool3d_backward(const Pool3dGeometry& g, const T* dy, const std::uint32_t* argmax, T* dx) {
    const std::size_t ivol = g.in_volume(), ovol = g.out_volume();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t pp = 0; pp < std::ptrdiff_t(g.planes); ++pp) {
        T* dxp = dx + std::size_t(pp) * ivol;
        std::fill(dxp, dxp + ivol, T{0});
        const std::size_t base = std::size_t(pp) * ovol;
        for (std::size_t o = 0; o < ovol; ++o) dxp[argmax[base + o]] += dy[base + o];
    }
}

template <typename T>
void avg_pool3d_forward(const Pool3dGeometry& g, const T* x, T* y) {
    const std::size_t H = g.in_size[1], W = g.in_size[2];
    const std::size_t OD = g.out_extent(0), OH = g.out_extent(1), OW = g.out_extent(2);
    const std::size_t ivol = g.in_volume(), ovol = g.out_volume();
    const T scale = T{1} / static_cast<T>(g.kernel[0] * g.kernel[1] * g.kernel[2]);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t pp = 0; pp < std::ptrdiff_t(g.planes); ++pp) {
        const T* xp = x + std::size_t(pp) * ivol;
        for (std::size_t od = 0; od < OD; ++od)
            for (std::size_t oh = 0; oh < OH; ++oh)
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    T acc = 0;
                    for (std::size_t kd = 0; kd < g.kernel[0]; ++kd)
                        for (std::size_t kh = 0; kh < g.kernel[1]; ++kh) {
                            const std::size_t base = ((od * g.stride[0] + kd) * H + oh * g.stride[1] + kh) * W +
                                                     ow * g.stride[2];
                            for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) acc += xp[base + kw];
                        }
                    y[std::size_t(pp) * ovol + (od * OH + oh) * OW + ow] = acc * scale;
                }
    }
}

template <typename T>
void avg_pool3d_backward(const Pool3dGeometry& g, const T* dy, T* dx) {
    const std::size_t H = g.in_size[1], W = g.in_size[2];
    const std::size_t OD = g.out_extent(0), OH = g.out_extent(1), OW = g.out_extent(2);
    const std::size_t ivol = g.in_volume(), ovol = g.out_volume();
    const T scale = T{1} / static_cast<T>(g.kernel[0] * g.kernel[1] * g.kernel[2]);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t pp = 0; pp < std::ptrdiff_t(g.planes); ++pp) {
        T* dxp = dx + std::size_t(pp) * ivol;
        std::fill(dxp, dxp + ivol, T{0});
        for (std::size_t od = 0; od < OD; ++od)
            for (std::size_t oh = 0; oh < OH; ++oh)
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    const T gv = dy[std::size_t(pp) * ovol + (od * OH + oh) * OW + ow] * scale;
                    for (std::size_t kd = 0; kd < g.kernel[0]; ++kd)
                        for (std::size_t kh = 0; kh < g.kernel[1]; ++kh) {
                            const std::size_t base = ((od * g.stride[0] + kd) * H + oh * g.stride[1] + kh) * W +
                                                     ow * g.stride[2];
                            for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) dxp[base + kw] += gv;
                        }
                }
    }
}

template <typename T>
void joint_mix(std::size_t frames, std::size_t m, std::size_t f, const T* adj, const T* x, T* y) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t tt = 0; tt < std::ptrdiff_t(frames); ++tt) {
        const std::size_t t = std::size_t(tt);
        for (std::size_t i = 0; i < m; ++i) {
            T* yrow = y + (t * m + i) * f;
            std::fill(yrow, yrow + f, T{0});
            for (std::size_t j = 0; j < m; ++j) {
                const T a = adj[i * m + j];
                const T* xrow = x + (t * m + j) * f;
                for (std::size_t c = 0; c < f; ++c) yrow[c] += a * xrow[c];
            }
        }
    }
}

#define HABITMASK_INSTANTIATE(T)                                                                       \
    template void gemm<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*);              \
    template void transpose<T>(std::size_t, std::size_t, const T*, T*);                                \
    template void conv3d_forward<T>(const Conv3dGeometry&, const T*, const T*, const T*, T*);          \
    template void conv3d_backward_data<T>(const Conv3dGeometry&, const T*, const T*, T*);              \
    template void conv3d_backward_weight<T>(const Conv3dGeometry&, const T*, const T*, T*, T*);        \
    template void max_pool3d_forward<T>(const Pool3dGeometry&, const T*, T*, std::uint32_t*);          \
    template void max_pool3d_backward<T>(const Pool3dGeometry&, const T*, const std::uint32_t*, T*);   \
    template void avg_pool3d_forward<T>(const Pool3dGeometry&, const T*, T*);                          \
    template void avg_pool3d_backward<T>(const Pool3dGeometry&, const T*, T*);                         \
    template void joint_mix<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*);

HABITMASK_INSTANTIATE(float)
HABITMASK_INSTANTIATE(double)
#undef HABITMASK_INSTANTIATE

}  // namespace habitmask::kernels
