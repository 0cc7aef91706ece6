#include <limits>

#include "habitmask/kernels.hpp"

namespace habitmask::kernels {

bool Conv3dGeometry::valid() const {
    for (int a = 0; a < 3; ++a) {
        if (kernel[a] == 0 || stride[a] == 0) return false;
        if (in_size[a] + 2 * pad[a] < kernel[a]) return false;
    }
    return batch > 0 && in_channels > 0 && out_channels > 0;
}

bool Pool3dGeometry::valid() const {
    for (int a = 0; a < 3; ++a) {
        if (kernel[a] == 0 || stride[a] == 0 || in_size[a] < kernel[a]) return false;
    }
    return planes > 0;
}

namespace reference {

template <typename T>
void gemm(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = acc;
        }
    }
}

template <typename T>
void conv3d_forward(const Conv3dGeometry& g, const T* x, const T* w, const T* bias, T* y) {
    const auto [D, H, W] = g.in_size;
    const auto [OD, OH, OW] = g.out_size();
    const auto [KD, KH, KW] = g.kernel;
    for (std::size_t n = 0; n < g.batch; ++n) {
        for (std::size_t co = 0; co < g.out_channels; ++co) {
            for (std::size_t od = 0; od < OD; ++od) {
                for (std::size_t oh = 0; oh < OH; ++oh) {
                    for (std::size_t ow = 0; ow < OW; ++ow) {
                        T acc = bias ? bias[co] : T{0};
                        for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
                            for (std::size_t kd = 0; kd < KD; ++kd) {
                                const long id = long(od * g.stride[0] + kd) - long(g.pad[0]);
                                if (id < 0 || id >= long(D)) continue;
                                for (std::size_t kh = 0; kh < KH; ++kh) {
                                    const long ih = long(oh * g.stride[1] + kh) - long(g.pad[1]);
                                    if (ih < 0 || ih >= long(H)) continue;
                                    for (std::size_t kw = 0; kw < KW; ++kw) {
                                        const long iw = long(ow * g.stride[2] + kw) - long(g.pad[2]);
                                        if (iw < 0 || iw >= long(W)) continue;
                                        const T xv = x[(((n * g.in_channels + ci) * D + id) * H + ih) * W + iw];
                                        const T wv = w[(((co * g.in_channels + ci) * KD + kd) * KH + kh) * KW + kw];
                                        acc += wv * xv;
                                    }
                                }
                            }
                        }
                        y[(((n * g.out_channels + co) * OD + od) * OH + oh) * OW + ow] = acc;
                    }
                }
            }
        }
    }
}

template <typename T>
void conv3d_backward_data(const Conv3dGeometry& g, const T* dy, const T* w, T* dx) {
    const auto [D, H, W] = g.in_size;
    const auto [OD, OH, OW] = g.out_size();
    const auto [KD, KH, KW] = g.kernel;
    for (std::size_t i = 0; i < g.batch * g.in_channels * g.in_volume(); ++i) dx[i] = 0;
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t co = 0; co < g.out_channels; ++co)
            for (std::size_t od = 0; od < OD; ++od)
                for (std::size_t oh = 0; oh < OH; ++oh)
                    for (std::size_t ow = 0; ow < OW; ++ow) {
                        const T g_out = dy[(((n * g.out_channels + co) * OD + od) * OH + oh) * OW + ow];
                        for (std::size_t ci = 0; ci < g.in_channels; ++ci)
                            for (std::size_t kd = 0; kd < KD; ++kd) {
                                const long id = long(od * g.stride[0] + kd) - long(g.pad[0]);
                                if (id < 0 || id >= long(D)) continue;
                                for (std::size_t kh = 0; kh < KH; ++kh) {
                                    const long ih = long(oh * g.stride[1] + kh) - long(g.pad[1]);
                                    if (ih < 0 || ih >= long(H)) continue;
                                    for (std::size_t kw = 0; kw < KW; ++kw) {
                                        const long iw = long(ow * g.stride[2] + kw) - long(g.pad[2]);
                                        if (iw < 0 || iw >= long(W)) continue;
                                        dx[(((n * g.in_channels + ci) * D + id) * H + ih) * W + iw] +=
                                            g_out * w[(((co * g.in_channels + ci) * KD + kd) * KH + kh) * KW + kw];
                                    }
                                }
                            }
                    }
}

template <typename T>
void conv3d_backward_weight(const Conv3dGeometry& g, const T* x, const T* dy, T* dw, T* dbias) {
    const auto [D, H, W] = g.in_size;
    const auto [OD, OH, OW] = g.out_size();
    const auto [KD, KH, KW] = g.kernel;
    for (std::size_t i = 0; i < g.out_channels * g.in_channels * g.kernel_volume(); ++i) dw[i] = 0;
    if (dbias)
        for (std::size_t co = 0; co < g.out_channels; ++co) dbias[co] = 0;
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t co = 0; co < g.out_channels; ++co)
            for (std::size_t od = 0; od < OD; ++od)
                for (std::size_t oh = 0; oh < OH; ++oh)
                    for (std::size_t ow = 0; ow < OW; ++ow) {
                        const T g_out = dy[(((n * g.out_channels + co) * OD + od) * OH + oh) * OW + ow];
                        if (dbias) dbias[co] += g_out;
                        for (std::size_t ci = 0; ci < g.in_channels; ++ci)
                            for (std::size_t kd = 0; kd < KD; ++kd) {
                                const long id = long(od * g.stride[0] + kd) - long(g.pad[0]);
                                if (id < 0 || id >= long(D)) continue;
                                for (std::size_t kh = 0; kh < KH; ++kh) {
                                    const long ih = long(oh * g.stride[1] + kh) - long(g.pad[1]);
                                    if (ih < 0 || ih >= long(H)) continue;
                                    for (std::size_t kw = 0; kw < KW; ++kw) {
                                        const long iw = long(ow * g.stride[2] + kw) - long(g.pad[2]);
                                        if (iw < 0 || iw >= long(W)) continue;
                                        dw[(((co * g.in_channels + ci) * KD + kd) * KH + kh) * KW + kw] +=
                                            g_out * x[(((n * g.in_channels + ci) * D + id) * H + ih) * W + iw];
                                    }
                                }
                            }
                    }
}

template <typename T>
void max_pool3d_forward(const Pool3dGeometry& g, const T* x, T* y, std::uint32_t* argmax) {
    const auto [D, H, W] = g.in_size;
    const std::size_t OD = g.out_extent(0), OH = g.out_extent(1), OW = g.out_extent(2);
    for (std::size_t p = 0; p < g.planes; ++p) {
        const T* xp = x + p * g.in_volume();
        for (std::size_t od = 0; od < OD; ++od)
            for (std::size_t oh = 0; oh < OH; ++oh)
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::uint32_t best_i = 0;
                    for (std::size_t kd = 0; kd < g.kernel[0]; ++kd)
                        for (std::size_t kh = 0; kh < g.kernel[1]; ++kh)
                            for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) {
                                const std::size_t idx = ((od * g.stride[0] + kd) * H + oh * g.stride[1] + kh) * W +
                                                        ow * g.stride[2] + kw;
                                if (xp[idx] > best) {
                                    best = xp[idx];
                                    best_i = static_cast<std::uint32_t>(idx);
                                }
                            }
                    const std::size_t o = p * g.out_volume() + (od * OH + oh) * OW + ow;
                    y[o] = best;
                    if (argmax) argmax[o] = best_i;
                }
        (void)D;
    }
}

template <typename T>
void avg_pool3d_forward(const Pool3dGeometry& g, const T* x, T* y) {
    const auto [D, H, W] = g.in_size;
    const std::size_t OD = g.out_extent(0), OH = g.out_extent(1), OW = g.out_extent(2);
    const T scale = T{1} / static_cast<T>(g.kernel[0] * g.kernel[1] * g.kernel[2]);
    for (std::size_t p = 0; p < g.planes; ++p) {
        const T* xp = x + p * g.in_volume();
        for (std::size_t od = 0; od < OD; ++od)
            for (std::size_t oh = 0; oh < OH; ++oh)
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    T acc = 0;
                    for (std::size_t kd = 0; kd < g.kernel[0]; ++kd)
                        for (std::size_t kh = 0; kh < g.kernel[1]; ++kh)
                            for (std::size_t kw = 0; kw < g.kernel[2]; ++kw)
                                acc += xp[((od * g.stride[0] + kd) * H + oh * g.stride[1] + kh) * W +
                                          ow * g.stride[2] + kw];
                    y[p * g.out_volume() + (od * OH + oh) * OW + ow] = acc * scale;
                }
        (void)D;
    }
}

template <typename T>
void joint_mix(std::size_t frames, std::size_t m, std::size_t f, const T* adj, const T* x, T* y) {
    for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t c = 0; c < f; ++c) {
                T acc = 0;
                for (std::size_t j = 0; j < m; ++j) acc += adj[i * m + j] * x[(t * m + j) * f + c];
                y[(t * m + i) * f + c] = acc;
            }
}

#define HABITMASK_INSTANTIATE(T)                                                                      \
    template void gemm<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*);             \
    template void conv3d_forward<T>(const Conv3dGeometry&, const T*, const T*, const T*, T*);         \
    template void conv3d_backward_data<T>(const Conv3dGeometry&, const T*, const T*, T*);             \
    template void conv3d_backward_weight<T>(const Conv3dGeometry&, const T*, const T*, T*, T*);       \
    template void max_pool3d_forward<T>(const Pool3dGeometry&, const T*, T*, std::uint32_t*);         \
    template void avg_pool3d_forward<T>(const Pool3dGeometry&, const T*, T*);                         \
    template void joint_mix<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*);

HABITMASK_INSTANTIATE(float)
HABITMASK_INSTANTIATE(double)
#undef HABITMASK_INSTANTIATE

}  // namespace reference
}  // namespace habitmask::kernels
