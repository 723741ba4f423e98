#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cass/common.hpp"
#include "cass/tensor.hpp"

// Forward/backward pairs for the closed operator set of the classifier.
// Every backward here is checked against central finite differences in the
// test suite; keep the math boring and explicit.
namespace cass::ops {

// ---------------------------------------------------------------------------
// conv2d (grouped), weight layout (Cout, Cin/groups, kh, kw)
// ---------------------------------------------------------------------------

inline int conv_out_extent(int in, int pad, int k, int stride) {
    return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
void check_conv_args(const TensorT<T>& x, const TensorT<T>& w, const std::vector<T>* bias,
                     int stride, int padding, int groups) {
    if (stride < 1 || padding < 0 || groups < 1) {
        throw ArgumentError("conv2d: stride must be >= 1, padding >= 0, groups >= 1");
    }
    if (x.c() % groups != 0) {
        throw DimensionError("conv2d: input channels " + std::to_string(x.c()) +
                             " not divisible by groups " + std::to_string(groups));
    }
    if (w.shape[0] % groups != 0) {
        throw DimensionError("conv2d: output channels " + std::to_string(w.shape[0]) +
                             " not divisible by groups " + std::to_string(groups));
    }
    if (w.shape[1] != x.c() / groups) {
        throw DimensionError("conv2d: weight channel axis is " + std::to_string(w.shape[1]) +
                             ", expected Cin/groups = " + std::to_string(x.c() / groups));
    }
    if (conv_out_extent(x.h(), padding, w.shape[2], stride) < 1 ||
        conv_out_extent(x.w(), padding, w.shape[3], stride) < 1) {
        throw DimensionError("conv2d: kernel " + std::to_string(w.shape[2]) + "x" +
                             std::to_string(w.shape[3]) + " does not fit padded input " +
                             shape_str(x));
    }
    if (bias && static_cast<int>(bias->size()) != w.shape[0]) {
        throw DimensionError("conv2d: bias length " + std::to_string(bias->size()) +
                             " != output channels " + std::to_string(w.shape[0]));
    }
}

namespace detail {

// Output rows/cols whose kernel tap (kr) lands inside the input extent:
// 0 <= o*stride - padding + kr < extent.
struct TapRange {
    int lo, hi;  // [lo, hi)
};

inline TapRange tap_range(int extent, int out_extent, int stride, int padding, int kr) {
    const int shift = padding - kr;
    int lo = shift > 0 ? (shift + stride - 1) / stride : 0;
    int hi = (extent - 1 + shift) / stride + 1;
    if (hi > out_extent) hi = out_extent;
    if (lo > hi) lo = hi;
    return {lo, hi};
}

}  // namespace detail

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, const std::vector<T>* bias,
                          int stride, int padding, int groups) {
    check_conv_args(x, w, bias, stride, padding, groups);
    const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
    const int Cout = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    const int cin_g = C / groups, cout_g = Cout / groups;
    const int OH = conv_out_extent(H, padding, kh, stride);
    const int OW = conv_out_extent(W, padding, kw, stride);
    TensorT<T> out(N, Cout, OH, OW);

    const bool pointwise = (kh == 1 && kw == 1 && stride == 1 && padding == 0);
    const std::int64_t plane = std::int64_t{H} * W;
    const std::int64_t oplane = std::int64_t{OH} * OW;

    parallel_for_chunks(N, [&](std::int64_t n0, std::int64_t n1) {
        for (std::int64_t n = n0; n < n1; ++n) {
            if (pointwise) {
                for (int g = 0; g < groups; ++g) {
                    for (int co = g * cout_g; co < (g + 1) * cout_g; ++co) {
                        T* op = &out.data[static_cast<std::size_t>(out.index(static_cast<int>(n), co, 0, 0))];
                        const T b = bias ? (*bias)[static_cast<std::size_t>(co)] : T(0);
                        std::fill(op, op + plane, b);
                        for (int cl = 0; cl < cin_g; ++cl) {
                            const T wv = w.at(co, cl, 0, 0);
                            const T* ip =
                                &x.data[static_cast<std::size_t>(x.index(static_cast<int>(n), g * cin_g + cl, 0, 0))];
                            for (std::int64_t p = 0; p < plane; ++p) op[p] += wv * ip[p];
                        }
                    }
                }
                continue;
            }
            // shift-and-accumulate: one branch-free inner loop per kernel tap
            for (int g = 0; g < groups; ++g) {
                for (int co = g * cout_g; co < (g + 1) * cout_g; ++co) {
                    T* obase = &out.data[static_cast<std::size_t>(out.index(static_cast<int>(n), co, 0, 0))];
                    const T b = bias ? (*bias)[static_cast<std::size_t>(co)] : T(0);
                    std::fill(obase, obase + oplane, b);
                    for (int cl = 0; cl < cin_g; ++cl) {
                        const int ci = g * cin_g + cl;
                        const T* ibase =
                            &x.data[static_cast<std::size_t>(x.index(static_cast<int>(n), ci, 0, 0))];
                        for (int r = 0; r < kh; ++r) {
                            const auto rh = detail::tap_range(H, OH, stride, padding, r);
                            for (int c2 = 0; c2 < kw; ++c2) {
                                const auto rw = detail::tap_range(W, OW, stride, padding, c2);
                                const T wv = w.at(co, cl, r, c2);
                                const int shift = c2 - padding;
                                for (int oh = rh.lo; oh < rh.hi; ++oh) {
                                    const int ih = oh * stride - padding + r;
                                    T* orow = obase + static_cast<std::int64_t>(oh) * OW;
                                    const T* irow = ibase + static_cast<std::int64_t>(ih) * W;
                                    if (stride == 1) {
                                        for (int ow = rw.lo; ow < rw.hi; ++ow) {
                                            orow[ow] += wv * irow[ow + shift];
                                        }
                                    } else {
                                        for (int ow = rw.lo; ow < rw.hi; ++ow) {
                                            orow[ow] += wv * irow[ow * stride + shift];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    return out;
}

template <typename T>
struct Conv2dGrads {
    TensorT<T> input;
    TensorT<T> weight;
    std::vector<T> bias;  // empty when the forward had no bias
};

namespace detail {

// Accumulates grads for batch rows [n0, n1) into the supplied buffers.
// Input-grad rows are disjoint per n, so the caller may share `gin` across
// ranges; weight/bias grads must be private per range and reduced in order.
template <typename T>
void conv2d_backward_range(const TensorT<T>& gout, const TensorT<T>& x, const TensorT<T>& w,
                           bool has_bias, int stride, int padding, int groups,
                           std::int64_t n0, std::int64_t n1, TensorT<T>& gin, TensorT<T>& gw,
                           std::vector<T>& gb) {
    const int C = x.c(), H = x.h(), W = x.w();
    const int Cout = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    const int cin_g = C / groups, cout_g = Cout / groups;
    const int OH = gout.h(), OW = gout.w();
    const bool pointwise = (kh == 1 && kw == 1 && stride == 1 && padding == 0);
    const std::int64_t plane = std::int64_t{H} * W;

    for (std::int64_t n = n0; n < n1; ++n) {
        const int ni = static_cast<int>(n);
        if (pointwise) {
            for (int g = 0; g < groups; ++g) {
                for (int co = g * cout_g; co < (g + 1) * cout_g; ++co) {
                    const T* gop = &gout.data[static_cast<std::size_t>(gout.index(ni, co, 0, 0))];
                    if (has_bias) {
                        T s = T(0);
                        for (std::int64_t p = 0; p < plane; ++p) s += gop[p];
                        gb[static_cast<std::size_t>(co)] += s;
                    }
                    for (int cl = 0; cl < cin_g; ++cl) {
                        const int ci = g * cin_g + cl;
                        const T wv = w.at(co, cl, 0, 0);
                        T* gip = &gin.data[static_cast<std::size_t>(gin.index(ni, ci, 0, 0))];
                        const T* ip = &x.data[static_cast<std::size_t>(x.index(ni, ci, 0, 0))];
                        T wsum = T(0);
                        for (std::int64_t p = 0; p < plane; ++p) {
                            gip[p] += wv * gop[p];
                            wsum += gop[p] * ip[p];
                        }
                        gw.at(co, cl, 0, 0) += wsum;
                    }
                }
            }
            continue;
        }
        for (int g = 0; g < groups; ++g) {
            for (int co = g * cout_g; co < (g + 1) * cout_g; ++co) {
                const T* gobase = &gout.data[static_cast<std::size_t>(gout.index(ni, co, 0, 0))];
                if (has_bias) {
                    T s = T(0);
                    for (std::int64_t p = 0; p < std::int64_t{OH} * OW; ++p) s += gobase[p];
                    gb[static_cast<std::size_t>(co)] += s;
                }
                for (int cl = 0; cl < cin_g; ++cl) {
                    const int ci = g * cin_g + cl;
                    const T* ibase = &x.data[static_cast<std::size_t>(x.index(ni, ci, 0, 0))];
                    T* gibase = &gin.data[static_cast<std::size_t>(gin.index(ni, ci, 0, 0))];
                    for (int r = 0; r < kh; ++r) {
                        const auto rh = detail::tap_range(H, OH, stride, padding, r);
                        for (int c2 = 0; c2 < kw; ++c2) {
                            const auto rw = detail::tap_range(W, OW, stride, padding, c2);
                            const T wv = w.at(co, cl, r, c2);
                            const int shift = c2 - padding;
                            T wacc = T(0);
                            for (int oh = rh.lo; oh < rh.hi; ++oh) {
                                const int ih = oh * stride - padding + r;
                                const T* gorow = gobase + static_cast<std::int64_t>(oh) * OW;
                                const T* irow = ibase + static_cast<std::int64_t>(ih) * W;
                                T* girow = gibase + static_cast<std::int64_t>(ih) * W;
                                if (stride == 1) {
                                    for (int ow = rw.lo; ow < rw.hi; ++ow) {
                                        const T go = gorow[ow];
                                        girow[ow + shift] += go * wv;
                                        wacc += go * irow[ow + shift];
                                    }
                                } else {
                                    for (int ow = rw.lo; ow < rw.hi; ++ow) {
                                        const T go = gorow[ow];
                                        girow[ow * stride + shift] += go * wv;
                                        wacc += go * irow[ow * stride + shift];
                                    }
                                }
                            }
                            gw.at(co, cl, r, c2) += wacc;
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

template <typename T>
Conv2dGrads<T> conv2d_backward(const TensorT<T>& gout, const TensorT<T>& x, const TensorT<T>& w,
                               bool has_bias, int stride, int padding, int groups) {
    check_conv_args<T>(x, w, nullptr, stride, padding, groups);
    const int N = x.n();
    Conv2dGrads<T> g;
    g.input = TensorT<T>(x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    g.weight = TensorT<T>(w.shape[0], w.shape[1], w.shape[2], w.shape[3]);
    if (has_bias) g.bias.assign(static_cast<std::size_t>(w.shape[0]), T(0));

    if (max_threads() <= 1 || N <= 1) {
        detail::conv2d_backward_range(gout, x, w, has_bias, stride, padding, groups, 0, N,
                                      g.input, g.weight, g.bias);
        return g;
    }

    // Parallel over batch rows: private weight/bias accumulators per chunk,
    // reduced in chunk order so a fixed thread count reproduces bitwise.
    const int used = std::min(max_threads(), N);
    const std::int64_t chunk = (N + used - 1) / used;
    std::vector<TensorT<T>> gws;
    std::vector<std::vector<T>> gbs;
    std::vector<std::pair<std::int64_t, std::int64_t>> ranges;
    for (int t = 0; t < used; ++t) {
        const std::int64_t lo = t * chunk, hi = std::min<std::int64_t>(N, lo + chunk);
        if (lo >= hi) break;
        ranges.emplace_back(lo, hi);
        gws.emplace_back(w.shape[0], w.shape[1], w.shape[2], w.shape[3]);
        gbs.emplace_back(has_bias ? static_cast<std::size_t>(w.shape[0]) : 0, T(0));
    }
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < ranges.size(); ++t) {
        pool.emplace_back([&, t] {
            detail::conv2d_backward_range(gout, x, w, has_bias, stride, padding, groups,
                                          ranges[t].first, ranges[t].second, g.input, gws[t],
                                          gbs[t]);
        });
    }
    for (auto& th : pool) th.join();
    for (std::size_t t = 0; t < ranges.size(); ++t) {
        for (std::size_t i = 0; i < g.weight.data.size(); ++i) g.weight.data[i] += gws[t].data[i];
        for (std::size_t i = 0; i < g.bias.size(); ++i) g.bias[i] += gbs[t][i];
    }
    return g;
}

// ---------------------------------------------------------------------------
// depthwise conv2d, weight layout (C, 1, kh, kw): one kernel per channel
// ---------------------------------------------------------------------------

template <typename T>
void check_depthwise_args(const TensorT<T>& x, const TensorT<T>& w) {
    if (w.shape[0] != x.c() || w.shape[1] != 1) {
        throw DimensionError("depthwise_conv2d: weight is (" + std::to_string(w.shape[0]) + "," +
                             std::to_string(w.shape[1]) + ",kh,kw), expected (" +
                             std::to_string(x.c()) + ",1,kh,kw)");
    }
}

template <typename T>
TensorT<T> depthwise_conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, int stride,
                                    int padding) {
    check_depthwise_args(x, w);
    return conv2d_forward(x, w, static_cast<const std::vector<T>*>(nullptr), stride, padding,
                          x.c());
}

template <typename T>
Conv2dGrads<T> depthwise_conv2d_backward(const TensorT<T>& gout, const TensorT<T>& x,
                                         const TensorT<T>& w, int stride, int padding) {
    check_depthwise_args(x, w);
    return conv2d_backward(gout, x, w, /*has_bias=*/false, stride, padding, x.c());
}

// ---------------------------------------------------------------------------
// batch norm
// ---------------------------------------------------------------------------

enum class BnMode { Train, Eval };

template <typename T>
struct BnCache {
    TensorT<T> xhat;              // normalized input
    std::vector<T> inv_std;       // per channel
    std::vector<T> gamma;         // copied for backward
    BnMode mode = BnMode::Train;
    std::int64_t per_channel = 0; // N*H*W
};

template <typename T>
TensorT<T> batch_norm_forward(const TensorT<T>& x, const std::vector<T>& gamma,
                              const std::vector<T>& beta, std::vector<T>& running_mean,
                              std::vector<T>& running_var, BnMode mode, T momentum, T epsilon,
                              BnCache<T>* cache) {
    const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
    if (static_cast<int>(gamma.size()) != C || static_cast<int>(beta.size()) != C ||
        static_cast<int>(running_mean.size()) != C || static_cast<int>(running_var.size()) != C) {
        throw DimensionError("batch_norm: parameter length != channel count " + std::to_string(C));
    }
    const std::int64_t m = std::int64_t{N} * H * W;
    if (mode == BnMode::Train && m < 2) {
        throw DomainError("batch_norm: train mode needs N*H*W >= 2 per channel, got " +
                          std::to_string(m));
    }

    TensorT<T> out(N, C, H, W);
    if (cache) {
        cache->xhat = TensorT<T>(N, C, H, W);
        cache->inv_std.assign(static_cast<std::size_t>(C), T(0));
        cache->gamma = gamma;
        cache->mode = mode;
        cache->per_channel = m;
    }

    const std::int64_t plane = std::int64_t{H} * W;
    for (int c = 0; c < C; ++c) {
        T mean, var;
        if (mode == BnMode::Train) {
            double sum = 0.0, sq = 0.0;
            for (int n = 0; n < N; ++n) {
                const T* p = &x.data[static_cast<std::size_t>(x.index(n, c, 0, 0))];
                for (std::int64_t i = 0; i < plane; ++i) {
                    sum += static_cast<double>(p[i]);
                    sq += static_cast<double>(p[i]) * static_cast<double>(p[i]);
                }
            }
            const double mu = sum / static_cast<double>(m);
            const double v = std::max(0.0, sq / static_cast<double>(m) - mu * mu);
            mean = static_cast<T>(mu);
            var = static_cast<T>(v);
            running_mean[static_cast<std::size_t>(c)] =
                (T(1) - momentum) * running_mean[static_cast<std::size_t>(c)] + momentum * mean;
            running_var[static_cast<std::size_t>(c)] =
                (T(1) - momentum) * running_var[static_cast<std::size_t>(c)] + momentum * var;
        } else {
            mean = running_mean[static_cast<std::size_t>(c)];
            var = running_var[static_cast<std::size_t>(c)];
        }
        const T inv_std = T(1) / std::sqrt(var + epsilon);
        if (cache) cache->inv_std[static_cast<std::size_t>(c)] = inv_std;
        const T gsc = gamma[static_cast<std::size_t>(c)];
        const T bsc = beta[static_cast<std::size_t>(c)];
        for (int n = 0; n < N; ++n) {
            const T* p = &x.data[static_cast<std::size_t>(x.index(n, c, 0, 0))];
            T* o = &out.data[static_cast<std::size_t>(out.index(n, c, 0, 0))];
            T* xh = cache ? &cache->xhat.data[static_cast<std::size_t>(out.index(n, c, 0, 0))] : nullptr;
            for (std::int64_t i = 0; i < plane; ++i) {
                const T h = (p[i] - mean) * inv_std;
                if (xh) xh[i] = h;
                o[i] = gsc * h + bsc;
            }
        }
    }
    return out;
}

template <typename T>
struct BnGrads {
    TensorT<T> input;
    std::vector<T> gamma;
    std::vector<T> beta;
};

template <typename T>
BnGrads<T> batch_norm_backward(const TensorT<T>& gout, const BnCache<T>& cache) {
    const int N = gout.n(), C = gout.c(), H = gout.h(), W = gout.w();
    if (!cache.xhat.same_shape(gout)) {
        throw DimensionError("batch_norm backward: grad shape " + shape_str(gout) +
                             " != cached " + shape_str(cache.xhat));
    }
    BnGrads<T> g;
    g.input = TensorT<T>(N, C, H, W);
    g.gamma.assign(static_cast<std::size_t>(C), T(0));
    g.beta.assign(static_cast<std::size_t>(C), T(0));

    const std::int64_t plane = std::int64_t{H} * W;
    const T m = static_cast<T>(cache.per_channel);
    for (int c = 0; c < C; ++c) {
        double dg = 0.0, db = 0.0;
        for (int n = 0; n < N; ++n) {
            const T* go = &gout.data[static_cast<std::size_t>(gout.index(n, c, 0, 0))];
            const T* xh = &cache.xhat.data[static_cast<std::size_t>(gout.index(n, c, 0, 0))];
            for (std::int64_t i = 0; i < plane; ++i) {
                dg += static_cast<double>(go[i]) * static_cast<double>(xh[i]);
                db += static_cast<double>(go[i]);
            }
        }
        g.gamma[static_cast<std::size_t>(c)] = static_cast<T>(dg);
        g.beta[static_cast<std::size_t>(c)] = static_cast<T>(db);

        const T inv_std = cache.inv_std[static_cast<std::size_t>(c)];
        const T gsc = cache.gamma[static_cast<std::size_t>(c)];
        if (cache.mode == BnMode::Eval) {
            // Running stats are constants: plain scale.
            const T k = gsc * inv_std;
            for (int n = 0; n < N; ++n) {
                const T* go = &gout.data[static_cast<std::size_t>(gout.index(n, c, 0, 0))];
                T* gi = &g.input.data[static_cast<std::size_t>(gout.index(n, c, 0, 0))];
                for (std::int64_t i = 0; i < plane; ++i) gi[i] = k * go[i];
            }
            continue;
        }
        const T mean_go = static_cast<T>(db) / m;
        const T mean_goxh = static_cast<T>(dg) / m;
        const T k = gsc * inv_std;
        for (int n = 0; n < N; ++n) {
            const T* go = &gout.data[static_cast<std::size_t>(gout.index(n, c, 0, 0))];
            const T* xh = &cache.xhat.data[static_cast<std::size_t>(gout.index(n, c, 0, 0))];
            T* gi = &g.input.data[static_cast<std::size_t>(gout.index(n, c, 0, 0))];
            for (std::int64_t i = 0; i < plane; ++i) {
                gi[i] = k * (go[i] - mean_go - xh[i] * mean_goxh);
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// channel shuffle / split / concat
// ---------------------------------------------------------------------------

// reshape(g, C/g) -> transpose -> flatten: output channel j*g + k reads input
// channel k*(C/g) + j.
template <typename T>
TensorT<T> channel_shuffle(const TensorT<T>& x, int groups) {
    if (groups < 1 || x.c() % groups != 0) {
        throw DimensionError("channel_shuffle: C=" + std::to_string(x.c()) +
                             " not divisible by groups=" + std::to_string(groups));
    }
    const int N = x.n(), C = x.c(), per = C / groups;
    TensorT<T> out(N, C, x.h(), x.w());
    const std::int64_t plane = std::int64_t{x.h()} * x.w();
    for (int n = 0; n < N; ++n) {
        for (int k = 0; k < groups; ++k) {
            for (int j = 0; j < per; ++j) {
                const int src = k * per + j;
                const int dst = j * groups + k;
                std::copy_n(&x.data[static_cast<std::size_t>(x.index(n, src, 0, 0))], plane,
                            &out.data[static_cast<std::size_t>(out.index(n, dst, 0, 0))]);
            }
        }
    }
    return out;
}

template <typename T>
TensorT<T> channel_shuffle_backward(const TensorT<T>& gout, int groups) {
    // The permutation's inverse is the shuffle with the complementary group count.
    return channel_shuffle(gout, gout.c() / groups);
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> channel_split(const TensorT<T>& x) {
    if (x.c() % 2 != 0) {
        throw DimensionError("channel_split: odd channel count " + std::to_string(x.c()));
    }
    const int N = x.n(), C = x.c() / 2, H = x.h(), W = x.w();
    TensorT<T> a(N, C, H, W), b(N, C, H, W);
    const std::int64_t plane = std::int64_t{H} * W;
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            std::copy_n(&x.data[static_cast<std::size_t>(x.index(n, c, 0, 0))], plane,
                        &a.data[static_cast<std::size_t>(a.index(n, c, 0, 0))]);
            std::copy_n(&x.data[static_cast<std::size_t>(x.index(n, C + c, 0, 0))], plane,
                        &b.data[static_cast<std::size_t>(b.index(n, c, 0, 0))]);
        }
    }
    return {std::move(a), std::move(b)};
}

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
        throw DimensionError("concat_channels: shapes " + shape_str(a) + " and " + shape_str(b) +
                             " differ outside the channel axis");
    }
    const int N = a.n(), H = a.h(), W = a.w();
    TensorT<T> out(N, a.c() + b.c(), H, W);
    const std::int64_t plane = std::int64_t{H} * W;
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < a.c(); ++c) {
            std::copy_n(&a.data[static_cast<std::size_t>(a.index(n, c, 0, 0))], plane,
                        &out.data[static_cast<std::size_t>(out.index(n, c, 0, 0))]);
        }
        for (int c = 0; c < b.c(); ++c) {
            std::copy_n(&b.data[static_cast<std::size_t>(b.index(n, c, 0, 0))], plane,
                        &out.data[static_cast<std::size_t>(out.index(n, a.c() + c, 0, 0))]);
        }
    }
    return out;
}

// Backward of concat is split at the recorded boundary; backward of split is concat.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> concat_channels_backward(const TensorT<T>& gout, int c_first) {
    if (c_first <= 0 || c_first >= gout.c()) {
        throw DimensionError("concat backward: boundary " + std::to_string(c_first) +
                             " outside (0," + std::to_string(gout.c()) + ")");
    }
    const int N = gout.n(), H = gout.h(), W = gout.w();
    TensorT<T> ga(N, c_first, H, W), gb(N, gout.c() - c_first, H, W);
    const std::int64_t plane = std::int64_t{H} * W;
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < c_first; ++c) {
            std::copy_n(&gout.data[static_cast<std::size_t>(gout.index(n, c, 0, 0))], plane,
                        &ga.data[static_cast<std::size_t>(ga.index(n, c, 0, 0))]);
        }
        for (int c = c_first; c < gout.c(); ++c) {
            std::copy_n(&gout.data[static_cast<std::size_t>(gout.index(n, c, 0, 0))], plane,
                        &gb.data[static_cast<std::size_t>(gb.index(n, c - c_first, 0, 0))]);
        }
    }
    return {std::move(ga), std::move(gb)};
}

template <typename T>
TensorT<T> channel_split_backward(const TensorT<T>& ga, const TensorT<T>& gb) {
    return concat_channels(ga, gb);
}

// ---------------------------------------------------------------------------
// relu / max pool / global average pool / linear
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
    TensorT<T> out(x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
    return out;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& gout, const TensorT<T>& x) {
    if (!gout.same_shape(x)) {
        throw DimensionError("relu backward: grad " + shape_str(gout) + " != input " + shape_str(x));
    }
    TensorT<T> gin(x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    for (std::size_t i = 0; i < x.data.size(); ++i) gin.data[i] = x.data[i] > T(0) ? gout.data[i] : T(0);
    return gin;
}

template <typename T>
struct MaxPoolResult {
    TensorT<T> output;
    std::vector<std::int64_t> argmax;  // flat input index per output element
};

template <typename T>
MaxPoolResult<T> max_pool_forward(const TensorT<T>& x, int k, int stride, int padding = 0) {
    if (k < 1 || stride < 1 || padding < 0) throw ArgumentError("max_pool: bad window/stride/padding");
    const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
    const int OH = conv_out_extent(H, padding, k, stride);
    const int OW = conv_out_extent(W, padding, k, stride);
    if (OH < 1 || OW < 1) {
        throw DimensionError("max_pool: window " + std::to_string(k) + " does not fit input " +
                             shape_str(x));
    }
    MaxPoolResult<T> res;
    res.output = TensorT<T>(N, C, OH, OW);
    res.argmax.assign(res.output.data.size(), -1);
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            for (int oh = 0; oh < OH; ++oh) {
                for (int ow = 0; ow < OW; ++ow) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::int64_t best_idx = -1;
                    for (int r = 0; r < k; ++r) {
                        const int ih = oh * stride - padding + r;
                        if (ih < 0 || ih >= H) continue;
                        for (int c2 = 0; c2 < k; ++c2) {
                            const int iw = ow * stride - padding + c2;
                            if (iw < 0 || iw >= W) continue;
                            const T v = x.at(n, c, ih, iw);
                            if (v > best) {
                                best = v;
                                best_idx = x.index(n, c, ih, iw);
                            }
                        }
                    }
                    if (best_idx < 0) {
                        // fully padded window: contributes zero
                        best = T(0);
                    }
                    const std::int64_t oi = res.output.index(n, c, oh, ow);
                    res.output.data[static_cast<std::size_t>(oi)] = best;
                    res.argmax[static_cast<std::size_t>(oi)] = best_idx;
                }
            }
        }
    }
    return res;
}

template <typename T>
TensorT<T> max_pool_backward(const TensorT<T>& gout, const std::array<int, 4>& in_shape,
                             const std::vector<std::int64_t>& argmax) {
    if (argmax.size() != gout.data.size()) {
        throw DimensionError("max_pool backward: argmax cache size mismatch");
    }
    TensorT<T> gin(in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    for (std::size_t i = 0; i < gout.data.size(); ++i) {
        if (argmax[i] >= 0) gin.data[static_cast<std::size_t>(argmax[i])] += gout.data[i];
    }
    return gin;
}

template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
    const int N = x.n(), C = x.c();
    const std::int64_t plane = std::int64_t{x.h()} * x.w();
    TensorT<T> out(N, C, 1, 1);
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            const T* p = &x.data[static_cast<std::size_t>(x.index(n, c, 0, 0))];
            for (std::int64_t i = 0; i < plane; ++i) s += static_cast<double>(p[i]);
            out.at(n, c, 0, 0) = static_cast<T>(s / static_cast<double>(plane));
        }
    }
    return out;
}

template <typename T>
TensorT<T> global_avg_pool_backward(const TensorT<T>& gout, const std::array<int, 4>& in_shape) {
    if (gout.c() != in_shape[1] || gout.n() != in_shape[0]) {
        throw DimensionError("global_avg_pool backward: shape mismatch");
    }
    TensorT<T> gin(in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    const std::int64_t plane = std::int64_t{in_shape[2]} * in_shape[3];
    const T scale = T(1) / static_cast<T>(plane);
    for (int n = 0; n < in_shape[0]; ++n) {
        for (int c = 0; c < in_shape[1]; ++c) {
            const T g = gout.at(n, c, 0, 0) * scale;
            T* p = &gin.data[static_cast<std::size_t>(gin.index(n, c, 0, 0))];
            for (std::int64_t i = 0; i < plane; ++i) p[i] = g;
        }
    }
    return gin;
}

// x: (N, F, 1, 1), w: (K, F, 1, 1), bias: length K -> (N, K, 1, 1)
template <typename T>
TensorT<T> linear_forward(const TensorT<T>& x, const TensorT<T>& w, const std::vector<T>& bias) {
    if (x.h() != 1 || x.w() != 1) {
        throw DimensionError("linear: input must be (N,F,1,1), got " + shape_str(x));
    }
    if (w.shape[1] != x.c() || w.shape[2] != 1 || w.shape[3] != 1) {
        throw DimensionError("linear: weight " + shape_str(w) + " incompatible with input " +
                             shape_str(x));
    }
    const int N = x.n(), F = x.c(), K = w.shape[0];
    if (static_cast<int>(bias.size()) != K) {
        throw DimensionError("linear: bias length " + std::to_string(bias.size()) + " != " +
                             std::to_string(K));
    }
    TensorT<T> out(N, K, 1, 1);
    for (int n = 0; n < N; ++n) {
        const T* xi = &x.data[static_cast<std::size_t>(x.index(n, 0, 0, 0))];
        for (int k = 0; k < K; ++k) {
            const T* wk = &w.data[static_cast<std::size_t>(w.index(k, 0, 0, 0))];
            T acc = bias[static_cast<std::size_t>(k)];
            for (int f = 0; f < F; ++f) acc += wk[f] * xi[f];
            out.at(n, k, 0, 0) = acc;
        }
    }
    return out;
}

template <typename T>
struct LinearGrads {
    TensorT<T> input;
    TensorT<T> weight;
    std::vector<T> bias;
};

template <typename T>
LinearGrads<T> linear_backward(const TensorT<T>& gout, const TensorT<T>& x, const TensorT<T>& w) {
    const int N = x.n(), F = x.c(), K = w.shape[0];
    if (gout.n() != N || gout.c() != K) {
        throw DimensionError("linear backward: grad " + shape_str(gout) + " incompatible");
    }
    LinearGrads<T> g;
    g.input = TensorT<T>(N, F, 1, 1);
    g.weight = TensorT<T>(K, F, 1, 1);
    g.bias.assign(static_cast<std::size_t>(K), T(0));
    for (int n = 0; n < N; ++n) {
        const T* xi = &x.data[static_cast<std::size_t>(x.index(n, 0, 0, 0))];
        T* gi = &g.input.data[static_cast<std::size_t>(g.input.index(n, 0, 0, 0))];
        for (int k = 0; k < K; ++k) {
            const T go = gout.at(n, k, 0, 0);
            const T* wk = &w.data[static_cast<std::size_t>(w.index(k, 0, 0, 0))];
            T* gw = &g.weight.data[static_cast<std::size_t>(g.weight.index(k, 0, 0, 0))];
            g.bias[static_cast<std::size_t>(k)] += go;
            for (int f = 0; f < F; ++f) {
                gi[f] += go * wk[f];
                gw[f] += go * xi[f];
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// softmax cross entropy
// ---------------------------------------------------------------------------

template <typename T>
struct SoftmaxCeResult {
    T loss = T(0);
    TensorT<T> probs;
};

template <typename T>
SoftmaxCeResult<T> softmax_cross_entropy(const TensorT<T>& logits, const std::vector<int>& labels) {
    if (logits.h() != 1 || logits.w() != 1) {
        throw DimensionError("softmax_cross_entropy: logits must be (N,K,1,1), got " +
                             shape_str(logits));
    }
    const int N = logits.n(), K = logits.c();
    if (static_cast<int>(labels.size()) != N) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                             " labels for batch of " + std::to_string(N));
    }
    SoftmaxCeResult<T> res;
    res.probs = TensorT<T>(N, K, 1, 1);
    double total = 0.0;
    for (int n = 0; n < N; ++n) {
        const int y = labels[static_cast<std::size_t>(n)];
        if (y < 0 || y >= K) {
            throw DomainError("softmax_cross_entropy: label " + std::to_string(y) +
                              " outside [0," + std::to_string(K) + ")");
        }
        const T* row = &logits.data[static_cast<std::size_t>(logits.index(n, 0, 0, 0))];
        T mx = row[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        double denom = 0.0;
        for (int k = 0; k < K; ++k) denom += std::exp(static_cast<double>(row[k] - mx));
        const double log_denom = std::log(denom);
        T* pr = &res.probs.data[static_cast<std::size_t>(res.probs.index(n, 0, 0, 0))];
        for (int k = 0; k < K; ++k) {
            pr[k] = static_cast<T>(std::exp(static_cast<double>(row[k] - mx) - log_denom));
        }
        total += -(static_cast<double>(row[y] - mx) - log_denom);
    }
    res.loss = static_cast<T>(total / static_cast<double>(N));
    return res;
}

template <typename T>
TensorT<T> softmax_cross_entropy_backward(const TensorT<T>& probs, const std::vector<int>& labels) {
    const int N = probs.n(), K = probs.c();
    TensorT<T> g(N, K, 1, 1);
    const T scale = T(1) / static_cast<T>(N);
    for (int n = 0; n < N; ++n) {
        const T* pr = &probs.data[static_cast<std::size_t>(probs.index(n, 0, 0, 0))];
        T* gr = &g.data[static_cast<std::size_t>(g.index(n, 0, 0, 0))];
        for (int k = 0; k < K; ++k) {
            gr[k] = (pr[k] - (k == labels[static_cast<std::size_t>(n)] ? T(1) : T(0))) * scale;
        }
    }
    return g;
}

}  // namespace cass::ops
