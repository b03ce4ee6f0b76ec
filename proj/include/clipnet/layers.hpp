#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "clipnet/tensor.hpp"

namespace clipnet {

enum class Mode { train, eval };

namespace detail {

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        T* ci = c + static_cast<std::size_t>(i) * n;
        const T* ai = a + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const T av = ai[p];
            const T* bp = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* ai = a + static_cast<std::size_t>(i) * k;
        T* ci = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* bj = b + static_cast<std::size_t>(j) * k;
            T s = T(0);
            for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] += s;
        }
    }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        const T* ap = a + static_cast<std::size_t>(p) * m;
        const T* bp = b + static_cast<std::size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const T av = ap[i];
            T* ci = c + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// y[H] += M[H,D] * x[D]
template <typename T>
void gemv(const T* m, const T* x, T* y, int h, int d) {
    for (int i = 0; i < h; ++i) {
        const T* mi = m + static_cast<std::size_t>(i) * d;
        T s = T(0);
        for (int j = 0; j < d; ++j) s += mi[j] * x[j];
        y[i] += s;
    }
}

// x[D] += M[H,D]^T * g[H]
template <typename T>
void gemv_t(const T* m, const T* g, T* x, int h, int d) {
    for (int i = 0; i < h; ++i) {
        const T* mi = m + static_cast<std::size_t>(i) * d;
        const T gv = g[i];
        for (int j = 0; j < d; ++j) x[j] += gv * mi[j];
    }
}

inline int conv_out_extent(int in, int pad, int k, int stride) {
    return (in + 2 * pad - k) / stride + 1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution (cross-correlation with symmetric zero padding)
// ---------------------------------------------------------------------------

template <typename T>
struct Conv2dCache {
    Tensor<T> x;
};

template <typename T>
struct Conv2d {
    Tensor<T> kernel;  // [Cout,Cin,kh,kw]
    Tensor<T> bias;    // [Cout]; empty disables the bias term
    int stride = 1;
    int padding = 0;
    Tensor<T> kernel_grad;
    Tensor<T> bias_grad;

    int out_channels() const { return kernel.dim(0); }
    int in_channels() const { return kernel.dim(1); }

    void init_grads() {
        kernel_grad = Tensor<T>(kernel.shape());
        if (!bias.empty()) bias_grad = Tensor<T>(bias.shape());
    }

    void check_input(const Tensor<T>& x) const {
        if (x.rank() != 4)
            throw ShapeError("conv2d: input must be rank 4, got " + x.shape_string());
        if (x.dim(1) != in_channels())
            throw ShapeError("conv2d: input channels " + std::to_string(x.dim(1)) +
                             " do not match kernel " + kernel.shape_string());
        const int oh = detail::conv_out_extent(x.dim(2), padding, kernel.dim(2), stride);
        const int ow = detail::conv_out_extent(x.dim(3), padding, kernel.dim(3), stride);
        if (oh < 1 || ow < 1)
            throw ShapeError("conv2d: degenerate output size for input " + x.shape_string() +
                             " with kernel " + kernel.shape_string());
    }

    Tensor<T> forward(const Tensor<T>& x, Conv2dCache<T>* cache = nullptr) const {
        check_input(x);
        const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
        const int cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
        const int oh = detail::conv_out_extent(h, padding, kh, stride);
        const int ow = detail::conv_out_extent(w, padding, kw, stride);
        const int ckk = cin * kh * kw;
        const int ohow = oh * ow;

        Tensor<T> y({n, cout, oh, ow});
        std::vector<T> cols(static_cast<std::size_t>(ckk) * ohow);
        for (int in = 0; in < n; ++in) {
            im2col(x, in, cols.data(), oh, ow);
            T* yn = y.data() + static_cast<std::size_t>(in) * cout * ohow;
            detail::gemm_nn(kernel.data(), cols.data(), yn, cout, ckk, ohow);
            if (!bias.empty()) {
                for (int oc = 0; oc < cout; ++oc) {
                    const T b = bias[oc];
                    T* row = yn + static_cast<std::size_t>(oc) * ohow;
                    for (int p = 0; p < ohow; ++p) row[p] += b;
                }
            }
        }
        if (cache) cache->x = x;
        return y;
    }

    // Returns the input cotangent; accumulates kernel/bias grads.
    Tensor<T> backward(const Tensor<T>& gy, const Conv2dCache<T>& cache) {
        const Tensor<T>& x = cache.x;
        const int n = x.dim(0), cin = x.dim(1);
        const int cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
        const int oh = gy.dim(2), ow = gy.dim(3);
        const int ckk = cin * kh * kw;
        const int ohow = oh * ow;
        if (kernel_grad.empty()) init_grads();

        Tensor<T> gx(x.shape());
        std::vector<T> cols(static_cast<std::size_t>(ckk) * ohow);
        std::vector<T> gcols(static_cast<std::size_t>(ckk) * ohow);
        for (int in = 0; in < n; ++in) {
            im2col(x, in, cols.data(), oh, ow);
            const T* gyn = gy.data() + static_cast<std::size_t>(in) * cout * ohow;
            detail::gemm_nt(gyn, cols.data(), kernel_grad.data(), cout, ohow, ckk);
            std::fill(gcols.begin(), gcols.end(), T(0));
            detail::gemm_tn(kernel.data(), gyn, gcols.data(), ckk, cout, ohow);
            col2im(gcols.data(), gx, in, oh, ow);
            if (!bias.empty()) {
                for (int oc = 0; oc < cout; ++oc) {
                    const T* row = gyn + static_cast<std::size_t>(oc) * ohow;
                    T s = T(0);
                    for (int p = 0; p < ohow; ++p) s += row[p];
                    bias_grad[oc] += s;
                }
            }
        }
        return gx;
    }

private:
    void im2col(const Tensor<T>& x, int in, T* cols, int oh, int ow) const {
        const int cin = x.dim(1), h = x.dim(2), w = x.dim(3);
        const int kh = kernel.dim(2), kw = kernel.dim(3);
        const int ohow = oh * ow;
        for (int c = 0; c < cin; ++c) {
            for (int ki = 0; ki < kh; ++ki) {
                for (int kj = 0; kj < kw; ++kj) {
                    T* row = cols + (static_cast<std::size_t>(c) * kh * kw +
                                     static_cast<std::size_t>(ki) * kw + kj) * ohow;
                    for (int i = 0; i < oh; ++i) {
                        const int src_i = i * stride + ki - padding;
                        for (int j = 0; j < ow; ++j) {
                            const int src_j = j * stride + kj - padding;
                            row[i * ow + j] =
                                (src_i >= 0 && src_i < h && src_j >= 0 && src_j < w)
                                    ? x.at4(in, c, src_i, src_j)
                                    : T(0);
                        }
                    }
                }
            }
        }
    }

    void col2im(const T* gcols, Tensor<T>& gx, int in, int oh, int ow) const {
        const int cin = gx.dim(1), h = gx.dim(2), w = gx.dim(3);
        const int kh = kernel.dim(2), kw = kernel.dim(3);
        const int ohow = oh * ow;
        for (int c = 0; c < cin; ++c) {
            for (int ki = 0; ki < kh; ++ki) {
                for (int kj = 0; kj < kw; ++kj) {
                    const T* row = gcols + (static_cast<std::size_t>(c) * kh * kw +
                                            static_cast<std::size_t>(ki) * kw + kj) * ohow;
                    for (int i = 0; i < oh; ++i) {
                        const int src_i = i * stride + ki - padding;
                        if (src_i < 0 || src_i >= h) continue;
                        for (int j = 0; j < ow; ++j) {
                            const int src_j = j * stride + kj - padding;
                            if (src_j < 0 || src_j >= w) continue;
                            gx.at4(in, c, src_i, src_j) += row[i * ow + j];
                        }
                    }
                }
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Batch normalization over [N,C,H,W]
// ---------------------------------------------------------------------------

template <typename T>
struct BnCache {
    Tensor<T> xhat;
    std::vector<T> inv_std;  // per channel
    Mode mode = Mode::train;
};

template <typename T>
struct BatchNorm {
    Tensor<T> gamma, beta;               // [C]
    Tensor<T> running_mean, running_var; // [C]
    T momentum = T(0.1);
    T epsilon = T(1e-5);
    Tensor<T> gamma_grad, beta_grad;

    static BatchNorm identity(int channels) {
        BatchNorm bn;
        bn.gamma = Tensor<T>::full({channels}, T(1));
        bn.beta = Tensor<T>({channels});
        bn.running_mean = Tensor<T>({channels});
        bn.running_var = Tensor<T>::full({channels}, T(1));
        return bn;
    }

    void init_grads() {
        gamma_grad = Tensor<T>(gamma.shape());
        beta_grad = Tensor<T>(beta.shape());
    }

    // Pure normalization; never touches running statistics.
    Tensor<T> normalize(const Tensor<T>& x, Mode mode, BnCache<T>* cache = nullptr,
                        std::vector<T>* batch_mean = nullptr,
                        std::vector<T>* batch_var = nullptr) const {
        if (x.rank() != 4 || x.dim(1) != gamma.dim(0))
            throw ShapeError("batch_norm: input " + x.shape_string() + " does not match " +
                             std::to_string(gamma.dim(0)) + " channels");
        const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        const std::size_t m = static_cast<std::size_t>(n) * h * w;
        if (mode == Mode::train && m < 2)
            throw ShapeError("batch_norm: train mode needs at least 2 elements per channel, got " +
                             std::to_string(m));
        Tensor<T> y(x.shape());
        Tensor<T> xhat(x.shape());
        std::vector<T> inv_std(c);
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        for (int ic = 0; ic < c; ++ic) {
            T mean, var;
            if (mode == Mode::train) {
                T s = T(0);
                for (int in = 0; in < n; ++in) {
                    const T* p = x.data() + (static_cast<std::size_t>(in) * c + ic) * plane;
                    for (std::size_t k = 0; k < plane; ++k) s += p[k];
                }
                mean = s / static_cast<T>(m);
                T v = T(0);
                for (int in = 0; in < n; ++in) {
                    const T* p = x.data() + (static_cast<std::size_t>(in) * c + ic) * plane;
                    for (std::size_t k = 0; k < plane; ++k) {
                        const T d = p[k] - mean;
                        v += d * d;
                    }
                }
                var = v / static_cast<T>(m);
            } else {
                mean = running_mean[ic];
                var = running_var[ic];
            }
            const T istd = T(1) / std::sqrt(var + epsilon);
            inv_std[ic] = istd;
            const T g = gamma[ic], b = beta[ic];
            for (int in = 0; in < n; ++in) {
                const std::size_t base = (static_cast<std::size_t>(in) * c + ic) * plane;
                for (std::size_t k = 0; k < plane; ++k) {
                    const T xh = (x[base + k] - mean) * istd;
                    xhat[base + k] = xh;
                    y[base + k] = g * xh + b;
                }
            }
            if (batch_mean) (*batch_mean)[ic] = mean;
            if (batch_var) (*batch_var)[ic] = var;
        }
        if (cache) {
            cache->xhat = std::move(xhat);
            cache->inv_std = std::move(inv_std);
            cache->mode = mode;
        }
        return y;
    }

    // Train mode folds the batch statistics into the running estimates.
    Tensor<T> forward(const Tensor<T>& x, Mode mode, BnCache<T>* cache = nullptr) {
        if (mode == Mode::eval) return normalize(x, mode, cache);
        const int c = gamma.dim(0);
        std::vector<T> mean(c), var(c);
        Tensor<T> y = normalize(x, mode, cache, &mean, &var);
        for (int ic = 0; ic < c; ++ic) {
            running_mean[ic] = (T(1) - momentum) * running_mean[ic] + momentum * mean[ic];
            running_var[ic] = (T(1) - momentum) * running_var[ic] + momentum * var[ic];
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy, const BnCache<T>& cache) {
        if (gamma_grad.empty()) init_grads();
        const Tensor<T>& xhat = cache.xhat;
        const int n = gy.dim(0), c = gy.dim(1), h = gy.dim(2), w = gy.dim(3);
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        const std::size_t m = static_cast<std::size_t>(n) * plane;
        Tensor<T> gx(gy.shape());
        for (int ic = 0; ic < c; ++ic) {
            T sum_gy = T(0), sum_gy_xhat = T(0);
            for (int in = 0; in < n; ++in) {
                const std::size_t base = (static_cast<std::size_t>(in) * c + ic) * plane;
                for (std::size_t k = 0; k < plane; ++k) {
                    sum_gy += gy[base + k];
                    sum_gy_xhat += gy[base + k] * xhat[base + k];
                }
            }
            gamma_grad[ic] += sum_gy_xhat;
            beta_grad[ic] += sum_gy;
            const T g = gamma[ic], istd = cache.inv_std[ic];
            if (cache.mode == Mode::train) {
                const T inv_m = T(1) / static_cast<T>(m);
                for (int in = 0; in < n; ++in) {
                    const std::size_t base = (static_cast<std::size_t>(in) * c + ic) * plane;
                    for (std::size_t k = 0; k < plane; ++k) {
                        gx[base + k] = g * istd *
                                       (gy[base + k] - inv_m * sum_gy -
                                        xhat[base + k] * inv_m * sum_gy_xhat);
                    }
                }
            } else {
                for (int in = 0; in < n; ++in) {
                    const std::size_t base = (static_cast<std::size_t>(in) * c + ic) * plane;
                    for (std::size_t k = 0; k < plane; ++k) gx[base + k] = gy[base + k] * g * istd;
                }
            }
        }
        return gx;
    }
};

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

enum class PoolKind { max, avg };

template <typename T>
struct Pool2dCache {
    std::vector<int> shape;          // input shape
    std::vector<std::size_t> argmax; // flat input index per output element (max only)
    PoolKind kind = PoolKind::max;
    int kh = 0, kw = 0, stride = 1, padding = 0;
    int oh = 0, ow = 0;
};

template <typename T>
Tensor<T> pool2d(const Tensor<T>& x, PoolKind kind, int kh, int kw, int stride,
                 int padding = 0, Pool2dCache<T>* cache = nullptr) {
    if (x.rank() != 4) throw ShapeError("pool2d: input must be rank 4, got " + x.shape_string());
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (kh > h + 2 * padding || kw > w + 2 * padding)
        throw ShapeError("pool2d: window " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " larger than padded input " + x.shape_string());
    if (padding >= kh || padding >= kw)
        throw ShapeError("pool2d: padding " + std::to_string(padding) +
                         " must be smaller than the window");
    const int oh = detail::conv_out_extent(h, padding, kh, stride);
    const int ow = detail::conv_out_extent(w, padding, kw, stride);
    Tensor<T> y({n, c, oh, ow});
    if (cache) {
        cache->shape = x.shape();
        cache->kind = kind;
        cache->kh = kh; cache->kw = kw; cache->stride = stride; cache->padding = padding;
        cache->oh = oh; cache->ow = ow;
        if (kind == PoolKind::max) cache->argmax.assign(y.size(), 0);
    }
    const T window = static_cast<T>(kh) * static_cast<T>(kw);
    std::size_t oidx = 0;
    for (int in = 0; in < n; ++in) {
        for (int ic = 0; ic < c; ++ic) {
            for (int i = 0; i < oh; ++i) {
                for (int j = 0; j < ow; ++j, ++oidx) {
                    const int i0 = i * stride - padding;
                    const int j0 = j * stride - padding;
                    if (kind == PoolKind::max) {
                        T best = -std::numeric_limits<T>::infinity();
                        std::size_t best_idx = 0;
                        for (int ki = 0; ki < kh; ++ki) {
                            const int si = i0 + ki;
                            if (si < 0 || si >= h) continue;
                            for (int kj = 0; kj < kw; ++kj) {
                                const int sj = j0 + kj;
                                if (sj < 0 || sj >= w) continue;
                                const std::size_t fi = x.idx4(in, ic, si, sj);
                                if (x[fi] > best) {
                                    best = x[fi];
                                    best_idx = fi;
                                }
                            }
                        }
                        y[oidx] = best;
                        if (cache) cache->argmax[oidx] = best_idx;
                    } else {
                        T s = T(0);
                        for (int ki = 0; ki < kh; ++ki) {
                            const int si = i0 + ki;
                            if (si < 0 || si >= h) continue;
                            for (int kj = 0; kj < kw; ++kj) {
                                const int sj = j0 + kj;
                                if (sj < 0 || sj >= w) continue;
                                s += x.at4(in, ic, si, sj);
                            }
                        }
                        y[oidx] = s / window;
                    }
                }
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> pool2d_backward(const Tensor<T>& gy, const Pool2dCache<T>& cache) {
    Tensor<T> gx(cache.shape);
    if (cache.kind == PoolKind::max) {
        for (std::size_t i = 0; i < gy.size(); ++i) gx[cache.argmax[i]] += gy[i];
        return gx;
    }
    const int n = cache.shape[0], c = cache.shape[1], h = cache.shape[2], w = cache.shape[3];
    const T window = static_cast<T>(cache.kh) * static_cast<T>(cache.kw);
    std::size_t oidx = 0;
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic)
            for (int i = 0; i < cache.oh; ++i)
                for (int j = 0; j < cache.ow; ++j, ++oidx) {
                    const T g = gy[oidx] / window;
                    const int i0 = i * cache.stride - cache.padding;
                    const int j0 = j * cache.stride - cache.padding;
                    for (int ki = 0; ki < cache.kh; ++ki) {
                        const int si = i0 + ki;
                        if (si < 0 || si >= h) continue;
                        for (int kj = 0; kj < cache.kw; ++kj) {
                            const int sj = j0 + kj;
                            if (sj < 0 || sj >= w) continue;
                            gx.at4(in, ic, si, sj) += g;
                        }
                    }
                }
    return gx;
}

template <typename T>
struct GlobalPoolCache {
    std::vector<int> shape;
    std::vector<std::size_t> argmax;  // per (n,c), max only
    PoolKind kind = PoolKind::avg;
};

// [N,C,H,W] -> [N,C,1,1]
template <typename T>
Tensor<T> global_pool(const Tensor<T>& x, PoolKind kind, GlobalPoolCache<T>* cache = nullptr) {
    if (x.rank() != 4)
        throw ShapeError("global_pool: input must be rank 4, got " + x.shape_string());
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor<T> y({n, c, 1, 1});
    if (cache) {
        cache->shape = x.shape();
        cache->kind = kind;
        if (kind == PoolKind::max) cache->argmax.assign(static_cast<std::size_t>(n) * c, 0);
    }
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const std::size_t base = (static_cast<std::size_t>(in) * c + ic) * plane;
            const std::size_t oi = static_cast<std::size_t>(in) * c + ic;
            if (kind == PoolKind::avg) {
                T s = T(0);
                for (std::size_t k = 0; k < plane; ++k) s += x[base + k];
                y[oi] = s / static_cast<T>(plane);
            } else {
                std::size_t best = base;
                for (std::size_t k = 1; k < plane; ++k)
                    if (x[base + k] > x[best]) best = base + k;
                y[oi] = x[best];
                if (cache) cache->argmax[oi] = best;
            }
        }
    return y;
}

template <typename T>
Tensor<T> global_pool_backward(const Tensor<T>& gy, const GlobalPoolCache<T>& cache) {
    Tensor<T> gx(cache.shape);
    const int n = cache.shape[0], c = cache.shape[1];
    const std::size_t plane =
        static_cast<std::size_t>(cache.shape[2]) * static_cast<std::size_t>(cache.shape[3]);
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const std::size_t oi = static_cast<std::size_t>(in) * c + ic;
            if (cache.kind == PoolKind::avg) {
                const T g = gy[oi] / static_cast<T>(plane);
                const std::size_t base = oi * plane;
                for (std::size_t k = 0; k < plane; ++k) gx[base + k] += g;
            } else {
                gx[cache.argmax[oi]] += gy[oi];
            }
        }
    return gx;
}

template <typename T>
struct ChannelPoolCache {
    std::vector<int> shape;
    std::vector<int> argmax;  // channel index per (n,h,w), max only
    PoolKind kind = PoolKind::avg;
};

// [N,C,H,W] -> [N,1,H,W]
template <typename T>
Tensor<T> channel_pool(const Tensor<T>& x, PoolKind kind, ChannelPoolCache<T>* cache = nullptr) {
    if (x.rank() != 4)
        throw ShapeError("channel_pool: input must be rank 4, got " + x.shape_string());
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor<T> y({n, 1, h, w});
    if (cache) {
        cache->shape = x.shape();
        cache->kind = kind;
        if (kind == PoolKind::max) cache->argmax.assign(static_cast<std::size_t>(n) * plane, 0);
    }
    for (int in = 0; in < n; ++in) {
        const std::size_t nbase = static_cast<std::size_t>(in) * c * plane;
        const std::size_t obase = static_cast<std::size_t>(in) * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            if (kind == PoolKind::avg) {
                T s = T(0);
                for (int ic = 0; ic < c; ++ic) s += x[nbase + static_cast<std::size_t>(ic) * plane + p];
                y[obase + p] = s / static_cast<T>(c);
            } else {
                int best_c = 0;
                T best = x[nbase + p];
                for (int ic = 1; ic < c; ++ic) {
                    const T v = x[nbase + static_cast<std::size_t>(ic) * plane + p];
                    if (v > best) {
                        best = v;
                        best_c = ic;
                    }
                }
                y[obase + p] = best;
                if (cache) cache->argmax[obase + p] = best_c;
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> channel_pool_backward(const Tensor<T>& gy, const ChannelPoolCache<T>& cache) {
    Tensor<T> gx(cache.shape);
    const int n = cache.shape[0], c = cache.shape[1];
    const std::size_t plane =
        static_cast<std::size_t>(cache.shape[2]) * static_cast<std::size_t>(cache.shape[3]);
    for (int in = 0; in < n; ++in) {
        const std::size_t nbase = static_cast<std::size_t>(in) * c * plane;
        const std::size_t obase = static_cast<std::size_t>(in) * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            if (cache.kind == PoolKind::avg) {
                const T g = gy[obase + p] / static_cast<T>(c);
                for (int ic = 0; ic < c; ++ic) gx[nbase + static_cast<std::size_t>(ic) * plane + p] += g;
            } else {
                gx[nbase + static_cast<std::size_t>(cache.argmax[obase + p]) * plane + p] +=
                    gy[obase + p];
            }
        }
    }
    return gx;
}

// ---------------------------------------------------------------------------
// Dense layer: y = x W^T + b
// ---------------------------------------------------------------------------

template <typename T>
struct DenseCache {
    Tensor<T> x;
};

template <typename T>
struct Dense {
    Tensor<T> weight;  // [K,D]
    Tensor<T> bias;    // [K]
    Tensor<T> weight_grad, bias_grad;

    void init_grads() {
        weight_grad = Tensor<T>(weight.shape());
        bias_grad = Tensor<T>(bias.shape());
    }

    Tensor<T> forward(const Tensor<T>& x, DenseCache<T>* cache = nullptr) const {
        if (x.rank() != 2 || x.dim(1) != weight.dim(1))
            throw ShapeError("dense: input " + x.shape_string() + " does not match weight " +
                             weight.shape_string());
        const int n = x.dim(0), d = x.dim(1), k = weight.dim(0);
        Tensor<T> y({n, k});
        detail::gemm_nt(x.data(), weight.data(), y.data(), n, d, k);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < k; ++j) y.at2(i, j) += bias[j];
        if (cache) cache->x = x;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy, const DenseCache<T>& cache) {
        if (weight_grad.empty()) init_grads();
        const int n = gy.dim(0), k = weight.dim(0), d = weight.dim(1);
        detail::gemm_tn(gy.data(), cache.x.data(), weight_grad.data(), k, n, d);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < k; ++j) bias_grad[j] += gy.at2(i, j);
        Tensor<T> gx({n, d});
        detail::gemm_nn(gy.data(), weight.data(), gx.data(), n, k, d);
        return gx;
    }
};

// ---------------------------------------------------------------------------
// Masked softmax cross-entropy
// ---------------------------------------------------------------------------

template <typename T>
struct CeResult {
    T loss = T(0);
    Tensor<T> grad;  // same shape as logits; zero rows where mask is false
};

template <typename T>
CeResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                                  const std::vector<std::uint8_t>& mask) {
    if (logits.rank() != 2)
        throw ShapeError("softmax_cross_entropy: logits must be rank 2, got " +
                         logits.shape_string());
    const int m = logits.dim(0), k = logits.dim(1);
    if (static_cast<int>(labels.size()) != m || static_cast<int>(mask.size()) != m)
        throw ShapeError("softmax_cross_entropy: labels/mask length does not match " +
                         std::to_string(m) + " rows");
    int active = 0;
    for (int i = 0; i < m; ++i) {
        if (!mask[i]) continue;
        ++active;
        if (labels[i] < 0 || labels[i] >= k)
            throw DataError("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                            " out of range at row " + std::to_string(i));
    }
    if (active == 0) throw DataError("softmax_cross_entropy: mask has no true entries");

    CeResult<T> res;
    res.grad = Tensor<T>(logits.shape());
    const T inv_active = T(1) / static_cast<T>(active);
    T loss = T(0);
    std::vector<T> p(static_cast<std::size_t>(k));
    for (int i = 0; i < m; ++i) {
        if (!mask[i]) continue;
        const T* row = logits.data() + static_cast<std::size_t>(i) * k;
        T mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        T denom = T(0);
        for (int j = 0; j < k; ++j) {
            p[j] = std::exp(row[j] - mx);
            denom += p[j];
        }
        loss += (std::log(denom) - (row[labels[i]] - mx)) * inv_active;
        T* grow = res.grad.data() + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < k; ++j) grow[j] = p[j] / denom * inv_active;
        grow[labels[i]] -= inv_active;
    }
    res.loss = loss;
    return res;
}

// ---------------------------------------------------------------------------
// LSTM cell (forget-gate variant, no peepholes)
// ---------------------------------------------------------------------------

template <typename T>
struct LstmGate {
    Tensor<T> w;  // [H,D]
    Tensor<T> u;  // [H,H]
    Tensor<T> b;  // [H]
    Tensor<T> w_grad, u_grad, b_grad;

    void init_grads() {
        w_grad = Tensor<T>(w.shape());
        u_grad = Tensor<T>(u.shape());
        b_grad = Tensor<T>(b.shape());
    }
};

template <typename T>
struct LstmCellParams {
    int input_dim = 0;
    int hidden = 0;
    LstmGate<T> in, forget, out, cand;

    static LstmCellParams zeros(int input_dim, int hidden) {
        LstmCellParams p;
        p.input_dim = input_dim;
        p.hidden = hidden;
        for (LstmGate<T>* g : {&p.in, &p.forget, &p.out, &p.cand}) {
            g->w = Tensor<T>({hidden, input_dim});
            g->u = Tensor<T>({hidden, hidden});
            g->b = Tensor<T>({hidden});
        }
        return p;
    }

    void init_grads() {
        in.init_grads();
        forget.init_grads();
        out.init_grads();
        cand.init_grads();
    }
};

template <typename T>
struct LstmStepCache {
    Tensor<T> x, h_prev, c_prev;
    Tensor<T> i, f, o, g;  // post-activation gates
    Tensor<T> c, tanh_c;
};

template <typename T>
struct LstmState {
    Tensor<T> h, c;
};

template <typename T>
LstmState<T> lstm_cell(const Tensor<T>& x, const Tensor<T>& h_prev, const Tensor<T>& c_prev,
                       const LstmCellParams<T>& p, LstmStepCache<T>* cache = nullptr) {
    if (x.rank() != 1 || x.dim(0) != p.input_dim)
        throw ShapeError("lstm_cell: input " + x.shape_string() + " does not match input_dim " +
                         std::to_string(p.input_dim));
    if (h_prev.dim(0) != p.hidden || c_prev.dim(0) != p.hidden)
        throw ShapeError("lstm_cell: state size does not match hidden " +
                         std::to_string(p.hidden));
    const int h = p.hidden, d = p.input_dim;
    auto preact = [&](const LstmGate<T>& gate) {
        Tensor<T> pre = gate.b;
        detail::gemv(gate.w.data(), x.data(), pre.data(), h, d);
        detail::gemv(gate.u.data(), h_prev.data(), pre.data(), h, h);
        return pre;
    };
    Tensor<T> gi = sigmoid(preact(p.in));
    Tensor<T> gf = sigmoid(preact(p.forget));
    Tensor<T> go = sigmoid(preact(p.out));
    Tensor<T> gg = tanh_op(preact(p.cand));

    LstmState<T> st;
    st.c = Tensor<T>({h});
    st.h = Tensor<T>({h});
    Tensor<T> tc({h});
    for (int k = 0; k < h; ++k) {
        st.c[k] = gf[k] * c_prev[k] + gi[k] * gg[k];
        tc[k] = std::tanh(st.c[k]);
        st.h[k] = go[k] * tc[k];
    }
    if (cache) {
        cache->x = x;
        cache->h_prev = h_prev;
        cache->c_prev = c_prev;
        cache->i = std::move(gi);
        cache->f = std::move(gf);
        cache->o = std::move(go);
        cache->g = std::move(gg);
        cache->c = st.c;
        cache->tanh_c = std::move(tc);
    }
    return st;
}

template <typename T>
struct LstmStepGrads {
    Tensor<T> gx, gh_prev, gc_prev;
};

template <typename T>
LstmStepGrads<T> lstm_cell_backward(const Tensor<T>& gh, const Tensor<T>& gc_in,
                                    const LstmStepCache<T>& cache, LstmCellParams<T>& p) {
    const int h = p.hidden, d = p.input_dim;
    if (p.in.w_grad.empty()) p.init_grads();
    LstmStepGrads<T> out;
    out.gx = Tensor<T>({d});
    out.gh_prev = Tensor<T>({h});
    out.gc_prev = Tensor<T>({h});

    Tensor<T> gi_pre({h}), gf_pre({h}), go_pre({h}), gg_pre({h});
    for (int k = 0; k < h; ++k) {
        const T go = gh[k] * cache.tanh_c[k];
        const T gc = gc_in[k] + gh[k] * cache.o[k] * (T(1) - cache.tanh_c[k] * cache.tanh_c[k]);
        const T gf = gc * cache.c_prev[k];
        const T gi = gc * cache.g[k];
        const T gg = gc * cache.i[k];
        out.gc_prev[k] = gc * cache.f[k];
        gi_pre[k] = gi * cache.i[k] * (T(1) - cache.i[k]);
        gf_pre[k] = gf * cache.f[k] * (T(1) - cache.f[k]);
        go_pre[k] = go * cache.o[k] * (T(1) - cache.o[k]);
        gg_pre[k] = gg * (T(1) - cache.g[k] * cache.g[k]);
    }

    struct Pair { LstmGate<T>* gate; Tensor<T>* gpre; };
    Pair pairs[4] = {{&p.in, &gi_pre}, {&p.forget, &gf_pre}, {&p.out, &go_pre}, {&p.cand, &gg_pre}};
    for (auto& pr : pairs) {
        const T* gp = pr.gpre->data();
        detail::gemv_t(pr.gate->w.data(), gp, out.gx.data(), h, d);
        detail::gemv_t(pr.gate->u.data(), gp, out.gh_prev.data(), h, h);
        for (int k = 0; k < h; ++k) {
            pr.gate->b_grad[k] += gp[k];
            T* wg = pr.gate->w_grad.data() + static_cast<std::size_t>(k) * d;
            const T g = gp[k];
            for (int j = 0; j < d; ++j) wg[j] += g * cache.x[j];
            T* ug = pr.gate->u_grad.data() + static_cast<std::size_t>(k) * h;
            for (int j = 0; j < h; ++j) ug[j] += g * cache.h_prev[j];
        }
    }
    return out;
}

}  // namespace clipnet
