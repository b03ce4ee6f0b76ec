#pragma once

#include <string>
#include <vector>

#include "clipnet/layers.hpp"
#include "clipnet/params.hpp"
#include "clipnet/tensor.hpp"

namespace clipnet {

// Channel and spatial attention over feature maps. The channel gate is a
// shared bias-free two-layer MLP applied to global average and max summaries;
// the spatial gate is a conv over stacked channel average and max maps.
template <typename T>
struct CbamParams {
    int channels = 0;
    int reduction = 16;
    int spatial_kernel = 7;
    Tensor<T> mlp_w0;  // [C/r, C]
    Tensor<T> mlp_w1;  // [C, C/r]
    Tensor<T> mlp_w0_grad, mlp_w1_grad;
    Conv2d<T> spatial;  // kernel [1,2,k,k], bias [1]

    static CbamParams zeros(int channels, int reduction, int spatial_kernel) {
        if (channels <= 0 || reduction <= 0 || channels % reduction != 0)
            throw ConfigError("attention: reduction " + std::to_string(reduction) +
                              " must divide channels " + std::to_string(channels));
        if (spatial_kernel < 1 || spatial_kernel % 2 == 0)
            throw ConfigError("attention: spatial kernel must be odd, got " +
                              std::to_string(spatial_kernel));
        CbamParams p;
        p.channels = channels;
        p.reduction = reduction;
        p.spatial_kernel = spatial_kernel;
        const int hidden = channels / reduction;
        p.mlp_w0 = Tensor<T>({hidden, channels});
        p.mlp_w1 = Tensor<T>({channels, hidden});
        p.spatial.kernel = Tensor<T>({1, 2, spatial_kernel, spatial_kernel});
        p.spatial.bias = Tensor<T>({1});
        p.spatial.stride = 1;
        p.spatial.padding = (spatial_kernel - 1) / 2;
        return p;
    }

    void init(std::mt19937_64& rng) {
        init_dense_weight(mlp_w0, rng);
        init_dense_weight(mlp_w1, rng);
        init_conv_kernel(spatial.kernel, rng);
    }

    void init_grads() {
        mlp_w0_grad = Tensor<T>(mlp_w0.shape());
        mlp_w1_grad = Tensor<T>(mlp_w1.shape());
        spatial.init_grads();
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".mlp.w0", &mlp_w0, &mlp_w0_grad, true});
        out.push_back({prefix + ".mlp.w1", &mlp_w1, &mlp_w1_grad, true});
        out.push_back({prefix + ".spatial.kernel", &spatial.kernel, &spatial.kernel_grad, true});
        out.push_back({prefix + ".spatial.bias", &spatial.bias, &spatial.bias_grad, true});
    }
};

template <typename T>
struct ChannelAttnCache {
    GlobalPoolCache<T> avg_pool, max_pool;
    Tensor<T> v_avg, v_max;    // [N,C] pooled summaries
    Tensor<T> z_avg, z_max;    // [N,C/r] post-relu hidden activations
    Tensor<T> mc;              // [N,C,1,1]
};

template <typename T>
Tensor<T> channel_attention(const Tensor<T>& f, CbamParams<T>& p,
                            ChannelAttnCache<T>* cache = nullptr) {
    if (f.rank() != 4 || f.dim(1) != p.channels)
        throw ShapeError("channel_attention: input " + f.shape_string() + " does not match " +
                         std::to_string(p.channels) + " channels");
    const int n = f.dim(0), c = p.channels, hid = c / p.reduction;
    ChannelAttnCache<T> local;
    ChannelAttnCache<T>* cc = cache ? cache : &local;

    Tensor<T> avg = global_pool(f, PoolKind::avg, &cc->avg_pool);
    Tensor<T> mx = global_pool(f, PoolKind::max, &cc->max_pool);
    cc->v_avg = Tensor<T>({n, c}, std::vector<T>(avg.values()));
    cc->v_max = Tensor<T>({n, c}, std::vector<T>(mx.values()));

    auto mlp = [&](const Tensor<T>& v, Tensor<T>& z_out) {
        Tensor<T> z({n, hid});
        detail::gemm_nt(v.data(), p.mlp_w0.data(), z.data(), n, c, hid);
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = std::max(z[i], T(0));
        z_out = z;
        Tensor<T> a({n, c});
        detail::gemm_nt(z.data(), p.mlp_w1.data(), a.data(), n, hid, c);
        return a;
    };
    Tensor<T> a_avg = mlp(cc->v_avg, cc->z_avg);
    Tensor<T> a_max = mlp(cc->v_max, cc->z_max);

    Tensor<T> mc({n, c, 1, 1});
    for (std::size_t i = 0; i < mc.size(); ++i)
        mc[i] = sigmoid_scalar(a_avg[i] + a_max[i]);
    cc->mc = mc;
    return mc;
}

// Cotangent of the attention map back to the feature map input.
template <typename T>
Tensor<T> channel_attention_backward(const Tensor<T>& gmc, const ChannelAttnCache<T>& cache,
                                     CbamParams<T>& p) {
    const int n = gmc.dim(0), c = p.channels, hid = c / p.reduction;
    if (p.mlp_w0_grad.empty()) p.init_grads();

    Tensor<T> gpre({n, c});
    for (std::size_t i = 0; i < gpre.size(); ++i) {
        const T s = cache.mc[i];
        gpre[i] = gmc[i] * s * (T(1) - s);
    }

    auto mlp_backward = [&](const Tensor<T>& v, const Tensor<T>& z) {
        // gz = gpre * W1, masked by relu; gv = gz * W0
        Tensor<T> gz({n, hid});
        detail::gemm_nn(gpre.data(), p.mlp_w1.data(), gz.data(), n, c, hid);
        detail::gemm_tn(gpre.data(), z.data(), p.mlp_w1_grad.data(), c, n, hid);
        for (std::size_t i = 0; i < gz.size(); ++i)
            if (z[i] <= T(0)) gz[i] = T(0);
        detail::gemm_tn(gz.data(), v.data(), p.mlp_w0_grad.data(), hid, n, c);
        Tensor<T> gv({n, c});
        detail::gemm_nn(gz.data(), p.mlp_w0.data(), gv.data(), n, hid, c);
        return gv;
    };
    Tensor<T> gv_avg = mlp_backward(cache.v_avg, cache.z_avg);
    Tensor<T> gv_max = mlp_backward(cache.v_max, cache.z_max);

    Tensor<T> gv_avg4({n, c, 1, 1}, std::vector<T>(gv_avg.values()));
    Tensor<T> gv_max4({n, c, 1, 1}, std::vector<T>(gv_max.values()));
    Tensor<T> gf = global_pool_backward(gv_avg4, cache.avg_pool);
    Tensor<T> gf_max = global_pool_backward(gv_max4, cache.max_pool);
    for (std::size_t i = 0; i < gf.size(); ++i) gf[i] += gf_max[i];
    return gf;
}

template <typename T>
struct SpatialAttnCache {
    ChannelPoolCache<T> avg_pool, max_pool;
    Conv2dCache<T> conv;
    Tensor<T> ms;  // [N,1,H,W]
};

template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& f, CbamParams<T>& p,
                            SpatialAttnCache<T>* cache = nullptr) {
    SpatialAttnCache<T> local;
    SpatialAttnCache<T>* cc = cache ? cache : &local;
    Tensor<T> avg = channel_pool(f, PoolKind::avg, &cc->avg_pool);
    Tensor<T> mx = channel_pool(f, PoolKind::max, &cc->max_pool);

    const int n = f.dim(0), h = f.dim(2), w = f.dim(3);
    Tensor<T> cat({n, 2, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int in = 0; in < n; ++in) {
        const std::size_t src = static_cast<std::size_t>(in) * plane;
        const std::size_t dst = static_cast<std::size_t>(in) * 2 * plane;
        for (std::size_t k = 0; k < plane; ++k) {
            cat[dst + k] = avg[src + k];
            cat[dst + plane + k] = mx[src + k];
        }
    }
    Tensor<T> pre = p.spatial.forward(cat, &cc->conv);
    Tensor<T> ms = sigmoid(pre);
    cc->ms = ms;
    return ms;
}

template <typename T>
Tensor<T> spatial_attention_backward(const Tensor<T>& gms, const SpatialAttnCache<T>& cache,
                                     CbamParams<T>& p) {
    if (p.mlp_w0_grad.empty()) p.init_grads();
    Tensor<T> gpre(gms.shape());
    for (std::size_t i = 0; i < gpre.size(); ++i) {
        const T s = cache.ms[i];
        gpre[i] = gms[i] * s * (T(1) - s);
    }
    Tensor<T> gcat = p.spatial.backward(gpre, cache.conv);

    const int n = gcat.dim(0), h = gcat.dim(2), w = gcat.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor<T> g_avg({n, 1, h, w}), g_max({n, 1, h, w});
    for (int in = 0; in < n; ++in) {
        const std::size_t src = static_cast<std::size_t>(in) * 2 * plane;
        const std::size_t dst = static_cast<std::size_t>(in) * plane;
        for (std::size_t k = 0; k < plane; ++k) {
            g_avg[dst + k] = gcat[src + k];
            g_max[dst + k] = gcat[src + plane + k];
        }
    }
    Tensor<T> gf = channel_pool_backward(g_avg, cache.avg_pool);
    Tensor<T> gf_max = channel_pool_backward(g_max, cache.max_pool);
    for (std::size_t i = 0; i < gf.size(); ++i) gf[i] += gf_max[i];
    return gf;
}

template <typename T>
struct CbamCache {
    Tensor<T> f;        // input
    Tensor<T> mc;       // [N,C,1,1]
    Tensor<T> f_chan;   // Mc * F
    Tensor<T> ms;       // [N,1,H,W]
    ChannelAttnCache<T> chan;
    SpatialAttnCache<T> spat;
};

// Channel gate first, then spatial gate on the refined map.
template <typename T>
Tensor<T> cbam(const Tensor<T>& f, CbamParams<T>& p, CbamCache<T>* cache = nullptr) {
    CbamCache<T> local;
    CbamCache<T>* cc = cache ? cache : &local;
    cc->f = f;
    cc->mc = channel_attention(f, p, &cc->chan);
    cc->f_chan = mul(cc->mc, f);
    cc->ms = spatial_attention(cc->f_chan, p, &cc->spat);
    return mul(cc->ms, cc->f_chan);
}

template <typename T>
Tensor<T> cbam_backward(const Tensor<T>& gy, const CbamCache<T>& cache, CbamParams<T>& p) {
    Tensor<T> gms = reduce_to_shape(mul(gy, cache.f_chan), cache.ms.shape());
    Tensor<T> gf_chan = mul(gy, cache.ms);
    Tensor<T> gf_spat = spatial_attention_backward(gms, cache.spat, p);
    for (std::size_t i = 0; i < gf_chan.size(); ++i) gf_chan[i] += gf_spat[i];

    Tensor<T> gmc = reduce_to_shape(mul(gf_chan, cache.f), cache.mc.shape());
    Tensor<T> gf = mul(gf_chan, cache.mc);
    Tensor<T> gf_chan_path = channel_attention_backward(gmc, cache.chan, p);
    for (std::size_t i = 0; i < gf.size(); ++i) gf[i] += gf_chan_path[i];
    return gf;
}

}  // namespace clipnet
