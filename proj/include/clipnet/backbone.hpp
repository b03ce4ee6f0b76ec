#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "clipnet/attention.hpp"
#include "clipnet/layers.hpp"
#include "clipnet/params.hpp"
#include "clipnet/tensor.hpp"

namespace clipnet {

struct BackboneConfig {
    std::array<int, 4> stage_blocks{3, 4, 23, 3};
    int base_width = 64;
    int input_channels = 3;
    int input_size = 256;
    bool use_cbam = true;
    int cbam_reduction = 16;
    int cbam_spatial_kernel = 7;
    static constexpr int expansion = 4;

    int feature_dim() const { return base_width * 8 * expansion; }
    int conv_layer_count() const {
        int blocks = 0;
        for (int b : stage_blocks) blocks += b;
        return blocks * 3 + 2;  // stem conv + three per block + final classifier slot
    }

    void validate() const {
        if (input_size < 32 || input_size % 32 != 0)
            throw ConfigError("backbone: input size " + std::to_string(input_size) +
                              " must be a positive multiple of 32");
        if (base_width < 1) throw ConfigError("backbone: base width must be positive");
        if (input_channels < 1) throw ConfigError("backbone: input channels must be positive");
        for (int b : stage_blocks)
            if (b < 1) throw ConfigError("backbone: every stage needs at least one block");
        if (use_cbam) {
            for (int i = 0; i < 4; ++i) {
                const int ch = (base_width << i) * expansion;
                if (ch % cbam_reduction != 0)
                    throw ConfigError("backbone: attention reduction " +
                                      std::to_string(cbam_reduction) +
                                      " does not divide stage channels " + std::to_string(ch));
            }
        }
    }
};

template <typename T>
void collect_conv(const std::string& prefix, Conv2d<T>& c, ParamList<T>& out) {
    out.push_back({prefix + ".kernel", &c.kernel, &c.kernel_grad, true});
    if (!c.bias.empty()) out.push_back({prefix + ".bias", &c.bias, &c.bias_grad, true});
}

template <typename T>
void collect_bn(const std::string& prefix, BatchNorm<T>& bn, ParamList<T>& out) {
    out.push_back({prefix + ".gamma", &bn.gamma, &bn.gamma_grad, true});
    out.push_back({prefix + ".beta", &bn.beta, &bn.beta_grad, true});
    out.push_back({prefix + ".running_mean", &bn.running_mean, nullptr, false});
    out.push_back({prefix + ".running_var", &bn.running_var, nullptr, false});
}

template <typename T>
struct BottleneckCache {
    Conv2dCache<T> c1, c2, c3, proj;
    BnCache<T> b1, b2, b3, proj_bn;
    CbamCache<T> attn;
    Tensor<T> r1, r2;  // post-relu activations inside the branch
    Tensor<T> y;       // block output, used as the final relu mask
};

// Bottleneck residual block: 1x1 reduce, 3x3 (carries the stride), 1x1 expand,
// attention on the branch output, then shortcut add and relu.
template <typename T>
struct Bottleneck {
    Conv2d<T> c1, c2, c3;
    BatchNorm<T> b1, b2, b3;
    bool use_cbam = false;
    CbamParams<T> attn;
    bool has_proj = false;
    Conv2d<T> proj;
    BatchNorm<T> proj_bn;

    static Bottleneck make(int in_ch, int width, int stride, const BackboneConfig& cfg,
                           std::mt19937_64& rng) {
        const int out_ch = width * BackboneConfig::expansion;
        Bottleneck blk;
        blk.c1.kernel = Tensor<T>({width, in_ch, 1, 1});
        blk.c2.kernel = Tensor<T>({width, width, 3, 3});
        blk.c2.stride = stride;
        blk.c2.padding = 1;
        blk.c3.kernel = Tensor<T>({out_ch, width, 1, 1});
        init_conv_kernel(blk.c1.kernel, rng);
        init_conv_kernel(blk.c2.kernel, rng);
        init_conv_kernel(blk.c3.kernel, rng);
        blk.b1 = BatchNorm<T>::identity(width);
        blk.b2 = BatchNorm<T>::identity(width);
        blk.b3 = BatchNorm<T>::identity(out_ch);
        blk.b3.gamma.fill(T(0));  // branch starts as a no-op
        blk.use_cbam = cfg.use_cbam;
        if (cfg.use_cbam) {
            blk.attn = CbamParams<T>::zeros(out_ch, cfg.cbam_reduction, cfg.cbam_spatial_kernel);
            blk.attn.init(rng);
        }
        blk.has_proj = (in_ch != out_ch || stride != 1);
        if (blk.has_proj) {
            blk.proj.kernel = Tensor<T>({out_ch, in_ch, 1, 1});
            blk.proj.stride = stride;
            init_conv_kernel(blk.proj.kernel, rng);
            blk.proj_bn = BatchNorm<T>::identity(out_ch);
        }
        return blk;
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode, BottleneckCache<T>* cache) {
        Tensor<T> t = c1.forward(x, cache ? &cache->c1 : nullptr);
        t = b1.forward(t, mode, cache ? &cache->b1 : nullptr);
        t = relu(t);
        if (cache) cache->r1 = t;
        t = c2.forward(t, cache ? &cache->c2 : nullptr);
        t = b2.forward(t, mode, cache ? &cache->b2 : nullptr);
        t = relu(t);
        if (cache) cache->r2 = t;
        t = c3.forward(t, cache ? &cache->c3 : nullptr);
        t = b3.forward(t, mode, cache ? &cache->b3 : nullptr);
        if (use_cbam) t = cbam(t, attn, cache ? &cache->attn : nullptr);

        Tensor<T> sc = x;
        if (has_proj) {
            sc = proj.forward(x, cache ? &cache->proj : nullptr);
            sc = proj_bn.forward(sc, mode, cache ? &cache->proj_bn : nullptr);
        }
        if (!t.same_shape(sc))
            throw ShapeError("bottleneck: branch " + t.shape_string() + " vs shortcut " +
                             sc.shape_string());
        Tensor<T> y(t.shape());
        for (std::size_t i = 0; i < y.size(); ++i) {
            const T s = t[i] + sc[i];
            y[i] = s > T(0) ? s : T(0);
        }
        if (cache) cache->y = y;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy, const BottleneckCache<T>& cache) {
        Tensor<T> gsum(gy.shape());
        for (std::size_t i = 0; i < gsum.size(); ++i)
            gsum[i] = cache.y[i] > T(0) ? gy[i] : T(0);

        Tensor<T> g = gsum;
        if (use_cbam) g = cbam_backward(g, cache.attn, attn);
        g = b3.backward(g, cache.b3);
        g = c3.backward(g, cache.c3);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (cache.r2[i] <= T(0)) g[i] = T(0);
        g = b2.backward(g, cache.b2);
        g = c2.backward(g, cache.c2);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (cache.r1[i] <= T(0)) g[i] = T(0);
        g = b1.backward(g, cache.b1);
        Tensor<T> gx = c1.backward(g, cache.c1);

        if (has_proj) {
            Tensor<T> gsc = proj_bn.backward(gsum, cache.proj_bn);
            gsc = proj.backward(gsc, cache.proj);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gsc[i];
        } else {
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gsum[i];
        }
        return gx;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        collect_conv(prefix + ".c1", c1, out);
        collect_bn(prefix + ".b1", b1, out);
        collect_conv(prefix + ".c2", c2, out);
        collect_bn(prefix + ".b2", b2, out);
        collect_conv(prefix + ".c3", c3, out);
        collect_bn(prefix + ".b3", b3, out);
        if (use_cbam) attn.collect(prefix + ".attn", out);
        if (has_proj) {
            collect_conv(prefix + ".proj", proj, out);
            collect_bn(prefix + ".proj_bn", proj_bn, out);
        }
    }
};

template <typename T>
struct BackboneCache {
    Conv2dCache<T> stem;
    BnCache<T> stem_bn;
    Tensor<T> stem_relu;
    Pool2dCache<T> stem_pool;
    std::vector<BottleneckCache<T>> blocks;
    GlobalPoolCache<T> head_pool;
};

template <typename T>
struct Backbone {
    BackboneConfig cfg;
    Conv2d<T> stem;
    BatchNorm<T> stem_bn;
    std::vector<Bottleneck<T>> blocks;  // all stages flattened in order

    // [N,Cin,S,S] -> [N,D]
    Tensor<T> forward(const Tensor<T>& x, Mode mode, BackboneCache<T>* cache = nullptr) {
        if (x.rank() != 4 || x.dim(1) != cfg.input_channels || x.dim(2) != cfg.input_size ||
            x.dim(3) != cfg.input_size)
            throw ShapeError("backbone: expected input [N," + std::to_string(cfg.input_channels) +
                             "," + std::to_string(cfg.input_size) + "," +
                             std::to_string(cfg.input_size) + "], got " + x.shape_string());
        if (cache) cache->blocks.resize(blocks.size());
        Tensor<T> t = stem.forward(x, cache ? &cache->stem : nullptr);
        t = stem_bn.forward(t, mode, cache ? &cache->stem_bn : nullptr);
        t = relu(t);
        if (cache) cache->stem_relu = t;
        t = pool2d(t, PoolKind::max, 3, 3, 2, 1, cache ? &cache->stem_pool : nullptr);
        for (std::size_t i = 0; i < blocks.size(); ++i)
            t = blocks[i].forward(t, mode, cache ? &cache->blocks[i] : nullptr);
        Tensor<T> pooled = global_pool(t, PoolKind::avg, cache ? &cache->head_pool : nullptr);
        return Tensor<T>({pooled.dim(0), pooled.dim(1)}, std::vector<T>(pooled.values()));
    }

    // gy is [N,D]; returns the input cotangent.
    Tensor<T> backward(const Tensor<T>& gy, const BackboneCache<T>& cache) {
        Tensor<T> g({gy.dim(0), gy.dim(1), 1, 1}, std::vector<T>(gy.values()));
        g = global_pool_backward(g, cache.head_pool);
        for (std::size_t i = blocks.size(); i-- > 0;)
            g = blocks[i].backward(g, cache.blocks[i]);
        g = pool2d_backward(g, cache.stem_pool);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (cache.stem_relu[i] <= T(0)) g[i] = T(0);
        g = stem_bn.backward(g, cache.stem_bn);
        return stem.backward(g, cache.stem);
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        collect_conv(prefix + ".stem.conv", stem, out);
        collect_bn(prefix + ".stem.bn", stem_bn, out);
        int idx = 0;
        for (int s = 0; s < 4; ++s)
            for (int b = 0; b < cfg.stage_blocks[static_cast<std::size_t>(s)]; ++b, ++idx)
                blocks[static_cast<std::size_t>(idx)].collect(
                    prefix + ".s" + std::to_string(s) + ".b" + std::to_string(b), out);
    }
};

template <typename T>
Backbone<T> build_backbone(const BackboneConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    Backbone<T> bb;
    bb.cfg = cfg;
    bb.stem.kernel = Tensor<T>({cfg.base_width, cfg.input_channels, 7, 7});
    bb.stem.stride = 2;
    bb.stem.padding = 3;
    init_conv_kernel(bb.stem.kernel, rng);
    bb.stem_bn = BatchNorm<T>::identity(cfg.base_width);

    int in_ch = cfg.base_width;
    for (int s = 0; s < 4; ++s) {
        const int width = cfg.base_width << s;
        for (int b = 0; b < cfg.stage_blocks[static_cast<std::size_t>(s)]; ++b) {
            const int stride = (s > 0 && b == 0) ? 2 : 1;
            bb.blocks.push_back(Bottleneck<T>::make(in_ch, width, stride, cfg, rng));
            in_ch = width * BackboneConfig::expansion;
        }
    }
    return bb;
}

}  // namespace clipnet
