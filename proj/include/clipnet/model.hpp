#pragma once

#include <random>
#include <string>
#include <vector>

#include "clipnet/backbone.hpp"
#include "clipnet/sequence.hpp"

namespace clipnet {

template <typename T>
struct ModelCache {
    BackboneCache<T> backbone;
    std::vector<BlstmCache<T>> blstm;     // one per clip
    std::vector<ClassHeadCache<T>> head;  // one per clip
    int clip_len = 0;
};

// Frame CNN features feeding a per-clip bidirectional recurrence and a
// shared classification head.
template <typename T>
struct Model {
    Backbone<T> backbone;
    Blstm<T> blstm;
    ClassHead<T> head;
    SequenceConfig scfg;
    bool freeze_backbone = false;

    static Model build(const BackboneConfig& bcfg, SequenceConfig scfg, std::uint64_t seed) {
        bcfg.validate();
        scfg.input_dim = bcfg.feature_dim();
        scfg.validate();
        std::mt19937_64 rng(seed);
        Model m;
        m.backbone = build_backbone<T>(bcfg, rng);
        m.blstm = Blstm<T>::make(scfg.input_dim, scfg.hidden_size, rng);
        m.head = ClassHead<T>::make(2 * scfg.hidden_size, scfg.head_hidden, scfg.num_classes, rng);
        m.scfg = scfg;
        return m;
    }

    const BackboneConfig& backbone_config() const { return backbone.cfg; }

    // x is [M,Cin,S,S] with M a multiple of clip_len; returns logits [M,K].
    // A frozen backbone runs in eval mode regardless of `mode`.
    Tensor<T> forward_frames(const Tensor<T>& x, int clip_len, Mode mode,
                             ModelCache<T>* cache = nullptr) {
        if (clip_len < 1 || x.dim(0) % clip_len != 0)
            throw ShapeError("model: batch of " + std::to_string(x.dim(0)) +
                             " frames is not a multiple of clip length " +
                             std::to_string(clip_len));
        const Mode bb_mode = freeze_backbone ? Mode::eval : mode;
        Tensor<T> feats = backbone.forward(x, bb_mode, cache ? &cache->backbone : nullptr);
        const int m = feats.dim(0), d = feats.dim(1);
        const int clips = m / clip_len;
        if (cache) {
            cache->blstm.resize(static_cast<std::size_t>(clips));
            cache->head.resize(static_cast<std::size_t>(clips));
            cache->clip_len = clip_len;
        }
        Tensor<T> logits({m, scfg.num_classes});
        for (int c = 0; c < clips; ++c) {
            const std::size_t row0 = static_cast<std::size_t>(c) * clip_len;
            Tensor<T> seq({clip_len, d},
                          std::vector<T>(feats.data() + row0 * d,
                                         feats.data() + (row0 + clip_len) * d));
            Tensor<T> hid = blstm.forward(seq, cache ? &cache->blstm[static_cast<std::size_t>(c)]
                                                     : nullptr);
            Tensor<T> lg =
                head.forward(hid, cache ? &cache->head[static_cast<std::size_t>(c)] : nullptr);
            std::copy(lg.data(), lg.data() + lg.size(),
                      logits.data() + row0 * scfg.num_classes);
        }
        return logits;
    }

    // Returns the cotangent of the input frames (empty when the backbone is
    // frozen); accumulates parameter gradients.
    Tensor<T> backward_from_logits(const Tensor<T>& glogits, const ModelCache<T>& cache) {
        const int m = glogits.dim(0);
        const int clip_len = cache.clip_len;
        const int clips = m / clip_len;
        const int d = scfg.input_dim;
        Tensor<T> gfeats({m, d});
        for (int c = 0; c < clips; ++c) {
            const std::size_t row0 = static_cast<std::size_t>(c) * clip_len;
            Tensor<T> gl({clip_len, scfg.num_classes},
                         std::vector<T>(glogits.data() + row0 * scfg.num_classes,
                                        glogits.data() + (row0 + clip_len) * scfg.num_classes));
            Tensor<T> ghid = head.backward(gl, cache.head[static_cast<std::size_t>(c)]);
            Tensor<T> gseq = blstm.backward(ghid, cache.blstm[static_cast<std::size_t>(c)]);
            std::copy(gseq.data(), gseq.data() + gseq.size(), gfeats.data() + row0 * d);
        }
        if (freeze_backbone) return Tensor<T>();
        return backbone.backward(gfeats, cache.backbone);
    }

    ParamList<T> params() {
        ParamList<T> out;
        backbone.collect("backbone", out);
        if (freeze_backbone)
            for (auto& e : out) e.trainable = false;
        blstm.collect("blstm", out);
        head.collect("head", out);
        return out;
    }

    void zero_grads() {
        for (auto& e : params()) {
            if (!e.grad) continue;
            if (e.grad->empty())
                *e.grad = Tensor<T>(e.value->shape());
            else
                e.grad->fill(T(0));
        }
    }
};

}  // namespace clipnet
