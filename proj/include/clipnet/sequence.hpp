#pragma once

#include <random>
#include <string>
#include <vector>

#include "clipnet/layers.hpp"
#include "clipnet/params.hpp"
#include "clipnet/tensor.hpp"

namespace clipnet {

struct SequenceConfig {
    int input_dim = 0;
    int hidden_size = 128;
    int head_hidden = 64;  // 0 disables the hidden layer
    int num_classes = 7;

    void validate() const {
        if (input_dim < 1) throw ConfigError("sequence: input dim must be positive");
        if (hidden_size < 1) throw ConfigError("sequence: hidden size must be positive");
        if (head_hidden < 0) throw ConfigError("sequence: head hidden must be non-negative");
        if (num_classes < 2) throw ConfigError("sequence: need at least two classes");
    }
};

template <typename T>
void collect_gate(const std::string& prefix, LstmGate<T>& g, ParamList<T>& out) {
    out.push_back({prefix + ".w", &g.w, &g.w_grad, true});
    out.push_back({prefix + ".u", &g.u, &g.u_grad, true});
    out.push_back({prefix + ".b", &g.b, &g.b_grad, true});
}

template <typename T>
void collect_cell(const std::string& prefix, LstmCellParams<T>& c, ParamList<T>& out) {
    collect_gate(prefix + ".i", c.in, out);
    collect_gate(prefix + ".f", c.forget, out);
    collect_gate(prefix + ".o", c.out, out);
    collect_gate(prefix + ".g", c.cand, out);
}

template <typename T>
struct BlstmCache {
    std::vector<LstmStepCache<T>> fwd;  // indexed by frame
    std::vector<LstmStepCache<T>> bwd;  // indexed by frame; scanned last-to-first
};

// Bidirectional recurrence over a clip. Row t of the output is the forward
// hidden state after frames 0..t next to the reverse hidden state after
// frames T-1..t. Both directions start from zero states.
template <typename T>
struct Blstm {
    LstmCellParams<T> fwd, bwd;

    static Blstm make(int input_dim, int hidden, std::mt19937_64& rng) {
        Blstm b;
        b.fwd = LstmCellParams<T>::zeros(input_dim, hidden);
        b.bwd = LstmCellParams<T>::zeros(input_dim, hidden);
        const double stddev = std::sqrt(1.0 / input_dim);
        for (LstmCellParams<T>* cell : {&b.fwd, &b.bwd})
            for (LstmGate<T>* g : {&cell->in, &cell->forget, &cell->out, &cell->cand}) {
                fill_normal(g->w, stddev, rng);
                fill_normal(g->u, std::sqrt(1.0 / hidden), rng);
            }
        return b;
    }

    // [T,D] -> [T,2H]
    Tensor<T> forward(const Tensor<T>& x, BlstmCache<T>* cache = nullptr) {
        if (x.rank() != 2 || x.dim(1) != fwd.input_dim)
            throw ShapeError("blstm: input " + x.shape_string() + " does not match input_dim " +
                             std::to_string(fwd.input_dim));
        const int t_len = x.dim(0), d = fwd.input_dim, h = fwd.hidden;
        if (cache) {
            cache->fwd.resize(static_cast<std::size_t>(t_len));
            cache->bwd.resize(static_cast<std::size_t>(t_len));
        }
        Tensor<T> out({t_len, 2 * h});
        auto row = [&](int t) {
            return Tensor<T>({d}, std::vector<T>(x.data() + static_cast<std::size_t>(t) * d,
                                                 x.data() + static_cast<std::size_t>(t + 1) * d));
        };
        LstmState<T> st{Tensor<T>({h}), Tensor<T>({h})};
        for (int t = 0; t < t_len; ++t) {
            st = lstm_cell(row(t), st.h, st.c, fwd,
                           cache ? &cache->fwd[static_cast<std::size_t>(t)] : nullptr);
            for (int k = 0; k < h; ++k) out.at2(t, k) = st.h[k];
        }
        st = LstmState<T>{Tensor<T>({h}), Tensor<T>({h})};
        for (int t = t_len - 1; t >= 0; --t) {
            st = lstm_cell(row(t), st.h, st.c, bwd,
                           cache ? &cache->bwd[static_cast<std::size_t>(t)] : nullptr);
            for (int k = 0; k < h; ++k) out.at2(t, h + k) = st.h[k];
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gy, const BlstmCache<T>& cache) {
        const int t_len = gy.dim(0), d = fwd.input_dim, h = fwd.hidden;
        Tensor<T> gx({t_len, d});
        Tensor<T> gh({h}), gc({h});
        for (int t = t_len - 1; t >= 0; --t) {
            for (int k = 0; k < h; ++k) gh[k] += gy.at2(t, k);
            LstmStepGrads<T> sg =
                lstm_cell_backward(gh, gc, cache.fwd[static_cast<std::size_t>(t)], fwd);
            for (int k = 0; k < d; ++k) gx.at2(t, k) += sg.gx[k];
            gh = std::move(sg.gh_prev);
            gc = std::move(sg.gc_prev);
        }
        gh = Tensor<T>({h});
        gc = Tensor<T>({h});
        for (int t = 0; t < t_len; ++t) {
            for (int k = 0; k < h; ++k) gh[k] += gy.at2(t, h + k);
            LstmStepGrads<T> sg =
                lstm_cell_backward(gh, gc, cache.bwd[static_cast<std::size_t>(t)], bwd);
            for (int k = 0; k < d; ++k) gx.at2(t, k) += sg.gx[k];
            gh = std::move(sg.gh_prev);
            gc = std::move(sg.gc_prev);
        }
        return gx;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        collect_cell(prefix + ".fwd", fwd, out);
        collect_cell(prefix + ".bwd", bwd, out);
    }
};

template <typename T>
struct ClassHeadCache {
    DenseCache<T> fc1, out;
    Tensor<T> hidden;  // post-relu, empty when the hidden layer is disabled
};

template <typename T>
struct ClassHead {
    bool has_hidden = false;
    Dense<T> fc1;
    Dense<T> out;

    static ClassHead make(int input_dim, int head_hidden, int num_classes,
                          std::mt19937_64& rng) {
        ClassHead h;
        h.has_hidden = head_hidden > 0;
        int out_in = input_dim;
        if (h.has_hidden) {
            h.fc1.weight = Tensor<T>({head_hidden, input_dim});
            h.fc1.bias = Tensor<T>({head_hidden});
            init_dense_weight(h.fc1.weight, rng);
            out_in = head_hidden;
        }
        h.out.weight = Tensor<T>({num_classes, out_in});
        h.out.bias = Tensor<T>({num_classes});
        init_dense_weight(h.out.weight, rng);
        return h;
    }

    // [T,2H] -> [T,K]
    Tensor<T> forward(const Tensor<T>& x, ClassHeadCache<T>* cache = nullptr) {
        Tensor<T> t = x;
        if (has_hidden) {
            t = fc1.forward(t, cache ? &cache->fc1 : nullptr);
            t = relu(t);
            if (cache) cache->hidden = t;
        }
        return out.forward(t, cache ? &cache->out : nullptr);
    }

    Tensor<T> backward(const Tensor<T>& gy, const ClassHeadCache<T>& cache) {
        Tensor<T> g = out.backward(gy, cache.out);
        if (has_hidden) {
            for (std::size_t i = 0; i < g.size(); ++i)
                if (cache.hidden[i] <= T(0)) g[i] = T(0);
            g = fc1.backward(g, cache.fc1);
        }
        return g;
    }

    void collect(const std::string& prefix, ParamList<T>& out_list) {
        if (has_hidden) {
            out_list.push_back({prefix + ".fc1.weight", &fc1.weight, &fc1.weight_grad, true});
            out_list.push_back({prefix + ".fc1.bias", &fc1.bias, &fc1.bias_grad, true});
        }
        out_list.push_back({prefix + ".out.weight", &out.weight, &out.weight_grad, true});
        out_list.push_back({prefix + ".out.bias", &out.bias, &out.bias_grad, true});
    }
};

// Per-row argmax; ties resolve to the lowest class index.
template <typename T>
std::vector<int> predict(const Tensor<T>& logits) {
    if (logits.rank() != 2)
        throw ShapeError("predict: logits must be rank 2, got " + logits.shape_string());
    const int m = logits.dim(0), k = logits.dim(1);
    std::vector<int> out(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        const T* row = logits.data() + static_cast<std::size_t>(i) * k;
        int best = 0;
        for (int j = 1; j < k; ++j)
            if (row[j] > row[best]) best = j;
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

}  // namespace clipnet
