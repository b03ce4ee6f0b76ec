#pragma once

#include <random>
#include <string>
#include <vector>

#include "clipnet/tensor.hpp"

namespace clipnet {

// Named view over a tensor owned by some layer. `grad` is null for
// persistent state that is saved but never optimized (running stats).
template <typename T>
struct ParamEntry {
    std::string name;
    Tensor<T>* value = nullptr;
    Tensor<T>* grad = nullptr;
    bool trainable = true;
};

template <typename T>
using ParamList = std::vector<ParamEntry<T>>;

template <typename T>
void fill_normal(Tensor<T>& t, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(rng));
}

// He initialization for a conv kernel [Cout,Cin,kh,kw].
template <typename T>
void init_conv_kernel(Tensor<T>& kernel, std::mt19937_64& rng) {
    const double fan_in = static_cast<double>(kernel.dim(1)) * kernel.dim(2) * kernel.dim(3);
    fill_normal(kernel, std::sqrt(2.0 / fan_in), rng);
}

// He initialization for a dense weight [K,D].
template <typename T>
void init_dense_weight(Tensor<T>& weight, std::mt19937_64& rng) {
    const double fan_in = static_cast<double>(weight.dim(1));
    fill_normal(weight, std::sqrt(2.0 / fan_in), rng);
}

}  // namespace clipnet
