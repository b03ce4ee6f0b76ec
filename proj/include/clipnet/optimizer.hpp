#pragma once

#include <cmath>
#include <vector>

#include "clipnet/params.hpp"
#include "clipnet/tensor.hpp"

namespace clipnet {

// SGD with classical momentum: v <- momentum*v + g, p <- p - lr*v.
template <typename T>
struct SgdOptimizer {
    T lr = T(1e-4);
    T momentum = T(0.9);
    T grad_clip = T(0);  // global-norm threshold; 0 disables
    std::vector<Tensor<T>> velocity;  // index-aligned with the param list

    void init(const ParamList<T>& params) {
        velocity.clear();
        velocity.reserve(params.size());
        for (const auto& e : params)
            velocity.push_back(e.trainable ? Tensor<T>(e.value->shape()) : Tensor<T>());
    }

    void step(const ParamList<T>& params) {
        if (velocity.size() != params.size()) init(params);
        T scale = T(1);
        if (grad_clip > T(0)) {
            double sq = 0;
            for (const auto& e : params) {
                if (!e.trainable || !e.grad) continue;
                for (std::size_t i = 0; i < e.grad->size(); ++i) {
                    const double g = static_cast<double>((*e.grad)[i]);
                    sq += g * g;
                }
            }
            const double norm = std::sqrt(sq);
            if (norm > static_cast<double>(grad_clip))
                scale = static_cast<T>(static_cast<double>(grad_clip) / norm);
        }
        for (std::size_t k = 0; k < params.size(); ++k) {
            const auto& e = params[k];
            if (!e.trainable || !e.grad) continue;
            Tensor<T>& v = velocity[k];
            if (v.empty()) v = Tensor<T>(e.value->shape());
            for (std::size_t i = 0; i < v.size(); ++i) {
                v[i] = momentum * v[i] + scale * (*e.grad)[i];
                (*e.value)[i] -= lr * v[i];
            }
        }
    }
};

}  // namespace clipnet
