#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "clipnet/tensor.hpp"

namespace clipnet {

template <typename T>
using TensorList = std::vector<Tensor<T>>;

// A differentiable operation under verification: forward maps inputs to one
// output, backward maps an output cotangent to per-input cotangents.
struct DiffOp {
    std::string name;
    std::function<Tensor<double>(const TensorList<double>&)> forward;
    std::function<TensorList<double>(const TensorList<double>&, const Tensor<double>&)> backward;
};

// One recorded application of a DiffOp. The captured closure replays the
// backward map against the captured inputs.
struct GradRecord {
    std::string op;
    TensorList<double> inputs;
    Tensor<double> output;
    std::function<TensorList<double>(const Tensor<double>&)> backward;
};

inline GradRecord apply_recorded(const DiffOp& op, TensorList<double> inputs) {
    GradRecord rec;
    rec.op = op.name;
    rec.inputs = std::move(inputs);
    rec.output = op.forward(rec.inputs);
    rec.backward = [op, inputs = rec.inputs](const Tensor<double>& cotangent) {
        return op.backward(inputs, cotangent);
    };
    return rec;
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    int input_index = -1;         // input holding the worst element
    std::size_t element_index = 0;
    bool finite = true;
};

// Central finite differences against the analytic backward map. The output
// is scalarized through a fixed random cotangent w, so the quantity checked
// per input element x_i is d(sum w*f)/dx_i. Error is
// |analytic - numeric| / max(1, |numeric|), maximized over all elements.
inline GradCheckResult grad_check_detail(const DiffOp& op, TensorList<double> inputs,
                                         double eps, std::uint64_t cotangent_seed = 0) {
    const Tensor<double> y0 = op.forward(inputs);
    std::mt19937_64 rng(cotangent_seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> dist(0.0, 1.0);
    Tensor<double> w(y0.shape());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = dist(rng);

    const TensorList<double> analytic = op.backward(inputs, w);

    auto weighted = [&](const TensorList<double>& in) {
        const Tensor<double> y = op.forward(in);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
        return s;
    };

    GradCheckResult res;
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        for (std::size_t ei = 0; ei < inputs[ti].size(); ++ei) {
            const double orig = inputs[ti][ei];
            inputs[ti][ei] = orig + eps;
            const double fp = weighted(inputs);
            inputs[ti][ei] = orig - eps;
            const double fm = weighted(inputs);
            inputs[ti][ei] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double analytic_v = analytic[ti][ei];
            if (!std::isfinite(numeric) || !std::isfinite(analytic_v)) {
                res.finite = false;
                res.input_index = static_cast<int>(ti);
                res.element_index = ei;
                res.max_rel_error = std::numeric_limits<double>::infinity();
                return res;
            }
            const double err = std::abs(analytic_v - numeric) / std::max(1.0, std::abs(numeric));
            if (err > res.max_rel_error) {
                res.max_rel_error = err;
                res.input_index = static_cast<int>(ti);
                res.element_index = ei;
            }
        }
    }
    return res;
}

inline double grad_check(const DiffOp& op, const TensorList<double>& inputs, double eps,
                         std::uint64_t cotangent_seed = 0) {
    GradCheckResult r = grad_check_detail(op, inputs, eps, cotangent_seed);
    if (!r.finite) {
        throw NumericError("grad_check(" + op.name + "): non-finite gradient at input " +
                           std::to_string(r.input_index) + " element " +
                           std::to_string(r.element_index));
    }
    return r.max_rel_error;
}

}  // namespace clipnet
