#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "clipnet/errors.hpp"

namespace clipnet {

// Dense row-major tensor. Instantiated with double for verification
// suites and float for training runs.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(checked_count(shape_), T(0));
    }

    Tensor(std::vector<int> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (checked_count(shape_) != data_.size()) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string(shape_));
        }
    }

    static Tensor full(std::vector<int> shape, T value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // Rank-specific accessors for the layouts the pipeline actually uses.
    T& at2(int i, int j) { return data_[idx2(i, j)]; }
    const T& at2(int i, int j) const { return data_[idx2(i, j)]; }
    T& at4(int n, int c, int h, int w) { return data_[idx4(n, c, h, w)]; }
    const T& at4(int n, int c, int h, int w) const { return data_[idx4(n, c, h, w)]; }

    std::size_t idx2(int i, int j) const {
        return static_cast<std::size_t>(i) * static_cast<std::size_t>(shape_[1]) +
               static_cast<std::size_t>(j);
    }
    std::size_t idx4(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) *
                   static_cast<std::size_t>(shape_[3]) +
               w;
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(out));
    }

    static std::string shape_string(const std::vector<int>& shape) {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
    std::string shape_string() const { return shape_string(shape_); }

private:
    static std::size_t checked_count(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) {
            if (d < 0) throw ShapeError("negative extent in shape " + shape_string(shape));
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::vector<int> shape_;
    std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

enum class EwOp { add, mul, relu, sigmoid, tanh };

inline const char* ew_op_name(EwOp op) {
    switch (op) {
        case EwOp::add: return "add";
        case EwOp::mul: return "mul";
        case EwOp::relu: return "relu";
        case EwOp::sigmoid: return "sigmoid";
        case EwOp::tanh: return "tanh";
    }
    return "?";
}

namespace detail {

// Supported broadcast forms: [N,C,1,1] against [N,C,H,W] and
// [N,1,H,W] against [N,C,H,W]. Everything else must match exactly.
enum class Broadcast { none, channel_vec, spatial_map };

inline bool is_channel_vec_of(const std::vector<int>& small, const std::vector<int>& big) {
    return small.size() == 4 && big.size() == 4 && small[0] == big[0] &&
           small[1] == big[1] && small[2] == 1 && small[3] == 1 &&
           (big[2] != 1 || big[3] != 1);
}

inline bool is_spatial_map_of(const std::vector<int>& small, const std::vector<int>& big) {
    return small.size() == 4 && big.size() == 4 && small[0] == big[0] && small[1] == 1 &&
           small[2] == big[2] && small[3] == big[3] && big[1] != 1;
}

template <typename T>
[[noreturn]] void throw_shape_mismatch(const char* opname, const Tensor<T>& a, const Tensor<T>& b) {
    throw ShapeError(std::string(opname) + ": incompatible shapes " + a.shape_string() +
                     " and " + b.shape_string());
}

// f(big_value, small_value) evaluated at the broadcast target shape.
template <typename T, typename F>
Tensor<T> binary_broadcast(const Tensor<T>& a, const Tensor<T>& b, F f, const char* opname,
                           bool commutative) {
    if (a.same_shape(b)) {
        Tensor<T> out(a.shape());
        const T* pa = a.data();
        const T* pb = b.data();
        T* po = out.data();
        for (std::size_t i = 0; i < out.size(); ++i) po[i] = f(pa[i], pb[i]);
        return out;
    }
    const Tensor<T>* big = nullptr;
    const Tensor<T>* small = nullptr;
    bool swapped = false;
    Broadcast mode = Broadcast::none;
    if (is_channel_vec_of(b.shape(), a.shape())) {
        big = &a; small = &b; mode = Broadcast::channel_vec;
    } else if (is_channel_vec_of(a.shape(), b.shape())) {
        big = &b; small = &a; swapped = true; mode = Broadcast::channel_vec;
    } else if (is_spatial_map_of(b.shape(), a.shape())) {
        big = &a; small = &b; mode = Broadcast::spatial_map;
    } else if (is_spatial_map_of(a.shape(), b.shape())) {
        big = &b; small = &a; swapped = true; mode = Broadcast::spatial_map;
    } else {
        throw_shape_mismatch(opname, a, b);
    }
    if (swapped && !commutative) throw_shape_mismatch(opname, a, b);

    const int n = big->dim(0), c = big->dim(1), h = big->dim(2), w = big->dim(3);
    Tensor<T> out(big->shape());
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int in = 0; in < n; ++in) {
        for (int ic = 0; ic < c; ++ic) {
            const std::size_t base = (static_cast<std::size_t>(in) * c + ic) * plane;
            if (mode == Broadcast::channel_vec) {
                const T s = (*small)[static_cast<std::size_t>(in) * c + ic];
                for (std::size_t p = 0; p < plane; ++p)
                    out[base + p] = f((*big)[base + p], s);
            } else {
                const std::size_t sbase = static_cast<std::size_t>(in) * plane;
                for (std::size_t p = 0; p < plane; ++p)
                    out[base + p] = f((*big)[base + p], (*small)[sbase + p]);
            }
        }
    }
    return out;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_broadcast(a, b, [](T x, T y) { return x + y; }, "add", true);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_broadcast(a, b, [](T x, T y) { return x * y; }, "mul", true);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
    return out;
}

template <typename T>
T sigmoid_scalar(T x) {
    if (x >= T(0)) {
        return T(1) / (T(1) + std::exp(-x));
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid_scalar(x[i]);
    return out;
}

template <typename T>
Tensor<T> tanh_op(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
    return out;
}

template <typename T>
Tensor<T> elementwise(EwOp op, const Tensor<T>& a, const Tensor<T>* b = nullptr) {
    const bool binary = (op == EwOp::add || op == EwOp::mul);
    if (binary && b == nullptr)
        throw ShapeError(std::string(ew_op_name(op)) + ": missing second operand");
    if (!binary && b != nullptr)
        throw ShapeError(std::string(ew_op_name(op)) + ": unexpected second operand");
    switch (op) {
        case EwOp::add: return add(a, *b);
        case EwOp::mul: return mul(a, *b);
        case EwOp::relu: return relu(a);
        case EwOp::sigmoid: return sigmoid(a);
        case EwOp::tanh: return tanh_op(a);
    }
    throw ShapeError("elementwise: unknown op");
}

// Sum a cotangent at the broadcast target shape back down to `shape`
// (identity when shapes already agree).
template <typename T>
Tensor<T> reduce_to_shape(const Tensor<T>& g, const std::vector<int>& shape) {
    if (g.shape() == shape) return g;
    Tensor<T> out(shape);
    if (detail::is_channel_vec_of(shape, g.shape())) {
        const int n = g.dim(0), c = g.dim(1), h = g.dim(2), w = g.dim(3);
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        for (int in = 0; in < n; ++in)
            for (int ic = 0; ic < c; ++ic) {
                const std::size_t base = (static_cast<std::size_t>(in) * c + ic) * plane;
                T s = T(0);
                for (std::size_t p = 0; p < plane; ++p) s += g[base + p];
                out[static_cast<std::size_t>(in) * c + ic] = s;
            }
        return out;
    }
    if (detail::is_spatial_map_of(shape, g.shape())) {
        const int n = g.dim(0), c = g.dim(1), h = g.dim(2), w = g.dim(3);
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        for (int in = 0; in < n; ++in) {
            const std::size_t obase = static_cast<std::size_t>(in) * plane;
            for (int ic = 0; ic < c; ++ic) {
                const std::size_t base = (static_cast<std::size_t>(in) * c + ic) * plane;
                for (std::size_t p = 0; p < plane; ++p) out[obase + p] += g[base + p];
            }
        }
        return out;
    }
    throw ShapeError("reduce_to_shape: " + g.shape_string() + " does not broadcast from " +
                     Tensor<T>::shape_string(shape));
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (std::size_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(t[i])) return false;
    return true;
}

// Golden-test dump format: "shape: d0 d1 ..." then one value per line,
// 17 significant digits.
template <typename T>
void dump_tensor(const Tensor<T>& t, std::ostream& os) {
    os << "shape:";
    for (int d : t.shape()) os << ' ' << d;
    os << '\n';
    char buf[64];
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", static_cast<double>(t[i]));
        os << buf << '\n';
    }
}

template <typename T>
Tensor<T> parse_tensor(std::istream& is) {
    std::string header;
    if (!std::getline(is, header) || header.rfind("shape:", 0) != 0)
        throw DataError("tensor dump: missing 'shape:' header");
    std::istringstream hs(header.substr(6));
    std::vector<int> shape;
    int d = 0;
    while (hs >> d) shape.push_back(d);
    Tensor<T> t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
        double v = 0;
        if (!(is >> v)) throw DataError("tensor dump: truncated at value " + std::to_string(i));
        t[i] = static_cast<T>(v);
    }
    return t;
}

}  // namespace clipnet
