#include <cmath>
#include <random>
#include <vector>

#include "clipnet/layers.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "oracle_suite.hpp"
#include "oracles.hpp"

using clipnet::Mode;
using clipnet::PoolKind;
using clipnet::Tensor;
using clipnet::TensorD;
using testutil::max_abs_diff;
using testutil::random_tensor;

TEST_SUITE("layers") {

TEST_CASE("conv2d with a channel-identity 1x1 kernel reproduces its input") {
    std::mt19937_64 rng(101);
    const TensorD x = random_tensor<double>({2, 3, 4, 5}, rng);
    clipnet::Conv2d<double> conv;
    conv.kernel = TensorD({3, 3, 1, 1});
    for (int c = 0; c < 3; ++c) conv.kernel.at4(c, c, 0, 0) = 1.0;
    CHECK(max_abs_diff(conv.forward(x), x) == 0.0);
}

TEST_CASE("conv2d with zero kernel and bias yields zeros") {
    std::mt19937_64 rng(102);
    const TensorD x = random_tensor<double>({2, 2, 5, 5}, rng);
    clipnet::Conv2d<double> conv;
    conv.kernel = TensorD({4, 2, 3, 3});
    conv.bias = TensorD({4});
    conv.stride = 1;
    conv.padding = 1;
    const TensorD y = conv.forward(x);
    CHECK(max_abs_diff(y, TensorD(y.shape())) == 0.0);
}

TEST_CASE("conv2d matches the nested-loop reference at the documented shape") {
    std::mt19937_64 rng(103);
    const TensorD x = random_tensor<double>({1, 2, 4, 4}, rng);
    clipnet::Conv2d<double> conv;
    conv.kernel = random_tensor<double>({2, 2, 3, 3}, rng);
    conv.bias = random_tensor<double>({2}, rng);
    conv.stride = 1;
    conv.padding = 1;
    CHECK(max_abs_diff(conv.forward(x), oracle::conv2d_ref(x, conv.kernel, conv.bias, 1, 1)) <=
          1e-12);
}

TEST_CASE("conv2d rejects channel mismatches and degenerate outputs") {
    std::mt19937_64 rng(104);
    clipnet::Conv2d<double> conv;
    conv.kernel = random_tensor<double>({2, 3, 3, 3}, rng);
    CHECK_THROWS_AS(conv.forward(random_tensor<double>({1, 2, 4, 4}, rng)), clipnet::ShapeError);
    clipnet::Conv2d<double> small;
    small.kernel = random_tensor<double>({1, 1, 3, 3}, rng);
    CHECK_THROWS_AS(small.forward(random_tensor<double>({1, 1, 2, 2}, rng)), clipnet::ShapeError);
}

TEST_CASE("batch norm train mode standardizes each channel") {
    std::mt19937_64 rng(105);
    TensorD x = random_tensor<double>({3, 2, 4, 4}, rng, -2.0, 5.0);
    auto bn = clipnet::BatchNorm<double>::identity(2);
    bn.epsilon = 1e-12;
    const TensorD y = bn.forward(x, Mode::train);
    const int m = 3 * 4 * 4;
    for (int c = 0; c < 2; ++c) {
        double mean = 0.0, var = 0.0;
        for (int n = 0; n < 3; ++n)
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) mean += y.at4(n, c, i, j);
        mean /= m;
        for (int n = 0; n < 3; ++n)
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) {
                    const double d = y.at4(n, c, i, j) - mean;
                    var += d * d;
                }
        var /= m;
        CHECK(std::abs(mean) <= 1e-6);
        CHECK(std::abs(var - 1.0) <= 1e-6);
    }
}

TEST_CASE("batch norm with zero gamma broadcasts beta") {
    std::mt19937_64 rng(106);
    auto bn = clipnet::BatchNorm<double>::identity(3);
    bn.gamma = TensorD({3});
    bn.beta = TensorD({3}, {0.3, -1.2, 4.5});
    const TensorD y = bn.forward(random_tensor<double>({2, 3, 2, 2}, rng), Mode::train);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j) CHECK(y.at4(n, c, i, j) == bn.beta[c]);
}

TEST_CASE("batch norm eval identity configuration passes input through") {
    std::mt19937_64 rng(107);
    const TensorD x = random_tensor<double>({2, 3, 3, 3}, rng);
    auto bn = clipnet::BatchNorm<double>::identity(3);
    bn.epsilon = 1e-12;
    CHECK(max_abs_diff(bn.forward(x, Mode::eval), x) <= 1e-9);
}

TEST_CASE("batch norm train mode requires at least two statistic elements") {
    auto bn = clipnet::BatchNorm<double>::identity(2);
    TensorD x({1, 2, 1, 1}, {0.5, -0.5});
    CHECK_THROWS_AS(bn.forward(x, Mode::train), clipnet::ShapeError);
    CHECK_NOTHROW(bn.forward(x, Mode::eval));
}

TEST_CASE("batch norm folds batch statistics into running estimates by momentum") {
    auto bn = clipnet::BatchNorm<double>::identity(1);
    TensorD x({1, 1, 1, 2}, {1.0, 3.0});
    bn.forward(x, Mode::train);
    // batch mean 2, biased variance 1, blended with momentum 0.1
    CHECK(std::abs(bn.running_mean[0] - 0.2) <= 1e-12);
    CHECK(std::abs(bn.running_var[0] - (0.9 * 1.0 + 0.1 * 1.0)) <= 1e-12);
    bn.forward(x, Mode::eval);
    CHECK(std::abs(bn.running_mean[0] - 0.2) <= 1e-12);  // eval never updates
}

TEST_CASE("pooling keeps constant inputs constant") {
    const TensorD x = TensorD::full({2, 3, 4, 4}, 0.7);
    for (PoolKind kind : {PoolKind::max, PoolKind::avg}) {
        const TensorD y = clipnet::pool2d(x, kind, 2, 2, 2);
        CHECK(max_abs_diff(y, TensorD::full(y.shape(), 0.7)) == 0.0);
    }
}

TEST_CASE("full-window average pooling equals global average pooling") {
    std::mt19937_64 rng(108);
    const TensorD x = random_tensor<double>({2, 3, 4, 5}, rng);
    const TensorD windowed = clipnet::pool2d(x, PoolKind::avg, 4, 5, 1);
    const TensorD global = clipnet::global_pool(x, PoolKind::avg);
    CHECK(max_abs_diff(windowed, global) <= 1e-15);
}

TEST_CASE("max pooling ties route the cotangent to the first element in row-major order") {
    const TensorD x = TensorD::full({1, 1, 2, 2}, 0.4);
    clipnet::Pool2dCache<double> cache;
    const TensorD y = clipnet::pool2d(x, PoolKind::max, 2, 2, 2, 0, &cache);
    CHECK(y.size() == 1);
    const TensorD gx = clipnet::pool2d_backward(TensorD({1, 1, 1, 1}, {1.0}), cache);
    CHECK(gx[0] == 1.0);
    CHECK(gx[1] == 0.0);
    CHECK(gx[2] == 0.0);
    CHECK(gx[3] == 0.0);
}

TEST_CASE("pooling rejects windows larger than the padded input") {
    const TensorD x = TensorD::full({1, 1, 2, 2}, 1.0);
    CHECK_THROWS_AS(clipnet::pool2d(x, PoolKind::max, 3, 3, 1), clipnet::ShapeError);
}

TEST_CASE("global pooling on constants and single pixels") {
    const TensorD c = TensorD::full({2, 3, 4, 4}, -1.25);
    for (PoolKind kind : {PoolKind::max, PoolKind::avg}) {
        const TensorD y = clipnet::global_pool(c, kind);
        CHECK(max_abs_diff(y, TensorD::full({2, 3, 1, 1}, -1.25)) == 0.0);
    }
    std::mt19937_64 rng(109);
    const TensorD px = random_tensor<double>({2, 5, 1, 1}, rng);
    for (PoolKind kind : {PoolKind::max, PoolKind::avg})
        CHECK(max_abs_diff(clipnet::global_pool(px, kind), px) == 0.0);
}

TEST_CASE("channel pooling with one channel is the identity") {
    std::mt19937_64 rng(110);
    const TensorD x = random_tensor<double>({2, 1, 3, 4}, rng);
    for (PoolKind kind : {PoolKind::max, PoolKind::avg})
        CHECK(max_abs_diff(clipnet::channel_pool(x, kind), x) == 0.0);
    // equal values across channels collapse to that value
    TensorD multi({1, 3, 2, 2});
    std::mt19937_64 rng2(111);
    const TensorD plane = random_tensor<double>({1, 1, 2, 2}, rng2);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) multi.at4(0, c, i, j) = plane.at4(0, 0, i, j);
    for (PoolKind kind : {PoolKind::max, PoolKind::avg})
        CHECK(max_abs_diff(clipnet::channel_pool(multi, kind), plane) <= 1e-15);
}

TEST_CASE("dense with identity weights is the identity and zero weights yield bias rows") {
    std::mt19937_64 rng(112);
    const TensorD x = random_tensor<double>({3, 4}, rng);
    clipnet::Dense<double> d;
    d.weight = TensorD({4, 4});
    for (int i = 0; i < 4; ++i) d.weight.at2(i, i) = 1.0;
    d.bias = TensorD({4});
    CHECK(max_abs_diff(d.forward(x), x) == 0.0);

    clipnet::Dense<double> zero;
    zero.weight = TensorD({2, 4});
    zero.bias = TensorD({2}, {0.5, -0.75});
    const TensorD y = zero.forward(x);
    for (int i = 0; i < 3; ++i) {
        CHECK(y.at2(i, 0) == 0.5);
        CHECK(y.at2(i, 1) == -0.75);
    }
}

TEST_CASE("cross entropy on uniform logits is ln 7") {
    const TensorD logits = TensorD::full({4, 7}, 0.3);
    const std::vector<int> labels{0, 3, 6, 2};
    const std::vector<std::uint8_t> mask{1, 1, 1, 1};
    const auto res = clipnet::softmax_cross_entropy(logits, labels, mask);
    CHECK(std::abs(res.loss - std::log(7.0)) <= 1e-12);
}

TEST_CASE("cross entropy vanishes when the correct logit dominates") {
    TensorD logits({2, 7});
    logits.at2(0, 4) = 30.0;
    logits.at2(1, 1) = 30.0;
    const auto res =
        clipnet::softmax_cross_entropy(logits, {4, 1}, std::vector<std::uint8_t>{1, 1});
    CHECK(res.loss <= 1e-9);
    CHECK(res.loss >= 0.0);
}

TEST_CASE("cross entropy matches the direct formula on random logits") {
    std::mt19937_64 rng(113);
    const TensorD logits = random_tensor<double>({6, 7}, rng, -3.0, 3.0);
    const std::vector<int> labels{3, 1, 6, 0, 4, 2};
    const std::vector<std::uint8_t> mask{1, 1, 0, 1, 1, 0};
    const auto res = clipnet::softmax_cross_entropy(logits, labels, mask);
    CHECK(std::abs(res.loss - oracle::softmax_ce_ref(logits, labels, mask)) <= 1e-10);
}

TEST_CASE("cross entropy gradient rows are scaled softmax minus one-hot") {
    std::mt19937_64 rng(114);
    const TensorD logits = random_tensor<double>({5, 7}, rng, -2.0, 2.0);
    const std::vector<int> labels{2, 0, 5, 1, 6};
    const std::vector<std::uint8_t> mask{1, 0, 1, 1, 0};
    const auto res = clipnet::softmax_cross_entropy(logits, labels, mask);
    const double inv_active = 1.0 / 3.0;
    for (int i = 0; i < 5; ++i) {
        double row_sum = 0.0;
        for (int j = 0; j < 7; ++j) row_sum += res.grad.at2(i, j);
        if (!mask[static_cast<std::size_t>(i)]) {
            for (int j = 0; j < 7; ++j) CHECK(res.grad.at2(i, j) == 0.0);
            continue;
        }
        CHECK(std::abs(row_sum) <= 1e-10);
        double denom = 0.0;
        for (int j = 0; j < 7; ++j) denom += std::exp(logits.at2(i, j));
        for (int j = 0; j < 7; ++j) {
            const double p = std::exp(logits.at2(i, j)) / denom;
            const double expect =
                (p - (j == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0)) * inv_active;
            CHECK(std::abs(res.grad.at2(i, j) - expect) <= 1e-12);
        }
    }
}

TEST_CASE("cross entropy rejects empty masks and masked out-of-range labels") {
    const TensorD logits = TensorD::full({2, 7}, 0.1);
    CHECK_THROWS_AS(
        clipnet::softmax_cross_entropy(logits, {0, 0}, std::vector<std::uint8_t>{0, 0}),
        clipnet::DataError);
    CHECK_THROWS_AS(
        clipnet::softmax_cross_entropy(logits, {7, 0}, std::vector<std::uint8_t>{1, 1}),
        clipnet::DataError);
    CHECK_THROWS_AS(
        clipnet::softmax_cross_entropy(logits, {-1, 0}, std::vector<std::uint8_t>{1, 1}),
        clipnet::DataError);
    // labels on masked-out rows are never inspected
    CHECK_NOTHROW(
        clipnet::softmax_cross_entropy(logits, {9, 0}, std::vector<std::uint8_t>{0, 1}));
}

TEST_CASE("lstm cell with zero parameters halves the cell state") {
    // every gate sits at sigmoid(0) = 0.5 and the candidate at tanh(0) = 0,
    // so c = 0.5*c_prev and h = 0.5*tanh(c)
    std::mt19937_64 rng(115);
    const auto p = clipnet::LstmCellParams<double>::zeros(3, 4);
    const TensorD x = random_tensor<double>({3}, rng);
    const TensorD h0 = random_tensor<double>({4}, rng);

    const auto rest = clipnet::lstm_cell(x, h0, TensorD({4}), p);
    for (int k = 0; k < 4; ++k) {
        CHECK(rest.h[k] == 0.0);  // zero cell state stays zero
        CHECK(rest.c[k] == 0.0);
    }

    const TensorD c0 = random_tensor<double>({4}, rng);
    const auto st = clipnet::lstm_cell(x, h0, c0, p);
    for (int k = 0; k < 4; ++k) {
        CHECK(std::abs(st.c[k] - 0.5 * c0[k]) <= 1e-15);
        CHECK(std::abs(st.h[k] - 0.5 * std::tanh(0.5 * c0[k])) <= 1e-15);
    }
}

TEST_CASE("lstm cell saturates closed with strongly negative biases") {
    std::mt19937_64 rng(116);
    auto p = clipnet::LstmCellParams<double>::zeros(3, 4);
    for (clipnet::LstmGate<double>* g : {&p.in, &p.forget, &p.out, &p.cand})
        g->b = TensorD::full({4}, -30.0);
    const auto st = clipnet::lstm_cell(random_tensor<double>({3}, rng),
                                       random_tensor<double>({4}, rng), TensorD({4}), p);
    for (int k = 0; k < 4; ++k) CHECK(std::abs(st.h[k]) <= 1e-9);
}

TEST_CASE("lstm cell matches the scalar recurrence") {
    std::mt19937_64 rng(117);
    auto p = clipnet::LstmCellParams<double>::zeros(3, 2);
    for (clipnet::LstmGate<double>* g : {&p.in, &p.forget, &p.out, &p.cand}) {
        g->w = random_tensor<double>({2, 3}, rng);
        g->u = random_tensor<double>({2, 2}, rng);
        g->b = random_tensor<double>({2}, rng);
    }
    const TensorD x = random_tensor<double>({3}, rng);
    const TensorD h0 = random_tensor<double>({2}, rng);
    const TensorD c0 = random_tensor<double>({2}, rng);
    const auto st = clipnet::lstm_cell(x, h0, c0, p);
    oracle::LstmRefState prev{std::vector<double>(h0.values()), std::vector<double>(c0.values())};
    const auto ref = oracle::lstm_cell_ref(std::vector<double>(x.values()), prev, p.in.w, p.in.u,
                                           p.in.b, p.forget.w, p.forget.u, p.forget.b, p.out.w,
                                           p.out.u, p.out.b, p.cand.w, p.cand.u, p.cand.b);
    for (int k = 0; k < 2; ++k) {
        CHECK(std::abs(st.h[k] - ref.h[static_cast<std::size_t>(k)]) <= 1e-12);
        CHECK(std::abs(st.c[k] - ref.c[static_cast<std::size_t>(k)]) <= 1e-12);
    }
}

TEST_CASE("lstm cell rejects mismatched dimensions") {
    const auto p = clipnet::LstmCellParams<double>::zeros(3, 4);
    CHECK_THROWS_AS(clipnet::lstm_cell(TensorD({2}), TensorD({4}), TensorD({4}), p),
                    clipnet::ShapeError);
    CHECK_THROWS_AS(clipnet::lstm_cell(TensorD({3}), TensorD({5}), TensorD({4}), p),
                    clipnet::ShapeError);
}

TEST_CASE("library kernels match brute-force references on twenty random instances") {
    for (const auto& outcome : oraclesuite::run_oracle_suite(20)) {
        INFO(outcome.name, " worst diff ", outcome.worst);
        CHECK(outcome.pass());
    }
}

}  // TEST_SUITE
