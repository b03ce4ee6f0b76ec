#include <doctest.h>

#include <sstream>

#include "clipnet/tensor.hpp"
#include "helpers.hpp"

using namespace clipnet;

TEST_SUITE("tensor") {

TEST_CASE("construction and indexing") {
    TensorD t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0);
    t.at2(1, 2) = 5.0;
    CHECK(t[5] == 5.0);

    TensorD u({2, 2}, {1, 2, 3, 4});
    CHECK(u.at2(1, 0) == 3.0);
    CHECK_THROWS_AS(TensorD({2, 2}, {1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(TensorD({-1, 2}), ShapeError);

    TensorD z({0});
    CHECK(z.empty());
    CHECK(TensorD::full({2}, 3.5)[1] == 3.5);
}

TEST_CASE("4d indexing is row-major") {
    TensorD t({2, 3, 4, 5});
    t.at4(1, 2, 3, 4) = 9.0;
    CHECK(t[t.size() - 1] == 9.0);
    CHECK(t.idx4(0, 0, 0, 1) == 1);
    CHECK(t.idx4(0, 0, 1, 0) == 5);
    CHECK(t.idx4(0, 1, 0, 0) == 20);
    CHECK(t.idx4(1, 0, 0, 0) == 60);
}

TEST_CASE("elementwise add and mul on equal shapes") {
    TensorD a({2, 2}, {1, 2, 3, 4});
    TensorD b({2, 2}, {10, 20, 30, 40});
    const TensorD s = add(a, b);
    const TensorD p = mul(a, b);
    CHECK(s[3] == 44.0);
    CHECK(p[2] == 90.0);
    CHECK_THROWS_AS(add(a, TensorD({3})), ShapeError);
}

TEST_CASE("channel vector broadcast") {
    TensorD big({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    TensorD vec({1, 2, 1, 1}, {2, 10});
    const TensorD p = mul(big, vec);
    CHECK(p[0] == 2.0);
    CHECK(p[3] == 8.0);
    CHECK(p[4] == 50.0);
    CHECK(p[7] == 80.0);
    const TensorD p2 = mul(vec, big);  // symmetric operand order
    CHECK(testutil::max_abs_diff(p, p2) == 0.0);
}

TEST_CASE("spatial map broadcast") {
    TensorD big({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    TensorD map({1, 1, 2, 2}, {1, 2, 3, 4});
    const TensorD p = mul(big, map);
    CHECK(p[0] == 1.0);
    CHECK(p[3] == 16.0);
    CHECK(p[4] == 5.0);
    CHECK(p[7] == 32.0);
    const TensorD s = add(map, big);
    CHECK(s[4] == 6.0);
}

TEST_CASE("unsupported broadcasts are rejected") {
    TensorD a({2, 3, 4, 4});
    CHECK_THROWS_AS(mul(a, TensorD({1, 3, 1, 1})), ShapeError);  // batch mismatch
    CHECK_THROWS_AS(mul(a, TensorD({2, 3, 4, 1})), ShapeError);  // row vector form
    CHECK_THROWS_AS(mul(a, TensorD({2, 2, 1, 1})), ShapeError);  // channel mismatch
}

TEST_CASE("unary elementwise ops") {
    TensorD x({4}, {-2, -0.5, 0, 3});
    const TensorD r = relu(x);
    CHECK(r[0] == 0.0);
    CHECK(r[3] == 3.0);
    const TensorD s = sigmoid(x);
    CHECK(s[2] == doctest::Approx(0.5));
    CHECK(s[0] == doctest::Approx(1.0 / (1.0 + std::exp(2.0))));
    const TensorD t = tanh_op(x);
    CHECK(t[3] == doctest::Approx(std::tanh(3.0)));

    // extreme inputs stay finite
    TensorD big({2}, {750.0, -750.0});
    const TensorD sb = sigmoid(big);
    CHECK(sb[0] == 1.0);
    CHECK(sb[1] == 0.0);
    CHECK(all_finite(sb));
}

TEST_CASE("elementwise dispatcher arity") {
    TensorD a({2}, {1, 2});
    TensorD b({2}, {3, 4});
    CHECK(elementwise(EwOp::add, a, &b)[1] == 6.0);
    CHECK(elementwise(EwOp::relu, a)[0] == 1.0);
    CHECK_THROWS_AS(elementwise(EwOp::add, a), ShapeError);
    CHECK_THROWS_AS(elementwise(EwOp::relu, a, &b), ShapeError);
}

TEST_CASE("reduce_to_shape sums over broadcast dims") {
    TensorD g({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    const TensorD rc = reduce_to_shape(g, {1, 2, 1, 1});
    CHECK(rc[0] == 10.0);
    CHECK(rc[1] == 26.0);
    const TensorD rs = reduce_to_shape(g, {1, 1, 2, 2});
    CHECK(rs[0] == 6.0);
    CHECK(rs[3] == 12.0);
    const TensorD same = reduce_to_shape(g, g.shape());
    CHECK(testutil::max_abs_diff(g, same) == 0.0);
    CHECK_THROWS_AS(reduce_to_shape(g, {2, 2, 1, 1}), ShapeError);
}

TEST_CASE("broadcast mul backward matches finite differences through reduce") {
    // d/da sum(mul(a_broadcast, b)) = reduce(b)
    std::mt19937_64 rng(77);
    TensorD big = testutil::random_tensor<double>({2, 3, 2, 2}, rng);
    TensorD vec = testutil::random_tensor<double>({2, 3, 1, 1}, rng);
    const TensorD ones = TensorD::full(big.shape(), 1.0);
    const TensorD gvec = reduce_to_shape(mul(ones, big), vec.shape());
    double expect = 0;
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c) {
            double s = 0;
            for (int h = 0; h < 2; ++h)
                for (int w = 0; w < 2; ++w) s += big.at4(n, c, h, w);
            expect += std::abs(gvec[static_cast<std::size_t>(n) * 3 + c] - s);
        }
    CHECK(expect < 1e-12);
}

TEST_CASE("dump and parse round-trip at full precision") {
    std::mt19937_64 rng(5);
    TensorD t = testutil::random_tensor<double>({3, 2}, rng, -100.0, 100.0);
    t[0] = 1.0 / 3.0;
    std::ostringstream os;
    dump_tensor(t, os);
    std::istringstream is(os.str());
    const TensorD back = parse_tensor<double>(is);
    CHECK(back.shape() == t.shape());
    CHECK(testutil::max_abs_diff(t, back) == 0.0);
}

TEST_CASE("parse rejects malformed dumps") {
    std::istringstream no_header("1.0\n2.0\n");
    CHECK_THROWS_AS(parse_tensor<double>(no_header), DataError);
    std::istringstream truncated("shape: 2 2\n1.0\n2.0\n");
    CHECK_THROWS_AS(parse_tensor<double>(truncated), DataError);
}

TEST_CASE("cast between precisions") {
    TensorD t({2}, {1.5, -2.25});
    const TensorF f = t.cast<float>();
    CHECK(f[0] == 1.5f);
    const TensorD back = f.cast<double>();
    CHECK(back[1] == -2.25);
}

}  // TEST_SUITE
