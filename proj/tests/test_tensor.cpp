#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dit/errors.hpp"
#include "dit/tensor.hpp"
#include "test_util.hpp"

using namespace dit;
using dit_test::grad_check;
using dit_test::max_abs_diff;
using dit_test::random_tensor;

TEST_CASE("tensor construction invariants") {
    Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.at({1, 2}) == 6);
    CHECK_THROWS_AS(Tensor::zeros({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
    CHECK(Tensor::scalar(3.5).value() == 3.5);
    CHECK(Tensor::scalar(1.0).numel() == 1);
}

TEST_CASE("matmul identity and projector") {
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    CHECK(dit_test::bitwise_equal(matmul(eye, a), a));

    Tensor proj = Tensor::from_data({2, 2}, {1, 0, 0, 0});
    Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
    Tensor r = matmul(proj, b);
    CHECK(r.at({0, 0}) == 5);
    CHECK(r.at({0, 1}) == 6);
    CHECK(r.at({1, 0}) == 0);
    CHECK(r.at({1, 1}) == 0);
}

TEST_CASE("matmul shape errors name both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 3});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient vs finite differences on 3x4 * 4x2") {
    Rng rng(11);
    Tensor a = random_tensor(rng, {3, 4}, true);
    Tensor b = random_tensor(rng, {4, 2}, true);
    const double err = grad_check([&] { return sum(matmul(a, b)); }, {a, b});
    CHECK(err < 1e-6);
}

TEST_CASE("batched matmul gradient") {
    Rng rng(12);
    Tensor a = random_tensor(rng, {2, 3, 4}, true);
    Tensor b = random_tensor(rng, {2, 4, 2}, true);
    const double err = grad_check([&] { return mean(mul(matmul(a, b), matmul(a, b))); }, {a, b});
    CHECK(err < 1e-5);
}

TEST_CASE("layer_norm zero-variance row maps to zeros") {
    Tensor x = Tensor::from_data({4}, {5, 5, 5, 5});
    Tensor gain = Tensor::full({4}, 1.0);
    Tensor bias = Tensor::zeros({4});
    Tensor y = layer_norm(x, gain, bias, 1e-5);
    for (std::size_t i = 0; i < 4; ++i) CHECK(y.data()[i] == doctest::Approx(0.0));
}

TEST_CASE("layer_norm of already-normalized row") {
    Tensor x = Tensor::from_data({2}, {1, -1});
    Tensor y = layer_norm(x, Tensor::full({2}, 1.0), Tensor::zeros({2}), 1e-12);
    CHECK(y.at({0}) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(y.at({1}) == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("layer_norm gradient vs finite differences on 2x8") {
    Rng rng(13);
    Tensor x = random_tensor(rng, {2, 8}, true);
    Tensor gain = random_tensor(rng, {8}, true, 0.5, 1.5);
    Tensor bias = random_tensor(rng, {8}, true);
    const double err = grad_check(
        [&] {
            Tensor y = layer_norm(x, gain, bias, 1e-5);
            return mean(mul(y, y));
        },
        {x, gain, bias});
    CHECK(err < 1e-5);
}

TEST_CASE("softmax symmetry, stability, normalization") {
    Tensor y = softmax(Tensor::from_data({2}, {0, 0}));
    CHECK(y.at({0}) == doctest::Approx(0.5));
    CHECK(y.at({1}) == doctest::Approx(0.5));

    Tensor big = softmax(Tensor::from_data({2}, {1000, 0}));
    CHECK(std::fabs(big.at({0}) - 1.0) < 1e-12);
    CHECK(std::fabs(big.at({1})) < 1e-12);

    Rng rng(14);
    Tensor x = random_tensor(rng, {5, 7}, false, -3, 3);
    Tensor s = softmax(x);
    for (std::size_t r = 0; r < 5; ++r) {
        double row = 0;
        for (std::size_t i = 0; i < 7; ++i) row += s.at({r, i});
        CHECK(std::fabs(row - 1.0) < 1e-12);
    }
    // invariance to adding a constant per row
    Tensor shifted = softmax(add_scalar(x, 17.5));
    CHECK(max_abs_diff(s, shifted) < 1e-12);
}

TEST_CASE("softmax gradient vs finite differences") {
    Rng rng(15);
    Tensor x = random_tensor(rng, {6}, true, -2, 2);
    Tensor w = random_tensor(rng, {6}, false);
    const double err = grad_check([&] { return sum(mul(softmax(x), w)); }, {x});
    CHECK(err < 1e-5);
}

TEST_CASE("gelu at zero and elementwise examples") {
    CHECK(gelu(Tensor::scalar(0.0)).value() == 0.0);
    CHECK(mean(Tensor::from_data({2}, {2, 4})).value() == doctest::Approx(3.0));
}

TEST_CASE("finite-difference suite over differentiable ops") {
    Rng rng(16);
    // points kept away from |x| ~ 0 and clamp edges so subgradients are clean
    auto check = [&](const char* name, auto&& fn, std::vector<Tensor> leaves) {
        const double err = grad_check(fn, leaves);
        INFO(name);
        CHECK(err < 1e-5);
    };

    Tensor a = random_tensor(rng, {3, 4}, true, 0.2, 1.0);
    Tensor b = random_tensor(rng, {3, 4}, true, 0.2, 1.0);
    Tensor v = random_tensor(rng, {4}, true, 0.2, 1.0);
    check("add", [&] { return mean(mul(add(a, b), add(a, b))); }, {a, b});
    check("add bcast", [&] { return mean(mul(add(a, v), add(a, v))); }, {a, v});
    check("sub", [&] { return mean(mul(sub(a, b), sub(a, b))); }, {a, b});
    check("sub bcast flipped", [&] { return mean(mul(sub(v, a), sub(v, a))); }, {a, v});
    check("mul", [&] { return mean(mul(a, b)); }, {a, b});
    check("mul bcast", [&] { return mean(mul(a, v)); }, {a, v});
    check("scale", [&] { return mean(scale(a, -2.5)); }, {a});
    check("add_scalar", [&] { return mean(mul(add_scalar(a, 3.0), a)); }, {a});
    check("gelu", [&] { return mean(gelu(a)); }, {a});
    check("abs", [&] { return mean(dit::abs(sub(a, b))); }, {a, b});
    check("clamp", [&] { return mean(clamp(a, -0.1, 2.0)); }, {a});
    check("linear", [&] {
        Tensor w = reshape(v, {4, 1});
        return mean(linear(a, w));
    }, {a, v});
    check("reshape", [&] { return mean(mul(reshape(a, {4, 3}), reshape(a, {4, 3}))); }, {a});
    check("transpose", [&] { return mean(mul(transpose(a, 0, 1), transpose(b, 0, 1))); }, {a, b});
    check("concat+slice", [&] {
        Tensor c = concat({a, b}, 1);
        return mean(mul(slice(c, 1, 2, 4), slice(c, 1, 1, 4)));
    }, {a, b});
    check("stack", [&] { return mean(mul(stack({a, b}), stack({b, a}))); }, {a, b});
    check("gather_rows", [&] { return mean(gather_rows(a, {2, 0, 2})); }, {a});
    check("layer_norm_raw", [&] {
        Tensor y = layer_norm_raw(a, 1e-5);
        return mean(mul(y, y));
    }, {a});
    check("l2_normalize", [&] { return mean(mul(l2_normalize(a, 1e-20), b)); }, {a});
    check("sum_axis", [&] { return mean(mul(sum_axis(a, 0), v)); }, {a, v});
    check("mean_axis", [&] { return mean(mul(mean_axis(a, 1), mean_axis(b, 1))); }, {a, b});

    Tensor x3 = random_tensor(rng, {2, 3, 4}, true, 0.2, 1.0);
    Tensor s2 = random_tensor(rng, {2, 4}, true, 0.2, 1.0);
    check("scale_tokens", [&] { return mean(mul(scale_tokens(x3, s2), x3)); }, {x3, s2});
    check("shift_tokens", [&] { return mean(mul(shift_tokens(x3, s2), x3)); }, {x3, s2});
}

TEST_CASE("composite two-layer model matches finite differences") {
    Rng rng(17);
    Tensor x = random_tensor(rng, {4, 6}, false);
    Tensor w1 = random_tensor(rng, {6, 5}, true, -0.5, 0.5);
    Tensor b1 = random_tensor(rng, {5}, true, -0.1, 0.1);
    Tensor w2 = random_tensor(rng, {5, 3}, true, -0.5, 0.5);
    Tensor b2 = random_tensor(rng, {3}, true, -0.1, 0.1);
    Tensor target = random_tensor(rng, {4, 3}, false);
    const double err = grad_check(
        [&] {
            Tensor h = gelu(linear(x, w1, b1));
            Tensor y = softmax(linear(h, w2, b2));
            Tensor d = sub(y, target);
            return mean(mul(d, d));
        },
        {w1, b1, w2, b2}, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("backward populates leaf gradients") {
    Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
    {
        Tape tape;
        backward(sum(x));
    }
    Tensor g = x.grad();
    for (std::size_t i = 0; i < 4; ++i) CHECK(g.data()[i] == 1.0);

    Tensor y = Tensor::from_data({3}, {1, 2, 3}, true);
    {
        Tape tape;
        backward(sum(mul(y, y)));
    }
    CHECK(y.grad().at({0}) == doctest::Approx(2.0));
    CHECK(y.grad().at({1}) == doctest::Approx(4.0));
    CHECK(y.grad().at({2}) == doctest::Approx(6.0));
}

TEST_CASE("backward rejects non-scalar loss and missing tape") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    {
        Tape tape;
        Tensor y = mul(x, x);
        CHECK_THROWS_AS(backward(y), ContractError);
    }
    CHECK_THROWS_AS(backward(Tensor::scalar(1.0, true)), ContractError);
}

TEST_CASE("gradient accumulates across shared-leaf paths") {
    Rng rng(18);
    Tensor x = random_tensor(rng, {3}, true);

    // combined pass
    {
        Tape tape;
        backward(add(sum(mul(x, x)), mean(gelu(x))));
    }
    Tensor combined = x.grad();
    x.zero_grad();

    // per-path passes
    {
        Tape tape;
        backward(sum(mul(x, x)));
    }
    Tensor path1 = x.grad();
    x.zero_grad();
    {
        Tape tape;
        backward(mean(gelu(x)));
    }
    Tensor path2 = x.grad();

    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(combined.data()[i] ==
              doctest::Approx(path1.data()[i] + path2.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("rng determinism and stream independence") {
    Rng a(123);
    Rng b(123);
    Tensor ta = randn(a, {16});
    Tensor tb = randn(b, {16});
    CHECK(dit_test::bitwise_equal(ta, tb));

    // split streams do not depend on parent consumption
    Rng p1(9);
    Rng c1 = p1.split("child");
    Rng p2(9);
    (void)p2.uniform();
    (void)p2.uniform();
    Rng c2 = p2.split("child");
    for (int i = 0; i < 8; ++i) CHECK(c1.next_u64() == c2.next_u64());

    // distinct labels give distinct streams
    Rng base(5);
    CHECK(base.split("x").next_u64() != base.split("y").next_u64());
}

TEST_CASE("randn moments over 1e6 samples") {
    Rng rng(99);
    double m = 0, m2 = 0;
    const std::size_t n = 1000000;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = rng.normal();
        m += v;
        m2 += v * v;
    }
    m /= n;
    m2 /= n;
    CHECK(std::fabs(m) < 0.01);
    CHECK(std::fabs(m2 - m * m - 1.0) < 0.01);
}

TEST_CASE("uniform mean over 1e6 samples") {
    Rng rng(100);
    double m = 0;
    const std::size_t n = 1000000;
    for (std::size_t i = 0; i < n; ++i) m += rng.uniform();
    m /= n;
    CHECK(std::fabs(m - 0.5) < 0.002);
}

TEST_CASE("l2_normalize zero-row contract") {
    CHECK_THROWS_AS(l2_normalize(Tensor::zeros({3}), 0.0), ContractError);
}

TEST_CASE("no recording outside a tape") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    Tensor y = mul(x, x);  // no tape active
    CHECK_FALSE(y.requires_grad());
}
