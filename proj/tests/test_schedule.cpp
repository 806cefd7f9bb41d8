#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dit/errors.hpp"
#include "dit/schedule.hpp"
#include "test_util.hpp"

using namespace dit;
using dit_test::max_abs_diff;
using dit_test::random_tensor;

TEST_CASE("linear schedule hand-computed values") {
    NoiseSchedule s = make_linear_schedule(2, 0.1, 0.3);
    CHECK(s.beta[0] == doctest::Approx(0.1));
    CHECK(s.beta[1] == doctest::Approx(0.3));
    CHECK(s.alpha_bar[0] == doctest::Approx(0.9));
    CHECK(s.alpha_bar[1] == doctest::Approx(0.63));  // 0.9 * 0.7
    CHECK(s.alpha_bar[0] == doctest::Approx(1.0 - s.beta[0]));
}

TEST_CASE("linear schedule parameter errors") {
    CHECK_THROWS_AS(make_linear_schedule(1, 0.1, 0.2), ParameterError);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.2), ParameterError);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.3, 0.2), ParameterError);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.1, 1.0), ParameterError);
}

TEST_CASE("default schedule tables against an independent product") {
    NoiseSchedule s = make_linear_schedule(kDefaultT, kDefaultBetaStart, kDefaultBetaEnd);
    // independent recomputation of the cumulative product
    double prod = 1.0;
    for (std::size_t t = 0; t < s.T; ++t) {
        const double beta =
            kDefaultBetaStart + (kDefaultBetaEnd - kDefaultBetaStart) *
                                    (static_cast<double>(t) / static_cast<double>(s.T - 1));
        prod *= 1.0 - beta;
        CHECK(std::fabs(s.alpha_bar[t] - prod) < 1e-12);
        CHECK(std::fabs(s.sqrt_alpha_bar[t] - std::sqrt(s.alpha_bar[t])) < 1e-12);
        CHECK(std::fabs(s.sqrt_one_minus_alpha_bar[t] - std::sqrt(1.0 - s.alpha_bar[t])) < 1e-12);
        if (t > 0) {
            CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
            CHECK(s.beta[t] >= s.beta[t - 1]);
        }
        CHECK(s.beta[t] > 0.0);
        CHECK(s.beta[t] < 1.0);
    }
    CHECK(s.alpha_bar[s.T - 1] < 0.15);
}

TEST_CASE("q_sample degenerate cases") {
    NoiseSchedule s = make_linear_schedule(10, 0.05, 0.2);
    Rng rng(3);
    Tensor x0 = random_tensor(rng, {2, 3});
    Tensor eps = random_tensor(rng, {2, 3});
    const std::size_t t = 4;

    Tensor zero = Tensor::zeros({2, 3});
    CHECK(max_abs_diff(q_sample(zero, t, eps, s), scale(eps, s.sqrt_one_minus_alpha_bar[t])) == 0);
    CHECK(max_abs_diff(q_sample(x0, t, zero, s), scale(x0, s.sqrt_alpha_bar[t])) == 0);
    CHECK_THROWS_AS(q_sample(x0, 10, eps, s), ParameterError);
    CHECK_THROWS_AS(q_sample(x0, 3, Tensor::zeros({2, 2}), s), ShapeError);
}

TEST_CASE("q_sample matches its closed-form moments") {
    NoiseSchedule s = make_linear_schedule(50, 1e-3, 0.1);
    const std::size_t t = 25;
    Tensor x0 = Tensor::from_data({4}, {0.5, -0.25, 0.8, 0.1});
    Rng rng(7);
    const std::size_t draws = 100000;
    std::vector<double> m(4, 0.0), m2(4, 0.0);
    for (std::size_t i = 0; i < draws; ++i) {
        Tensor eps = randn(rng, {4});
        Tensor xt = q_sample(x0, t, eps, s);
        for (std::size_t j = 0; j < 4; ++j) {
            m[j] += xt.data()[j];
            m2[j] += xt.data()[j] * xt.data()[j];
        }
    }
    for (std::size_t j = 0; j < 4; ++j) {
        m[j] /= draws;
        const double var = m2[j] / draws - m[j] * m[j];
        CHECK(std::fabs(m[j] - s.sqrt_alpha_bar[t] * x0.data()[j]) < 0.02);
        CHECK(std::fabs(var - (1.0 - s.alpha_bar[t])) / (1.0 - s.alpha_bar[t]) < 0.05);
    }
}

TEST_CASE("iterative forward agrees with the closed form in distribution") {
    NoiseSchedule s = make_linear_schedule(20, 0.01, 0.15);
    Tensor x0 = Tensor::from_data({2}, {0.6, -0.4});
    for (std::size_t t : {std::size_t(0), std::size_t(9), std::size_t(19)}) {
        Rng rng(100 + t);
        const std::size_t draws = 30000;
        double m = 0, m2 = 0;
        for (std::size_t i = 0; i < draws; ++i) {
            Tensor xt = q_sample_iterative(x0, t, rng, s);
            m += xt.data()[0];
            m2 += xt.data()[0] * xt.data()[0];
        }
        m /= draws;
        const double var = m2 / draws - m * m;
        CHECK(std::fabs(m - s.sqrt_alpha_bar[t] * 0.6) < 0.02);
        CHECK(std::fabs(var - (1.0 - s.alpha_bar[t])) / (1.0 - s.alpha_bar[t]) < 0.05);
    }
}

TEST_CASE("one iterative step is one forward transition") {
    NoiseSchedule s = make_linear_schedule(5, 0.1, 0.2);
    Tensor x0 = Tensor::from_data({3}, {0.2, -0.7, 1.0});
    Rng a(55);
    Tensor it = q_sample_iterative(x0, 0, a, s);
    Rng b(55);
    Tensor eps = randn(b, {3});
    Tensor manual = add(scale(x0, std::sqrt(1.0 - s.beta[0])), scale(eps, std::sqrt(s.beta[0])));
    CHECK(dit_test::bitwise_equal(it, manual));
}

TEST_CASE("predict_x0_from_eps inverts q_sample") {
    NoiseSchedule s = make_linear_schedule(30, 1e-3, 0.05);
    Rng rng(9);
    Tensor x0 = random_tensor(rng, {3, 3});
    Tensor eps = randn(rng, {3, 3});
    const std::size_t t = 17;
    Tensor xt = q_sample(x0, t, eps, s);
    CHECK(max_abs_diff(predict_x0_from_eps(xt, t, eps, s, false), x0) < 1e-10);

    Tensor zero = Tensor::zeros({3, 3});
    CHECK(max_abs_diff(predict_x0_from_eps(xt, t, zero, s, false),
                       scale(xt, 1.0 / s.sqrt_alpha_bar[t])) == 0);

    // clip clamps the reconstruction
    Tensor big = Tensor::full({2}, 1.7 * s.sqrt_alpha_bar[t]);
    Tensor clipped = predict_x0_from_eps(big, t, Tensor::zeros({2}), s, true);
    CHECK(clipped.data()[0] == doctest::Approx(1.0));
    CHECK_THROWS_AS(predict_x0_from_eps(xt, 30, eps, s, false), ParameterError);
}

TEST_CASE("posterior degenerate first step and linearity") {
    NoiseSchedule s = make_linear_schedule(12, 0.02, 0.2);
    Rng rng(10);
    Tensor x0 = random_tensor(rng, {4});
    Tensor xt = random_tensor(rng, {4});

    // step 1: the state before it is the clean signal
    CHECK(s.post.coef_x0[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.post.coef_xt[0] == doctest::Approx(0.0));
    PosteriorResult first = posterior(x0, xt, 1, s);
    CHECK(first.variance == doctest::Approx(0.0));
    CHECK(max_abs_diff(first.mean, x0) < 1e-12);

    CHECK_THROWS_AS(posterior(x0, xt, 0, s), ParameterError);
    CHECK_THROWS_AS(posterior(x0, xt, 13, s), ParameterError);

    // linearity: x0 == xt
    PosteriorResult same = posterior(x0, x0, 5, s);
    Tensor expect = scale(x0, s.post.coef_x0[4] + s.post.coef_xt[4]);
    CHECK(max_abs_diff(same.mean, expect) < 1e-14);
}

TEST_CASE("posterior matches a brute-force Bayes computation") {
    NoiseSchedule s = make_linear_schedule(10, 0.05, 0.3);
    const double x0 = 0.3, xcur = -0.4;
    for (std::size_t step : {std::size_t(2), std::size_t(5), std::size_t(10)}) {
        const std::size_t j = step - 1;
        const double ap = s.cum_alpha(step - 1);
        const double a = s.alpha[j], b = s.beta[j];
        // discretized density over the previous state
        const double lo = -8.0, hi = 8.0;
        const std::size_t n = 400001;
        const double dx = (hi - lo) / (n - 1);
        double w_sum = 0, w_mean = 0, w_m2 = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double xp = lo + dx * i;
            const double d1 = xp - std::sqrt(ap) * x0;
            const double d2 = xcur - std::sqrt(a) * xp;
            const double w = std::exp(-0.5 * d1 * d1 / (1.0 - ap) - 0.5 * d2 * d2 / b);
            w_sum += w;
            w_mean += w * xp;
            w_m2 += w * xp * xp;
        }
        const double mean_num = w_mean / w_sum;
        const double var_num = w_m2 / w_sum - mean_num * mean_num;
        const double mean_formula = s.post.coef_x0[j] * x0 + s.post.coef_xt[j] * xcur;
        CHECK(std::fabs(mean_num - mean_formula) < 1e-6);
        CHECK(std::fabs(var_num - s.post.variance[j]) < 1e-6);
    }
}

TEST_CASE("posterior telescoping through the whole chain") {
    NoiseSchedule s = make_linear_schedule(kDefaultT, kDefaultBetaStart, kDefaultBetaEnd);
    Tensor x0 = Tensor::from_data({3}, {0.9, -0.3, 0.05});
    for (std::size_t step = 1; step <= s.T; ++step) {
        Tensor q_mean_cur = scale(x0, std::sqrt(s.cum_alpha(step)));
        Tensor q_mean_prev = scale(x0, std::sqrt(s.cum_alpha(step - 1)));
        PosteriorResult p = posterior(x0, q_mean_cur, step, s);
        CHECK(max_abs_diff(p.mean, q_mean_prev) < 1e-10);
    }
}

TEST_CASE("ancestral step: terminal determinism and posterior composition") {
    NoiseSchedule s = make_linear_schedule(40, 1e-3, 0.08);
    Rng rng(20);
    Tensor x0 = random_tensor(rng, {2, 2}, false, -0.9, 0.9);
    Tensor eps = randn(rng, {2, 2});

    // t = 0 returns the mean exactly; the rng is not consumed
    Tensor xt0 = q_sample(x0, 0, eps, s);
    Rng r0(77);
    Tensor out0 = ancestral_step(xt0, 0, eps, r0, s);
    CHECK(r0.counter() == 0);
    CHECK(max_abs_diff(out0, x0) < 1e-10);

    // perfect eps_hat: mean equals the true posterior mean of step t+1
    const std::size_t t = 25;
    Tensor xt = q_sample(x0, t, eps, s);
    Rng ra(88);
    Tensor got = ancestral_step(xt, t, eps, ra, s);
    Rng rb(88);
    Tensor noise = randn(rb, {2, 2});
    PosteriorResult p = posterior(x0, xt, t + 1, s);
    Tensor expect = add(p.mean, scale(noise, std::sqrt(p.variance)));
    CHECK(max_abs_diff(got, expect) < 1e-10);

    // deterministic given the rng state
    Rng rc(88);
    CHECK(dit_test::bitwise_equal(ancestral_step(xt, t, eps, rc, s), got));

    Rng rd(88);
    CHECK_THROWS_AS(ancestral_step(xt, t, Tensor::zeros({4}), rd, s), ShapeError);
}

TEST_CASE("oracle-driven chain recovers a planted tensor from pure noise") {
    NoiseSchedule s = make_linear_schedule(kDefaultT, kDefaultBetaStart, kDefaultBetaEnd);
    Rng rng(31);
    Tensor x0 = random_tensor(rng, {4, 4}, false, -0.95, 0.95);
    Tensor z = randn(rng, {4, 4});
    for (std::size_t t = s.T; t-- > 0;) {
        // the oracle returns exactly the noise separating z from x0 at level t
        Tensor eps_true = scale(sub(z, scale(x0, s.sqrt_alpha_bar[t])),
                                1.0 / s.sqrt_one_minus_alpha_bar[t]);
        z = ancestral_step(z, t, eps_true, rng, s);
    }
    CHECK(max_abs_diff(z, x0) < 0.05);
}

TEST_CASE("variance preservation for unit-variance data") {
    NoiseSchedule s = make_linear_schedule(kDefaultT, kDefaultBetaStart, kDefaultBetaEnd);
    Rng rng(32);
    for (std::size_t t : {s.T / 4, s.T / 2, s.T - 1}) {
        double m = 0, m2 = 0;
        const std::size_t draws = 100000;
        for (std::size_t i = 0; i < draws; ++i) {
            Tensor x0 = randn(rng, {1});  // unit-variance signal
            Tensor eps = randn(rng, {1});
            const double v = q_sample(x0, t, eps, s).data()[0];
            m += v;
            m2 += v * v;
        }
        m /= draws;
        const double var = m2 / draws - m * m;
        const double expect = s.alpha_bar[t] * 1.0 + (1.0 - s.alpha_bar[t]);
        CHECK(std::fabs(var - expect) / expect < 0.05);
    }
}
