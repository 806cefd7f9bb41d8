#include "dit/schedule.hpp"

#include <cmath>
#include <string>

#include "dit/errors.hpp"

namespace dit {

namespace {

void check_t(std::size_t t, const NoiseSchedule& sched, const char* op) {
    if (t >= sched.T) {
        throw ParameterError(std::string(op) + ": t = " + std::to_string(t) +
                             " out of range [0, " + std::to_string(sched.T) + ")");
    }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

}  // namespace

double NoiseSchedule::cum_alpha(std::size_t steps) const {
    return steps == 0 ? 1.0 : alpha_bar.at(steps - 1);
}

NoiseSchedule make_linear_schedule(std::size_t T, double beta_start, double beta_end) {
    if (T < 2) throw ParameterError("make_linear_schedule: T must be >= 2");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw ParameterError("make_linear_schedule: need 0 < beta_start <= beta_end < 1, got " +
                             std::to_string(beta_start) + ", " + std::to_string(beta_end));
    }
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    s.sqrt_alpha_bar.resize(T);
    s.sqrt_one_minus_alpha_bar.resize(T);
    double prod = 1.0;
    for (std::size_t t = 0; t < T; ++t) {
        const double frac = static_cast<double>(t) / static_cast<double>(T - 1);
        s.beta[t] = beta_start + (beta_end - beta_start) * frac;
        s.alpha[t] = 1.0 - s.beta[t];
        prod *= s.alpha[t];
        s.alpha_bar[t] = prod;
        s.sqrt_alpha_bar[t] = std::sqrt(prod);
        s.sqrt_one_minus_alpha_bar[t] = std::sqrt(1.0 - prod);
    }
    s.post.coef_x0.resize(T);
    s.post.coef_xt.resize(T);
    s.post.variance.resize(T);
    for (std::size_t j = 0; j < T; ++j) {
        const double ab_prev = s.cum_alpha(j);  // state before step j+1
        const double ab = s.alpha_bar[j];
        s.post.coef_x0[j] = std::sqrt(ab_prev) * s.beta[j] / (1.0 - ab);
        s.post.coef_xt[j] = std::sqrt(s.alpha[j]) * (1.0 - ab_prev) / (1.0 - ab);
        s.post.variance[j] = s.beta[j] * (1.0 - ab_prev) / (1.0 - ab);
    }
    return s;
}

Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps, const NoiseSchedule& sched) {
    check_t(t, sched, "q_sample");
    check_same_shape(x0, eps, "q_sample");
    return add(scale(x0, sched.sqrt_alpha_bar[t]),
               scale(eps, sched.sqrt_one_minus_alpha_bar[t]));
}

Tensor q_sample_iterative(const Tensor& x0, std::size_t t, Rng& rng, const NoiseSchedule& sched) {
    check_t(t, sched, "q_sample_iterative");
    Tensor x = x0;
    for (std::size_t s = 0; s <= t; ++s) {
        Tensor eps = randn(rng, x0.shape());
        x = add(scale(x, std::sqrt(1.0 - sched.beta[s])), scale(eps, std::sqrt(sched.beta[s])));
    }
    return x;
}

Tensor predict_x0_from_eps(const Tensor& xt, std::size_t t, const Tensor& eps_hat,
                           const NoiseSchedule& sched, bool clip) {
    check_t(t, sched, "predict_x0_from_eps");
    check_same_shape(xt, eps_hat, "predict_x0_from_eps");
    Tensor x0 = scale(sub(xt, scale(eps_hat, sched.sqrt_one_minus_alpha_bar[t])),
                      1.0 / sched.sqrt_alpha_bar[t]);
    return clip ? clamp(x0, -1.0, 1.0) : x0;
}

PosteriorResult posterior(const Tensor& x0, const Tensor& xt, std::size_t step,
                          const NoiseSchedule& sched) {
    if (step < 1 || step > sched.T) {
        throw ParameterError("posterior: step = " + std::to_string(step) +
                             " out of range [1, " + std::to_string(sched.T) + "]");
    }
    check_same_shape(x0, xt, "posterior");
    const std::size_t j = step - 1;
    Tensor mean = add(scale(x0, sched.post.coef_x0[j]), scale(xt, sched.post.coef_xt[j]));
    return {mean, sched.post.variance[j]};
}

Tensor ancestral_step(const Tensor& xt, std::size_t t, const Tensor& eps_hat, Rng& rng,
                      const NoiseSchedule& sched) {
    check_t(t, sched, "ancestral_step");
    check_same_shape(xt, eps_hat, "ancestral_step");
    Tensor x0_hat = predict_x0_from_eps(xt, t, eps_hat, sched, /*clip=*/true);
    PosteriorResult post = posterior(x0_hat, xt, t + 1, sched);
    if (t == 0) return post.mean;
    Tensor noise = randn(rng, xt.shape());
    return add(post.mean, scale(noise, std::sqrt(post.variance)));
}

}  // namespace dit
