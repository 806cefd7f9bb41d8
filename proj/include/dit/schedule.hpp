#ifndef DIT_SCHEDULE_HPP
#define DIT_SCHEDULE_HPP

#include <cstddef>
#include <vector>

#include "dit/rng.hpp"
#include "dit/tensor.hpp"

namespace dit {

// True-posterior coefficients for q(x_{s-1} | x_s, x_0), indexed by step-1.
// Step s counts applications of the forward transition, s in [1, T]; the
// state before step 1 is the clean signal, so step 1 has coef_x0 = 1,
// coef_xt = 0 and variance 0.
struct PosteriorCoeffs {
    std::vector<double> coef_x0;
    std::vector<double> coef_xt;
    std::vector<double> variance;
};

// Precomputed beta/alpha tables. Timestep indices t are 0-based, t in [0, T);
// q_sample(x0, t) lands on the marginal after t+1 forward steps.
struct NoiseSchedule {
    std::size_t T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
    std::vector<double> sqrt_alpha_bar;
    std::vector<double> sqrt_one_minus_alpha_bar;
    PosteriorCoeffs post;

    // Cumulative alpha-bar after `steps` forward applications; 1.0 at 0.
    double cum_alpha(std::size_t steps) const;
};

constexpr std::size_t kDefaultT = 200;
constexpr double kDefaultBetaStart = 1e-4;
constexpr double kDefaultBetaEnd = 0.02;

// Linear beta ramp inclusive of both endpoints; requires T >= 2 and
// 0 < beta_start <= beta_end < 1.
NoiseSchedule make_linear_schedule(std::size_t T, double beta_start, double beta_end);

// Closed-form marginal: sqrt(ab[t]) * x0 + sqrt(1 - ab[t]) * eps.
Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps, const NoiseSchedule& sched);

// Stepwise application of the forward transition with fresh noise per step;
// test oracle for the closed-form marginal.
Tensor q_sample_iterative(const Tensor& x0, std::size_t t, Rng& rng, const NoiseSchedule& sched);

// Inverts the marginal identity; clip clamps the estimate to [-1, 1].
Tensor predict_x0_from_eps(const Tensor& xt, std::size_t t, const Tensor& eps_hat,
                           const NoiseSchedule& sched, bool clip);

struct PosteriorResult {
    Tensor mean;
    double variance;
};

// True posterior of step s in [1, T]; s = 0 (the clean state) is rejected.
PosteriorResult posterior(const Tensor& x0, const Tensor& xt, std::size_t step,
                          const NoiseSchedule& sched);

// One reverse transition at timestep index t in [0, T): estimates x0 from
// eps_hat (with clipping), takes the posterior mean of step t+1, and adds
// sqrt(variance) * fresh noise when t > 0. Exactly the mean at t == 0.
Tensor ancestral_step(const Tensor& xt, std::size_t t, const Tensor& eps_hat, Rng& rng,
                      const NoiseSchedule& sched);

}  // namespace dit

#endif
