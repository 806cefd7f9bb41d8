#ifndef DIT_OPTIM_HPP
#define DIT_OPTIM_HPP

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "dit/tensor.hpp"

namespace dit {

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

// Decoupled weight decay Adam over a named parameter list:
//   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2
//   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
class AdamW {
public:
    AdamW(std::vector<std::pair<std::string, Tensor>> params, AdamWConfig cfg);

    // One update; every parameter must have a populated gradient.
    void step();
    void zero_grad();

    std::size_t step_count() const { return step_; }
    const AdamWConfig& config() const { return cfg_; }
    const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }

    // Serialization access; slot i mirrors params()[i].
    std::vector<double>& moment1(std::size_t i) { return m_[i]; }
    std::vector<double>& moment2(std::size_t i) { return v_[i]; }
    void set_step_count(std::size_t s) { step_ = s; }

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    AdamWConfig cfg_;
    std::size_t step_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

}  // namespace dit

#endif
