#include "dit/optim.hpp"

#include <cmath>

#include "dit/errors.hpp"

namespace dit {

AdamW::AdamW(std::vector<std::pair<std::string, Tensor>> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].second.numel(), 0.0);
        v_[i].assign(params_[i].second.numel(), 0.0);
    }
}

void AdamW::step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i].second;
        if (!p.has_grad()) {
            throw ContractError("AdamW::step: missing gradient for parameter '" +
                                params_[i].first + "'");
        }
        const double* g = p.grad_data();
        double* theta = p.data();
        double* m = m_[i].data();
        double* v = v_[i].data();
        const std::size_t n = p.numel();
        for (std::size_t j = 0; j < n; ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            theta[j] -= cfg_.lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) +
                                   cfg_.weight_decay * theta[j]);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
}

}  // namespace dit
