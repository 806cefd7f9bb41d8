#ifndef DIT_TESTS_TEST_UTIL_HPP
#define DIT_TESTS_TEST_UTIL_HPP

#include <cmath>
#include <functional>
#include <vector>

#include "dit/rng.hpp"
#include "dit/tensor.hpp"

namespace dit_test {

// Central finite-difference gradient oracle. loss_fn recomputes the scalar
// loss from the leaves' current values; this runs one taped backward, then
// perturbs each checked index by +-h and compares. Returns the worst
// norm-relative error over the leaves. When max_indices > 0, a deterministic
// random subset of that size is checked per leaf.
inline double grad_check(const std::function<dit::Tensor()>& loss_fn,
                         const std::vector<dit::Tensor>& leaves, double h = 1e-5,
                         std::size_t max_indices = 0, std::uint64_t pick_seed = 42) {
    std::vector<std::vector<double>> ad_grads;
    {
        dit::Tape tape;
        for (dit::Tensor leaf : leaves) {
            if (!leaf.requires_grad()) {
                throw std::logic_error("grad_check: leaf must require grad");
            }
            leaf.zero_grad();
        }
        dit::Tensor loss = loss_fn();
        tape.backward(loss);
        for (const dit::Tensor& leaf : leaves) {
            dit::Tensor g = leaf.grad();
            ad_grads.emplace_back(g.data(), g.data() + g.numel());
        }
    }
    double worst = 0.0;
    dit::Rng pick(pick_seed);
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        dit::Tensor leaf = leaves[li];
        std::vector<std::size_t> idx;
        if (max_indices == 0 || leaf.numel() <= max_indices) {
            for (std::size_t i = 0; i < leaf.numel(); ++i) idx.push_back(i);
        } else {
            for (std::size_t k = 0; k < max_indices; ++k) {
                idx.push_back(pick.uniform_int(leaf.numel()));
            }
        }
        double num = 0.0, den = 0.0;
        for (std::size_t i : idx) {
            double* p = leaf.data();
            const double saved = p[i];
            dit::NoGradGuard ng;
            p[i] = saved + h;
            const double up = loss_fn().value();
            p[i] = saved - h;
            const double dn = loss_fn().value();
            p[i] = saved;
            const double fd = (up - dn) / (2.0 * h);
            const double ad = ad_grads[li][i];
            num += (ad - fd) * (ad - fd);
            den += fd * fd;
        }
        const double err = std::sqrt(num) / std::max(std::sqrt(den), 1e-8);
        worst = std::max(worst, err);
    }
    return worst;
}

inline double max_abs_diff(const dit::Tensor& a, const dit::Tensor& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
    }
    return m;
}

inline bool bitwise_equal(const dit::Tensor& a, const dit::Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        if (a.data()[i] != b.data()[i]) return false;
    }
    return true;
}

inline dit::Tensor random_tensor(dit::Rng& rng, const dit::Shape& shape, bool rg = false,
                                 double lo = -1.0, double hi = 1.0) {
    dit::Tensor t = dit::rand_uniform(rng, shape);
    double* p = t.data();
    for (std::size_t i = 0; i < t.numel(); ++i) p[i] = lo + (hi - lo) * p[i];
    t.set_requires_grad(rg);
    return t;
}

}  // namespace dit_test

#endif
