#ifndef DIT_TENSOR_HPP
#define DIT_TENSOR_HPP

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "dit/rng.hpp"

namespace dit {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until populated by backward
    bool requires_grad = false;
};

}  // namespace detail

// Dense 64-bit float tensor, row-major, value-semantic handle over shared
// storage. A scalar has the empty shape {} and one element.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor from_data(const Shape& shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor zeros_like(const Tensor& other, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t ndim() const { return shape().size(); }
    std::size_t numel() const;
    std::size_t extent(std::size_t axis) const { return shape().at(axis); }

    double* data();
    const double* data() const;
    double value() const;  // scalar only
    double at(std::initializer_list<std::size_t> idx) const;

    bool requires_grad() const;
    void set_requires_grad(bool rg);

    bool has_grad() const;
    Tensor grad() const;         // copy of the gradient as a tensor
    const double* grad_data() const;
    void zero_grad();            // drops the gradient buffer

    // For implementing custom differentiable ops: zero-initialized gradient
    // buffer of numel() doubles, allocated on first use. Mutates the shared
    // storage, not the handle.
    double* grad_accum() const;

    Tensor clone() const;

    // Identity of the underlying storage; used by backward closures.
    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

    std::shared_ptr<detail::TensorImpl> impl_;

    friend Tensor make_tensor(detail::TensorImpl&&);
};

// Recording scope for reverse-mode autodiff. Operations executed while a
// Tape is active append backward rules; Tape::backward replays them in
// exact reverse recording order.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void backward(const Tensor& scalar_loss);
    std::size_t size() const { return entries_.size(); }

private:
    std::vector<std::function<void()>> entries_;
    Tape* prev_;

    friend void record_backward(std::function<void()> fn);
};

// Backward on the currently active tape.
void backward(const Tensor& scalar_loss);

// Suspends gradient recording for its lifetime (inference paths).
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// True when a tape is active and recording is not suspended.
bool grad_recording();
// Appends a backward rule to the active tape. Callers must have checked
// grad_recording() and set requires_grad on the op output.
void record_backward(std::function<void()> fn);

// ---- elementwise & broadcast ----
// add/sub/mul accept equal shapes, or one operand whose shape is a trailing
// suffix of the other's (leading-batch broadcast). A scalar broadcasts to
// anything.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor gelu(const Tensor& x);   // tanh approximation
Tensor abs(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

// ---- linear algebra ----
// matmul: [m,k]x[k,n], or batched [...,m,k]x[...,k,n] with equal leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);
// linear: x [..., k] times w [k, n] plus optional bias [n].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = Tensor());

// ---- structural ----
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor transpose(const Tensor& x, std::size_t axis0, std::size_t axis1);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len);
Tensor stack(const std::vector<Tensor>& parts);  // new leading axis
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices);

// ---- normalization & activations over the last axis ----
Tensor softmax(const Tensor& x);
Tensor layer_norm_raw(const Tensor& x, double eps);  // mean 0 / var 1, no affine
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
// y = x / sqrt(sum(x^2, last) + eps); eps == 0 demands nonzero rows.
Tensor l2_normalize(const Tensor& x, double eps);

// ---- reductions ----
Tensor sum(const Tensor& x);   // -> scalar
Tensor mean(const Tensor& x);  // -> scalar
Tensor sum_axis(const Tensor& x, std::size_t axis);
Tensor mean_axis(const Tensor& x, std::size_t axis);

// ---- per-token modulation, x [B, N, d] with s [B, d] ----
Tensor scale_tokens(const Tensor& x, const Tensor& s);
Tensor shift_tokens(const Tensor& x, const Tensor& s);

// ---- random tensors (deterministic in rng state) ----
Tensor randn(Rng& rng, const Shape& shape);
Tensor rand_uniform(Rng& rng, const Shape& shape);

namespace detail {
// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n);
// c[m,n] += a[m,k] * b[n,k]^T
void gemm_nt(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n);
// c[k,n] += a[m,k]^T * b[m,n]
void gemm_tn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n);
}  // namespace detail

}  // namespace dit

#endif
