#include "dit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "dit/errors.hpp"

namespace dit {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local bool g_grad_suspended = false;

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

void check_shape_valid(const Shape& s, const char* op) {
    for (std::size_t e : s) {
        if (e == 0) throw ShapeError(std::string(op) + ": zero extent in shape " + shape_str(s));
    }
}

using ImplPtr = std::shared_ptr<detail::TensorImpl>;

double* accum(const ImplPtr& p) {
    if (p->grad.empty()) p->grad.assign(p->data.size(), 0.0);
    return p->grad.data();
}

bool want_grad(const Tensor& t) { return grad_recording() && t.requires_grad(); }

// Resolves suffix broadcasting: returns (big, small, flipped) where
// small.shape is a suffix of big.shape. Throws on anything else.
struct BroadcastPlan {
    const Tensor* big;
    const Tensor* small;
    bool flipped;  // true when `b` is the big one
    std::size_t nb;
};

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

BroadcastPlan broadcast_plan(const Tensor& a, const Tensor& b, const char* op) {
    if (is_suffix(b.shape(), a.shape())) return {&a, &b, false, b.numel()};
    if (is_suffix(a.shape(), b.shape())) return {&b, &a, true, a.numel()};
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
}

}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

Tensor make_tensor(detail::TensorImpl&& impl) {
    return Tensor(std::make_shared<detail::TensorImpl>(std::move(impl)));
}

// ---- Tensor ----

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    check_shape_valid(shape, "zeros");
    detail::TensorImpl impl;
    impl.shape = shape;
    impl.data.assign(shape_numel(shape), 0.0);
    impl.requires_grad = requires_grad;
    return make_tensor(std::move(impl));
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    Tensor t = zeros(shape, requires_grad);
    std::fill(t.data(), t.data() + t.numel(), value);
    return t;
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data, bool requires_grad) {
    check_shape_valid(shape, "from_data");
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("from_data: shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
    }
    detail::TensorImpl impl;
    impl.shape = shape;
    impl.data = std::move(data);
    impl.requires_grad = requires_grad;
    return make_tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({}, {value}, requires_grad);
}

Tensor Tensor::zeros_like(const Tensor& other, bool requires_grad) {
    return zeros(other.shape(), requires_grad);
}

const Shape& Tensor::shape() const {
    if (!impl_) throw ContractError("Tensor: use of undefined tensor");
    return impl_->shape;
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

double* Tensor::data() {
    if (!impl_) throw ContractError("Tensor: use of undefined tensor");
    return impl_->data.data();
}

const double* Tensor::data() const {
    if (!impl_) throw ContractError("Tensor: use of undefined tensor");
    return impl_->data.data();
}

double Tensor::value() const {
    if (numel() != 1) throw ContractError("Tensor::value: tensor is not scalar, shape " +
                                          shape_str(shape()));
    return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
    const Shape& s = shape();
    if (idx.size() != s.size()) {
        throw ShapeError("Tensor::at: " + std::to_string(idx.size()) + " indices for shape " +
                         shape_str(s));
    }
    std::size_t off = 0, axis = 0;
    for (std::size_t i : idx) {
        if (i >= s[axis]) throw ShapeError("Tensor::at: index out of bounds");
        off = off * s[axis] + i;
        ++axis;
    }
    return impl_->data[off];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool rg) {
    if (!impl_) throw ContractError("Tensor: use of undefined tensor");
    impl_->requires_grad = rg;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

Tensor Tensor::grad() const {
    if (!has_grad()) throw ContractError("Tensor::grad: gradient not populated");
    return from_data(impl_->shape, impl_->grad);
}

const double* Tensor::grad_data() const {
    if (!has_grad()) throw ContractError("Tensor::grad_data: gradient not populated");
    return impl_->grad.data();
}

void Tensor::zero_grad() {
    if (impl_) impl_->grad.clear();
}

double* Tensor::grad_accum() const {
    if (!impl_) throw ContractError("Tensor: use of undefined tensor");
    return accum(impl_);
}

Tensor Tensor::clone() const {
    return from_data(shape(), impl_->data, false);
}

// ---- Tape ----

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

void Tape::backward(const Tensor& scalar_loss) {
    if (scalar_loss.numel() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " +
                            shape_str(scalar_loss.shape()));
    }
    if (!scalar_loss.requires_grad()) {
        throw ContractError("backward: loss was not produced under an active tape");
    }
    double* g = scalar_loss.grad_accum();
    g[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

void backward(const Tensor& scalar_loss) {
    if (!g_active_tape) throw ContractError("backward: no active tape");
    g_active_tape->backward(scalar_loss);
}

NoGradGuard::NoGradGuard() : prev_(g_grad_suspended) { g_grad_suspended = true; }
NoGradGuard::~NoGradGuard() { g_grad_suspended = prev_; }

bool grad_recording() { return g_active_tape != nullptr && !g_grad_suspended; }

void record_backward(std::function<void()> fn) {
    if (!g_active_tape) throw ContractError("record_backward: no active tape");
    g_active_tape->entries_.push_back(std::move(fn));
}

// ---- gemm kernels ----

namespace detail {

void gemm_nn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
    // b is [n, k]; materializing b^T costs O(k*n) and turns the product into
    // the streaming j-inner form, which vectorizes where a dot-product
    // reduction would not.
    std::vector<double> bt(k * n);
    for (std::size_t j = 0; j < n; ++j) {
        const double* brow = b + j * k;
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = brow[p];
    }
    gemm_nn(a, bt.data(), c, m, k, n);
}

void gemm_tn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < m; ++p) {
        const double* arow = a + p * k;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < k; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
    BroadcastPlan bp = broadcast_plan(a, b, "add");
    const Tensor& big = *bp.big;
    const Tensor& small = *bp.small;
    Tensor out = Tensor::zeros(big.shape());
    const std::size_t n = big.numel(), nb = bp.nb;
    const double* pb = big.data();
    const double* ps = small.data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pb[i] + ps[i % nb];
    if (grad_recording() && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        auto bi = big.impl(), si = small.impl(), oi = out.impl();
        record_backward([bi, si, oi, n, nb] {
            if (oi->grad.empty()) return;
            const double* g = oi->grad.data();
            if (bi->requires_grad) {
                double* gb = accum(bi);
                for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
            }
            if (si->requires_grad) {
                double* gs = accum(si);
                for (std::size_t i = 0; i < n; ++i) gs[i % nb] += g[i];
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    BroadcastPlan bp = broadcast_plan(a, b, "sub");
    const Tensor& big = *bp.big;
    const Tensor& small = *bp.small;
    Tensor out = Tensor::zeros(big.shape());
    const std::size_t n = big.numel(), nb = bp.nb;
    const bool flipped = bp.flipped;  // big is b: out = a_small - b_big
    const double* pb = big.data();
    const double* ps = small.data();
    double* po = out.data();
    if (!flipped) {
        for (std::size_t i = 0; i < n; ++i) po[i] = pb[i] - ps[i % nb];
    } else {
        for (std::size_t i = 0; i < n; ++i) po[i] = ps[i % nb] - pb[i];
    }
    if (grad_recording() && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        auto bi = big.impl(), si = small.impl(), oi = out.impl();
        record_backward([bi, si, oi, n, nb, flipped] {
            if (oi->grad.empty()) return;
            const double* g = oi->grad.data();
            const double sgn_big = flipped ? -1.0 : 1.0;
            if (bi->requires_grad) {
                double* gb = accum(bi);
                for (std::size_t i = 0; i < n; ++i) gb[i] += sgn_big * g[i];
            }
            if (si->requires_grad) {
                double* gs = accum(si);
                for (std::size_t i = 0; i < n; ++i) gs[i % nb] -= sgn_big * g[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    BroadcastPlan bp = broadcast_plan(a, b, "mul");
    const Tensor& big = *bp.big;
    const Tensor& small = *bp.small;
    Tensor out = Tensor::zeros(big.shape());
    const std::size_t n = big.numel(), nb = bp.nb;
    const double* pb = big.data();
    const double* ps = small.data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pb[i] * ps[i % nb];
    if (grad_recording() && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        auto bi = big.impl(), si = small.impl(), oi = out.impl();
        record_backward([bi, si, oi, n, nb] {
            if (oi->grad.empty()) return;
            const double* g = oi->grad.data();
            if (bi->requires_grad) {
                double* gb = accum(bi);
                const double* ps2 = si->data.data();
                for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * ps2[i % nb];
            }
            if (si->requires_grad) {
                double* gs = accum(si);
                const double* pb2 = bi->data.data();
                for (std::size_t i = 0; i < n; ++i) gs[i % nb] += g[i] * pb2[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    const double* pa = a.data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * s;
    if (want_grad(a)) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        record_backward([ai, oi, n, s] {
            if (oi->grad.empty()) return;
            const double* g = oi->grad.data();
            double* ga = accum(ai);
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * s;
        });
    }
    return out;
}

Tensor add_scalar(const Tensor& a, double s) {
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    const double* pa = a.data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + s;
    if (want_grad(a)) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        record_backward([ai, oi, n] {
            if (oi->grad.empty()) return;
            const double* g = oi->grad.data();
            double* ga = accum(ai);
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        });
    }
    return out;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const std::size_t n = x.numel();
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double v = px[i];
        po[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
    }
    if (want_grad(x)) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        record_backward([xi, oi, n] {
            if (oi->grad.empty()) return;
            const double* g = oi->grad.data();
            const double* px2 = xi->data.data();
            double* gx = accum(xi);
            for (std::size_t i = 0; i < n; ++i) {
                const double v = px2[i];
                const double u = kGeluC * (v + kGeluA * v * v * v);
                const double t = std::tanh(u);
                const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
                gx[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
            }
        });
    }
    return out;
}

Tensor abs(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const std::size_t n = x.numel();
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = std::fabs(px[i]);
    if (want_grad(x)) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        record_backward([xi, oi, n] {
            if (oi->grad.empty()) return;
            const double* g = oi->grad.data();
            const double* px2 = xi->data.data();
            double* gx = accum(xi);
            for (std::size_t i = 0; i < n; ++i) {
                const double s = px2[i] > 0 ? 1.0 : (px2[i] < 0 ? -1.0 : 0.0);
                gx[i] += g[i] * s;
            }
        });
    }
    return out;
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    if (lo > hi) throw ParameterError("clamp: lo > hi");
    Tensor out = Tensor::zeros(x.shape());
    const std::size_t n = x.numel();
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = std::min(hi, std::max(lo, px[i]));
    if (want_grad(x)) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        record_backward([xi, oi, n, lo, hi] {
            if (oi->grad.empty()) return;
            const double* g = oi->grad.data();
            const double* px2 = xi->data.data();
            double* gx = accum(xi);
            for (std::size_t i = 0; i < n; ++i) {
                if (px2[i] > lo && px2[i] < hi) gx[i] += g[i];
            }
        });
    }
    return out;
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() != sa.size()) {
        throw ShapeError("matmul: ranks must match and be >= 2, got " + shape_str(sa) +
                         " and " + shape_str(sb));
    }
    const std::size_t r = sa.size();
    for (std::size_t i = 0; i + 2 < r; ++i) {
        if (sa[i] != sb[i]) {
            throw ShapeError("matmul: leading dims differ, " + shape_str(sa) + " vs " +
                             shape_str(sb));
        }
    }
    const std::size_t m = sa[r - 2], k = sa[r - 1], k2 = sb[r - 2], n = sb[r - 1];
    if (k != k2) {
        throw ShapeError("matmul: inner dims differ, " + shape_str(sa) + " vs " + shape_str(sb));
    }
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < r; ++i) batch *= sa[i];
    Shape so(sa.begin(), sa.end() - 2);
    so.push_back(m);
    so.push_back(n);
    Tensor out = Tensor::zeros(so);
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t l = 0; l < batch; ++l) {
        detail::gemm_nn(pa + l * m * k, pb + l * k * n, po + l * m * n, m, k, n);
    }
    if (grad_recording() && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        record_backward([ai, bi, oi, batch, m, k, n] {
            if (oi->grad.empty()) return;
            const double* g = oi->grad.data();
            if (ai->requires_grad) {
                double* ga = accum(ai);
                const double* pb2 = bi->data.data();
                for (std::size_t l = 0; l < batch; ++l) {
                    // dA = G * B^T
                    detail::gemm_nt(g + l * m * n, pb2 + l * k * n, ga + l * m * k, m, n, k);
                }
            }
            if (bi->requires_grad) {
                double* gb = accum(bi);
                const double* pa2 = ai->data.data();
                for (std::size_t l = 0; l < batch; ++l) {
                    // dB = A^T * G
                    detail::gemm_tn(pa2 + l * m * k, g + l * m * n, gb + l * k * n, m, k, n);
                }
            }
        });
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if (sx.empty() || sw.size() != 2) {
        throw ShapeError("linear: need x [...,k] and w [k,n], got " + shape_str(sx) + " and " +
                         shape_str(sw));
    }
    const std::size_t k = sx.back(), n = sw[1];
    if (sw[0] != k) {
        throw ShapeError("linear: x last dim " + std::to_string(k) + " != w rows " +
                         std::to_string(sw[0]));
    }
    const bool with_bias = b.defined();
    if (with_bias && (b.ndim() != 1 || b.extent(0) != n)) {
        throw ShapeError("linear: bias shape " + shape_str(b.shape()) + " != [" +
                         std::to_string(n) + "]");
    }
    const std::size_t rows = x.numel() / k;
    Shape so(sx.begin(), sx.end() - 1);
    so.push_back(n);
    Tensor out = Tensor::zeros(so);
    double* po = out.data();
    if (with_bias) {
        const double* pbias = b.data();
        for (std::size_t r = 0; r < rows; ++r) {
            std::memcpy(po + r * n, pbias, n * sizeof(double));
        }
    }
    detail::gemm_nn(x.data(), w.data(), po, rows, k, n);
    const bool rg = grad_recording() &&
                    (x.requires_grad() || w.requires_grad() || (with_bias && b.requires_grad()));
    if (rg) {
        out.set_requires_grad(true);
        auto xi = x.impl(), wi = w.impl(), oi = out.impl();
        auto bi = with_bias ? b.impl() : nullptr;
        record_backward([xi, wi, bi, oi, rows, k, n] {
            if (oi->grad.empty()) return;
            const double* g = oi->grad.data();
            if (xi->requires_grad) {
                detail::gemm_nt(g, wi->data.data(), accum(xi), rows, n, k);
            }
            if (wi->requires_grad) {
                detail::gemm_tn(xi->data.data(), g, accum(wi), rows, k, n);
            }
            if (bi && bi->requires_grad) {
                double* gb = accum(bi);
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* grow = g + r * n;
                    for (std::size_t j = 0; j < n; ++j) gb[j] += grow[j];
                }
            }
        });
    }
    return out;
}

// ---- structural ----

Tensor reshape(const Tensor& x, const Shape& shape) {
    check_shape_valid(shape, "reshape");
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    }
    Tensor out = Tensor::from_data(shape, std::vector<double>(x.data(), x.data() + x.numel()));
    if (want_grad(x)) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        record_backward([xi, oi] {
            if (oi->grad.empty()) return;
            const double* g = oi->grad.data();
            double* gx = accum(xi);
            for (std::size_t i = 0; i < oi->grad.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

namespace {

// Copies x into out with axes ax0/ax1 swapped; used forward and backward.
void transpose_copy(const double* src, double* dst, const Shape& src_shape,
                    std::size_t ax0, std::size_t ax1) {
    const std::size_t r = src_shape.size();
    std::vector<std::size_t> src_strides(r, 1);
    for (std::size_t i = r - 1; i > 0; --i) src_strides[i - 1] = src_strides[i] * src_shape[i];
    Shape dst_shape = src_shape;
    std::swap(dst_shape[ax0], dst_shape[ax1]);
    std::vector<std::size_t> perm_strides(r);
    for (std::size_t i = 0; i < r; ++i) perm_strides[i] = src_strides[i];
    std::swap(perm_strides[ax0], perm_strides[ax1]);
    const std::size_t n = shape_numel(src_shape);
    std::vector<std::size_t> idx(r, 0);
    std::size_t src_off = 0;
    for (std::size_t o = 0; o < n; ++o) {
        dst[o] = src[src_off];
        for (std::size_t ax = r; ax-- > 0;) {
            if (++idx[ax] < dst_shape[ax]) {
                src_off += perm_strides[ax];
                break;
            }
            src_off -= perm_strides[ax] * (dst_shape[ax] - 1);
            idx[ax] = 0;
        }
    }
}

}  // namespace

Tensor transpose(const Tensor& x, std::size_t axis0, std::size_t axis1) {
    const Shape& s = x.shape();
    if (axis0 >= s.size() || axis1 >= s.size()) {
        throw ShapeError("transpose: axis out of range for shape " + shape_str(s));
    }
    Shape so = s;
    std::swap(so[axis0], so[axis1]);
    Tensor out = Tensor::zeros(so);
    transpose_copy(x.data(), out.data(), s, axis0, axis1);
    if (want_grad(x)) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        record_backward([xi, oi, so, axis0, axis1] {
            if (oi->grad.empty()) return;
            std::vector<double> gt(oi->grad.size());
            transpose_copy(oi->grad.data(), gt.data(), so, axis0, axis1);
            double* gx = accum(xi);
            for (std::size_t i = 0; i < gt.size(); ++i) gx[i] += gt[i];
        });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ParameterError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) throw ShapeError("concat: axis out of range");
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size()) throw ShapeError("concat: rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != axis && s[i] != s0[i]) {
                throw ShapeError("concat: shape mismatch " + shape_str(s0) + " vs " +
                                 shape_str(s));
            }
        }
        total += s[axis];
    }
    Shape so = s0;
    so[axis] = total;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
    for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
    Tensor out = Tensor::zeros(so);
    double* po = out.data();
    const std::size_t out_row = total * inner;
    std::size_t col_off = 0;
    bool any_rg = false;
    for (const Tensor& p : parts) {
        const std::size_t pc = p.shape()[axis] * inner;
        const double* pp = p.data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::memcpy(po + o * out_row + col_off, pp + o * pc, pc * sizeof(double));
        }
        col_off += pc;
        any_rg = any_rg || p.requires_grad();
    }
    if (grad_recording() && any_rg) {
        out.set_requires_grad(true);
        std::vector<ImplPtr> impls;
        impls.reserve(parts.size());
        for (const Tensor& p : parts) impls.push_back(p.impl());
        auto oi = out.impl();
        record_backward([impls, oi, outer, inner, out_row, axis] {
            if (oi->grad.empty()) return;
            const double* g = oi->grad.data();
            std::size_t off = 0;
            for (const auto& pi : impls) {
                const std::size_t pc = pi->shape[axis] * inner;
                if (pi->requires_grad) {
                    double* gp = accum(pi);
                    for (std::size_t o = 0; o < outer; ++o) {
                        const double* gs = g + o * out_row + off;
                        double* gd = gp + o * pc;
                        for (std::size_t i = 0; i < pc; ++i) gd[i] += gs[i];
                    }
                }
                off += pc;
            }
        });
    }
    return out;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
    const Shape& s = x.shape();
    if (axis >= s.size()) throw ShapeError("slice: axis out of range");
    if (len == 0 || start + len > s[axis]) {
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of extent " +
                         std::to_string(s[axis]));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    Shape so = s;
    so[axis] = len;
    Tensor out = Tensor::zeros(so);
    const double* px = x.data();
    double* po = out.data();
    const std::size_t in_row = s[axis] * inner, out_row = len * inner, off = start * inner;
    for (std::size_t o = 0; o < outer; ++o) {
        std::memcpy(po + o * out_row, px + o * in_row + off, out_row * sizeof(double));
    }
    if (want_grad(x)) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        record_backward([xi, oi, outer, in_row, out_row, off] {
            if (oi->grad.empty()) return;
            const double* g = oi->grad.data();
            double* gx = accum(xi);
            for (std::size_t o = 0; o < outer; ++o) {
                const double* gs = g + o * out_row;
                double* gd = gx + o * in_row + off;
                for (std::size_t i = 0; i < out_row; ++i) gd[i] += gs[i];
            }
        });
    }
    return out;
}

Tensor stack(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ParameterError("stack: no inputs");
    std::vector<Tensor> expanded;
    expanded.reserve(parts.size());
    for (const Tensor& p : parts) {
        Shape s = p.shape();
        s.insert(s.begin(), 1);
        expanded.push_back(reshape(p, s));
    }
    return concat(expanded, 0);
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices) {
    const Shape& s = x.shape();
    if (s.empty()) throw ShapeError("gather_rows: scalar input");
    const std::size_t rows = s[0], row_len = x.numel() / rows;
    for (std::size_t i : indices) {
        if (i >= rows) throw ParameterError("gather_rows: index " + std::to_string(i) +
                                            " out of " + std::to_string(rows));
    }
    Shape so = s;
    so[0] = indices.size();
    if (indices.empty()) throw ParameterError("gather_rows: no indices");
    Tensor out = Tensor::zeros(so);
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t r = 0; r < indices.size(); ++r) {
        std::memcpy(po + r * row_len, px + indices[r] * row_len, row_len * sizeof(double));
    }
    if (want_grad(x)) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        auto idx = indices;
        record_backward([xi, oi, idx, row_len] {
            if (oi->grad.empty()) return;
            const double* g = oi->grad.data();
            double* gx = accum(xi);
            for (std::size_t r = 0; r < idx.size(); ++r) {
                const double* gs = g + r * row_len;
                double* gd = gx + idx[r] * row_len;
                for (std::size_t i = 0; i < row_len; ++i) gd[i] += gs[i];
            }
        });
    }
    return out;
}

// ---- normalization & activations ----

Tensor softmax(const Tensor& x) {
    const Shape& s = x.shape();
    if (s.empty()) throw ShapeError("softmax: scalar input");
    const std::size_t n = s.back(), rows = x.numel() / n;
    Tensor out = Tensor::zeros(s);
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = px + r * n;
        double* yr = po + r * n;
        double mx = xr[0];
        for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, xr[i]);
        double z = 0;
        for (std::size_t i = 0; i < n; ++i) {
            yr[i] = std::exp(xr[i] - mx);
            z += yr[i];
        }
        const double inv = 1.0 / z;
        for (std::size_t i = 0; i < n; ++i) yr[i] *= inv;
    }
    if (want_grad(x)) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        record_backward([xi, oi, rows, n] {
            if (oi->grad.empty()) return;
            const double* g = oi->grad.data();
            const double* y = oi->data.data();
            double* gx = accum(xi);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g + r * n;
                const double* yr = y + r * n;
                double dot = 0;
                for (std::size_t i = 0; i < n; ++i) dot += gr[i] * yr[i];
                double* gxr = gx + r * n;
                for (std::size_t i = 0; i < n; ++i) gxr[i] += yr[i] * (gr[i] - dot);
            }
        });
    }
    return out;
}

Tensor layer_norm_raw(const Tensor& x, double eps) {
    const Shape& s = x.shape();
    if (s.empty()) throw ShapeError("layer_norm: scalar input has no feature axis");
    if (eps < 0) throw ParameterError("layer_norm: negative eps");
    const std::size_t d = s.back(), rows = x.numel() / d;
    Tensor out = Tensor::zeros(s);
    std::vector<double> rstd(rows);
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = px + r * d;
        double* yr = po + r * d;
        double mu = 0;
        for (std::size_t i = 0; i < d; ++i) mu += xr[i];
        mu /= static_cast<double>(d);
        double var = 0;
        for (std::size_t i = 0; i < d; ++i) {
            const double c = xr[i] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + eps);
        rstd[r] = rs;
        for (std::size_t i = 0; i < d; ++i) yr[i] = (xr[i] - mu) * rs;
    }
    if (want_grad(x)) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        record_backward([xi, oi, rows, d, rstd = std::move(rstd)] {
            if (oi->grad.empty()) return;
            const double* g = oi->grad.data();
            const double* y = oi->data.data();
            double* gx = accum(xi);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g + r * d;
                const double* yr = y + r * d;
                double gm = 0, gym = 0;
                for (std::size_t i = 0; i < d; ++i) {
                    gm += gr[i];
                    gym += gr[i] * yr[i];
                }
                gm /= static_cast<double>(d);
                gym /= static_cast<double>(d);
                double* gxr = gx + r * d;
                for (std::size_t i = 0; i < d; ++i) {
                    gxr[i] += rstd[r] * (gr[i] - gm - yr[i] * gym);
                }
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t d = x.shape().empty() ? 0 : x.shape().back();
    if (gain.ndim() != 1 || gain.extent(0) != d || bias.ndim() != 1 || bias.extent(0) != d) {
        throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) + "], got " +
                         shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
    }
    return add(mul(layer_norm_raw(x, eps), gain), bias);
}

Tensor l2_normalize(const Tensor& x, double eps) {
    const Shape& s = x.shape();
    if (s.empty()) throw ShapeError("l2_normalize: scalar input");
    if (eps < 0) throw ParameterError("l2_normalize: negative eps");
    const std::size_t d = s.back(), rows = x.numel() / d;
    Tensor out = Tensor::zeros(s);
    std::vector<double> inv_norm(rows);
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = px + r * d;
        double ss = 0;
        for (std::size_t i = 0; i < d; ++i) ss += xr[i] * xr[i];
        const double norm = std::sqrt(ss + eps);
        if (norm == 0.0) throw ContractError("l2_normalize: zero row");
        inv_norm[r] = 1.0 / norm;
        double* yr = po + r * d;
        for (std::size_t i = 0; i < d; ++i) yr[i] = xr[i] * inv_norm[r];
    }
    if (want_grad(x)) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        record_backward([xi, oi, rows, d, inv_norm = std::move(inv_norm)] {
            if (oi->grad.empty()) return;
            const double* g = oi->grad.data();
            const double* y = oi->data.data();
            double* gx = accum(xi);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g + r * d;
                const double* yr = y + r * d;
                double dot = 0;
                for (std::size_t i = 0; i < d; ++i) dot += gr[i] * yr[i];
                double* gxr = gx + r * d;
                for (std::size_t i = 0; i < d; ++i) {
                    gxr[i] += (gr[i] - yr[i] * dot) * inv_norm[r];
                }
            }
        });
    }
    return out;
}

// ---- reductions ----

Tensor sum(const Tensor& x) {
    const std::size_t n = x.numel();
    const double* px = x.data();
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += px[i];
    Tensor out = Tensor::scalar(acc);
    if (want_grad(x)) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        record_backward([xi, oi, n] {
            if (oi->grad.empty()) return;
            const double g = oi->grad[0];
            double* gx = accum(xi);
            for (std::size_t i = 0; i < n; ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor mean(const Tensor& x) {
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_axis(const Tensor& x, std::size_t axis) {
    const Shape& s = x.shape();
    if (axis >= s.size()) throw ShapeError("sum_axis: axis out of range");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t ext = s[axis];
    Shape so;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != axis) so.push_back(s[i]);
    }
    Tensor out = Tensor::zeros(so);
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t e = 0; e < ext; ++e) {
            const double* xr = px + (o * ext + e) * inner;
            double* yr = po + o * inner;
            for (std::size_t i = 0; i < inner; ++i) yr[i] += xr[i];
        }
    }
    if (want_grad(x)) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        record_backward([xi, oi, outer, ext, inner] {
            if (oi->grad.empty()) return;
            const double* g = oi->grad.data();
            double* gx = accum(xi);
            for (std::size_t o = 0; o < outer; ++o) {
                const double* gr = g + o * inner;
                for (std::size_t e = 0; e < ext; ++e) {
                    double* xr = gx + (o * ext + e) * inner;
                    for (std::size_t i = 0; i < inner; ++i) xr[i] += gr[i];
                }
            }
        });
    }
    return out;
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
    return scale(sum_axis(x, axis), 1.0 / static_cast<double>(x.shape().at(axis)));
}

// ---- token modulation ----

namespace {

void check_token_shapes(const Tensor& x, const Tensor& s, const char* op) {
    if (x.ndim() != 3 || s.ndim() != 2 || x.extent(0) != s.extent(0) ||
        x.extent(2) != s.extent(1)) {
        throw ShapeError(std::string(op) + ": need x [B,N,d] and s [B,d], got " +
                         shape_str(x.shape()) + " and " + shape_str(s.shape()));
    }
}

}  // namespace

Tensor scale_tokens(const Tensor& x, const Tensor& s) {
    check_token_shapes(x, s, "scale_tokens");
    const std::size_t B = x.extent(0), N = x.extent(1), d = x.extent(2);
    Tensor out = Tensor::zeros(x.shape());
    const double* px = x.data();
    const double* ps = s.data();
    double* po = out.data();
    for (std::size_t b = 0; b < B; ++b) {
        const double* sv = ps + b * d;
        for (std::size_t t = 0; t < N; ++t) {
            const double* xr = px + (b * N + t) * d;
            double* yr = po + (b * N + t) * d;
            for (std::size_t i = 0; i < d; ++i) yr[i] = xr[i] * sv[i];
        }
    }
    if (grad_recording() && (x.requires_grad() || s.requires_grad())) {
        out.set_requires_grad(true);
        auto xi = x.impl(), si = s.impl(), oi = out.impl();
        record_backward([xi, si, oi, B, N, d] {
            if (oi->grad.empty()) return;
            const double* g = oi->grad.data();
            if (xi->requires_grad) {
                double* gx = accum(xi);
                const double* ps2 = si->data.data();
                for (std::size_t b = 0; b < B; ++b) {
                    const double* sv = ps2 + b * d;
                    for (std::size_t t = 0; t < N; ++t) {
                        const std::size_t off = (b * N + t) * d;
                        for (std::size_t i = 0; i < d; ++i) gx[off + i] += g[off + i] * sv[i];
                    }
                }
            }
            if (si->requires_grad) {
                double* gs = accum(si);
                const double* px2 = xi->data.data();
                for (std::size_t b = 0; b < B; ++b) {
                    double* sv = gs + b * d;
                    for (std::size_t t = 0; t < N; ++t) {
                        const std::size_t off = (b * N + t) * d;
                        for (std::size_t i = 0; i < d; ++i) sv[i] += g[off + i] * px2[off + i];
                    }
                }
            }
        });
    }
    return out;
}

Tensor shift_tokens(const Tensor& x, const Tensor& s) {
    check_token_shapes(x, s, "shift_tokens");
    const std::size_t B = x.extent(0), N = x.extent(1), d = x.extent(2);
    Tensor out = Tensor::zeros(x.shape());
    const double* px = x.data();
    const double* ps = s.data();
    double* po = out.data();
    for (std::size_t b = 0; b < B; ++b) {
        const double* sv = ps + b * d;
        for (std::size_t t = 0; t < N; ++t) {
            const double* xr = px + (b * N + t) * d;
            double* yr = po + (b * N + t) * d;
            for (std::size_t i = 0; i < d; ++i) yr[i] = xr[i] + sv[i];
        }
    }
    if (grad_recording() && (x.requires_grad() || s.requires_grad())) {
        out.set_requires_grad(true);
        auto xi = x.impl(), si = s.impl(), oi = out.impl();
        record_backward([xi, si, oi, B, N, d] {
            if (oi->grad.empty()) return;
            const double* g = oi->grad.data();
            if (xi->requires_grad) {
                double* gx = accum(xi);
                for (std::size_t i = 0; i < oi->grad.size(); ++i) gx[i] += g[i];
            }
            if (si->requires_grad) {
                double* gs = accum(si);
                for (std::size_t b = 0; b < B; ++b) {
                    double* sv = gs + b * d;
                    for (std::size_t t = 0; t < N; ++t) {
                        const std::size_t off = (b * N + t) * d;
                        for (std::size_t i = 0; i < d; ++i) sv[i] += g[off + i];
                    }
                }
            }
        });
    }
    return out;
}

// ---- random tensors ----

Tensor randn(Rng& rng, const Shape& shape) {
    Tensor out = Tensor::zeros(shape);
    double* p = out.data();
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) p[i] = rng.normal();
    return out;
}

Tensor rand_uniform(Rng& rng, const Shape& shape) {
    Tensor out = Tensor::zeros(shape);
    double* p = out.data();
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) p[i] = rng.uniform();
    return out;
}

}  // namespace dit
