#include "dit/semantic.hpp"

#include <cmath>

#include "dit/errors.hpp"
#include "dit/patch.hpp"

namespace dit {

namespace {

Tensor frozen_uniform(Rng rng, const Shape& shape, double bound) {
    Tensor t = rand_uniform(rng, shape);
    double* p = t.data();
    for (std::size_t i = 0; i < t.numel(); ++i) p[i] = (p[i] * 2.0 - 1.0) * bound;
    return t;  // requires_grad stays false: frozen
}

}  // namespace

SemanticEncoder::SemanticEncoder(std::size_t embed_dim, std::size_t patch_size,
                                 std::size_t hidden_dim, std::uint64_t seed)
    : embed_dim_(embed_dim), patch_size_(patch_size), hidden_dim_(hidden_dim) {
    if (embed_dim == 0 || patch_size == 0 || hidden_dim == 0) {
        throw ParameterError("SemanticEncoder: dims must be positive");
    }
    Rng rng(seed);
    const std::size_t in_dim = 3 * patch_size * patch_size;
    patch_proj_ = frozen_uniform(rng.split("patch"), {in_dim, hidden_dim},
                                 1.0 / std::sqrt(static_cast<double>(in_dim)));
    hidden_proj_ = frozen_uniform(rng.split("hidden"), {hidden_dim, hidden_dim},
                                  1.0 / std::sqrt(static_cast<double>(hidden_dim)));
    out_proj_ = frozen_uniform(rng.split("out"), {hidden_dim, embed_dim},
                               1.0 / std::sqrt(static_cast<double>(hidden_dim)));
}

Tensor SemanticEncoder::encode(const Tensor& image) const {
    const Shape& s = image.shape();
    if (s.size() != 3 || s[0] != 3 || s[1] != s[2]) {
        throw ShapeError("SemanticEncoder::encode: expected [3,S,S], got " + shape_str(s));
    }
    if (s[1] % patch_size_ != 0) {
        throw ShapeError("SemanticEncoder::encode: size " + std::to_string(s[1]) +
                         " not divisible by patch size " + std::to_string(patch_size_));
    }
    const std::size_t S = s[1];
    Tensor tokens = patchify(reshape(image, {1, 3, S, S}), patch_size_);  // [1, N, 3p^2]
    const std::size_t n_tok = tokens.extent(1);
    tokens = reshape(tokens, {n_tok, 3 * patch_size_ * patch_size_});
    Tensor h = gelu(linear(tokens, patch_proj_));       // [N, hidden]
    h = gelu(linear(h, hidden_proj_));                  // [N, hidden]
    Tensor pooled = mean_axis(h, 0);                    // [hidden]
    Tensor e = linear(reshape(pooled, {1, hidden_dim_}), out_proj_);  // [1, embed]
    return reshape(l2_normalize(e, 0.0), {embed_dim_});
}

double cosine_similarity(const Tensor& a, const Tensor& b) {
    NoGradGuard ng;
    return cosine_similarity_t(a, b).value();
}

Tensor cosine_similarity_t(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() || a.ndim() != 1) {
        throw ShapeError("cosine_similarity: expected equal vectors, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    // l2_normalize with eps = 0 rejects zero vectors per the contract
    return sum(mul(l2_normalize(a, 0.0), l2_normalize(b, 0.0)));
}

}  // namespace dit
