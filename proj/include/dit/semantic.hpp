#ifndef DIT_SEMANTIC_HPP
#define DIT_SEMANTIC_HPP

#include <cstdint>
#include <cstddef>

#include "dit/tensor.hpp"

namespace dit {

// Weight seed for the frozen encoder; fixed so every construction agrees bitwise.
constexpr std::uint64_t kSemanticEncoderSeed = 7741;

// Frozen random-feature image encoder standing in for a pretrained semantic
// model: patch features -> gelu -> mean pool -> projection -> unit norm.
// Weights never receive gradients; input images do.
class SemanticEncoder {
public:
    explicit SemanticEncoder(std::size_t embed_dim = 64, std::size_t patch_size = 4,
                             std::size_t hidden_dim = 128,
                             std::uint64_t seed = kSemanticEncoderSeed);

    // image [3, S, S] with S divisible by patch_size -> unit-norm [embed_dim]
    Tensor encode(const Tensor& image) const;

    std::size_t embed_dim() const { return embed_dim_; }
    std::size_t patch_size() const { return patch_size_; }

    const Tensor& patch_proj() const { return patch_proj_; }
    const Tensor& hidden_proj() const { return hidden_proj_; }
    const Tensor& out_proj() const { return out_proj_; }

private:
    std::size_t embed_dim_;
    std::size_t patch_size_;
    std::size_t hidden_dim_;
    Tensor patch_proj_;   // [3*ps*ps, hidden]
    Tensor hidden_proj_;  // [hidden, hidden]
    Tensor out_proj_;     // [hidden, embed]
};

// a.b / (|a||b|); rejects zero vectors.
double cosine_similarity(const Tensor& a, const Tensor& b);

// Differentiable cosine as a scalar tensor; same contract.
Tensor cosine_similarity_t(const Tensor& a, const Tensor& b);

}  // namespace dit

#endif
