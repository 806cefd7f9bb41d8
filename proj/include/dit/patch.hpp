#ifndef DIT_PATCH_HPP
#define DIT_PATCH_HPP

#include <cstddef>

#include "dit/tensor.hpp"

namespace dit {

// [B, C, H, W] -> [B, N, C*P*P] with row-major patch order (top-left to
// bottom-right); each token is the flattened C x P x P patch.
Tensor patchify(const Tensor& z, std::size_t P);

// Exact inverse of patchify.
Tensor unpatchify(const Tensor& tokens, std::size_t P, std::size_t H, std::size_t W);

}  // namespace dit

#endif
