#ifndef DIT_LOSS_HPP
#define DIT_LOSS_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "dit/codec.hpp"
#include "dit/data.hpp"
#include "dit/schedule.hpp"
#include "dit/semantic.hpp"
#include "dit/tensor.hpp"

namespace dit {

constexpr std::uint64_t kPerceptualExtractorSeed = 9917;

struct LossWeights {
    double lambda_rec = 1.0;
    double lambda_lpips = 0.5;
    double lambda_clip = 0.1;
    double lambda_eps = 1.0;

    void validate() const;
};

struct LossBreakdown {
    double total = 0;
    double eps_mse = 0;
    double rec = 0;
    double lpips = 0;
    double clip = 0;
};

// Frozen multi-scale random features standing in for a pretrained perceptual
// network: two patch-linear stages (patch 4 and 8), gelu, then per-location
// unit normalization.
class PerceptualExtractor {
public:
    explicit PerceptualExtractor(std::size_t feature_dim = 64,
                                 std::uint64_t seed = kPerceptualExtractorSeed);

    // img [3,S,S], S divisible by 8 -> one [N_stage, feature_dim] per stage.
    std::vector<Tensor> features(const Tensor& img) const;

    const std::vector<Tensor>& stage_weights() const { return stage_w_; }
    const std::vector<std::size_t>& stage_patch_sizes() const { return stage_ps_; }

private:
    std::size_t feature_dim_;
    std::vector<std::size_t> stage_ps_;
    std::vector<Tensor> stage_w_;  // [3*ps*ps, feature_dim] each, frozen
};

// All loss terms are differentiable scalar tensors.
Tensor eps_mse(const Tensor& eps_hat, const Tensor& eps);
Tensor l1_rec(const Tensor& x_hat, const Tensor& x_target);
Tensor perceptual_loss(const Tensor& x_hat, const Tensor& x_target,
                       const PerceptualExtractor& pe);
// 1 - cos(enc(x_hat), enc(x_source)); compared against the SOURCE image.
Tensor semantic_loss(const Tensor& x_hat, const Tensor& x_source, const SemanticEncoder& enc);

using DenoiserFn =
    std::function<Tensor(const Tensor& z_t, const std::vector<std::size_t>& t,
                         const Tensor& cond)>;

struct TotalLossResult {
    Tensor total;  // differentiable
    LossBreakdown parts;
};

// One training objective evaluation: per element draws t and noise, forms
// z_t from the encoded target, runs the denoiser conditioned on the encoded
// source, then scores the eps prediction plus the pixel/perceptual/semantic
// terms on the decoded one-step x0 estimate. Terms with zero weight are
// skipped and reported as 0.
TotalLossResult total_loss(const std::vector<PairedSample>& batch, const DenoiserFn& model,
                           const LatentCodec& codec, const SemanticEncoder& enc,
                           const PerceptualExtractor& pe, const NoiseSchedule& sched,
                           const LossWeights& weights, Rng& rng);

}  // namespace dit

#endif
