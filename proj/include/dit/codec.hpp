#ifndef DIT_CODEC_HPP
#define DIT_CODEC_HPP

#include <cstdint>
#include <cstddef>
#include <string>

#include "dit/data.hpp"
#include "dit/rng.hpp"
#include "dit/tensor.hpp"

namespace dit {

enum class CodecKind { IdentitySpace2Depth, TinyAe };

CodecKind codec_kind_from_string(const std::string& s);
std::string codec_kind_to_string(CodecKind k);

// Pixel <-> latent codec. The identity codec is an exact space-to-depth
// rearrangement (f*f pixel blocks stacked into channels, 3*f*f latent
// channels); the tiny autoencoder is a per-patch linear encode/decode pair
// trained once and then frozen.
class LatentCodec {
public:
    // Identity codec.
    explicit LatentCodec(std::size_t spatial_factor = 2);
    // Tiny autoencoder with randomly initialized (untrained) weights.
    LatentCodec(std::size_t spatial_factor, std::size_t latent_channels, Rng init_rng);

    CodecKind kind() const { return kind_; }
    std::size_t spatial_factor() const { return f_; }
    std::size_t latent_channels() const { return latent_channels_; }

    // [3, S, S] -> [latent_channels, S/f, S/f]
    Tensor encode(const Tensor& x) const;
    // [latent_channels, S/f, S/f] -> [3, S, S]; tiny-ae output is clamped.
    Tensor decode(const Tensor& z) const;

    // Trainable weight handles (tiny-ae only; empty for the identity codec).
    std::vector<std::pair<std::string, Tensor>> parameters() const;
    void freeze();
    bool frozen() const { return frozen_; }

private:
    CodecKind kind_;
    std::size_t f_;
    std::size_t latent_channels_;
    bool frozen_ = true;
    Tensor enc_w_, enc_b_;  // [3*f*f, Cz], [Cz]
    Tensor dec_w_, dec_b_;  // [Cz, 3*f*f], [3*f*f]
};

struct PretrainResult {
    LatentCodec codec;
    double final_mse = 0.0;
};

// L2-reconstruction pretraining of the tiny autoencoder on target images,
// followed by a freeze. Plain deterministic loop; emits the last-step MSE.
PretrainResult pretrain_tiny_ae(const DatasetManifest& dataset, std::size_t steps, Rng rng,
                                std::size_t spatial_factor = 2, std::size_t latent_channels = 6,
                                std::size_t batch_size = 8, double lr = 1e-2);

}  // namespace dit

#endif
