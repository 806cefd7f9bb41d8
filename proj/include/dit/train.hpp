#ifndef DIT_TRAIN_HPP
#define DIT_TRAIN_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dit/codec.hpp"
#include "dit/data.hpp"
#include "dit/loss.hpp"
#include "dit/model.hpp"
#include "dit/optim.hpp"
#include "dit/schedule.hpp"
#include "dit/semantic.hpp"

namespace dit {

struct TrainConfig {
    std::size_t iterations = 2000;
    std::size_t batch_size = 16;
    double lr = 1e-4;
    double weight_decay = 1e-4;
    LossWeights loss_weights;
    std::size_t schedule_steps = kDefaultT;
    double beta_start = kDefaultBetaStart;
    double beta_end = kDefaultBetaEnd;
    std::size_t image_size = 32;
    CodecKind codec = CodecKind::IdentitySpace2Depth;
    std::size_t spatial_factor = 2;
    std::size_t latent_channels = 6;  // tiny-ae only
    std::size_t codec_pretrain_steps = 1500;
    std::size_t hidden_size = 128;
    std::size_t depth = 4;
    std::size_t num_heads = 4;
    std::size_t patch_size = 2;
    std::size_t cond_dim = 64;
    std::size_t time_embed_dim = 64;
    std::size_t mlp_ratio = 4;
    std::uint64_t seed = 1;
    std::size_t checkpoint_every = 0;  // 0: only at the end
    std::size_t log_every = 1;

    void validate() const;
};

// Latent geometry implied by (image_size, codec); fails fast when the codec
// and the model disagree.
DiTConfig derive_model_config(const TrainConfig& cfg);
void check_latent_compat(const DiTConfig& model_cfg, const LatentCodec& codec,
                         std::size_t image_size);

// key = value lines, fixed key order; parse rejects unknown keys.
std::string train_config_to_text(const TrainConfig& cfg);
TrainConfig train_config_from_text(const std::string& text);

struct Checkpoint {
    std::uint32_t format_version = 1;
    std::string config_text;
    std::uint64_t step = 0;
    std::uint64_t rng_key = 0;
    std::uint64_t rng_counter = 0;
    std::vector<std::pair<std::string, Tensor>> params;
    bool has_optimizer = false;
    std::uint64_t opt_step = 0;
    AdamWConfig opt_cfg;
    std::vector<std::pair<std::string, std::vector<double>>> opt_m;
    std::vector<std::pair<std::string, std::vector<double>>> opt_v;
};

// Bit-exact binary format, magic "DITCKPT1", little-endian.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint tensors into live parameters by name; unknown or missing
// names raise VersionError, shape mismatches name the parameter.
void restore_params(const Checkpoint& ckpt,
                    const std::vector<std::pair<std::string, Tensor>>& live);

struct TrainOutput {
    Checkpoint checkpoint;
    std::vector<LossBreakdown> log;  // rows logged by this invocation
    std::string checkpoint_path;
    std::string metrics_path;
};

// Everything needed to run inference from a checkpoint.
struct LoadedRun {
    TrainConfig cfg;
    NoiseSchedule sched;
    SemanticEncoder enc;
    PerceptualExtractor pe;
    LatentCodec codec;
    DiTModel model;
};

LoadedRun load_run(const Checkpoint& ckpt);

// The training loop: with-replacement uniform batches, total_loss, backward,
// AdamW, CSV logging, interval + final checkpoints. Fully resumable: a resumed
// run reproduces the exact loss trace of an uninterrupted one.
TrainOutput train(const TrainConfig& cfg, const DatasetManifest& manifest,
                  const std::string& out_dir, const Checkpoint* resume = nullptr,
                  const LatentCodec* pretrained_codec = nullptr);

}  // namespace dit

#endif
