#ifndef DIT_SAMPLER_HPP
#define DIT_SAMPLER_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dit/codec.hpp"
#include "dit/data.hpp"
#include "dit/loss.hpp"
#include "dit/model.hpp"
#include "dit/schedule.hpp"
#include "dit/semantic.hpp"

namespace dit {

enum class SampleMode { Full, Partial };

SampleMode sample_mode_from_string(const std::string& s);
std::string sample_mode_to_string(SampleMode m);

struct SamplerContext {
    DenoiserFn denoiser;
    Shape latent;  // [Cz, g, g]
    const LatentCodec& codec;
    const SemanticEncoder& enc;
    const NoiseSchedule& sched;
};

SamplerContext make_sampler_context(const DiTModel& model, const LatentCodec& codec,
                                    const SemanticEncoder& enc, const NoiseSchedule& sched);

// Pure-noise generation: z ~ N(0, I), denoised from t = T-1 down to 0,
// decoded and clamped to [-1, 1].
Tensor sample_full(const SamplerContext& ctx, const Tensor& source_img, Rng rng);

// Partial-noising variant: the encoded source is noised to t_start, then
// denoised from t_start - 1 down to 0. Requires 0 < t_start < T.
Tensor sample_partial(const SamplerContext& ctx, const Tensor& source_img, std::size_t t_start,
                      Rng rng);

// 20*log10(peak / rmse) with peak 2.0; exact matches report the 99 dB cap.
double psnr_db(const Tensor& a, const Tensor& b);

struct EvalRow {
    std::uint64_t sample_id = 0;
    double psnr_db = 0;
    double l1 = 0;
    double cos_src = 0;
    double cos_tgt = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    EvalRow mean;  // aggregates; sample_id unused
    std::vector<std::array<Tensor, 3>> triples;  // (source, output, target)
};

// Samples one output per test pair (its own rng stream per sample), scores
// PSNR/L1/semantic cosines, optionally writes the CSV report and the
// [source | output | target] grid.
EvalReport evaluate(const SamplerContext& ctx, const DatasetManifest& manifest_test,
                    SampleMode mode, std::size_t t_start, std::uint64_t seed,
                    const std::string& csv_path = "", const std::string& grid_path = "");

void write_eval_csv(const EvalReport& report, const std::string& path);

// Single PPM tiling rows as [source | output | target] with a 2-pixel white
// separator between tiles.
void emit_grid(const std::vector<std::array<Tensor, 3>>& samples, const std::string& path);

}  // namespace dit

#endif
