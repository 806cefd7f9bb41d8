#include "dit/sampler.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "dit/errors.hpp"

namespace dit {

SampleMode sample_mode_from_string(const std::string& s) {
    if (s == "full") return SampleMode::Full;
    if (s == "partial") return SampleMode::Partial;
    throw ParameterError("sample mode must be 'full' or 'partial', got '" + s + "'");
}

std::string sample_mode_to_string(SampleMode m) {
    return m == SampleMode::Full ? "full" : "partial";
}

SamplerContext make_sampler_context(const DiTModel& model, const LatentCodec& codec,
                                    const SemanticEncoder& enc, const NoiseSchedule& sched) {
    const DiTConfig& c = model.config();
    DenoiserFn fn = [&model](const Tensor& z_t, const std::vector<std::size_t>& t,
                             const Tensor& cond) { return model.forward(z_t, t, cond); };
    return SamplerContext{std::move(fn), {c.in_channels, c.input_size, c.input_size}, codec,
                          enc, sched};
}

namespace {

// Shared denoising loop for both sampling modes and for batched evaluation.
// Latents z[i] start at timestep first_t; each chain consumes only its own rng.
std::vector<Tensor> run_chain(const SamplerContext& ctx, std::vector<Tensor> z,
                              std::size_t first_t, const std::vector<Tensor>& cond_embeds,
                              std::vector<Rng>& rngs) {
    const std::size_t B = z.size();
    Tensor cond = stack(cond_embeds);  // [B, cond_dim]
    for (std::size_t t = first_t + 1; t-- > 0;) {
        std::vector<std::size_t> ts(B, t);
        Tensor eps_hat = ctx.denoiser(stack(z), ts, cond);
        for (std::size_t i = 0; i < B; ++i) {
            Tensor ei = reshape(slice(eps_hat, 0, i, 1), z[i].shape());
            z[i] = ancestral_step(z[i], t, ei, rngs[i], ctx.sched);
        }
    }
    return z;
}

Tensor decode_clamped(const SamplerContext& ctx, const Tensor& z) {
    return clamp(ctx.codec.decode(z), -1.0, 1.0);
}

Shape latent_shape(const SamplerContext& ctx) { return ctx.latent; }

double mean_abs_diff(const Tensor& a, const Tensor& b) {
    const double* pa = a.data();
    const double* pb = b.data();
    double acc = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += std::fabs(pa[i] - pb[i]);
    return acc / static_cast<double>(a.numel());
}

}  // namespace

Tensor sample_full(const SamplerContext& ctx, const Tensor& source_img, Rng rng) {
    NoGradGuard ng;
    Rng noise_rng = rng.split("chain");
    std::vector<Tensor> z{randn(noise_rng, latent_shape(ctx))};
    std::vector<Tensor> cond{ctx.enc.encode(source_img)};
    std::vector<Rng> rngs{noise_rng};
    z = run_chain(ctx, std::move(z), ctx.sched.T - 1, cond, rngs);
    return decode_clamped(ctx, z[0]);
}

Tensor sample_partial(const SamplerContext& ctx, const Tensor& source_img, std::size_t t_start,
                      Rng rng) {
    if (t_start == 0 || t_start >= ctx.sched.T) {
        throw ParameterError("sample_partial: t_start = " + std::to_string(t_start) +
                             " out of range (0, " + std::to_string(ctx.sched.T) + ")");
    }
    NoGradGuard ng;
    Rng noise_rng = rng.split("chain");
    Tensor z0 = ctx.codec.encode(source_img);
    Tensor eps = randn(noise_rng, z0.shape());
    std::vector<Tensor> z{q_sample(z0, t_start, eps, ctx.sched)};
    std::vector<Tensor> cond{ctx.enc.encode(source_img)};
    std::vector<Rng> rngs{noise_rng};
    z = run_chain(ctx, std::move(z), t_start - 1, cond, rngs);
    return decode_clamped(ctx, z[0]);
}

double psnr_db(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("psnr_db: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const double* pa = a.data();
    const double* pb = b.data();
    double mse = 0;
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) {
        const double d = pa[i] - pb[i];
        mse += d * d;
    }
    mse /= static_cast<double>(n);
    if (mse == 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(4.0 / mse));
}

EvalReport evaluate(const SamplerContext& ctx, const DatasetManifest& manifest_test,
                    SampleMode mode, std::size_t t_start, std::uint64_t seed,
                    const std::string& csv_path, const std::string& grid_path) {
    if (manifest_test.entries.empty()) throw ParameterError("evaluate: empty test manifest");
    if (mode == SampleMode::Partial && (t_start == 0 || t_start >= ctx.sched.T)) {
        throw ParameterError("evaluate: t_start = " + std::to_string(t_start) +
                             " out of range (0, " + std::to_string(ctx.sched.T) + ")");
    }
    NoGradGuard ng;
    EvalReport report;
    const std::size_t n = manifest_test.entries.size();
    const std::size_t chunk = 16;  // lockstep chains; outputs match per-sample runs
    for (std::size_t base = 0; base < n; base += chunk) {
        const std::size_t bs = std::min(chunk, n - base);
        std::vector<PairedSample> samples;
        std::vector<Tensor> z, cond;
        std::vector<Rng> rngs;
        for (std::size_t i = 0; i < bs; ++i) {
            PairedSample p = load_sample(manifest_test, base + i);
            Rng r = Rng(seed).split("eval").split(p.sample_id).split("chain");
            if (mode == SampleMode::Full) {
                z.push_back(randn(r, latent_shape(ctx)));
            } else {
                Tensor z0 = ctx.codec.encode(p.source);
                z.push_back(q_sample(z0, t_start, randn(r, z0.shape()), ctx.sched));
            }
            cond.push_back(ctx.enc.encode(p.source));
            rngs.push_back(r);
            samples.push_back(std::move(p));
        }
        const std::size_t first_t =
            mode == SampleMode::Full ? ctx.sched.T - 1 : t_start - 1;
        z = run_chain(ctx, std::move(z), first_t, cond, rngs);
        for (std::size_t i = 0; i < bs; ++i) {
            Tensor out = decode_clamped(ctx, z[i]);
            EvalRow row;
            row.sample_id = samples[i].sample_id;
            row.psnr_db = psnr_db(out, samples[i].target);
            row.l1 = mean_abs_diff(out, samples[i].target);
            row.cos_src = cosine_similarity(ctx.enc.encode(out), cond[i]);
            row.cos_tgt =
                cosine_similarity(ctx.enc.encode(out), ctx.enc.encode(samples[i].target));
            report.rows.push_back(row);
            report.triples.push_back({samples[i].source, out, samples[i].target});
        }
    }
    const double inv = 1.0 / static_cast<double>(report.rows.size());
    for (const EvalRow& r : report.rows) {
        report.mean.psnr_db += r.psnr_db * inv;
        report.mean.l1 += r.l1 * inv;
        report.mean.cos_src += r.cos_src * inv;
        report.mean.cos_tgt += r.cos_tgt * inv;
    }
    if (!csv_path.empty()) write_eval_csv(report, csv_path);
    if (!grid_path.empty()) emit_grid(report.triples, grid_path);
    return report;
}

void write_eval_csv(const EvalReport& report, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FileError("write_eval_csv: cannot open " + path);
    f << "sample_id,psnr_db,l1,cos_src,cos_tgt\n";
    char buf[192];
    for (const EvalRow& r : report.rows) {
        std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g,%.17g,%.17g\n",
                      static_cast<unsigned long long>(r.sample_id), r.psnr_db, r.l1, r.cos_src,
                      r.cos_tgt);
        f << buf;
    }
    std::snprintf(buf, sizeof(buf), "MEAN,%.17g,%.17g,%.17g,%.17g\n", report.mean.psnr_db,
                  report.mean.l1, report.mean.cos_src, report.mean.cos_tgt);
    f << buf;
    if (!f) throw FileError("write_eval_csv: write failed for " + path);
}

void emit_grid(const std::vector<std::array<Tensor, 3>>& samples, const std::string& path) {
    if (samples.empty()) throw ParameterError("emit_grid: no samples");
    const Shape& s0 = samples[0][0].shape();
    if (s0.size() != 3 || s0[0] != 3) {
        throw ShapeError("emit_grid: expected [3,S,S] images, got " + shape_str(s0));
    }
    for (const auto& triple : samples) {
        for (const Tensor& t : triple) {
            if (t.shape() != s0) {
                throw ShapeError("emit_grid: size mismatch, " + shape_str(t.shape()) + " vs " +
                                 shape_str(s0));
            }
        }
    }
    const std::size_t S = s0[1], sep = 2;
    const std::size_t W = 3 * S + 2 * sep;
    const std::size_t H = samples.size() * S + (samples.size() - 1) * sep;
    Tensor grid = Tensor::full({3, H, W}, 1.0);
    double* g = grid.data();
    for (std::size_t r = 0; r < samples.size(); ++r) {
        for (std::size_t col = 0; col < 3; ++col) {
            const double* src = samples[r][col].data();
            const std::size_t y0 = r * (S + sep), x0 = col * (S + sep);
            for (std::size_t c = 0; c < 3; ++c) {
                for (std::size_t y = 0; y < S; ++y) {
                    for (std::size_t x = 0; x < S; ++x) {
                        g[(c * H + y0 + y) * W + x0 + x] = src[(c * S + y) * S + x];
                    }
                }
            }
        }
    }
    write_image(path, grid);
}

}  // namespace dit
