#include "dit/loss.hpp"

#include <cmath>

#include "dit/errors.hpp"
#include "dit/patch.hpp"

namespace dit {

void LossWeights::validate() const {
    if (lambda_rec < 0 || lambda_lpips < 0 || lambda_clip < 0 || lambda_eps < 0) {
        throw ParameterError("LossWeights: weights must be nonnegative");
    }
    if (lambda_rec == 0 && lambda_lpips == 0 && lambda_clip == 0 && lambda_eps == 0) {
        throw ParameterError("LossWeights: at least one weight must be positive");
    }
}

PerceptualExtractor::PerceptualExtractor(std::size_t feature_dim, std::uint64_t seed)
    : feature_dim_(feature_dim), stage_ps_{4, 8} {
    if (feature_dim == 0) throw ParameterError("PerceptualExtractor: feature_dim must be positive");
    Rng rng(seed);
    for (std::size_t ps : stage_ps_) {
        const std::size_t in_dim = 3 * ps * ps;
        Rng stage_rng = rng.split(ps);
        Tensor w = rand_uniform(stage_rng, {in_dim, feature_dim});
        const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
        double* p = w.data();
        for (std::size_t i = 0; i < w.numel(); ++i) p[i] = (p[i] * 2.0 - 1.0) * bound;
        stage_w_.push_back(w);  // frozen: requires_grad stays false
    }
}

std::vector<Tensor> PerceptualExtractor::features(const Tensor& img) const {
    const Shape& s = img.shape();
    if (s.size() != 3 || s[0] != 3 || s[1] != s[2]) {
        throw ShapeError("PerceptualExtractor: expected [3,S,S], got " + shape_str(s));
    }
    const std::size_t S = s[1];
    if (S % 8 != 0) {
        throw ShapeError("PerceptualExtractor: size " + std::to_string(S) +
                         " must be divisible by 8");
    }
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < stage_ps_.size(); ++i) {
        const std::size_t ps = stage_ps_[i];
        Tensor tokens = patchify(reshape(img, {1, 3, S, S}), ps);
        tokens = reshape(tokens, {tokens.extent(1), 3 * ps * ps});
        out.push_back(l2_normalize(gelu(linear(tokens, stage_w_[i])), 1e-20));
    }
    return out;
}

Tensor eps_mse(const Tensor& eps_hat, const Tensor& eps) {
    if (eps_hat.shape() != eps.shape()) {
        throw ShapeError("eps_mse: shape mismatch " + shape_str(eps_hat.shape()) + " vs " +
                         shape_str(eps.shape()));
    }
    Tensor d = sub(eps_hat, eps);
    return mean(mul(d, d));
}

Tensor l1_rec(const Tensor& x_hat, const Tensor& x_target) {
    if (x_hat.shape() != x_target.shape()) {
        throw ShapeError("l1_rec: shape mismatch " + shape_str(x_hat.shape()) + " vs " +
                         shape_str(x_target.shape()));
    }
    return mean(abs(sub(x_hat, x_target)));
}

Tensor perceptual_loss(const Tensor& x_hat, const Tensor& x_target,
                       const PerceptualExtractor& pe) {
    if (x_hat.shape() != x_target.shape()) {
        throw ShapeError("perceptual_loss: shape mismatch " + shape_str(x_hat.shape()) + " vs " +
                         shape_str(x_target.shape()));
    }
    std::vector<Tensor> fh = pe.features(x_hat);
    std::vector<Tensor> ft = pe.features(x_target);
    Tensor loss;
    for (std::size_t i = 0; i < fh.size(); ++i) {
        Tensor d = sub(fh[i], ft[i]);
        Tensor stage = mean(mul(d, d));
        loss = loss.defined() ? add(loss, stage) : stage;
    }
    return loss;
}

namespace {

Tensor semantic_loss_vs_embed(const Tensor& x_hat, const Tensor& src_embed,
                              const SemanticEncoder& enc) {
    Tensor cos = cosine_similarity_t(enc.encode(x_hat), src_embed);
    return add_scalar(scale(cos, -1.0), 1.0);
}

// Re-throws component failures with the loss term name attached.
template <typename F>
Tensor guard_term(const char* name, F&& f) {
    try {
        return f();
    } catch (const ShapeError& e) {
        throw ShapeError(std::string("total_loss[") + name + "]: " + e.what());
    } catch (const ContractError& e) {
        throw ContractError(std::string("total_loss[") + name + "]: " + e.what());
    }
}

}  // namespace

Tensor semantic_loss(const Tensor& x_hat, const Tensor& x_source, const SemanticEncoder& enc) {
    return semantic_loss_vs_embed(x_hat, enc.encode(x_source), enc);
}

TotalLossResult total_loss(const std::vector<PairedSample>& batch, const DenoiserFn& model,
                           const LatentCodec& codec, const SemanticEncoder& enc,
                           const PerceptualExtractor& pe, const NoiseSchedule& sched,
                           const LossWeights& weights, Rng& rng) {
    weights.validate();
    if (batch.empty()) throw ParameterError("total_loss: empty batch");
    const std::size_t B = batch.size();

    std::vector<std::size_t> t(B);
    std::vector<Tensor> zt_list, eps_list, src_embeds;
    zt_list.reserve(B);
    eps_list.reserve(B);
    src_embeds.reserve(B);
    for (std::size_t b = 0; b < B; ++b) {
        t[b] = rng.uniform_int(sched.T);
        Tensor z0 = codec.encode(batch[b].target);
        Tensor eps = randn(rng, z0.shape());
        zt_list.push_back(q_sample(z0, t[b], eps, sched));
        eps_list.push_back(eps);
        src_embeds.push_back(enc.encode(batch[b].source));
    }
    Tensor z_t = stack(zt_list);       // [B, Cz, g, g]
    Tensor eps = stack(eps_list);
    Tensor cond = stack(src_embeds);   // [B, cond_dim]

    Tensor eps_hat = model(z_t, t, cond);
    if (eps_hat.shape() != z_t.shape()) {
        throw ShapeError("total_loss: denoiser output " + shape_str(eps_hat.shape()) +
                         " != latent " + shape_str(z_t.shape()));
    }

    LossBreakdown parts;
    Tensor total;
    auto add_term = [&](const Tensor& term, double lambda, double& slot) {
        slot = term.value();
        Tensor weighted = scale(term, lambda);
        total = total.defined() ? add(total, weighted) : weighted;
    };

    if (weights.lambda_eps > 0) {
        add_term(guard_term("eps", [&] { return eps_mse(eps_hat, eps); }), weights.lambda_eps,
                 parts.eps_mse);
    }
    if (weights.lambda_rec > 0 || weights.lambda_lpips > 0 || weights.lambda_clip > 0) {
        const Shape lat = zt_list[0].shape();
        std::vector<Tensor> rec_terms, lpips_terms, clip_terms;
        for (std::size_t b = 0; b < B; ++b) {
            Tensor zb = reshape(slice(z_t, 0, b, 1), lat);
            Tensor eb = reshape(slice(eps_hat, 0, b, 1), lat);
            Tensor x0_lat = predict_x0_from_eps(zb, t[b], eb, sched, /*clip=*/false);
            Tensor x0_px = codec.decode(x0_lat);
            if (weights.lambda_rec > 0) {
                rec_terms.push_back(
                    guard_term("rec", [&] { return l1_rec(x0_px, batch[b].target); }));
            }
            if (weights.lambda_lpips > 0) {
                lpips_terms.push_back(guard_term(
                    "lpips", [&] { return perceptual_loss(x0_px, batch[b].target, pe); }));
            }
            if (weights.lambda_clip > 0) {
                clip_terms.push_back(guard_term(
                    "clip", [&] { return semantic_loss_vs_embed(x0_px, src_embeds[b], enc); }));
            }
        }
        auto batch_mean = [&](std::vector<Tensor>& terms) {
            return scale(sum(stack(terms)), 1.0 / static_cast<double>(B));
        };
        if (weights.lambda_rec > 0) {
            add_term(batch_mean(rec_terms), weights.lambda_rec, parts.rec);
        }
        if (weights.lambda_lpips > 0) {
            add_term(batch_mean(lpips_terms), weights.lambda_lpips, parts.lpips);
        }
        if (weights.lambda_clip > 0) {
            add_term(batch_mean(clip_terms), weights.lambda_clip, parts.clip);
        }
    }
    parts.total = total.value();
    return {total, parts};
}

}  // namespace dit
