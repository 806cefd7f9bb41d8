#include "dit/codec.hpp"

#include <cmath>

#include "dit/errors.hpp"
#include "dit/optim.hpp"
#include "dit/patch.hpp"

namespace dit {

CodecKind codec_kind_from_string(const std::string& s) {
    if (s == "identity") return CodecKind::IdentitySpace2Depth;
    if (s == "tiny-ae") return CodecKind::TinyAe;
    throw ParameterError("codec kind must be 'identity' or 'tiny-ae', got '" + s + "'");
}

std::string codec_kind_to_string(CodecKind k) {
    return k == CodecKind::IdentitySpace2Depth ? "identity" : "tiny-ae";
}

LatentCodec::LatentCodec(std::size_t spatial_factor)
    : kind_(CodecKind::IdentitySpace2Depth), f_(spatial_factor),
      latent_channels_(3 * spatial_factor * spatial_factor) {
    if (f_ == 0) throw ParameterError("LatentCodec: spatial factor must be positive");
}

LatentCodec::LatentCodec(std::size_t spatial_factor, std::size_t latent_channels, Rng init_rng)
    : kind_(CodecKind::TinyAe), f_(spatial_factor), latent_channels_(latent_channels),
      frozen_(false) {
    if (f_ == 0 || latent_channels_ == 0) {
        throw ParameterError("LatentCodec: factor and channels must be positive");
    }
    const std::size_t patch_dim = 3 * f_ * f_;
    auto init = [](Rng r, const Shape& shape, double bound) {
        Tensor t = rand_uniform(r, shape);
        double* p = t.data();
        for (std::size_t i = 0; i < t.numel(); ++i) p[i] = (p[i] * 2.0 - 1.0) * bound;
        t.set_requires_grad(true);
        return t;
    };
    enc_w_ = init(init_rng.split("enc_w"), {patch_dim, latent_channels_},
                  1.0 / std::sqrt(static_cast<double>(patch_dim)));
    enc_b_ = Tensor::zeros({latent_channels_}, true);
    dec_w_ = init(init_rng.split("dec_w"), {latent_channels_, patch_dim},
                  1.0 / std::sqrt(static_cast<double>(latent_channels_)));
    dec_b_ = Tensor::zeros({patch_dim}, true);
}

Tensor LatentCodec::encode(const Tensor& x) const {
    const Shape& s = x.shape();
    if (s.size() != 3 || s[0] != 3 || s[1] != s[2]) {
        throw ShapeError("LatentCodec::encode: expected [3,S,S], got " + shape_str(s));
    }
    const std::size_t S = s[1];
    if (S % f_ != 0) {
        throw ShapeError("LatentCodec::encode: size " + std::to_string(S) +
                         " not divisible by factor " + std::to_string(f_));
    }
    const std::size_t g = S / f_;
    Tensor tokens = patchify(reshape(x, {1, 3, S, S}), f_);           // [1, N, 3f^2]
    tokens = reshape(tokens, {g * g, 3 * f_ * f_});
    if (kind_ == CodecKind::TinyAe) {
        tokens = linear(tokens, enc_w_, enc_b_);                      // [N, Cz]
    }
    return reshape(transpose(tokens, 0, 1), {latent_channels_, g, g});
}

Tensor LatentCodec::decode(const Tensor& z) const {
    const Shape& s = z.shape();
    if (s.size() != 3 || s[0] != latent_channels_ || s[1] != s[2]) {
        throw ShapeError("LatentCodec::decode: expected [" + std::to_string(latent_channels_) +
                         ",g,g], got " + shape_str(s));
    }
    const std::size_t g = s[1], S = g * f_;
    Tensor tokens = transpose(reshape(z, {latent_channels_, g * g}), 0, 1);  // [N, Cz]
    if (kind_ == CodecKind::TinyAe) {
        tokens = linear(tokens, dec_w_, dec_b_);                             // [N, 3f^2]
    }
    Tensor img = reshape(unpatchify(reshape(tokens, {1, g * g, 3 * f_ * f_}), f_, S, S),
                         {3, S, S});
    return kind_ == CodecKind::TinyAe ? clamp(img, -1.0, 1.0) : img;
}

std::vector<std::pair<std::string, Tensor>> LatentCodec::parameters() const {
    if (kind_ == CodecKind::IdentitySpace2Depth) return {};
    return {{"codec.enc.weight", enc_w_},
            {"codec.enc.bias", enc_b_},
            {"codec.dec.weight", dec_w_},
            {"codec.dec.bias", dec_b_}};
}

void LatentCodec::freeze() {
    frozen_ = true;
    for (auto& [name, p] : parameters()) p.set_requires_grad(false);
}

PretrainResult pretrain_tiny_ae(const DatasetManifest& dataset, std::size_t steps, Rng rng,
                                std::size_t spatial_factor, std::size_t latent_channels,
                                std::size_t batch_size, double lr) {
    if (dataset.entries.empty()) throw ParameterError("pretrain_tiny_ae: empty dataset");
    if (steps == 0) throw ParameterError("pretrain_tiny_ae: steps must be positive");
    LatentCodec codec(spatial_factor, latent_channels, rng.split("init"));
    AdamWConfig oc;
    oc.lr = lr;
    oc.weight_decay = 0.0;
    AdamW opt(codec.parameters(), oc);
    Rng data_rng = rng.split("batches");

    std::vector<PairedSample> cache(dataset.entries.size());
    auto image = [&](std::size_t i, bool src) -> const Tensor& {
        if (!cache[i].source.defined()) cache[i] = load_sample(dataset, i);
        return src ? cache[i].source : cache[i].target;
    };

    double last_mse = 0.0;
    for (std::size_t it = 0; it < steps; ++it) {
        Tape tape;
        std::vector<Tensor> losses;
        for (std::size_t b = 0; b < batch_size; ++b) {
            // both halves of each pair pass through the codec downstream
            const std::size_t i = data_rng.uniform_int(dataset.entries.size());
            const Tensor& x = image(i, data_rng.uniform() < 0.5);
            Tensor rec = codec.decode(codec.encode(x));
            Tensor diff = sub(rec, x);
            losses.push_back(mean(mul(diff, diff)));
        }
        Tensor loss = scale(sum(stack(losses)), 1.0 / static_cast<double>(batch_size));
        last_mse = loss.value();
        opt.zero_grad();
        tape.backward(loss);
        opt.step();
    }
    codec.freeze();
    return {codec, last_mse};
}

}  // namespace dit
