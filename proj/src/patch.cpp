#include "dit/patch.hpp"

#include <string>

#include "dit/errors.hpp"

namespace dit {

namespace {

// out[b, gy*(W/P)+gx, c*P*P + py*P + px] = in[b, c, gy*P+py, gx*P+px]
void patch_scatter(const double* in, double* out, std::size_t B, std::size_t C, std::size_t H,
                   std::size_t W, std::size_t P, bool to_tokens, bool accumulate) {
    const std::size_t gw = W / P, gh = H / P;
    const std::size_t tok_len = C * P * P, n_tok = gh * gw;
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t y = 0; y < H; ++y) {
                const std::size_t gy = y / P, py = y % P;
                for (std::size_t x = 0; x < W; ++x) {
                    const std::size_t gx = x / P, px = x % P;
                    const std::size_t img_off = ((b * C + c) * H + y) * W + x;
                    const std::size_t tok_off =
                        (b * n_tok + gy * gw + gx) * tok_len + c * P * P + py * P + px;
                    const std::size_t src = to_tokens ? img_off : tok_off;
                    const std::size_t dst = to_tokens ? tok_off : img_off;
                    if (accumulate) {
                        out[dst] += in[src];
                    } else {
                        out[dst] = in[src];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor patchify(const Tensor& z, std::size_t P) {
    const Shape& s = z.shape();
    if (s.size() != 4) throw ShapeError("patchify: expected [B,C,H,W], got " + shape_str(s));
    if (P == 0) throw ParameterError("patchify: P must be positive");
    const std::size_t B = s[0], C = s[1], H = s[2], W = s[3];
    if (H % P != 0 || W % P != 0) {
        throw ShapeError("patchify: spatial dims " + std::to_string(H) + "x" +
                         std::to_string(W) + " not divisible by P=" + std::to_string(P));
    }
    const std::size_t n_tok = (H / P) * (W / P);
    Tensor out = Tensor::zeros({B, n_tok, C * P * P});
    patch_scatter(z.data(), out.data(), B, C, H, W, P, /*to_tokens=*/true, false);
    if (grad_recording() && z.requires_grad()) {
        out.set_requires_grad(true);
        auto zi = z.impl(), oi = out.impl();
        record_backward([zi, oi, B, C, H, W, P] {
            if (oi->grad.empty()) return;
            if (zi->grad.empty()) zi->grad.assign(zi->data.size(), 0.0);
            patch_scatter(oi->grad.data(), zi->grad.data(), B, C, H, W, P,
                          /*to_tokens=*/false, true);
        });
    }
    return out;
}

Tensor unpatchify(const Tensor& tokens, std::size_t P, std::size_t H, std::size_t W) {
    const Shape& s = tokens.shape();
    if (s.size() != 3) {
        throw ShapeError("unpatchify: expected [B,N,CPP], got " + shape_str(s));
    }
    if (P == 0 || H % P != 0 || W % P != 0) {
        throw ShapeError("unpatchify: bad P=" + std::to_string(P) + " for " +
                         std::to_string(H) + "x" + std::to_string(W));
    }
    const std::size_t B = s[0], n_tok = s[1], tok_len = s[2];
    if (n_tok != (H / P) * (W / P)) {
        throw ShapeError("unpatchify: token count " + std::to_string(n_tok) + " != " +
                         std::to_string((H / P) * (W / P)));
    }
    if (tok_len % (P * P) != 0) {
        throw ShapeError("unpatchify: token length " + std::to_string(tok_len) +
                         " not divisible by P*P");
    }
    const std::size_t C = tok_len / (P * P);
    Tensor out = Tensor::zeros({B, C, H, W});
    patch_scatter(tokens.data(), out.data(), B, C, H, W, P, /*to_tokens=*/false, false);
    if (grad_recording() && tokens.requires_grad()) {
        out.set_requires_grad(true);
        auto ti = tokens.impl(), oi = out.impl();
        record_backward([ti, oi, B, C, H, W, P] {
            if (oi->grad.empty()) return;
            if (ti->grad.empty()) ti->grad.assign(ti->data.size(), 0.0);
            patch_scatter(oi->grad.data(), ti->grad.data(), B, C, H, W, P,
                          /*to_tokens=*/true, true);
        });
    }
    return out;
}

}  // namespace dit
