#ifndef DIT_MODEL_HPP
#define DIT_MODEL_HPP

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "dit/patch.hpp"
#include "dit/rng.hpp"
#include "dit/tensor.hpp"

namespace dit {

struct DiTConfig {
    std::size_t input_size = 16;     // latent grid side
    std::size_t in_channels = 12;    // latent channels
    std::size_t patch_size = 2;
    std::size_t hidden_size = 128;
    std::size_t depth = 4;
    std::size_t num_heads = 4;
    std::size_t cond_dim = 64;
    std::size_t time_embed_dim = 64;
    std::size_t mlp_ratio = 4;

    void validate() const;
    std::size_t n_tokens() const;    // (input_size / patch_size)^2
    std::size_t token_dim() const { return in_channels * patch_size * patch_size; }
};

// Parameter count as a pure function of the config.
std::size_t dit_param_count(const DiTConfig& cfg);

// Sinusoidal features [sin(t*w_0..), cos(t*w_0..)] with geometric
// frequencies; dim must be even.
Tensor timestep_embedding(std::size_t t, std::size_t dim, double max_period = 10000.0);

// Fixed 2-D sinusoidal position table [grid*grid, dim]; dim must be a
// multiple of 4 (half per axis, sin/cos split per half).
Tensor sincos_pos_embed_2d(std::size_t grid, std::size_t dim);

struct AttentionWeights {
    Tensor q_w, q_b, k_w, k_b, v_w, v_b, out_w, out_b;
};

// Scaled dot-product attention, scale 1/sqrt(d/num_heads); self-attention is
// the kv_tokens == q_tokens case. q_tokens [B,Nq,d], kv_tokens [B,Nk,d].
Tensor multi_head_attention(const Tensor& q_tokens, const Tensor& kv_tokens,
                            const AttentionWeights& w, std::size_t num_heads);

struct DiTBlock {
    Tensor adaln_w, adaln_b;  // gelu(c) -> 9 modulation vectors, zero-init
    AttentionWeights self_attn;
    AttentionWeights cross_attn;
    Tensor ffn1_w, ffn1_b, ffn2_w, ffn2_b;
};

// Three modulated residual sub-layers:
//   x += a1 * SelfAttn((1+g1) * LN(x) + b1)
//   x += a2 * CrossAttn((1+g2) * LN(x) + b2, kv)
//   x += a3 * FFN((1+g3) * LN(x) + b3)
// All nine (g, b, a) come from adaln(gelu(c)); zero gates make the block the
// identity map. tokens [B,N,d], c [B,d], kv [B,1,d].
Tensor dit_block_forward(const Tensor& tokens, const Tensor& c, const Tensor& kv,
                         const DiTBlock& block, std::size_t num_heads);

class DiTModel {
public:
    DiTModel(DiTConfig cfg, Rng init_rng);

    const DiTConfig& config() const { return cfg_; }

    // z_t [B,C,H,W], one timestep per batch element, cond [B,cond_dim]
    // -> predicted noise, same shape as z_t.
    Tensor forward(const Tensor& z_t, const std::vector<std::size_t>& t,
                   const Tensor& cond) const;

    // c = time_mlp(timestep_embedding(t)) + cond_proj(cond); drives every
    // AdaLN pathway. Single-sample convenience, cond_embed [cond_dim] -> [d].
    Tensor conditioning_vector(const Tensor& cond_embed, std::size_t t) const;

    std::vector<std::pair<std::string, Tensor>> parameters() const;
    void zero_grad();

    const Tensor& pos_embed() const { return pos_embed_; }
    DiTBlock& block(std::size_t i) { return blocks_.at(i); }
    const DiTBlock& block(std::size_t i) const { return blocks_.at(i); }
    Tensor& time_mlp_param(int which);  // 0: fc1_w, 1: fc1_b, 2: fc2_w, 3: fc2_b

private:
    Tensor cond_batch(const std::vector<std::size_t>& t, const Tensor& cond) const;  // [B,d]

    DiTConfig cfg_;
    Tensor patch_w_, patch_b_;
    Tensor pos_embed_;  // fixed, not a parameter
    Tensor time_fc1_w_, time_fc1_b_, time_fc2_w_, time_fc2_b_;
    Tensor cond_w_, cond_b_;
    std::vector<DiTBlock> blocks_;
    Tensor final_mod_w_, final_mod_b_;  // gelu(c) -> (gain, shift), zero-init
    Tensor final_w_, final_b_;          // zero-init output projection
};

struct DiTPreset {
    std::string name;
    DiTConfig config;
    std::size_t printed_hidden_size = 0;  // as published, before head rounding
    std::string note;
};

DiTPreset desk_preset();
// DiT-XL-256 as published: 28 layers, 16 heads, hidden 1156. 1156 is not
// divisible by 16 heads, so instantiation substitutes 1152; the printed
// value is kept in the preset metadata.
DiTPreset paper_preset();

}  // namespace dit

#endif
