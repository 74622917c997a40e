#pragma once

#include <vector>

#include "skdan/ops.hpp"
#include "skdan/rng.hpp"

namespace skdan {

// Self-attention distillation feature extractor: positional-encoded conv
// embedding followed by n_layers of (multi-head attention -> distillation),
// each distillation halving the sequence length.
struct SadConfig {
    int d_model = 128;
    int n_heads = 2;
    int n_layers = 2;
    int input_channels = 4;
    // Positional encoding denominator base. The default ties the base to
    // twice the sequence length; the conventional 10000 constant is available
    // as a switch.
    bool pe_base_10000 = false;
    // Structure toggles used by the ablation variants.
    bool use_attention = true;
    bool use_distillation = true;

    int head_dim() const { return d_model / n_heads; }
    int output_length(int input_length) const {
        int n = input_length;
        if (use_distillation)
            for (int i = 0; i < n_layers; ++i) n /= 2;
        return n;
    }

    void validate() const {
        if (d_model <= 0 || d_model % 2 != 0)
            throw ConfigError("sad: d_model must be positive and even, got " +
                              std::to_string(d_model));
        if (n_heads <= 0 || d_model % n_heads != 0)
            throw ConfigError("sad: d_model " + std::to_string(d_model) +
                              " not divisible by n_heads " + std::to_string(n_heads));
        if (n_layers < 1 || n_layers > 5)
            throw ConfigError("sad: n_layers must lie in [1,5], got " + std::to_string(n_layers));
        if (input_channels <= 0) throw ConfigError("sad: input_channels must be positive");
    }
};

struct SadLayerParams {
    std::vector<Tensor> wq, wk, wv;  // one {d_model, head_dim} matrix per head
    Tensor distill_w;                // {3, d_model, d_model}
    Tensor distill_b;                // {d_model}
};

struct SadParams {
    Tensor embed_w;  // {3, input_channels, d_model}
    Tensor embed_b;  // {d_model}
    std::vector<SadLayerParams> layers;
};

struct SadLayerVars {
    std::vector<Var> wq, wk, wv;
    Var distill_w, distill_b;
};

struct SadVars {
    Var embed_w, embed_b;
    std::vector<SadLayerVars> layers;
};

// Glorot-uniform weights, zero biases; draw order is fixed for determinism.
SadParams init_sad_params(const SadConfig& cfg, Rng& rng);

// Parameter tensors in declaration order (serialization and Adam order).
std::vector<Tensor*> sad_parameters(SadParams& p);
std::vector<const Tensor*> sad_parameters(const SadParams& p);

SadVars lift_sad(Tape& tape, const SadParams& p, bool tracked);

// P[k, 2j] = sin(k / base^(2j/d_model)), P[k, 2j+1] = cos(.); base = 2n by
// default. Every entry lies in [-1, 1].
Tensor positional_encoding(Index n, int d_model, bool base_10000 = false);

// G = P + Conv1d(x): same-padded kernel-3 conv lifting input_channels to
// d_model, plus the positional encoding.
Var embed_input(Var x, const SadVars& p, const SadConfig& cfg);

// Scaled dot-product attention per head, heads concatenated (no output
// projection).
Var multi_head_attention(Var g, const SadLayerVars& lp, const SadConfig& cfg);

// MaxPool(ELU(Conv1d(h))) with kernel 3 and pool window/stride 2.
Var distill(Var h, const SadLayerVars& lp);

// Full extractor. Ablations: attention and/or distillation can be disabled
// via the config toggles.
Var extract_features(Var x, const SadVars& p, const SadConfig& cfg);

}  // namespace skdan
