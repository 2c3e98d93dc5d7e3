#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "caliber/matrix.hpp"
#include "caliber/tape.hpp"

namespace caliber {

struct BackboneConfig {
    int layers = 2;         // L
    int hidden = 32;        // d; adapted sublayers have k = d
    int heads = 2;
    int vocab = 64;
    int max_positions = 64;
    int ffn_mult = 2;
    bool positional = true;
    std::uint64_t seed = 7;

    void validate() const;
    int head_dim() const { return hidden / heads; }
};

// Frozen transformer weights in row-operand orientation: with token rows X
// (T_x x d), a projection is X * W. These matrices are plain values and are
// never registered on a ParamStore, so no tape can ever assign them adjoints.
struct BackboneWeights {
    struct Layer {
        Matrix w_q, w_k, w_v, w_o;  // d x d
        Matrix ffn_w1;              // d x (ffn_mult*d)
        Matrix ffn_b1;              // 1 x (ffn_mult*d)
        Matrix ffn_w2;              // (ffn_mult*d) x d
        Matrix ffn_b2;              // 1 x d
    };
    Matrix token_embedding;     // vocab x d
    Matrix position_embedding;  // max_positions x d
    std::vector<Layer> layers;
};

BackboneWeights build_frozen_backbone(const BackboneConfig& cfg);
std::uint64_t frozen_hash(const BackboneWeights& w);
long long frozen_scalar_count(const BackboneWeights& w);

// Token embedding + positional offset as a plain matrix (T_x x d).
Matrix embed_tokens(const BackboneConfig& cfg, const BackboneWeights& w,
                    const std::vector<std::uint32_t>& tokens);

// Called for the query and value projection of every block with the
// normalized block input (T_x x d node); returns a T_x x d delta node, or -1
// when the sublayer is not adapted.
using AdapterHook = std::function<Tape::Id(Tape&, int layer, char proj, Tape::Id x_norm)>;

struct BackboneForward {
    std::vector<Tape::Id> layer_inputs;  // per layer: the hidden states entering it
    Tape::Id pooled = -1;                // 1 x d, token mean of the final hidden states
    Tape::Id logits = -1;                // 1 x C
};

// Pre-norm transformer encoder: per block, self-attention and a tanh FFN,
// both with residual connections; adapters add to the q/v projections.
// The classification head (head_w: d x C, head_b: 1 x C) is trainable;
// head_w = -1 skips the head and leaves logits at -1.
BackboneForward backbone_forward(Tape& tape, const BackboneConfig& cfg,
                                 const BackboneWeights& w,
                                 const std::vector<std::uint32_t>& tokens,
                                 ParamId head_w, ParamId head_b,
                                 const AdapterHook& hook);

}  // namespace caliber
