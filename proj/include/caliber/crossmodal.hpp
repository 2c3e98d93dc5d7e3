#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "caliber/data.hpp"
#include "caliber/tape.hpp"

namespace caliber {

struct CrossModalConfig {
    int context_dim = 16;  // c, shared audio context width
    int attn_dim = 16;     // d_c, cross-attention width
    int heads = 2;
    int pa_hidden = 32;    // hidden width of the audio projection MLP

    void validate() const;
    int head_dim() const { return attn_dim / heads; }
};

// Two-layer tanh perceptron projecting audio frames d_a -> pa_hidden -> c.
struct AudioProjParams {
    ParamId w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};

// Per-site cross-attention projections. Shapes: w_q r x d_c, w_k c x d_c,
// w_v c x d_c, w_o d_c x r; attention projections carry no biases.
struct CrossAttnParams {
    ParamId w_q = -1, w_k = -1, w_v = -1, w_o = -1;
};

// Projects every audio frame through the shared MLP; masked frames pass
// through too but are excluded later by the attention mask. T_a x c node.
Tape::Id project_audio(Tape& tape, const AudioFrames& audio, const AudioProjParams& pa);

// Keys/values precomputed once per (site, sample); queries then attend
// token by token.
struct CrossAttnPrepared {
    std::vector<Tape::Id> key_heads_t;  // per head: d_h x T_a
    std::vector<Tape::Id> value_heads;  // per head: T_a x d_h
    std::vector<std::uint8_t> mask;
    int head_dim = 0;
};

CrossAttnPrepared prepare_cross_attention(Tape& tape, Tape::Id projected,
                                          const CrossAttnParams& params,
                                          const CrossModalConfig& cfg,
                                          const std::vector<std::uint8_t>& mask);

// Scaled dot-product attention of one token's low-rank feature over the audio
// frames; returns the 1 x r context node. When attn_out is non-null it
// receives the head-averaged weights over all T_a frames (masked frames 0).
Tape::Id cross_attention_apply(Tape& tape, Tape::Id z_row, const CrossAttnParams& params,
                               const CrossAttnPrepared& prep,
                               std::vector<double>* attn_out);

// One-shot convenience wrapper over prepare + apply.
Tape::Id cross_attention_context(Tape& tape, Tape::Id z_row, Tape::Id projected,
                                 const CrossAttnParams& params, const CrossModalConfig& cfg,
                                 const std::vector<std::uint8_t>& mask,
                                 std::vector<double>* attn_out);

// Mean-pools unmasked frames (plain arithmetic), projects through the shared
// MLP to the context space; 1 x c node. Throws ContextError when every frame
// is masked.
Tape::Id pooled_audio_context(Tape& tape, const AudioFrames& audio, const AudioProjParams& pa);

// Token-independent per-site context: pooled context through the site's
// linear map to the adapter space. 1 x r node.
Tape::Id global_audio_context(Tape& tape, Tape::Id pooled_ctx, ParamId map_w, ParamId map_b);

// Attention weights for export: one row per (site, token) with weights over
// that sample's audio frames.
struct AttentionRecord {
    struct Row {
        int site = 0;
        int token = 0;
        std::vector<double> weights;
    };
    std::vector<Row> rows;
};

// CSV columns: layer,token_index,frame_index,weight
void write_attention_csv(const AttentionRecord& rec, std::ostream& out);

}  // namespace caliber
