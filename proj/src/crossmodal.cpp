#include "caliber/crossmodal.hpp"

#include <cmath>
#include <ostream>

#include "caliber/errors.hpp"

namespace caliber {

void CrossModalConfig::validate() const {
    if (context_dim < 1) throw ConfigError("crossmodal: context_dim must be >= 1");
    if (attn_dim < 1) throw ConfigError("crossmodal: attn_dim must be >= 1");
    if (heads < 1 || attn_dim % heads != 0)
        throw ConfigError("crossmodal: attn_dim must be divisible by heads");
    if (pa_hidden < 1) throw ConfigError("crossmodal: pa_hidden must be >= 1");
}

Tape::Id project_audio(Tape& tape, const AudioFrames& audio, const AudioProjParams& pa) {
    if (audio.t_a() < 1) throw DimensionError("project_audio: no frames");
    Tape::Id frames = tape.constant(audio.frames);
    Tape::Id hidden = tape.tanh_of(
        tape.add_rowvec(tape.matmul(frames, tape.param(pa.w1)), tape.param(pa.b1)));
    return tape.add_rowvec(tape.matmul(hidden, tape.param(pa.w2)), tape.param(pa.b2));
}

CrossAttnPrepared prepare_cross_attention(Tape& tape, Tape::Id projected,
                                          const CrossAttnParams& params,
                                          const CrossModalConfig& cfg,
                                          const std::vector<std::uint8_t>& mask) {
    if (tape.value(projected).rows != static_cast<int>(mask.size()))
        throw DimensionError("prepare_cross_attention: mask length mismatch");
    int valid = 0;
    for (auto m : mask) valid += (m != 0);
    if (valid == 0) throw ContextError("cross attention: all audio frames masked");

    CrossAttnPrepared prep;
    prep.mask = mask;
    prep.head_dim = cfg.head_dim();
    Tape::Id keys = tape.matmul(projected, tape.param(params.w_k));     // T_a x d_c
    Tape::Id values = tape.matmul(projected, tape.param(params.w_v));   // T_a x d_c
    for (int h = 0; h < cfg.heads; ++h) {
        prep.key_heads_t.push_back(
            tape.transpose(tape.slice_cols(keys, h * prep.head_dim, prep.head_dim)));
        prep.value_heads.push_back(tape.slice_cols(values, h * prep.head_dim, prep.head_dim));
    }
    return prep;
}

Tape::Id cross_attention_apply(Tape& tape, Tape::Id z_row, const CrossAttnParams& params,
                               const CrossAttnPrepared& prep,
                               std::vector<double>* attn_out) {
    const int heads = static_cast<int>(prep.key_heads_t.size());
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(prep.head_dim));
    Tape::Id q = tape.matmul(z_row, tape.param(params.w_q));  // 1 x d_c

    if (attn_out) attn_out->assign(prep.mask.size(), 0.0);
    Tape::Id merged = -1;
    for (int h = 0; h < heads; ++h) {
        Tape::Id qh = tape.slice_cols(q, h * prep.head_dim, prep.head_dim);
        Tape::Id scores = tape.scale(tape.matmul(qh, prep.key_heads_t[h]), inv_sqrt);
        Tape::Id weights = tape.masked_softmax_vec(scores, prep.mask);
        if (attn_out) {
            const Matrix& wv = tape.value(weights);
            for (std::size_t i = 0; i < prep.mask.size(); ++i)
                (*attn_out)[i] += wv.data[i] / heads;
        }
        Tape::Id oh = tape.matmul(weights, prep.value_heads[h]);  // 1 x d_h
        merged = (merged < 0) ? oh : tape.concat_cols(merged, oh);
    }
    return tape.matmul(merged, tape.param(params.w_o));  // 1 x r
}

Tape::Id cross_attention_context(Tape& tape, Tape::Id z_row, Tape::Id projected,
                                 const CrossAttnParams& params, const CrossModalConfig& cfg,
                                 const std::vector<std::uint8_t>& mask,
                                 std::vector<double>* attn_out) {
    CrossAttnPrepared prep = prepare_cross_attention(tape, projected, params, cfg, mask);
    return cross_attention_apply(tape, z_row, params, prep, attn_out);
}

Tape::Id pooled_audio_context(Tape& tape, const AudioFrames& audio, const AudioProjParams& pa) {
    const int valid = audio.valid_count();
    if (valid == 0) throw ContextError("pooled audio: all frames masked");
    Matrix pooled(1, audio.d_a());
    for (int f = 0; f < audio.t_a(); ++f) {
        if (!audio.mask[f]) continue;
        for (int j = 0; j < audio.d_a(); ++j) pooled.at(0, j) += audio.frames.at(f, j);
    }
    for (double& v : pooled.data) v /= valid;

    Tape::Id p = tape.constant(std::move(pooled));
    Tape::Id hidden =
        tape.tanh_of(tape.add_rowvec(tape.matmul(p, tape.param(pa.w1)), tape.param(pa.b1)));
    return tape.add_rowvec(tape.matmul(hidden, tape.param(pa.w2)), tape.param(pa.b2));
}

Tape::Id global_audio_context(Tape& tape, Tape::Id pooled_ctx, ParamId map_w, ParamId map_b) {
    return tape.add_rowvec(tape.matmul(pooled_ctx, tape.param(map_w)), tape.param(map_b));
}

void write_attention_csv(const AttentionRecord& rec, std::ostream& out) {
    out << "layer,token_index,frame_index,weight\n";
    for (const auto& row : rec.rows)
        for (std::size_t f = 0; f < row.weights.size(); ++f)
            out << row.site << ',' << row.token << ',' << f << ',' << row.weights[f] << '\n';
}

}  // namespace caliber
