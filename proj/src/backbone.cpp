#include "caliber/backbone.hpp"

#include <cmath>
#include <cstring>

#include "caliber/errors.hpp"
#include "caliber/rng.hpp"

namespace caliber {

void BackboneConfig::validate() const {
    if (layers < 1) throw ConfigError("backbone: layers must be >= 1");
    if (hidden < 1) throw ConfigError("backbone: hidden must be >= 1");
    if (heads < 1 || hidden % heads != 0)
        throw ConfigError("backbone: hidden must be divisible by heads");
    if (vocab < 2) throw ConfigError("backbone: vocab must be >= 2");
    if (max_positions < 1) throw ConfigError("backbone: max_positions must be >= 1");
    if (ffn_mult < 1) throw ConfigError("backbone: ffn_mult must be >= 1");
}

namespace {

Matrix frozen_randn(const BackboneConfig& cfg, const char* name, int idx, int rows,
                    int cols, double std_dev) {
    Rng rng(mix_key({cfg.seed, fnv1a64("backbone"), fnv1a64(name),
                     static_cast<std::uint64_t>(idx)}));
    return Matrix::randn(rows, cols, rng, std_dev);
}

}  // namespace

BackboneWeights build_frozen_backbone(const BackboneConfig& cfg) {
    cfg.validate();
    const int d = cfg.hidden;
    const int f = cfg.ffn_mult * d;
    const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));

    BackboneWeights w;
    w.token_embedding = frozen_randn(cfg, "tok_emb", 0, cfg.vocab, d, 1.0);
    w.position_embedding = frozen_randn(cfg, "pos_emb", 0, cfg.max_positions, d, 0.5);
    w.layers.resize(cfg.layers);
    for (int l = 0; l < cfg.layers; ++l) {
        auto& L = w.layers[l];
        L.w_q = frozen_randn(cfg, "w_q", l, d, d, proj_std);
        L.w_k = frozen_randn(cfg, "w_k", l, d, d, proj_std);
        L.w_v = frozen_randn(cfg, "w_v", l, d, d, proj_std);
        L.w_o = frozen_randn(cfg, "w_o", l, d, d, proj_std);
        L.ffn_w1 = frozen_randn(cfg, "ffn_w1", l, d, f, proj_std);
        L.ffn_b1 = Matrix::zeros(1, f);
        L.ffn_w2 = frozen_randn(cfg, "ffn_w2", l, f, d, 1.0 / std::sqrt(static_cast<double>(f)));
        L.ffn_b2 = Matrix::zeros(1, d);
    }
    return w;
}

namespace {

void hash_matrix(std::uint64_t& h, const Matrix& m) {
    for (double v : m.data) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        for (int s = 0; s < 64; s += 8) {
            h ^= (bits >> s) & 0xFFu;
            h *= 0x100000001B3ull;
        }
    }
}

}  // namespace

std::uint64_t frozen_hash(const BackboneWeights& w) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    hash_matrix(h, w.token_embedding);
    hash_matrix(h, w.position_embedding);
    for (const auto& L : w.layers) {
        hash_matrix(h, L.w_q);
        hash_matrix(h, L.w_k);
        hash_matrix(h, L.w_v);
        hash_matrix(h, L.w_o);
        hash_matrix(h, L.ffn_w1);
        hash_matrix(h, L.ffn_b1);
        hash_matrix(h, L.ffn_w2);
        hash_matrix(h, L.ffn_b2);
    }
    return h;
}

long long frozen_scalar_count(const BackboneWeights& w) {
    long long n = w.token_embedding.size() + w.position_embedding.size();
    for (const auto& L : w.layers)
        n += L.w_q.size() + L.w_k.size() + L.w_v.size() + L.w_o.size() + L.ffn_w1.size() +
             L.ffn_b1.size() + L.ffn_w2.size() + L.ffn_b2.size();
    return n;
}

Matrix embed_tokens(const BackboneConfig& cfg, const BackboneWeights& w,
                    const std::vector<std::uint32_t>& tokens) {
    if (tokens.empty()) throw DimensionError("embed_tokens: empty token sequence");
    if (static_cast<int>(tokens.size()) > cfg.max_positions)
        throw DimensionError("embed_tokens: sequence longer than max_positions");
    Matrix x(static_cast<int>(tokens.size()), cfg.hidden);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        if (tokens[t] >= static_cast<std::uint32_t>(cfg.vocab))
            throw DimensionError("embed_tokens: token id out of vocabulary");
        for (int j = 0; j < cfg.hidden; ++j) {
            x.at(static_cast<int>(t), j) = w.token_embedding.at(static_cast<int>(tokens[t]), j);
            if (cfg.positional)
                x.at(static_cast<int>(t), j) += w.position_embedding.at(static_cast<int>(t), j);
        }
    }
    return x;
}

BackboneForward backbone_forward(Tape& tape, const BackboneConfig& cfg,
                                 const BackboneWeights& w,
                                 const std::vector<std::uint32_t>& tokens,
                                 ParamId head_w, ParamId head_b,
                                 const AdapterHook& hook) {
    BackboneForward out;
    Tape::Id x = tape.constant(embed_tokens(cfg, w, tokens));
    const int dh = cfg.head_dim();
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    for (int l = 0; l < cfg.layers; ++l) {
        out.layer_inputs.push_back(x);
        const auto& L = w.layers[l];
        Tape::Id xn = tape.layernorm_rows(x);

        Tape::Id q = tape.matmul(xn, tape.constant(L.w_q));
        if (hook) {
            Tape::Id dq = hook(tape, l, 'q', xn);
            if (dq >= 0) q = tape.add(q, dq);
        }
        Tape::Id k = tape.matmul(xn, tape.constant(L.w_k));
        Tape::Id v = tape.matmul(xn, tape.constant(L.w_v));
        if (hook) {
            Tape::Id dv = hook(tape, l, 'v', xn);
            if (dv >= 0) v = tape.add(v, dv);
        }

        Tape::Id merged = -1;
        for (int h = 0; h < cfg.heads; ++h) {
            Tape::Id qh = tape.slice_cols(q, h * dh, dh);
            Tape::Id kh = tape.slice_cols(k, h * dh, dh);
            Tape::Id vh = tape.slice_cols(v, h * dh, dh);
            Tape::Id scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt_dh);
            Tape::Id attn = tape.softmax_rows(scores);
            Tape::Id oh = tape.matmul(attn, vh);
            merged = (merged < 0) ? oh : tape.concat_cols(merged, oh);
        }
        x = tape.add(x, tape.matmul(merged, tape.constant(L.w_o)));

        Tape::Id xn2 = tape.layernorm_rows(x);
        Tape::Id hmid = tape.tanh_of(
            tape.add_rowvec(tape.matmul(xn2, tape.constant(L.ffn_w1)), tape.constant(L.ffn_b1)));
        Tape::Id ffn =
            tape.add_rowvec(tape.matmul(hmid, tape.constant(L.ffn_w2)), tape.constant(L.ffn_b2));
        x = tape.add(x, ffn);
    }

    out.pooled = tape.mean_rows(x);
    if (head_w >= 0)
        out.logits =
            tape.add_rowvec(tape.matmul(out.pooled, tape.param(head_w)), tape.param(head_b));
    return out;
}

}  // namespace caliber
