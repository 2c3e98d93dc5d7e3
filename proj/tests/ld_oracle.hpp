#pragma once

// Test-side scalar re-implementation of the batch objective in long double,
// used as the finite-difference reference for the gradient acceptance check.
// A float64 central difference at h = 1e-5 carries ~|loss|*eps/h rounding
// noise (~5e-11 absolute), which exceeds the 1e-5 relative tolerance at its
// 1e-8 denominator floor; 80-bit evaluation pushes that noise three orders
// below the tolerance. Plain loops, independent of the tape.

#include <cmath>
#include <vector>

#include "caliber/adapters.hpp"
#include "caliber/data.hpp"

namespace ld_oracle {

using LD = long double;
using caliber::Matrix;
using caliber::Model;

inline std::vector<LD> row_of(const Matrix& m, int r) {
    std::vector<LD> out(m.cols);
    for (int j = 0; j < m.cols; ++j) out[j] = m.at(r, j);
    return out;
}

// row * W for a row-operand weight matrix.
inline std::vector<LD> mat_row(const std::vector<LD>& row, const Matrix& w) {
    std::vector<LD> out(w.cols, 0.0L);
    for (int i = 0; i < w.rows; ++i)
        for (int j = 0; j < w.cols; ++j) out[j] += row[i] * static_cast<LD>(w.at(i, j));
    return out;
}

// row * W^T, i.e. the column-convention product W row.
inline std::vector<LD> mat_row_t(const std::vector<LD>& row, const Matrix& w) {
    std::vector<LD> out(w.rows, 0.0L);
    for (int i = 0; i < w.rows; ++i)
        for (int j = 0; j < w.cols; ++j) out[i] += row[j] * static_cast<LD>(w.at(i, j));
    return out;
}

inline std::vector<LD> ln_row(std::vector<LD> x, LD eps = 1e-5L) {
    LD mean = 0.0L, var = 0.0L;
    for (LD v : x) mean += v;
    mean /= static_cast<LD>(x.size());
    for (LD v : x) var += (v - mean) * (v - mean);
    var /= static_cast<LD>(x.size());
    const LD inv = 1.0L / std::sqrt(var + eps);
    for (LD& v : x) v = (v - mean) * inv;
    return x;
}

inline std::vector<LD> softmax(const std::vector<LD>& v) {
    LD mx = v[0];
    for (LD x : v) mx = std::max(mx, x);
    std::vector<LD> out(v.size());
    LD sum = 0.0L;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        sum += out[i];
    }
    for (LD& x : out) x /= sum;
    return out;
}

inline LD log_sum_exp(const std::vector<LD>& v) {
    LD mx = v[0];
    for (LD x : v) mx = std::max(mx, x);
    LD sum = 0.0L;
    for (LD x : v) sum += std::exp(x - mx);
    return mx + std::log(sum);
}

inline LD softplus(LD x) {
    if (x > 0.0L) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

inline LD tanh_ld(LD x) { return std::tanh(x); }

// Negative ELBO of a batch, mirroring build_elbo()'s math: one latent draw
// per (site, token) from the same keyed noise source, per-sample
// token-averaged KL summed over the batch, blob KL once per batch.
inline LD neg_elbo(const Model& model, const std::vector<caliber::BatchSample>& batch,
                   std::uint64_t noise_root) {
    using namespace caliber;
    const ModelConfig& cfg = model.config();
    const Variant var = cfg.adapter.variant;
    const BackboneWeights& fw = model.frozen();
    const ParamStore& ps = model.params();
    auto P = [&](ParamId p) -> const Matrix& { return ps.value(p); };

    const int d = cfg.backbone.hidden;
    const int heads = cfg.backbone.heads;
    const int dh = d / heads;
    const int r = cfg.adapter.rank;
    const LD sc = static_cast<LD>(cfg.adapter.alpha) / r;
    const LD beta = cfg.prior.beta;
    const LD gamma = cfg.prior.gamma;
    const LD eps_sp = cfg.prior.epsilon;
    const LD delta = cfg.prior.delta;
    const int cross_heads = cfg.cross.heads;
    const int cross_dh = cfg.cross.attn_dim / cross_heads;

    NoiseSource noise(noise_root);

    LD ll_total = 0.0L;
    std::vector<LD> kl_site_total(model.sites().size(), 0.0L);

    for (const BatchSample& bs : batch) {
        const MultimodalSample& s = *bs.sample;
        const int t_x = static_cast<int>(s.tokens.size());

        // audio context shared across sites
        std::vector<std::vector<LD>> u_proj;  // T_a x c
        std::vector<LD> pooled_ctx;           // 1 x c
        if (variant_uses_audio(var)) {
            const AudioProjParams& pa = model.audio_proj();
            if (var == Variant::kCaliberG) {
                std::vector<LD> pooled(s.audio.d_a(), 0.0L);
                int valid = 0;
                for (int f = 0; f < s.audio.t_a(); ++f) {
                    if (!s.audio.mask[f]) continue;
                    ++valid;
                    for (int j = 0; j < s.audio.d_a(); ++j)
                        pooled[j] += static_cast<LD>(s.audio.frames.at(f, j));
                }
                for (LD& v : pooled) v /= valid;
                std::vector<LD> hid = mat_row(pooled, P(pa.w1));
                for (std::size_t j = 0; j < hid.size(); ++j)
                    hid[j] = tanh_ld(hid[j] + static_cast<LD>(P(pa.b1).at(0, (int)j)));
                pooled_ctx = mat_row(hid, P(pa.w2));
                for (std::size_t j = 0; j < pooled_ctx.size(); ++j)
                    pooled_ctx[j] += static_cast<LD>(P(pa.b2).at(0, (int)j));
            } else {
                for (int f = 0; f < s.audio.t_a(); ++f) {
                    std::vector<LD> frame = row_of(s.audio.frames, f);
                    std::vector<LD> hid = mat_row(frame, P(pa.w1));
                    for (std::size_t j = 0; j < hid.size(); ++j)
                        hid[j] = tanh_ld(hid[j] + static_cast<LD>(P(pa.b1).at(0, (int)j)));
                    std::vector<LD> u = mat_row(hid, P(pa.w2));
                    for (std::size_t j = 0; j < u.size(); ++j)
                        u[j] += static_cast<LD>(P(pa.b2).at(0, (int)j));
                    u_proj.push_back(std::move(u));
                }
            }
        }

        // token embeddings + backbone blocks
        std::vector<std::vector<LD>> x(t_x);
        for (int t = 0; t < t_x; ++t) {
            x[t] = row_of(fw.token_embedding, static_cast<int>(s.tokens[t]));
            if (cfg.backbone.positional)
                for (int j = 0; j < d; ++j)
                    x[t][j] += static_cast<LD>(fw.position_embedding.at(t, j));
        }

        for (int l = 0; l < cfg.backbone.layers; ++l) {
            const auto& L = fw.layers[l];
            std::vector<std::vector<LD>> xn(t_x);
            for (int t = 0; t < t_x; ++t) xn[t] = ln_row(x[t]);

            // adapter deltas for this layer's q/v sublayers
            auto adapter_delta = [&](char proj,
                                     std::vector<std::vector<LD>>& delta_out) -> bool {
                int si = -1;
                for (std::size_t i = 0; i < model.sites().size(); ++i)
                    if (model.sites()[i].layer == l && model.sites()[i].proj == proj)
                        si = static_cast<int>(i);
                if (si < 0) return false;
                const AdapterSite& site = model.sites()[si];
                delta_out.assign(t_x, std::vector<LD>(d, 0.0L));

                if (var == Variant::kLora || var == Variant::kBlob) {
                    // effective A (sampled for blob)
                    std::vector<std::vector<LD>> a_eff(r, std::vector<LD>(d));
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < d; ++j)
                            a_eff[i][j] = static_cast<LD>(P(site.a).at(i, j));
                    if (var == Variant::kBlob) {
                        Matrix xi = noise.draw(r, d, bs.key, si, -1);
                        for (int i = 0; i < r; ++i)
                            for (int j = 0; j < d; ++j) {
                                const LD sigma =
                                    eps_sp * softplus(static_cast<LD>(
                                                 P(site.blob_rho).at(i, j))) +
                                    delta;
                                a_eff[i][j] += sigma * static_cast<LD>(xi.at(i, j));
                            }
                    }
                    for (int t = 0; t < t_x; ++t) {
                        std::vector<LD> z(r, 0.0L);
                        for (int i = 0; i < r; ++i)
                            for (int j = 0; j < d; ++j) z[i] += a_eff[i][j] * xn[t][j];
                        for (int j = 0; j < d; ++j) {
                            LD acc = 0.0L;
                            for (int i = 0; i < r; ++i)
                                acc += static_cast<LD>(P(site.b).at(j, i)) * z[i];
                            delta_out[t][j] = sc * acc;
                        }
                    }
                    return true;
                }

                // token-latent variants
                std::vector<std::vector<LD>> K, V;  // T_a x d_c
                if (variant_cross_attention(var)) {
                    for (const auto& u : u_proj) {
                        K.push_back(mat_row(u, P(site.attn.w_k)));
                        V.push_back(mat_row(u, P(site.attn.w_v)));
                    }
                }
                std::vector<LD> g_ctx;
                if (var == Variant::kCaliberG) {
                    g_ctx = mat_row(pooled_ctx, P(site.g_w));
                    for (std::size_t j = 0; j < g_ctx.size(); ++j)
                        g_ctx[j] += static_cast<LD>(P(site.g_b).at(0, (int)j));
                }

                for (int t = 0; t < t_x; ++t) {
                    std::vector<LD> z(r, 0.0L);
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < d; ++j)
                            z[i] += static_cast<LD>(P(site.a).at(i, j)) * xn[t][j];

                    std::vector<LD> u_ctx(r, 0.0L);
                    if (var == Variant::kClora) {
                        u_ctx = z;
                    } else if (var == Variant::kCaliberG) {
                        u_ctx = g_ctx;
                    } else {
                        std::vector<LD> q = mat_row(z, P(site.attn.w_q));
                        std::vector<LD> merged(cfg.cross.attn_dim, 0.0L);
                        for (int h = 0; h < cross_heads; ++h) {
                            std::vector<LD> scores(K.size());
                            for (std::size_t f = 0; f < K.size(); ++f) {
                                LD dot = 0.0L;
                                for (int j = 0; j < cross_dh; ++j)
                                    dot += q[h * cross_dh + j] * K[f][h * cross_dh + j];
                                scores[f] = dot / std::sqrt(static_cast<LD>(cross_dh));
                            }
                            std::vector<LD> w = softmax(scores);
                            for (std::size_t f = 0; f < K.size(); ++f)
                                for (int j = 0; j < cross_dh; ++j)
                                    merged[h * cross_dh + j] += w[f] * V[f][h * cross_dh + j];
                        }
                        u_ctx = mat_row(merged, P(site.attn.w_o));
                    }

                    std::vector<LD> eta = z;
                    eta.insert(eta.end(), u_ctx.begin(), u_ctx.end());
                    std::vector<LD> hid = mat_row(eta, P(site.head.w1));
                    for (std::size_t j = 0; j < hid.size(); ++j)
                        hid[j] = tanh_ld(hid[j] +
                                         static_cast<LD>(P(site.head.b1).at(0, (int)j)));
                    std::vector<LD> out = mat_row(hid, P(site.head.w2));
                    for (std::size_t j = 0; j < out.size(); ++j)
                        out[j] += static_cast<LD>(P(site.head.b2).at(0, (int)j));

                    std::vector<LD> mu(out.begin(), out.begin() + r * r);
                    std::vector<LD> sigma(r * r);
                    for (int j = 0; j < r * r; ++j)
                        sigma[j] = eps_sp * softplus(out[r * r + j]) + delta;

                    Matrix xi = noise.draw(1, r * r, bs.key, si, t);
                    std::vector<std::vector<LD>> E(r, std::vector<LD>(r));
                    for (int j = 0; j < r * r; ++j)
                        E[j / r][j % r] = mu[j] + sigma[j] * static_cast<LD>(xi.data[j]);

                    LD kl = 0.0L;
                    for (int j = 0; j < r * r; ++j)
                        kl += std::log(beta / sigma[j]) +
                              (sigma[j] * sigma[j] + mu[j] * mu[j]) / (2.0L * beta * beta) -
                              0.5L;
                    kl_site_total[si] += kl / t_x;

                    std::vector<LD> w(r, 0.0L);
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < r; ++j) w[i] += E[i][j] * z[j];
                    for (int j = 0; j < d; ++j) {
                        LD acc = 0.0L;
                        for (int i = 0; i < r; ++i)
                            acc += static_cast<LD>(P(site.b).at(j, i)) * w[i];
                        delta_out[t][j] = sc * acc;
                    }
                }
                return true;
            };

            std::vector<std::vector<LD>> dq, dv;
            const bool has_q = adapter_delta('q', dq);
            const bool has_v = adapter_delta('v', dv);

            std::vector<std::vector<LD>> Q(t_x), Kb(t_x), Vb(t_x);
            for (int t = 0; t < t_x; ++t) {
                Q[t] = mat_row(xn[t], L.w_q);
                if (has_q)
                    for (int j = 0; j < d; ++j) Q[t][j] += dq[t][j];
                Kb[t] = mat_row(xn[t], L.w_k);
                Vb[t] = mat_row(xn[t], L.w_v);
                if (has_v)
                    for (int j = 0; j < d; ++j) Vb[t][j] += dv[t][j];
            }
            for (int t = 0; t < t_x; ++t) {
                std::vector<LD> merged(d, 0.0L);
                for (int h = 0; h < heads; ++h) {
                    std::vector<LD> scores(t_x);
                    for (int u2 = 0; u2 < t_x; ++u2) {
                        LD dot = 0.0L;
                        for (int j = 0; j < dh; ++j)
                            dot += Q[t][h * dh + j] * Kb[u2][h * dh + j];
                        scores[u2] = dot / std::sqrt(static_cast<LD>(dh));
                    }
                    std::vector<LD> aw = softmax(scores);
                    for (int u2 = 0; u2 < t_x; ++u2)
                        for (int j = 0; j < dh; ++j)
                            merged[h * dh + j] += aw[u2] * Vb[u2][h * dh + j];
                }
                std::vector<LD> o = mat_row(merged, L.w_o);
                for (int j = 0; j < d; ++j) x[t][j] += o[j];
            }
            for (int t = 0; t < t_x; ++t) {
                std::vector<LD> x2 = ln_row(x[t]);
                std::vector<LD> mid = mat_row(x2, L.ffn_w1);
                for (std::size_t j = 0; j < mid.size(); ++j)
                    mid[j] = tanh_ld(mid[j] + static_cast<LD>(L.ffn_b1.at(0, (int)j)));
                std::vector<LD> f2 = mat_row(mid, L.ffn_w2);
                for (int j = 0; j < d; ++j)
                    x[t][j] += f2[j] + static_cast<LD>(L.ffn_b2.at(0, j));
            }
        }

        std::vector<LD> pooled(d, 0.0L);
        for (int t = 0; t < t_x; ++t)
            for (int j = 0; j < d; ++j) pooled[j] += x[t][j] / static_cast<LD>(t_x);
        std::vector<LD> logits = mat_row(pooled, P(model.classifier_w()));
        for (std::size_t j = 0; j < logits.size(); ++j)
            logits[j] += static_cast<LD>(P(model.classifier_b()).at(0, (int)j));
        ll_total += logits[s.label] - log_sum_exp(logits);
    }

    // blob KL enters once per batch
    if (var == Variant::kBlob) {
        for (std::size_t si = 0; si < model.sites().size(); ++si) {
            const AdapterSite& site = model.sites()[si];
            LD kl = 0.0L;
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < cfg.backbone.hidden; ++j) {
                    const LD mu = static_cast<LD>(P(site.a).at(i, j));
                    const LD sigma =
                        eps_sp * softplus(static_cast<LD>(P(site.blob_rho).at(i, j))) + delta;
                    kl += std::log(beta / sigma) +
                          (sigma * sigma + mu * mu) / (2.0L * beta * beta) - 0.5L;
                }
            kl_site_total[si] = kl;
        }
    }

    LD total = ll_total;
    if (variant_stochastic(var)) {
        LD kl_sum = 0.0L;
        for (LD k : kl_site_total) kl_sum += k;
        total = ll_total - gamma * kl_sum;
    }
    return -total;
}

}  // namespace ld_oracle
