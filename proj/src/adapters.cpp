#include "caliber/adapters.hpp"

#include <cmath>

#include "caliber/errors.hpp"

namespace caliber {

Variant parse_variant(const std::string& name) {
    if (name == "lora") return Variant::kLora;
    if (name == "blob") return Variant::kBlob;
    if (name == "clora") return Variant::kClora;
    if (name == "caliber-g") return Variant::kCaliberG;
    if (name == "caliber-x") return Variant::kCaliberX;
    if (name == "caliber-x-shared") return Variant::kCaliberXShared;
    throw ConfigError("unknown variant: " + name +
                      " (expected lora|blob|clora|caliber-g|caliber-x|caliber-x-shared)");
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::kLora: return "lora";
        case Variant::kBlob: return "blob";
        case Variant::kClora: return "clora";
        case Variant::kCaliberG: return "caliber-g";
        case Variant::kCaliberX: return "caliber-x";
        case Variant::kCaliberXShared: return "caliber-x-shared";
    }
    throw ConfigError("bad variant enum");
}

bool variant_stochastic(Variant v) { return v != Variant::kLora; }

bool variant_uses_audio(Variant v) {
    return v == Variant::kCaliberG || v == Variant::kCaliberX || v == Variant::kCaliberXShared;
}

bool variant_token_latent(Variant v) {
    return v == Variant::kClora || variant_uses_audio(v);
}

bool variant_cross_attention(Variant v) {
    return v == Variant::kCaliberX || v == Variant::kCaliberXShared;
}

void AdapterConfig::validate() const {
    if (rank < 1) throw ConfigError("adapter: rank must be >= 1");
    if (!(alpha > 0.0)) throw ConfigError("adapter: alpha must be > 0");
    if (!adapt_q && !adapt_v) throw ConfigError("adapter: no sublayers adapted");
}

void ModelConfig::validate() const {
    backbone.validate();
    adapter.validate();
    prior.validate();
    if (variant_cross_attention(adapter.variant) || adapter.variant == Variant::kCaliberG)
        cross.validate();
    if (n_classes < 2) throw ConfigError("model: n_classes must be >= 2");
    if (variant_uses_audio(adapter.variant) && d_a < 1)
        throw ConfigError("model: d_a must be >= 1 for audio variants");
}

Matrix NoiseSource::draw(int rows, int cols, std::uint64_t sample_key, int site, int token) {
    counts_.push_back({site, token, static_cast<long long>(rows) * cols});
    if (zero_) return Matrix::zeros(rows, cols);
    Rng rng(mix_key({root_, sample_key, static_cast<std::uint64_t>(site + 1),
                     static_cast<std::uint64_t>(token + 2)}));
    return Matrix::randn(rows, cols, rng);
}

namespace {

Rng init_rng(std::uint64_t seed, const std::string& name) {
    return Rng(mix_key({seed, fnv1a64("init"), fnv1a64(name)}));
}

ParamId add_randn(ParamStore& ps, std::uint64_t seed, const std::string& name, int rows,
                  int cols, double std_dev) {
    Rng rng = init_rng(seed, name);
    return ps.add(name, Matrix::randn(rows, cols, rng, std_dev));
}

ParamId add_zeros(ParamStore& ps, const std::string& name, int rows, int cols) {
    return ps.add(name, Matrix::zeros(rows, cols));
}

}  // namespace

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    frozen_ = build_frozen_backbone(cfg_.backbone);

    const Variant var = cfg_.adapter.variant;
    const int r = cfg_.adapter.rank;
    const int d = cfg_.backbone.hidden;
    const int k = d;  // adapted sublayers are square projections
    const int c = cfg_.cross.context_dim;
    const int dc = cfg_.cross.attn_dim;
    const std::uint64_t seed = cfg_.init_seed;

    // Classification head first: identical across variants by name keying.
    head_w_ = add_randn(params_, seed, "classifier.w", d, cfg_.n_classes,
                        1.0 / std::sqrt(static_cast<double>(d)));
    head_b_ = add_zeros(params_, "classifier.b", 1, cfg_.n_classes);

    if (variant_uses_audio(var)) {
        const int hid = cfg_.cross.pa_hidden;
        pa_.w1 = add_randn(params_, seed, "audio.w1", cfg_.d_a, hid,
                           1.0 / std::sqrt(static_cast<double>(cfg_.d_a)));
        pa_.b1 = add_zeros(params_, "audio.b1", 1, hid);
        pa_.w2 = add_randn(params_, seed, "audio.w2", hid, c,
                           1.0 / std::sqrt(static_cast<double>(hid)));
        pa_.b2 = add_zeros(params_, "audio.b2", 1, c);
    }

    ParamId shared_wk = -1, shared_wv = -1;
    if (var == Variant::kCaliberXShared) {
        shared_wk = add_randn(params_, seed, "shared.attn.wk", c, dc,
                              1.0 / std::sqrt(static_cast<double>(c)));
        shared_wv = add_randn(params_, seed, "shared.attn.wv", c, dc,
                              1.0 / std::sqrt(static_cast<double>(c)));
    }

    for (int l = 0; l < cfg_.backbone.layers; ++l) {
        for (char proj : {'q', 'v'}) {
            if (proj == 'q' && !cfg_.adapter.adapt_q) continue;
            if (proj == 'v' && !cfg_.adapter.adapt_v) continue;
            AdapterSite site;
            site.layer = l;
            site.proj = proj;
            const std::string base = "site" + std::to_string(sites_.size());
            site.a = add_randn(params_, seed, base + ".A", r, k,
                               1.0 / std::sqrt(static_cast<double>(k)));
            site.b = add_zeros(params_, base + ".B", d, r);

            if (var == Variant::kBlob)
                site.blob_rho = add_zeros(params_, base + ".rho", r, k);

            if (variant_token_latent(var)) {
                // 2r -> 4r -> 2r^2; final layer zero so mu = 0 and raw
                // log-variance = 0 at init.
                site.head.rank = r;
                site.head.w1 = add_randn(params_, seed, base + ".head.w1", 2 * r, 4 * r,
                                         1.0 / std::sqrt(static_cast<double>(2 * r)));
                site.head.b1 = add_zeros(params_, base + ".head.b1", 1, 4 * r);
                site.head.w2 = add_zeros(params_, base + ".head.w2", 4 * r, 2 * r * r);
                site.head.b2 = add_zeros(params_, base + ".head.b2", 1, 2 * r * r);
            }

            if (variant_cross_attention(var)) {
                site.attn.w_q = add_randn(params_, seed, base + ".attn.wq", r, dc,
                                          1.0 / std::sqrt(static_cast<double>(r)));
                if (var == Variant::kCaliberXShared) {
                    site.attn.w_k = shared_wk;
                    site.attn.w_v = shared_wv;
                } else {
                    site.attn.w_k = add_randn(params_, seed, base + ".attn.wk", c, dc,
                                              1.0 / std::sqrt(static_cast<double>(c)));
                    site.attn.w_v = add_randn(params_, seed, base + ".attn.wv", c, dc,
                                              1.0 / std::sqrt(static_cast<double>(c)));
                }
                site.attn.w_o = add_randn(params_, seed, base + ".attn.wo", dc, r,
                                          1.0 / std::sqrt(static_cast<double>(dc)));
            }

            if (var == Variant::kCaliberG) {
                site.g_w = add_randn(params_, seed, base + ".gmap.w", c, r,
                                     1.0 / std::sqrt(static_cast<double>(c)));
                site.g_b = add_zeros(params_, base + ".gmap.b", 1, r);
            }
            sites_.push_back(site);
        }
    }
}

int Model::site_index(int layer, char proj) const {
    for (std::size_t i = 0; i < sites_.size(); ++i)
        if (sites_[i].layer == layer && sites_[i].proj == proj) return static_cast<int>(i);
    return -1;
}

ForwardResult Model::forward(Tape& tape, const MultimodalSample& sample,
                             const ForwardOptions& opts) const {
    const Variant var = cfg_.adapter.variant;
    const int r = cfg_.adapter.rank;
    const double sc = cfg_.adapter.alpha / r;
    const bool sampled = opts.mode == LatentMode::kSampled;

    if (sampled && variant_stochastic(var) && opts.noise == nullptr)
        throw InputError("forward: sampled mode requires a noise source");

    ForwardResult res;
    res.kl_per_site.assign(sites_.size(), -1);

    // Audio context, shared across sites and tokens of this sample.
    Tape::Id projected = -1;   // T_a x c (cross-attention variants)
    Tape::Id pooled_ctx = -1;  // 1 x c (caliber-g)
    std::vector<CrossAttnPrepared> preps(sites_.size());
    if (variant_uses_audio(var)) {
        if (sample.audio.t_a() < 1)
            throw InputError("variant " + variant_name(var) + " requires audio frames");
        if (sample.audio.d_a() != cfg_.d_a)
            throw DimensionError("audio frame width does not match model d_a");
        if (sample.audio.valid_count() == 0) {
            res.audio_fallback = true;  // degrade to text-only: context pinned to zero
        } else if (var == Variant::kCaliberG) {
            pooled_ctx = pooled_audio_context(tape, sample.audio, pa_);
        } else {
            projected = project_audio(tape, sample.audio, pa_);
            if (var == Variant::kCaliberXShared) {
                // K/V are shared parameters, so their nodes are too.
                CrossAttnPrepared prep = prepare_cross_attention(
                    tape, projected, sites_[0].attn, cfg_.cross, sample.audio.mask);
                for (auto& p : preps) p = prep;
            } else {
                for (std::size_t s = 0; s < sites_.size(); ++s)
                    preps[s] = prepare_cross_attention(tape, projected, sites_[s].attn,
                                                       cfg_.cross, sample.audio.mask);
            }
        }
    }

    AdapterHook hook = [&](Tape& t, int layer, char proj, Tape::Id xn) -> Tape::Id {
        const int si = site_index(layer, proj);
        if (si < 0) return -1;
        const AdapterSite& site = sites_[si];
        Tape::Id z_all = t.matmul(xn, t.transpose(t.param(site.a)));  // T x r

        if (var == Variant::kLora)
            return t.scale(t.matmul(z_all, t.transpose(t.param(site.b))), sc);

        if (var == Variant::kBlob) {
            Tape::Id a_used;
            if (sampled) {
                Tape::Id sigma = t.add_scalar(
                    t.scale(t.softplus_of(t.param(site.blob_rho)), cfg_.prior.epsilon),
                    cfg_.prior.delta);
                const int kdim = cfg_.backbone.hidden;
                Matrix xi = opts.noise->draw(r, kdim, opts.sample_key, si, -1);
                a_used = t.add(t.param(site.a), t.hadamard(sigma, t.constant(std::move(xi))));
            } else {
                a_used = t.param(site.a);  // posterior mean
            }
            Tape::Id z_s = t.matmul(xn, t.transpose(a_used));
            return t.scale(t.matmul(z_s, t.transpose(t.param(site.b))), sc);
        }

        // Token-latent variants: clora, caliber-g, caliber-x, caliber-x-shared.
        const int t_x = t.value(z_all).rows;
        Tape::Id b_t = t.transpose(t.param(site.b));  // r x d
        Tape::Id g_ctx = -1;
        if (var == Variant::kCaliberG && !res.audio_fallback)
            g_ctx = global_audio_context(t, pooled_ctx, site.g_w, site.g_b);

        std::vector<Tape::Id> token_kls;
        Tape::Id delta = -1;
        for (int tok = 0; tok < t_x; ++tok) {
            Tape::Id z = t.slice_rows(z_all, tok, 1);  // 1 x r

            Tape::Id u_ctx;
            if (var == Variant::kClora) {
                u_ctx = z;  // text-only conditioning duplicates the local feature
            } else if (res.audio_fallback) {
                u_ctx = t.constant(Matrix::zeros(1, r));
            } else if (var == Variant::kCaliberG) {
                u_ctx = g_ctx;
            } else {
                std::vector<double> attn;
                u_ctx = cross_attention_apply(t, z, site.attn, preps[si],
                                              opts.attention ? &attn : nullptr);
                if (opts.attention)
                    opts.attention->rows.push_back({si, tok, std::move(attn)});
            }

            Tape::Id eta = t.concat_cols(z, u_ctx);  // 1 x 2r
            PosteriorNodes post = posterior_params(t, eta, site.head, cfg_.prior);
            if (opts.probe)
                opts.probe->entries.push_back(
                    {si, tok, t.value(post.mu).data, t.value(post.sigma).data});

            Tape::Id e_mat;
            if (opts.mode == LatentMode::kIdentity) {
                e_mat = t.constant(Matrix::identity(r));
            } else if (opts.mode == LatentMode::kMean) {
                e_mat = t.reshape(post.mu, r, r);
            } else {
                Matrix xi = opts.noise->draw(1, r * r, opts.sample_key, si, tok);
                Tape::Id evec =
                    t.add(post.mu, t.hadamard(post.sigma, t.constant(std::move(xi))));
                e_mat = t.reshape(evec, r, r);
            }
            if (opts.build_kl)
                token_kls.push_back(kl_node(t, post.mu, post.sigma, cfg_.prior.beta));

            Tape::Id row = t.matmul(t.matmul(z, t.transpose(e_mat)), b_t);  // 1 x d
            delta = (delta < 0) ? row : t.concat_rows(delta, row);
        }

        if (opts.build_kl && !token_kls.empty()) {
            Tape::Id kl_sum = token_kls[0];
            for (std::size_t i = 1; i < token_kls.size(); ++i)
                kl_sum = t.add(kl_sum, token_kls[i]);
            res.kl_per_site[si] = t.scale(kl_sum, 1.0 / t_x);
        }
        return t.scale(delta, sc);
    };

    BackboneForward bf = backbone_forward(tape, cfg_.backbone, frozen_, sample.tokens,
                                          head_w_, head_b_, hook);
    res.logits = bf.logits;
    res.pooled = bf.pooled;
    return res;
}

std::vector<Tape::Id> Model::blob_kl_nodes(Tape& tape) const {
    if (cfg_.adapter.variant != Variant::kBlob)
        throw ConfigError("blob_kl_nodes: model is not the blob variant");
    std::vector<Tape::Id> nodes;
    for (const auto& site : sites_) {
        Tape::Id sigma = tape.add_scalar(
            tape.scale(tape.softplus_of(tape.param(site.blob_rho)), cfg_.prior.epsilon),
            cfg_.prior.delta);
        nodes.push_back(kl_node(tape, tape.param(site.a), sigma, cfg_.prior.beta));
    }
    return nodes;
}

ElboResult build_elbo(Tape& tape, const Model& model, const std::vector<BatchSample>& batch,
                      NoiseSource& noise, bool ml_only) {
    if (batch.empty()) throw TrainingError("build_elbo: empty batch");
    const Variant var = model.variant();
    const double gamma = model.config().prior.gamma;
    const bool want_kl = !ml_only && variant_stochastic(var);
    const int n_sites = static_cast<int>(model.sites().size());

    Tape::Id ll_total = -1;
    std::vector<Tape::Id> kl_site(n_sites, -1);

    for (const BatchSample& bs : batch) {
        if (bs.sample->label < 0 || bs.sample->label >= model.config().n_classes)
            throw TrainingError("label out of range");
        ForwardOptions opts;
        opts.mode = LatentMode::kSampled;
        opts.noise = &noise;
        opts.sample_key = bs.key;
        opts.build_kl = want_kl && variant_token_latent(var);
        ForwardResult fr = model.forward(tape, *bs.sample, opts);
        Tape::Id ll = tape.slice_cols(tape.log_softmax_vec(fr.logits), bs.sample->label, 1);
        ll_total = (ll_total < 0) ? ll : tape.add(ll_total, ll);
        for (int s = 0; s < n_sites; ++s) {
            if (fr.kl_per_site[s] < 0) continue;
            kl_site[s] = (kl_site[s] < 0) ? fr.kl_per_site[s]
                                          : tape.add(kl_site[s], fr.kl_per_site[s]);
        }
    }

    // The blob posterior is input-independent; its KL enters once per batch.
    if (want_kl && var == Variant::kBlob) kl_site = model.blob_kl_nodes(tape);

    ElboResult out;
    out.breakdown.log_likelihood = tape.value(ll_total).data[0];

    Tape::Id total = ll_total;
    if (want_kl) {
        Tape::Id kl_sum = -1;
        for (int s = 0; s < n_sites; ++s) {
            if (kl_site[s] < 0) continue;
            out.breakdown.kl_per_layer.push_back(tape.value(kl_site[s]).data[0]);
            kl_sum = (kl_sum < 0) ? kl_site[s] : tape.add(kl_sum, kl_site[s]);
        }
        // gamma == 0 keeps the objective node equal to the bare likelihood,
        // so the update path is bitwise identical to an ml_only run.
        if (kl_sum >= 0 && gamma != 0.0)
            total = tape.sub(ll_total, tape.scale(kl_sum, gamma));
    }
    out.total = total;
    out.loss = tape.scale(total, -1.0);
    out.breakdown.total = tape.value(total).data[0];
    return out;
}

}  // namespace caliber
