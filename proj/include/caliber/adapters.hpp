#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "caliber/backbone.hpp"
#include "caliber/crossmodal.hpp"
#include "caliber/data.hpp"
#include "caliber/variational.hpp"

namespace caliber {

// Adapter family. The string forms are the CLI contract.
enum class Variant { kLora, kBlob, kClora, kCaliberG, kCaliberX, kCaliberXShared };

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);
bool variant_stochastic(Variant v);       // everything except lora
bool variant_uses_audio(Variant v);       // caliber-g / caliber-x / caliber-x-shared
bool variant_token_latent(Variant v);     // clora and caliber: r^2 latent per (site, token)
bool variant_cross_attention(Variant v);  // caliber-x / caliber-x-shared

struct AdapterConfig {
    Variant variant = Variant::kCaliberX;
    int rank = 8;
    double alpha = 32.0;
    bool adapt_q = true;  // adapted sublayers per block
    bool adapt_v = true;

    void validate() const;
};

struct ModelConfig {
    BackboneConfig backbone;
    AdapterConfig adapter;
    CrossModalConfig cross;
    PriorConfig prior;
    int n_classes = 2;
    int d_a = 24;
    std::uint64_t init_seed = 1;

    void validate() const;
};

// Counter-keyed Gaussian noise. Every draw is an independent stream keyed by
// (root, sample, site, token), so evaluation order never changes the values.
// Draw sizes are tallied per (site, token) for complexity checks.
class NoiseSource {
  public:
    explicit NoiseSource(std::uint64_t root_key) : root_(root_key) {}
    static NoiseSource zeros() {
        NoiseSource n(0);
        n.zero_ = true;
        return n;
    }
    bool is_zero() const { return zero_; }

    Matrix draw(int rows, int cols, std::uint64_t sample_key, int site, int token);

    struct DrawCount {
        int site;
        int token;  // -1 for per-sample draws with no token index
        long long variates;
    };
    const std::vector<DrawCount>& counts() const { return counts_; }
    void reset_counts() { counts_.clear(); }

  private:
    std::uint64_t root_ = 0;
    bool zero_ = false;
    std::vector<DrawCount> counts_;
};

enum class LatentMode {
    kSampled,   // vec(E) = mu + sigma .* xi
    kMean,      // E = reshape(mu): the xi = 0 path
    kIdentity,  // E = I, which collapses the update to plain low-rank form
};

struct PosteriorProbe {
    struct Entry {
        int site;
        int token;
        std::vector<double> mu;
        std::vector<double> sigma;
    };
    std::vector<Entry> entries;
};

struct ForwardOptions {
    LatentMode mode = LatentMode::kSampled;
    NoiseSource* noise = nullptr;       // required for kSampled on stochastic variants
    std::uint64_t sample_key = 0;
    bool build_kl = false;
    AttentionRecord* attention = nullptr;
    PosteriorProbe* probe = nullptr;
};

struct ForwardResult {
    Tape::Id logits = -1;  // 1 x C
    Tape::Id pooled = -1;  // 1 x d
    std::vector<Tape::Id> kl_per_site;  // 1x1 token-averaged KL node or -1 per site
    bool audio_fallback = false;        // all frames masked; context forced to zero
};

struct AdapterSite {
    int layer = 0;
    char proj = 'q';
    ParamId a = -1;         // r x k
    ParamId b = -1;         // d x r, zero-initialized
    ParamId blob_rho = -1;  // r x k raw std parameters (blob only)
    InferenceHeadParams head;
    CrossAttnParams attn;
    ParamId g_w = -1, g_b = -1;  // global-context map c -> r (caliber-g only)
};

class Model {
  public:
    explicit Model(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    Variant variant() const { return cfg_.adapter.variant; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const std::vector<AdapterSite>& sites() const { return sites_; }
    const AudioProjParams& audio_proj() const { return pa_; }
    ParamId classifier_w() const { return head_w_; }
    ParamId classifier_b() const { return head_b_; }

    const BackboneWeights& frozen() const { return frozen_; }
    BackboneWeights& frozen_for_test() { return frozen_; }
    std::uint64_t frozen_weights_hash() const { return frozen_hash(frozen_); }

    long long trainable_param_count() const { return params_.scalar_count(); }

    ForwardResult forward(Tape& tape, const MultimodalSample& sample,
                          const ForwardOptions& opts) const;

    // Whole-matrix KL for the blob posterior over A, one node per site;
    // input-independent, so it is counted once per batch.
    std::vector<Tape::Id> blob_kl_nodes(Tape& tape) const;

  private:
    int site_index(int layer, char proj) const;

    ModelConfig cfg_;
    BackboneWeights frozen_;
    ParamStore params_;
    std::vector<AdapterSite> sites_;
    AudioProjParams pa_;
    ParamId head_w_ = -1, head_b_ = -1;
};

struct BatchSample {
    const MultimodalSample* sample;
    std::uint64_t key;  // stable sample identity for noise derivation
};

struct ElboResult {
    Tape::Id total = -1;  // 1x1 maximization objective
    Tape::Id loss = -1;   // 1x1 negated total, for descent
    ElboBreakdown breakdown;
};

// One latent draw per (site, token) per sample; log-likelihood summed over
// the batch; per-site KL token-averaged within each sample, summed over the
// batch, weighted by gamma. With ml_only the KL terms are neither built nor
// reported and the objective is the bare log-likelihood.
ElboResult build_elbo(Tape& tape, const Model& model, const std::vector<BatchSample>& batch,
                      NoiseSource& noise, bool ml_only = false);

}  // namespace caliber
