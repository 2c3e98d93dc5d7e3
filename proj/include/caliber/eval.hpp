#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "caliber/adapters.hpp"
#include "caliber/data.hpp"

namespace caliber {

struct PredictiveResult {
    std::vector<double> probs;  // MC-averaged class distribution
    double entropy = 0.0;       // of the averaged distribution, nats
    std::vector<std::vector<double>> per_draw;  // kept when requested
};

// Monte Carlo posterior-predictive: the mean of mc_samples stochastic forward
// softmax outputs, with draw m keyed by (eval_seed, m, sample_key).
// mc_samples == 0 selects the deterministic posterior-mean forward.
PredictiveResult predict_mc(const Model& model, const MultimodalSample& sample,
                            int mc_samples, std::uint64_t eval_seed,
                            std::uint64_t sample_key, bool keep_draws = false);

// Mann-Whitney AUC with ties counted 1/2. Requires both classes present.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// One-vs-rest macro average over classes; equals plain AUC for two classes.
double auc_ovr_macro(const std::vector<PredictiveResult>& results,
                     const std::vector<int>& labels, int n_classes);

struct ReliabilityBins {
    std::vector<double> edges;       // n_bins + 1, strictly increasing over [0,1]
    std::vector<double> confidence;  // mean max-probability per bin
    std::vector<double> accuracy;
    std::vector<long long> count;
};

// ECE = sum_b (n_b / N) |acc_b - conf_b| over equal-width bins of the
// max-probability prediction.
double ece(const std::vector<PredictiveResult>& results, const std::vector<int>& labels,
           int n_bins, ReliabilityBins* bins_out = nullptr);

struct EntropySplit {
    double mean_correct = 0.0;
    double mean_incorrect = 0.0;
    std::vector<double> edges;  // histogram over [0, ln C]
    std::vector<long long> hist_correct;
    std::vector<long long> hist_incorrect;
};

// Groups predictive entropies by argmax correctness. Errors when either
// group is empty.
EntropySplit entropy_split(const std::vector<PredictiveResult>& results,
                           const std::vector<int>& labels, int n_bins = 20);

// Frozen mean-pooled embeddings for the transfer baseline.
Matrix frozen_pooled_text(const BackboneConfig& cfg, const BackboneWeights& w,
                          const std::vector<std::uint32_t>& tokens);
std::vector<double> pooled_audio_embedding(const AudioFrames& audio);

struct TransferConfig {
    int epochs = 40;
    double lr = 1e-3;
    double weight_decay = 1e-3;
    int batch_size = 32;
    std::uint64_t seed = 1;
};

// Concatenated pooled text/audio features through a 3-layer MLP head
// (32 then 16 units then softmax), trained on the train split with AdamW;
// returns the one-vs-rest macro AUC on the test split.
double transfer_baseline(const std::vector<std::vector<double>>& pooled_text,
                         const std::vector<std::vector<double>>& pooled_audio,
                         const std::vector<int>& labels, const std::vector<int>& train_idx,
                         const std::vector<int>& test_idx, int n_classes,
                         const TransferConfig& cfg);

long long transfer_head_param_count(int d_text, int d_audio, int n_classes);

struct MetricsReport {
    std::string variant;
    std::uint64_t seed = 0;
    double auc = 0.0;
    double ece = 0.0;
    double mean_entropy_correct = 0.0;
    double mean_entropy_incorrect = 0.0;
    double nll = 0.0;
};

// JSON object {variant, seed, auc, ece, mean_entropy_correct,
// mean_entropy_incorrect, nll} plus an optional timestamp field that
// comparisons exclude.
std::string metrics_to_json(const MetricsReport& report, bool include_timestamp);
// Drops the timestamp line so reproducibility checks can compare bytes.
std::string strip_timestamp(const std::string& metrics_json);

void write_reliability_csv(const ReliabilityBins& bins, std::ostream& out);
void write_entropy_hist_csv(const EntropySplit& split, std::ostream& out);

struct EvalOutput {
    MetricsReport metrics;
    ReliabilityBins bins;
    EntropySplit entropy;
    std::vector<PredictiveResult> predictions;
    std::vector<int> labels;
};

EvalOutput evaluate_model(const Model& model, const Dataset& ds,
                          const std::vector<int>& indices, int mc_samples,
                          std::uint64_t eval_seed, const std::string& variant_label);

}  // namespace caliber
