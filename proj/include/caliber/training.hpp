#pragma once

#include <map>
#include <string>
#include <vector>

#include "caliber/adapters.hpp"
#include "caliber/data.hpp"

namespace caliber {

struct TrainConfig {
    int epochs = 50;
    double lr = 1e-3;
    double weight_decay = 1e-3;
    int batch_size = 32;
    std::uint64_t seed = 1;
    double clip_norm = 0.0;  // global-norm gradient clip; 0 disables
    bool ml_objective = false;  // maximize the bare likelihood, no KL terms
    PriorConfig prior;
    AdapterConfig adapter;
    BackboneConfig backbone;
    CrossModalConfig cross;

    void validate() const;
};

// Flat key=value config file ('#' comments allowed). Unknown keys error.
std::map<std::string, std::string> parse_kv_text(const std::string& text);
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);
std::string train_config_to_text(const TrainConfig& cfg);  // canonical form
std::uint64_t train_config_hash(const TrainConfig& cfg);

SynthConfig parse_synth_config(const std::string& text);
SynthConfig load_synth_config(const std::string& path);

// Model dimensions that come from the data: vocabulary, classes, audio width,
// sequence budget. The adapter/backbone/cross/prior axes come from cfg.
ModelConfig make_model_config(const TrainConfig& cfg, const Dataset& ds);

// Decoupled-decay Adam: p <- p - lr * mhat / (sqrt(vhat) + eps) - lr * wd * p
// with bias-corrected moments.
class AdamW {
  public:
    AdamW() = default;
    AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8)
        : lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void ensure_state(const ParamStore& params);
    // One update over every parameter; grads indexed by ParamId. Throws
    // TrainingError naming the parameter on a non-finite gradient.
    void step(ParamStore& params, const std::vector<Matrix>& grads);

    long long step_count() const { return step_count_; }
    struct Moments {
        Matrix m, v;
    };
    std::vector<Moments>& state() { return state_; }
    const std::vector<Moments>& state() const { return state_; }
    void set_step_count(long long n) { step_count_ = n; }

  private:
    double lr_ = 1e-3, weight_decay_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    long long step_count_ = 0;
    std::vector<Moments> state_;
};

struct TrainResult {
    std::vector<double> epoch_neg_elbo;  // per epoch: summed negative objective
    std::vector<double> epoch_nll;       // per epoch: summed negative log-likelihood
    std::vector<double> epoch_kl;        // per epoch: summed KL (unweighted)
};

// Minibatch ascent on the ELBO over the given dataset indices. Batch order
// reshuffles per epoch from (seed, epoch); step noise is keyed by
// (seed, step, sample index), so a resumed run replays the exact stream.
class Trainer {
  public:
    Trainer(Model& model, TrainConfig cfg, int n_train_samples);

    // One optimizer step over the next scheduled batch.
    ElboBreakdown step(const Dataset& ds, const std::vector<int>& indices);
    // Remaining steps until the configured epoch budget; per-epoch trace.
    TrainResult run(const Dataset& ds, const std::vector<int>& indices);

    long long current_step() const { return step_; }
    int steps_per_epoch() const { return steps_per_epoch_; }
    AdamW& optimizer() { return adam_; }

    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

  private:
    Model* model_;
    TrainConfig cfg_;
    AdamW adam_;
    long long step_ = 0;
    int steps_per_epoch_ = 0;
};

// Trains on the given indices (all samples when empty); per-epoch trace.
TrainResult train_model(Model& model, const Dataset& ds, const std::vector<int>& indices,
                        const TrainConfig& cfg);

// Canonical flat text form of a model's shape; embedded in checkpoints so a
// checkpoint alone can rebuild its model.
std::string model_config_to_text(const ModelConfig& mc);
ModelConfig parse_model_config(const std::string& text);

struct CheckpointData {
    std::uint64_t train_config_hash = 0;
    std::string model_config_text;
    std::string train_config_text;
    long long step = 0;
    long long adam_steps = 0;
    struct Param {
        std::string name;
        Matrix value;
    };
    std::vector<Param> params;
    std::vector<AdamW::Moments> moments;
};

void write_checkpoint(const std::string& path, const Model& model, const TrainConfig& cfg,
                      const AdamW& adam, long long step);
CheckpointData read_checkpoint(const std::string& path);
Model restore_model(const CheckpointData& ck);

}  // namespace caliber
