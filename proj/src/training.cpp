#include "caliber/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "caliber/errors.hpp"

namespace caliber {

void TrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (clip_norm < 0.0) throw ConfigError("train: clip_norm must be >= 0");
    prior.validate();
    adapter.validate();
    backbone.validate();
    if (variant_token_latent(adapter.variant)) cross.validate();
}

std::map<std::string, std::string> parse_kv_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    auto trim = [](std::string s) {
        const char* ws = " \t\r\n";
        const auto a = s.find_first_not_of(ws);
        if (a == std::string::npos) return std::string();
        const auto b = s.find_last_not_of(ws);
        return s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        if (kv.count(key)) throw ConfigError("duplicate config key: " + key);
        kv[key] = value;
    }
    return kv;
}

namespace {

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": bad number '" + v + "'");
    }
}

long long to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long long x = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": bad integer '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    throw ConfigError("config key " + key + ": bad boolean '" + v + "'");
}

std::string fmt(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

void apply_sublayers(AdapterConfig& a, const std::string& v) {
    a.adapt_q = false;
    a.adapt_v = false;
    std::istringstream in(v);
    std::string part;
    while (std::getline(in, part, ',')) {
        if (part == "q") a.adapt_q = true;
        else if (part == "v") a.adapt_v = true;
        else throw ConfigError("adapter.sublayers: unknown entry '" + part + "'");
    }
}

std::string sublayers_text(const AdapterConfig& a) {
    std::string s;
    if (a.adapt_q) s += "q";
    if (a.adapt_v) s += s.empty() ? "v" : ",v";
    return s;
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
    TrainConfig cfg;
    for (const auto& [key, v] : parse_kv_text(text)) {
        if (key == "epochs") cfg.epochs = static_cast<int>(to_int(key, v));
        else if (key == "lr") cfg.lr = to_double(key, v);
        else if (key == "weight_decay") cfg.weight_decay = to_double(key, v);
        else if (key == "batch_size") cfg.batch_size = static_cast<int>(to_int(key, v));
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(to_int(key, v));
        else if (key == "clip_norm") cfg.clip_norm = to_double(key, v);
        else if (key == "ml_objective") cfg.ml_objective = to_bool(key, v);
        else if (key == "prior.beta") cfg.prior.beta = to_double(key, v);
        else if (key == "prior.gamma") cfg.prior.gamma = to_double(key, v);
        else if (key == "prior.epsilon") cfg.prior.epsilon = to_double(key, v);
        else if (key == "prior.delta") cfg.prior.delta = to_double(key, v);
        else if (key == "adapter.variant") cfg.adapter.variant = parse_variant(v);
        else if (key == "adapter.r") cfg.adapter.rank = static_cast<int>(to_int(key, v));
        else if (key == "adapter.alpha") cfg.adapter.alpha = to_double(key, v);
        else if (key == "adapter.sublayers") apply_sublayers(cfg.adapter, v);
        else if (key == "backbone.layers") cfg.backbone.layers = static_cast<int>(to_int(key, v));
        else if (key == "backbone.hidden") cfg.backbone.hidden = static_cast<int>(to_int(key, v));
        else if (key == "backbone.heads") cfg.backbone.heads = static_cast<int>(to_int(key, v));
        else if (key == "backbone.vocab") cfg.backbone.vocab = static_cast<int>(to_int(key, v));
        else if (key == "backbone.max_positions")
            cfg.backbone.max_positions = static_cast<int>(to_int(key, v));
        else if (key == "backbone.ffn_mult") cfg.backbone.ffn_mult = static_cast<int>(to_int(key, v));
        else if (key == "backbone.positional") cfg.backbone.positional = to_bool(key, v);
        else if (key == "backbone.seed") cfg.backbone.seed = static_cast<std::uint64_t>(to_int(key, v));
        else if (key == "cross.context_dim") cfg.cross.context_dim = static_cast<int>(to_int(key, v));
        else if (key == "cross.attn_dim") cfg.cross.attn_dim = static_cast<int>(to_int(key, v));
        else if (key == "cross.heads") cfg.cross.heads = static_cast<int>(to_int(key, v));
        else if (key == "cross.pa_hidden") cfg.cross.pa_hidden = static_cast<int>(to_int(key, v));
        else throw ConfigError("unknown train config key: " + key);
    }
    cfg.validate();
    return cfg;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_train_config(buf.str());
}

std::string train_config_to_text(const TrainConfig& cfg) {
    std::ostringstream out;
    out << "epochs=" << cfg.epochs << '\n'
        << "lr=" << fmt(cfg.lr) << '\n'
        << "weight_decay=" << fmt(cfg.weight_decay) << '\n'
        << "batch_size=" << cfg.batch_size << '\n'
        << "seed=" << cfg.seed << '\n'
        << "clip_norm=" << fmt(cfg.clip_norm) << '\n'
        << "ml_objective=" << (cfg.ml_objective ? 1 : 0) << '\n'
        << "prior.beta=" << fmt(cfg.prior.beta) << '\n'
        << "prior.gamma=" << fmt(cfg.prior.gamma) << '\n'
        << "prior.epsilon=" << fmt(cfg.prior.epsilon) << '\n'
        << "prior.delta=" << fmt(cfg.prior.delta) << '\n'
        << "adapter.variant=" << variant_name(cfg.adapter.variant) << '\n'
        << "adapter.r=" << cfg.adapter.rank << '\n'
        << "adapter.alpha=" << fmt(cfg.adapter.alpha) << '\n'
        << "adapter.sublayers=" << sublayers_text(cfg.adapter) << '\n'
        << "backbone.layers=" << cfg.backbone.layers << '\n'
        << "backbone.hidden=" << cfg.backbone.hidden << '\n'
        << "backbone.heads=" << cfg.backbone.heads << '\n'
        << "backbone.vocab=" << cfg.backbone.vocab << '\n'
        << "backbone.max_positions=" << cfg.backbone.max_positions << '\n'
        << "backbone.ffn_mult=" << cfg.backbone.ffn_mult << '\n'
        << "backbone.positional=" << (cfg.backbone.positional ? 1 : 0) << '\n'
        << "backbone.seed=" << cfg.backbone.seed << '\n'
        << "cross.context_dim=" << cfg.cross.context_dim << '\n'
        << "cross.attn_dim=" << cfg.cross.attn_dim << '\n'
        << "cross.heads=" << cfg.cross.heads << '\n'
        << "cross.pa_hidden=" << cfg.cross.pa_hidden << '\n';
    return out.str();
}

std::uint64_t train_config_hash(const TrainConfig& cfg) {
    return fnv1a64(train_config_to_text(cfg));
}

SynthConfig parse_synth_config(const std::string& text) {
    SynthConfig cfg;
    for (const auto& [key, v] : parse_kv_text(text)) {
        if (key == "n_samples") cfg.n_samples = static_cast<int>(to_int(key, v));
        else if (key == "t_x_min") cfg.t_x_min = static_cast<int>(to_int(key, v));
        else if (key == "t_x_max") cfg.t_x_max = static_cast<int>(to_int(key, v));
        else if (key == "t_a_min") cfg.t_a_min = static_cast<int>(to_int(key, v));
        else if (key == "t_a_max") cfg.t_a_max = static_cast<int>(to_int(key, v));
        else if (key == "d_a") cfg.d_a = static_cast<int>(to_int(key, v));
        else if (key == "vocab") cfg.vocab = static_cast<int>(to_int(key, v));
        else if (key == "n_classes") cfg.n_classes = static_cast<int>(to_int(key, v));
        else if (key == "audio_signal_strength") cfg.audio_signal_strength = to_double(key, v);
        else if (key == "audio_noise_sigma") cfg.audio_noise_sigma = to_double(key, v);
        else if (key == "text_ambiguity") cfg.text_ambiguity = to_double(key, v);
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(to_int(key, v));
        else if (key == "index_offset") cfg.index_offset = static_cast<int>(to_int(key, v));
        else throw ConfigError("unknown data config key: " + key);
    }
    cfg.validate();
    return cfg;
}

SynthConfig load_synth_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_synth_config(buf.str());
}

ModelConfig make_model_config(const TrainConfig& cfg, const Dataset& ds) {
    ModelConfig mc;
    mc.backbone = cfg.backbone;
    mc.backbone.vocab = std::max(cfg.backbone.vocab, ds.vocab);
    mc.backbone.max_positions = std::max(cfg.backbone.max_positions, ds.max_t_x());
    mc.adapter = cfg.adapter;
    mc.cross = cfg.cross;
    mc.prior = cfg.prior;
    mc.n_classes = ds.n_classes;
    mc.d_a = ds.d_a;
    mc.init_seed = cfg.seed;
    return mc;
}

void AdamW::ensure_state(const ParamStore& params) {
    if (!state_.empty()) return;
    state_.resize(params.count());
    for (int p = 0; p < params.count(); ++p) {
        const Matrix& v = params.value(p);
        state_[p].m = Matrix::zeros(v.rows, v.cols);
        state_[p].v = Matrix::zeros(v.rows, v.cols);
    }
}

void AdamW::step(ParamStore& params, const std::vector<Matrix>& grads) {
    ensure_state(params);
    if (static_cast<int>(grads.size()) != params.count())
        throw TrainingError("adamw: gradient count mismatch");
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (int p = 0; p < params.count(); ++p) {
        Matrix& value = params.value(p);
        const Matrix& g = grads[p];
        if (!g.same_shape(value)) throw TrainingError("adamw: gradient shape mismatch");
        Matrix& m = state_[p].m;
        Matrix& v = state_[p].v;
        for (int i = 0; i < value.size(); ++i) {
            const double gi = g.data[i];
            if (!std::isfinite(gi))
                throw TrainingError("non-finite gradient for parameter " + params.name(p));
            m.data[i] = beta1_ * m.data[i] + (1.0 - beta1_) * gi;
            v.data[i] = beta2_ * v.data[i] + (1.0 - beta2_) * gi * gi;
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            value.data[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_)) +
                             lr_ * weight_decay_ * value.data[i];
        }
    }
}

Trainer::Trainer(Model& model, TrainConfig cfg, int n_train_samples)
    : model_(&model), cfg_(std::move(cfg)),
      adam_(cfg_.lr, cfg_.weight_decay) {
    cfg_.validate();
    if (n_train_samples < 1) throw TrainingError("trainer: empty training set");
    steps_per_epoch_ = (n_train_samples + cfg_.batch_size - 1) / cfg_.batch_size;
    adam_.ensure_state(model_->params());
}

namespace {

std::vector<int> epoch_order(const std::vector<int>& indices, std::uint64_t seed, long long epoch) {
    std::vector<int> order = indices;
    Rng rng(mix_key({seed, fnv1a64("shuffle"), static_cast<std::uint64_t>(epoch)}));
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(i) + 1));
        std::swap(order[i], order[j]);
    }
    return order;
}

}  // namespace

ElboBreakdown Trainer::step(const Dataset& ds, const std::vector<int>& indices) {
    const long long epoch = step_ / steps_per_epoch_;
    const long long batch_idx = step_ % steps_per_epoch_;
    std::vector<int> order = epoch_order(indices, cfg_.seed, epoch);

    const std::size_t begin = static_cast<std::size_t>(batch_idx) * cfg_.batch_size;
    const std::size_t end = std::min(order.size(), begin + cfg_.batch_size);
    std::vector<BatchSample> batch;
    for (std::size_t i = begin; i < end; ++i)
        batch.push_back({&ds.samples[order[i]], static_cast<std::uint64_t>(order[i])});

    NoiseSource noise(mix_key({cfg_.seed, fnv1a64("train-noise"),
                               static_cast<std::uint64_t>(step_)}));
    Tape tape(model_->params());
    ElboResult res = build_elbo(tape, *model_, batch, noise, cfg_.ml_objective);
    if (!std::isfinite(res.breakdown.total))
        throw TrainingError("loss diverged (non-finite) at step " + std::to_string(step_));
    tape.backward(res.loss);

    std::vector<Matrix> grads;
    grads.reserve(model_->params().count());
    for (int p = 0; p < model_->params().count(); ++p) grads.push_back(tape.grad(p));

    if (cfg_.clip_norm > 0.0) {
        double sq = 0.0;
        for (const Matrix& g : grads)
            for (double v : g.data) sq += v * v;
        const double norm = std::sqrt(sq);
        if (norm > cfg_.clip_norm) {
            const double s = cfg_.clip_norm / norm;
            for (Matrix& g : grads)
                for (double& v : g.data) v *= s;
        }
    }
    adam_.step(model_->params(), grads);
    ++step_;
    return res.breakdown;
}

TrainResult Trainer::run(const Dataset& ds, const std::vector<int>& indices) {
    TrainResult out;
    out.epoch_neg_elbo.assign(cfg_.epochs, 0.0);
    out.epoch_nll.assign(cfg_.epochs, 0.0);
    out.epoch_kl.assign(cfg_.epochs, 0.0);
    const long long total_steps = static_cast<long long>(cfg_.epochs) * steps_per_epoch_;
    while (step_ < total_steps) {
        const long long epoch = step_ / steps_per_epoch_;
        ElboBreakdown b = step(ds, indices);
        out.epoch_neg_elbo[epoch] += -b.total;
        out.epoch_nll[epoch] += -b.log_likelihood;
        for (double kl : b.kl_per_layer) out.epoch_kl[epoch] += kl;
    }
    return out;
}

TrainResult train_model(Model& model, const Dataset& ds, const std::vector<int>& indices,
                        const TrainConfig& cfg) {
    std::vector<int> idx = indices;
    if (idx.empty()) {
        idx.resize(ds.size());
        for (int i = 0; i < ds.size(); ++i) idx[i] = i;
    }
    if (idx.empty()) throw TrainingError("train: dataset is empty");
    Trainer trainer(model, cfg, static_cast<int>(idx.size()));
    return trainer.run(ds, idx);
}

// ---------------------------------------------------------------------------
// Model config serialization (checkpoint payload)

std::string model_config_to_text(const ModelConfig& mc) {
    std::ostringstream out;
    out << "backbone.layers=" << mc.backbone.layers << '\n'
        << "backbone.hidden=" << mc.backbone.hidden << '\n'
        << "backbone.heads=" << mc.backbone.heads << '\n'
        << "backbone.vocab=" << mc.backbone.vocab << '\n'
        << "backbone.max_positions=" << mc.backbone.max_positions << '\n'
        << "backbone.ffn_mult=" << mc.backbone.ffn_mult << '\n'
        << "backbone.positional=" << (mc.backbone.positional ? 1 : 0) << '\n'
        << "backbone.seed=" << mc.backbone.seed << '\n'
        << "adapter.variant=" << variant_name(mc.adapter.variant) << '\n'
        << "adapter.r=" << mc.adapter.rank << '\n'
        << "adapter.alpha=" << fmt(mc.adapter.alpha) << '\n'
        << "adapter.sublayers=" << sublayers_text(mc.adapter) << '\n'
        << "cross.context_dim=" << mc.cross.context_dim << '\n'
        << "cross.attn_dim=" << mc.cross.attn_dim << '\n'
        << "cross.heads=" << mc.cross.heads << '\n'
        << "cross.pa_hidden=" << mc.cross.pa_hidden << '\n'
        << "prior.beta=" << fmt(mc.prior.beta) << '\n'
        << "prior.gamma=" << fmt(mc.prior.gamma) << '\n'
        << "prior.epsilon=" << fmt(mc.prior.epsilon) << '\n'
        << "prior.delta=" << fmt(mc.prior.delta) << '\n'
        << "n_classes=" << mc.n_classes << '\n'
        << "d_a=" << mc.d_a << '\n'
        << "init_seed=" << mc.init_seed << '\n';
    return out.str();
}

ModelConfig parse_model_config(const std::string& text) {
    ModelConfig mc;
    for (const auto& [key, v] : parse_kv_text(text)) {
        if (key == "backbone.layers") mc.backbone.layers = static_cast<int>(to_int(key, v));
        else if (key == "backbone.hidden") mc.backbone.hidden = static_cast<int>(to_int(key, v));
        else if (key == "backbone.heads") mc.backbone.heads = static_cast<int>(to_int(key, v));
        else if (key == "backbone.vocab") mc.backbone.vocab = static_cast<int>(to_int(key, v));
        else if (key == "backbone.max_positions")
            mc.backbone.max_positions = static_cast<int>(to_int(key, v));
        else if (key == "backbone.ffn_mult") mc.backbone.ffn_mult = static_cast<int>(to_int(key, v));
        else if (key == "backbone.positional") mc.backbone.positional = to_bool(key, v);
        else if (key == "backbone.seed") mc.backbone.seed = static_cast<std::uint64_t>(to_int(key, v));
        else if (key == "adapter.variant") mc.adapter.variant = parse_variant(v);
        else if (key == "adapter.r") mc.adapter.rank = static_cast<int>(to_int(key, v));
        else if (key == "adapter.alpha") mc.adapter.alpha = to_double(key, v);
        else if (key == "adapter.sublayers") apply_sublayers(mc.adapter, v);
        else if (key == "cross.context_dim") mc.cross.context_dim = static_cast<int>(to_int(key, v));
        else if (key == "cross.attn_dim") mc.cross.attn_dim = static_cast<int>(to_int(key, v));
        else if (key == "cross.heads") mc.cross.heads = static_cast<int>(to_int(key, v));
        else if (key == "cross.pa_hidden") mc.cross.pa_hidden = static_cast<int>(to_int(key, v));
        else if (key == "prior.beta") mc.prior.beta = to_double(key, v);
        else if (key == "prior.gamma") mc.prior.gamma = to_double(key, v);
        else if (key == "prior.epsilon") mc.prior.epsilon = to_double(key, v);
        else if (key == "prior.delta") mc.prior.delta = to_double(key, v);
        else if (key == "n_classes") mc.n_classes = static_cast<int>(to_int(key, v));
        else if (key == "d_a") mc.d_a = static_cast<int>(to_int(key, v));
        else if (key == "init_seed") mc.init_seed = static_cast<std::uint64_t>(to_int(key, v));
        else throw ConfigError("unknown model config key: " + key);
    }
    mc.validate();
    return mc;
}

// ---------------------------------------------------------------------------
// Checkpoint: single little-endian binary file with a versioned header.

namespace {

constexpr char kMagic[8] = {'C', 'A', 'L', 'C', 'K', 'P', '0', '1'};

template <typename T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void get(std::ifstream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw FormatError("checkpoint truncated", static_cast<std::size_t>(in.gcount()));
}

void put_string(std::ofstream& out, const std::string& s) {
    put(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::ifstream& in) {
    std::uint32_t len = 0;
    get(in, len);
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw FormatError("checkpoint truncated in string", len);
    return s;
}

void put_matrix_values(std::ofstream& out, const Matrix& m) {
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(double)));
}

void get_matrix_values(std::ifstream& in, Matrix& m) {
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    if (!in) throw FormatError("checkpoint truncated in matrix data", m.data.size());
}

}  // namespace

void write_checkpoint(const std::string& path, const Model& model, const TrainConfig& cfg,
                      const AdamW& adam, long long step) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open checkpoint for writing: " + path, 0);
    out.write(kMagic, sizeof kMagic);
    put(out, static_cast<std::uint32_t>(1));
    put(out, train_config_hash(cfg));
    put_string(out, model_config_to_text(model.config()));
    put_string(out, train_config_to_text(cfg));
    put(out, static_cast<std::uint64_t>(step));
    put(out, static_cast<std::uint64_t>(adam.step_count()));
    const ParamStore& ps = model.params();
    put(out, static_cast<std::uint32_t>(ps.count()));
    for (int p = 0; p < ps.count(); ++p) {
        put_string(out, ps.name(p));
        put(out, static_cast<std::uint32_t>(ps.value(p).rows));
        put(out, static_cast<std::uint32_t>(ps.value(p).cols));
        put_matrix_values(out, ps.value(p));
    }
    for (int p = 0; p < ps.count(); ++p) {
        put_matrix_values(out, adam.state()[p].m);
        put_matrix_values(out, adam.state()[p].v);
    }
    if (!out) throw FormatError("checkpoint write failed", 0);
}

CheckpointData read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint: " + path, 0);
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw FormatError("bad checkpoint magic", 0);
    std::uint32_t version = 0;
    get(in, version);
    if (version != 1) throw FormatError("unsupported checkpoint version", 8);

    CheckpointData ck;
    get(in, ck.train_config_hash);
    ck.model_config_text = get_string(in);
    ck.train_config_text = get_string(in);
    std::uint64_t step = 0, adam_steps = 0;
    get(in, step);
    get(in, adam_steps);
    ck.step = static_cast<long long>(step);
    ck.adam_steps = static_cast<long long>(adam_steps);
    std::uint32_t n_params = 0;
    get(in, n_params);
    for (std::uint32_t p = 0; p < n_params; ++p) {
        CheckpointData::Param entry;
        entry.name = get_string(in);
        std::uint32_t rows = 0, cols = 0;
        get(in, rows);
        get(in, cols);
        entry.value = Matrix(static_cast<int>(rows), static_cast<int>(cols));
        get_matrix_values(in, entry.value);
        ck.params.push_back(std::move(entry));
    }
    for (std::uint32_t p = 0; p < n_params; ++p) {
        Matrix m(ck.params[p].value.rows, ck.params[p].value.cols);
        Matrix v(ck.params[p].value.rows, ck.params[p].value.cols);
        get_matrix_values(in, m);
        get_matrix_values(in, v);
        ck.moments.push_back({std::move(m), std::move(v)});
    }
    return ck;
}

Model restore_model(const CheckpointData& ck) {
    Model model(parse_model_config(ck.model_config_text));
    if (static_cast<int>(ck.params.size()) != model.params().count())
        throw FormatError("checkpoint parameter count does not match model", 0);
    for (std::size_t p = 0; p < ck.params.size(); ++p) {
        ParamId id = model.params().find(ck.params[p].name);
        if (id < 0) throw FormatError("unknown checkpoint parameter " + ck.params[p].name, 0);
        if (!model.params().value(id).same_shape(ck.params[p].value))
            throw FormatError("shape mismatch for checkpoint parameter " + ck.params[p].name, 0);
        model.params().value(id) = ck.params[p].value;
    }
    return model;
}

void Trainer::save_checkpoint(const std::string& path) const {
    write_checkpoint(path, *model_, cfg_, adam_, step_);
}

void Trainer::load_checkpoint(const std::string& path) {
    CheckpointData ck = read_checkpoint(path);
    if (ck.train_config_hash != train_config_hash(cfg_))
        throw ConfigError("checkpoint was written under a different train config");
    if (ck.model_config_text != model_config_to_text(model_->config()))
        throw ConfigError("checkpoint was written for a different model config");
    for (std::size_t p = 0; p < ck.params.size(); ++p) {
        ParamId id = model_->params().find(ck.params[p].name);
        if (id < 0 || !model_->params().value(id).same_shape(ck.params[p].value))
            throw FormatError("checkpoint/model mismatch at " + ck.params[p].name, 0);
        model_->params().value(id) = ck.params[p].value;
    }
    adam_.ensure_state(model_->params());
    for (std::size_t p = 0; p < ck.moments.size(); ++p) {
        adam_.state()[p].m = ck.moments[p].m;
        adam_.state()[p].v = ck.moments[p].v;
    }
    adam_.set_step_count(ck.adam_steps);
    step_ = ck.step;
}

}  // namespace caliber
