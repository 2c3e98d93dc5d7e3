#include "caliber/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "caliber/errors.hpp"
#include "caliber/ops.hpp"
#include "caliber/training.hpp"

namespace caliber {

PredictiveResult predict_mc(const Model& model, const MultimodalSample& sample,
                            int mc_samples, std::uint64_t eval_seed,
                            std::uint64_t sample_key, bool keep_draws) {
    if (mc_samples < 0) throw DomainError("predict_mc: mc_samples must be >= 0");
    const int n_classes = model.config().n_classes;
    PredictiveResult out;
    out.probs.assign(n_classes, 0.0);

    const int draws = std::max(mc_samples, 1);
    for (int m = 0; m < draws; ++m) {
        ForwardOptions opts;
        NoiseSource noise(mix_key({eval_seed, fnv1a64("mc"), static_cast<std::uint64_t>(m)}));
        if (mc_samples == 0) {
            opts.mode = LatentMode::kMean;
        } else {
            opts.mode = LatentMode::kSampled;
            opts.noise = &noise;
            opts.sample_key = sample_key;
        }
        Tape tape(model.params());
        ForwardResult fr = model.forward(tape, sample, opts);
        std::vector<double> p = softmax_row(tape.value(fr.logits).data);
        for (int c = 0; c < n_classes; ++c) out.probs[c] += p[c] / draws;
        if (keep_draws) out.per_draw.push_back(std::move(p));
    }
    out.entropy = entropy(out.probs);
    return out;
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw MetricError("auc: scores and labels must be same nonempty length");
    long long n_pos = 0, n_neg = 0;
    for (int y : labels) {
        if (y == 1) ++n_pos;
        else if (y == 0) ++n_neg;
        else throw MetricError("auc: labels must be 0/1");
    }
    if (n_pos == 0 || n_neg == 0) throw MetricError("auc: both classes must be present");

    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return scores[a] < scores[b]; });

    // Rank sum with average ranks over ties (Mann-Whitney U).
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    const double u = rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auc_ovr_macro(const std::vector<PredictiveResult>& results,
                     const std::vector<int>& labels, int n_classes) {
    if (results.size() != labels.size() || results.empty())
        throw MetricError("auc_ovr_macro: empty or mismatched inputs");
    double sum = 0.0;
    for (int c = 0; c < n_classes; ++c) {
        std::vector<double> scores(results.size());
        std::vector<int> binary(results.size());
        for (std::size_t s = 0; s < results.size(); ++s) {
            scores[s] = results[s].probs[c];
            binary[s] = labels[s] == c ? 1 : 0;
        }
        sum += auc(scores, binary);
    }
    return sum / n_classes;
}

namespace {

int argmax(const std::vector<double>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

double ece(const std::vector<PredictiveResult>& results, const std::vector<int>& labels,
           int n_bins, ReliabilityBins* bins_out) {
    if (results.empty() || results.size() != labels.size())
        throw MetricError("ece: empty or mismatched inputs");
    if (n_bins < 1) throw MetricError("ece: n_bins must be >= 1");

    std::vector<double> conf_sum(n_bins, 0.0), acc_sum(n_bins, 0.0);
    std::vector<long long> count(n_bins, 0);
    for (std::size_t i = 0; i < results.size(); ++i) {
        const int pred = argmax(results[i].probs);
        const double conf = results[i].probs[pred];
        int b = static_cast<int>(conf * n_bins);
        if (b >= n_bins) b = n_bins - 1;
        if (b < 0) b = 0;
        conf_sum[b] += conf;
        acc_sum[b] += (pred == labels[i]) ? 1.0 : 0.0;
        ++count[b];
    }

    double e = 0.0;
    const double n = static_cast<double>(results.size());
    for (int b = 0; b < n_bins; ++b) {
        if (count[b] == 0) continue;
        const double conf = conf_sum[b] / count[b];
        const double acc = acc_sum[b] / count[b];
        e += (count[b] / n) * std::fabs(acc - conf);
    }

    if (bins_out) {
        bins_out->edges.resize(n_bins + 1);
        for (int b = 0; b <= n_bins; ++b)
            bins_out->edges[b] = static_cast<double>(b) / n_bins;
        bins_out->confidence.assign(n_bins, 0.0);
        bins_out->accuracy.assign(n_bins, 0.0);
        bins_out->count = count;
        for (int b = 0; b < n_bins; ++b) {
            if (count[b] == 0) continue;
            bins_out->confidence[b] = conf_sum[b] / count[b];
            bins_out->accuracy[b] = acc_sum[b] / count[b];
        }
    }
    return e;
}

EntropySplit entropy_split(const std::vector<PredictiveResult>& results,
                           const std::vector<int>& labels, int n_bins) {
    if (results.empty() || results.size() != labels.size())
        throw MetricError("entropy_split: empty or mismatched inputs");
    EntropySplit out;
    const int n_classes = static_cast<int>(results[0].probs.size());
    const double h_max = std::log(static_cast<double>(n_classes));
    out.edges.resize(n_bins + 1);
    for (int b = 0; b <= n_bins; ++b) out.edges[b] = h_max * b / n_bins;
    out.hist_correct.assign(n_bins, 0);
    out.hist_incorrect.assign(n_bins, 0);

    long long n_correct = 0, n_incorrect = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const bool correct = argmax(results[i].probs) == labels[i];
        int b = static_cast<int>(results[i].entropy / h_max * n_bins);
        if (b >= n_bins) b = n_bins - 1;
        if (b < 0) b = 0;
        if (correct) {
            out.mean_correct += results[i].entropy;
            ++out.hist_correct[b];
            ++n_correct;
        } else {
            out.mean_incorrect += results[i].entropy;
            ++out.hist_incorrect[b];
            ++n_incorrect;
        }
    }
    if (n_correct == 0 || n_incorrect == 0)
        throw MetricError("entropy_split: need at least one correct and one incorrect prediction");
    out.mean_correct /= n_correct;
    out.mean_incorrect /= n_incorrect;
    return out;
}

Matrix frozen_pooled_text(const BackboneConfig& cfg, const BackboneWeights& w,
                          const std::vector<std::uint32_t>& tokens) {
    ParamStore empty;
    Tape tape(empty);
    BackboneForward bf = backbone_forward(tape, cfg, w, tokens, -1, -1, nullptr);
    return tape.value(bf.pooled);
}

std::vector<double> pooled_audio_embedding(const AudioFrames& audio) {
    const int valid = audio.valid_count();
    std::vector<double> out(audio.d_a(), 0.0);
    if (valid == 0) return out;  // zero vector stands in for absent audio
    for (int f = 0; f < audio.t_a(); ++f) {
        if (!audio.mask[f]) continue;
        for (int j = 0; j < audio.d_a(); ++j) out[j] += audio.frames.at(f, j);
    }
    for (double& v : out) v /= valid;
    return out;
}

long long transfer_head_param_count(int d_text, int d_audio, int n_classes) {
    const long long in = d_text + d_audio;
    return 32 * in + 32 + 16LL * 32 + 16 + static_cast<long long>(n_classes) * 16 + n_classes;
}

double transfer_baseline(const std::vector<std::vector<double>>& pooled_text,
                         const std::vector<std::vector<double>>& pooled_audio,
                         const std::vector<int>& labels, const std::vector<int>& train_idx,
                         const std::vector<int>& test_idx, int n_classes,
                         const TransferConfig& cfg) {
    if (pooled_text.size() != pooled_audio.size() || pooled_text.size() != labels.size())
        throw MetricError("transfer_baseline: mismatched inputs");
    if (train_idx.empty() || test_idx.empty())
        throw MetricError("transfer_baseline: empty split");
    const int d_text = static_cast<int>(pooled_text[0].size());
    const int d_audio = static_cast<int>(pooled_audio[0].size());
    const int d_in = d_text + d_audio;

    ParamStore ps;
    Rng rng(mix_key({cfg.seed, fnv1a64("transfer-init")}));
    ParamId w1 = ps.add("w1", Matrix::randn(d_in, 32, rng, 1.0 / std::sqrt(d_in)));
    ParamId b1 = ps.add("b1", Matrix::zeros(1, 32));
    ParamId w2 = ps.add("w2", Matrix::randn(32, 16, rng, 1.0 / std::sqrt(32.0)));
    ParamId b2 = ps.add("b2", Matrix::zeros(1, 16));
    ParamId w3 = ps.add("w3", Matrix::randn(16, n_classes, rng, 1.0 / std::sqrt(16.0)));
    ParamId b3 = ps.add("b3", Matrix::zeros(1, n_classes));

    auto features = [&](int i) {
        Matrix f(1, d_in);
        for (int j = 0; j < d_text; ++j) f.at(0, j) = pooled_text[i][j];
        for (int j = 0; j < d_audio; ++j) f.at(0, d_text + j) = pooled_audio[i][j];
        return f;
    };
    auto head_logits = [&](Tape& t, Tape::Id x) {
        Tape::Id h1 = t.tanh_of(t.add_rowvec(t.matmul(x, t.param(w1)), t.param(b1)));
        Tape::Id h2 = t.tanh_of(t.add_rowvec(t.matmul(h1, t.param(w2)), t.param(b2)));
        return t.add_rowvec(t.matmul(h2, t.param(w3)), t.param(b3));
    };

    AdamW adam(cfg.lr, cfg.weight_decay);
    adam.ensure_state(ps);
    const int n_train = static_cast<int>(train_idx.size());
    const int steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order = train_idx;
        Rng shuffle(mix_key({cfg.seed, fnv1a64("transfer-shuffle"),
                             static_cast<std::uint64_t>(epoch)}));
        for (int i = n_train - 1; i > 0; --i) {
            const int j = static_cast<int>(shuffle.next_below(static_cast<std::uint64_t>(i) + 1));
            std::swap(order[i], order[j]);
        }
        for (int step = 0; step < steps_per_epoch; ++step) {
            Tape t(ps);
            Tape::Id loss = -1;
            const int begin = step * cfg.batch_size;
            const int end = std::min(n_train, begin + cfg.batch_size);
            for (int i = begin; i < end; ++i) {
                const int s = order[i];
                Tape::Id ll = t.slice_cols(
                    t.log_softmax_vec(head_logits(t, t.constant(features(s)))), labels[s], 1);
                loss = (loss < 0) ? ll : t.add(loss, ll);
            }
            loss = t.scale(loss, -1.0);
            t.backward(loss);
            std::vector<Matrix> grads;
            for (int p = 0; p < ps.count(); ++p) grads.push_back(t.grad(p));
            adam.step(ps, grads);
        }
    }

    std::vector<PredictiveResult> preds;
    std::vector<int> test_labels;
    for (int s : test_idx) {
        Tape t(ps);
        PredictiveResult pr;
        pr.probs = softmax_row(t.value(head_logits(t, t.constant(features(s)))).data);
        pr.entropy = entropy(pr.probs);
        preds.push_back(std::move(pr));
        test_labels.push_back(labels[s]);
    }
    return auc_ovr_macro(preds, test_labels, n_classes);
}

std::string metrics_to_json(const MetricsReport& report, bool include_timestamp) {
    std::ostringstream out;
    out.precision(17);
    out << "{\n";
    out << "  \"variant\": \"" << report.variant << "\",\n";
    out << "  \"seed\": " << report.seed << ",\n";
    out << "  \"auc\": " << report.auc << ",\n";
    out << "  \"ece\": " << report.ece << ",\n";
    out << "  \"mean_entropy_correct\": " << report.mean_entropy_correct << ",\n";
    out << "  \"mean_entropy_incorrect\": " << report.mean_entropy_incorrect << ",\n";
    out << "  \"nll\": " << report.nll;
    if (include_timestamp) {
        const auto now = std::chrono::system_clock::now().time_since_epoch();
        out << ",\n  \"timestamp\": "
            << std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
    }
    out << "\n}\n";
    return out.str();
}

std::string strip_timestamp(const std::string& metrics_json) {
    std::string out;
    std::istringstream in(metrics_json);
    std::string line;
    while (std::getline(in, line)) {
        if (line.find("\"timestamp\"") != std::string::npos) {
            // The previous line's trailing comma belongs to the dropped field.
            if (!out.empty()) {
                const auto comma = out.find_last_of(',');
                if (comma != std::string::npos) out.erase(comma, 1);
            }
            continue;
        }
        out += line;
        out += '\n';
    }
    return out;
}

void write_reliability_csv(const ReliabilityBins& bins, std::ostream& out) {
    out << "bin_low,bin_high,confidence,accuracy,count\n";
    out.precision(12);
    for (std::size_t b = 0; b + 1 < bins.edges.size(); ++b)
        out << bins.edges[b] << ',' << bins.edges[b + 1] << ',' << bins.confidence[b] << ','
            << bins.accuracy[b] << ',' << bins.count[b] << '\n';
}

void write_entropy_hist_csv(const EntropySplit& split, std::ostream& out) {
    out << "bin_low,bin_high,count_correct,count_incorrect\n";
    out.precision(12);
    for (std::size_t b = 0; b + 1 < split.edges.size(); ++b)
        out << split.edges[b] << ',' << split.edges[b + 1] << ',' << split.hist_correct[b]
            << ',' << split.hist_incorrect[b] << '\n';
}

EvalOutput evaluate_model(const Model& model, const Dataset& ds,
                          const std::vector<int>& indices, int mc_samples,
                          std::uint64_t eval_seed, const std::string& variant_label) {
    if (indices.empty()) throw MetricError("evaluate_model: empty index set");
    EvalOutput out;
    out.metrics.variant = variant_label;
    out.metrics.seed = eval_seed;

    double nll = 0.0;
    for (int idx : indices) {
        const MultimodalSample& s = ds.samples[idx];
        PredictiveResult pr =
            predict_mc(model, s, mc_samples, eval_seed, static_cast<std::uint64_t>(idx));
        nll += -std::log(std::max(pr.probs[s.label], 1e-300));
        out.predictions.push_back(std::move(pr));
        out.labels.push_back(s.label);
    }
    out.metrics.nll = nll / static_cast<double>(indices.size());
    out.metrics.auc = auc_ovr_macro(out.predictions, out.labels, model.config().n_classes);
    out.metrics.ece = ece(out.predictions, out.labels, 10, &out.bins);
    out.entropy = entropy_split(out.predictions, out.labels);
    out.metrics.mean_entropy_correct = out.entropy.mean_correct;
    out.metrics.mean_entropy_incorrect = out.entropy.mean_incorrect;
    return out;
}

}  // namespace caliber
