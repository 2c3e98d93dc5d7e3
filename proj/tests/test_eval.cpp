#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "caliber/errors.hpp"
#include "caliber/eval.hpp"
#include "caliber/ops.hpp"
#include "caliber/training.hpp"

using namespace caliber;

namespace {

ModelConfig tiny_model_config(Variant v) {
    ModelConfig cfg;
    cfg.backbone.layers = 1;
    cfg.backbone.hidden = 8;
    cfg.backbone.heads = 1;
    cfg.backbone.vocab = 16;
    cfg.backbone.max_positions = 8;
    cfg.backbone.seed = 5;
    cfg.adapter.variant = v;
    cfg.adapter.rank = 2;
    cfg.adapter.alpha = 4.0;
    cfg.cross.context_dim = 4;
    cfg.cross.attn_dim = 4;
    cfg.cross.heads = 1;
    cfg.cross.pa_hidden = 4;
    cfg.n_classes = 2;
    cfg.d_a = 3;
    cfg.init_seed = 9;
    return cfg;
}

MultimodalSample make_sample(std::uint64_t seed, int label = 0) {
    Rng rng(seed);
    MultimodalSample s;
    s.tokens = {static_cast<std::uint32_t>(rng.next_below(16)),
                static_cast<std::uint32_t>(rng.next_below(16))};
    s.audio.frames = Matrix::randn(2, 3, rng);
    s.audio.mask.assign(2, 1);
    s.label = label;
    return s;
}

// Brute-force pair enumeration oracle for AUC.
double auc_bruteforce(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    long long pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / pairs;
}

}  // namespace

TEST_CASE("auc fixed cases") {
    CHECK(auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
    CHECK(auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
    CHECK(auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK_THROWS_AS(auc({0.1, 0.2}, {1, 1}), MetricError);
    CHECK_THROWS_AS(auc({}, {}), MetricError);
}

TEST_CASE("auc equals brute-force pair counting and survives monotone transforms") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 30;
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        bool has0 = false, has1 = false;
        for (int i = 0; i < n; ++i) {
            // quantize so ties actually occur
            scores[i] = std::floor(rng.next_unit() * 8.0) / 8.0;
            labels[i] = rng.next_unit() < 0.4 ? 1 : 0;
            has0 |= labels[i] == 0;
            has1 |= labels[i] == 1;
        }
        if (!has0 || !has1) continue;
        const double a = auc(scores, labels);
        CHECK(a == doctest::Approx(auc_bruteforce(scores, labels)).epsilon(1e-12));

        std::vector<double> warped(n);
        for (int i = 0; i < n; ++i) warped[i] = std::exp(3.0 * scores[i]) - 5.0;
        CHECK(auc(warped, labels) == doctest::Approx(a).epsilon(1e-12));
    }
}

TEST_CASE("one-vs-rest macro AUC: three classes, perfect and chance predictors") {
    std::vector<PredictiveResult> perfect, flat;
    std::vector<int> labels;
    for (int i = 0; i < 30; ++i) {
        const int y = i % 3;
        labels.push_back(y);
        PredictiveResult p;
        p.probs = {0.1, 0.1, 0.1};
        p.probs[y] = 0.8;
        perfect.push_back(p);
        PredictiveResult u;
        u.probs = {1.0 / 3, 1.0 / 3, 1.0 / 3};
        flat.push_back(u);
    }
    CHECK(auc_ovr_macro(perfect, labels, 3) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(auc_ovr_macro(flat, labels, 3) == doctest::Approx(0.5).epsilon(1e-12));

    // Two classes: macro average equals the plain positive-class AUC.
    std::vector<PredictiveResult> two;
    std::vector<int> two_labels = {0, 0, 1, 1};
    for (double p1 : {0.1, 0.4, 0.35, 0.8}) {
        PredictiveResult p;
        p.probs = {1.0 - p1, p1};
        two.push_back(p);
    }
    CHECK(auc_ovr_macro(two, two_labels, 2) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("ece fixed constructions") {
    std::vector<PredictiveResult> all_right(10), half_right(10);
    std::vector<int> labels_right(10, 0), labels_half(10, 0);
    for (int i = 0; i < 10; ++i) {
        all_right[i].probs = {1.0, 0.0};
        half_right[i].probs = {1.0, 0.0};
        labels_half[i] = (i < 5) ? 0 : 1;  // half the confident predictions wrong
    }
    CHECK(ece(all_right, labels_right, 10) == 0.0);
    CHECK(ece(half_right, labels_half, 10) == 0.5);

    ReliabilityBins bins;
    ece(half_right, labels_half, 10, &bins);
    long long total = 0;
    for (long long c : bins.count) total += c;
    CHECK(total == 10);
    CHECK(bins.count[9] == 10);
    CHECK(bins.accuracy[9] == 0.5);
    CHECK(bins.confidence[9] == 1.0);
    for (std::size_t b = 1; b < bins.edges.size(); ++b) CHECK(bins.edges[b] > bins.edges[b - 1]);
}

TEST_CASE("ece is zero whenever per-bin confidence equals accuracy") {
    // Two populated bins, each with confidence exactly equal to its
    // empirical accuracy: 3/4 correct at 0.75 and 11/20 correct at 0.55.
    std::vector<PredictiveResult> preds;
    std::vector<int> labels;
    for (int i = 0; i < 4; ++i) {
        PredictiveResult p;
        p.probs = {0.75, 0.25};
        preds.push_back(p);
        labels.push_back(i < 3 ? 0 : 1);
    }
    for (int i = 0; i < 20; ++i) {
        PredictiveResult p;
        p.probs = {0.55, 0.45};
        preds.push_back(p);
        labels.push_back(i < 11 ? 0 : 1);
    }
    CHECK(ece(preds, labels, 10) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("entropy_split groups and degenerate cases") {
    const double ln2 = std::log(2.0);
    std::vector<PredictiveResult> uniform(6);
    std::vector<int> labels(6);
    for (int i = 0; i < 6; ++i) {
        uniform[i].probs = {0.5, 0.5};
        uniform[i].entropy = ln2;
        labels[i] = i % 2;  // argmax = 0, so half correct
    }
    EntropySplit split = entropy_split(uniform, labels);
    CHECK(split.mean_correct == doctest::Approx(ln2).epsilon(1e-15));
    CHECK(split.mean_incorrect == doctest::Approx(ln2).epsilon(1e-15));

    std::vector<PredictiveResult> confident(4);
    std::vector<int> all_zero(4, 0);
    for (auto& p : confident) {
        p.probs = {1.0, 0.0};
        p.entropy = 0.0;
    }
    CHECK_THROWS_AS(entropy_split(confident, all_zero), MetricError);
}

TEST_CASE("predict_mc: determinism, single-draw equality, simplex, Jensen direction") {
    Model model(tiny_model_config(Variant::kCaliberX));
    Rng rng(31);
    for (int p = 0; p < model.params().count(); ++p)
        for (double& v : model.params().value(p).data) v += 0.2 * rng.next_normal();
    MultimodalSample s = make_sample(77, 1);

    PredictiveResult one = predict_mc(model, s, 1, /*eval_seed=*/5, /*sample_key=*/3);
    NoiseSource noise(mix_key({5ull, fnv1a64("mc"), 0ull}));
    ForwardOptions opts;
    opts.mode = LatentMode::kSampled;
    opts.noise = &noise;
    opts.sample_key = 3;
    Tape tape(model.params());
    ForwardResult fr = model.forward(tape, s, opts);
    std::vector<double> direct = softmax_row(tape.value(fr.logits).data);
    CHECK(one.probs == direct);

    // Deterministic mode is the posterior-mean forward.
    PredictiveResult det = predict_mc(model, s, 0, 5, 3);
    ForwardOptions mean_opts;
    mean_opts.mode = LatentMode::kMean;
    Tape t2(model.params());
    std::vector<double> mean_probs =
        softmax_row(t2.value(model.forward(t2, s, mean_opts).logits).data);
    CHECK(det.probs == mean_probs);

    PredictiveResult mc = predict_mc(model, s, 25, 5, 3, /*keep_draws=*/true);
    double sum = 0.0;
    for (double p : mc.probs) sum += p;
    CHECK(std::fabs(sum - 1.0) < 1e-9);
    double mean_draw_entropy = 0.0;
    for (const auto& d : mc.per_draw) mean_draw_entropy += entropy(d) / mc.per_draw.size();
    CHECK(mc.entropy >= mean_draw_entropy - 1e-12);

    PredictiveResult again = predict_mc(model, s, 25, 5, 3);
    CHECK(again.probs == mc.probs);
}

TEST_CASE("predict_mc: disjoint 1e4-draw halves agree within pooled standard error") {
    Model model(tiny_model_config(Variant::kCaliberX));
    Rng rng(33);
    for (int p = 0; p < model.params().count(); ++p)
        for (double& v : model.params().value(p).data) v += 0.25 * rng.next_normal();
    MultimodalSample s = make_sample(79, 0);

    const int m = 10000;
    PredictiveResult full = predict_mc(model, s, 2 * m, 11, 0, /*keep_draws=*/true);
    for (std::size_t c = 0; c < full.probs.size(); ++c) {
        double mean_a = 0.0, mean_b = 0.0, var_a = 0.0, var_b = 0.0;
        for (int i = 0; i < m; ++i) {
            mean_a += full.per_draw[i][c] / m;
            mean_b += full.per_draw[m + i][c] / m;
        }
        for (int i = 0; i < m; ++i) {
            var_a += (full.per_draw[i][c] - mean_a) * (full.per_draw[i][c] - mean_a) / (m - 1);
            var_b += (full.per_draw[m + i][c] - mean_b) * (full.per_draw[m + i][c] - mean_b) / (m - 1);
        }
        const double pooled_se = std::sqrt(var_a / m + var_b / m);
        CHECK(std::fabs(mean_a - mean_b) < 3.0 * std::max(pooled_se, 1e-12));
    }
}

TEST_CASE("transfer baseline: chance on shuffled labels, signal when audio informative") {
    SynthConfig dc;
    dc.n_samples = 600;
    dc.d_a = 6;
    dc.vocab = 16;
    dc.t_x_min = 3;
    dc.t_x_max = 5;
    dc.t_a_min = 4;
    dc.t_a_max = 6;
    dc.audio_signal_strength = 1.0;
    dc.audio_noise_sigma = 0.1;
    dc.text_ambiguity = 1.0;
    dc.seed = 41;
    Dataset ds = generate(dc);

    BackboneConfig bc;
    bc.layers = 1;
    bc.hidden = 8;
    bc.heads = 1;
    bc.vocab = 16;
    BackboneWeights bw = build_frozen_backbone(bc);

    std::vector<std::vector<double>> text, audio;
    std::vector<int> labels;
    for (const auto& s : ds.samples) {
        text.push_back(frozen_pooled_text(bc, bw, s.tokens).data);
        audio.push_back(pooled_audio_embedding(s.audio));
        labels.push_back(s.label);
    }
    std::vector<int> train_idx, test_idx;
    for (int i = 0; i < 450; ++i) train_idx.push_back(i);
    for (int i = 450; i < 600; ++i) test_idx.push_back(i);

    TransferConfig tc;
    tc.epochs = 30;
    const double informative = transfer_baseline(text, audio, labels, train_idx, test_idx, 2, tc);
    CHECK(informative > 0.8);

    // Zeroed audio features reduce the head to text-only; with uninformative
    // text that is chance level.
    std::vector<std::vector<double>> zero_audio(audio.size(), std::vector<double>(6, 0.0));
    const double text_only = transfer_baseline(text, zero_audio, labels, train_idx, test_idx, 2, tc);
    CHECK(text_only < 0.65);

    // Label shuffling kills the signal: near 0.5 on average over seeds.
    double mean_null = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        std::vector<int> shuffled = labels;
        Rng rng(seed);
        for (int i = static_cast<int>(shuffled.size()) - 1; i > 0; --i) {
            const int j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(i) + 1));
            std::swap(shuffled[i], shuffled[j]);
        }
        TransferConfig tcs;
        tcs.epochs = 12;
        tcs.seed = seed;
        const double a = transfer_baseline(text, audio, shuffled, train_idx, test_idx, 2, tcs);
        CHECK(a > 0.35);
        CHECK(a < 0.65);
        mean_null += a / 5.0;
    }
    CHECK(std::fabs(mean_null - 0.5) < 0.05);

    CHECK(transfer_head_param_count(8, 6, 2) == 32 * 14 + 32 + 16 * 32 + 16 + 2 * 16 + 2);
}

TEST_CASE("metrics json: schema, timestamp stripping, reproducible bytes") {
    MetricsReport r;
    r.variant = "caliber-x";
    r.seed = 4;
    r.auc = 0.875;
    r.ece = 0.03125;
    r.mean_entropy_correct = 0.25;
    r.mean_entropy_incorrect = 0.5;
    r.nll = 0.375;

    const std::string with_ts = metrics_to_json(r, true);
    const std::string without = metrics_to_json(r, false);
    CHECK(with_ts.find("timestamp") != std::string::npos);
    CHECK(without.find("timestamp") == std::string::npos);
    CHECK(strip_timestamp(with_ts) == without);
    for (const char* key : {"\"variant\"", "\"seed\"", "\"auc\"", "\"ece\"",
                            "\"mean_entropy_correct\"", "\"mean_entropy_incorrect\"", "\"nll\""})
        CHECK(without.find(key) != std::string::npos);
}

TEST_CASE("csv writers") {
    ReliabilityBins bins;
    bins.edges = {0.0, 0.5, 1.0};
    bins.confidence = {0.25, 0.75};
    bins.accuracy = {0.2, 0.8};
    bins.count = {4, 6};
    std::ostringstream out;
    write_reliability_csv(bins, out);
    CHECK(out.str() ==
          "bin_low,bin_high,confidence,accuracy,count\n"
          "0,0.5,0.25,0.2,4\n"
          "0.5,1,0.75,0.8,6\n");

    EntropySplit split;
    split.edges = {0.0, 0.35, 0.7};
    split.hist_correct = {5, 1};
    split.hist_incorrect = {0, 2};
    std::ostringstream out2;
    write_entropy_hist_csv(split, out2);
    CHECK(out2.str() ==
          "bin_low,bin_high,count_correct,count_incorrect\n"
          "0,0.35,5,0\n"
          "0.35,0.7,1,2\n");
}
