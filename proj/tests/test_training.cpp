#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "caliber/errors.hpp"
#include "caliber/training.hpp"

using namespace caliber;

namespace {

TrainConfig small_train_config(Variant v, int epochs = 2) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = 8;
    cfg.seed = 3;
    cfg.adapter.variant = v;
    cfg.adapter.rank = 2;
    cfg.adapter.alpha = 4.0;
    cfg.backbone.layers = 1;
    cfg.backbone.hidden = 8;
    cfg.backbone.heads = 1;
    cfg.backbone.seed = 5;
    cfg.cross.context_dim = 4;
    cfg.cross.attn_dim = 4;
    cfg.cross.heads = 1;
    cfg.cross.pa_hidden = 4;
    return cfg;
}

Dataset small_dataset(int n, std::uint64_t seed) {
    SynthConfig c;
    c.n_samples = n;
    c.t_x_min = 3;
    c.t_x_max = 5;
    c.t_a_min = 4;
    c.t_a_max = 6;
    c.d_a = 6;
    c.vocab = 16;
    c.text_ambiguity = 0.3;
    c.audio_signal_strength = 1.0;
    c.audio_noise_sigma = 0.2;
    c.seed = seed;
    return generate(c);
}

std::vector<double> snapshot(const ParamStore& ps) {
    std::vector<double> all;
    for (const auto& e : ps.entries) all.insert(all.end(), e.value.data.begin(), e.value.data.end());
    return all;
}

}  // namespace

TEST_CASE("adamw single-step oracle") {
    // One parameter p=1 with g=1, lr=1e-3, wd=1e-3: replicate the update rule
    // step by step and freeze the expectation.
    const double lr = 1e-3, wd = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double m = (1 - b1) * 1.0;
    double v = (1 - b2) * 1.0;
    const double mhat = m / (1 - b1);
    const double vhat = v / (1 - b2);
    const double expect = 1.0 - lr * (mhat / (std::sqrt(vhat) + eps)) - lr * wd * 1.0;
    CHECK(expect == doctest::Approx(0.998999).epsilon(1e-6));

    ParamStore ps;
    ParamId p = ps.add("p", Matrix(1, 1, {1.0}));
    AdamW adam(lr, wd);
    adam.step(ps, {Matrix(1, 1, {1.0})});
    CHECK(ps.value(p).data[0] == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("adamw: zero gradient with zero decay is a no-op; decay-only shrinks") {
    ParamStore ps;
    ParamId p = ps.add("p", Matrix(1, 1, {0.7}));
    AdamW no_decay(1e-3, 0.0);
    no_decay.step(ps, {Matrix(1, 1, {0.0})});
    CHECK(ps.value(p).data[0] == 0.7);

    ParamStore ps2;
    ParamId q = ps2.add("q", Matrix(1, 1, {0.7}));
    AdamW decay(1e-3, 1e-3);
    decay.step(ps2, {Matrix(1, 1, {0.0})});
    CHECK(ps2.value(q).data[0] == doctest::Approx(0.7 * (1.0 - 1e-3 * 1e-3)).epsilon(1e-15));
}

TEST_CASE("adamw rejects non-finite gradients naming the parameter") {
    ParamStore ps;
    ps.add("site0.A", Matrix(1, 1, {1.0}));
    AdamW adam(1e-3, 1e-3);
    bool threw = false;
    try {
        adam.step(ps, {Matrix(1, 1, {std::nan("")})});
    } catch (const TrainingError& e) {
        threw = true;
        CHECK(std::string(e.what()).find("site0.A") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("train config round trip, unknown keys, duplicates") {
    TrainConfig cfg = small_train_config(Variant::kCaliberXShared, 7);
    cfg.lr = 0.0025;
    cfg.clip_norm = 1.5;
    cfg.adapter.adapt_q = false;
    TrainConfig back = parse_train_config(train_config_to_text(cfg));
    CHECK(train_config_to_text(back) == train_config_to_text(cfg));
    CHECK(train_config_hash(back) == train_config_hash(cfg));

    CHECK_THROWS_AS(parse_train_config("bogus_key=1\n"), ConfigError);
    CHECK_THROWS_AS(parse_train_config("lr=0.1\nlr=0.2\n"), ConfigError);
    CHECK_THROWS_AS(parse_train_config("lr\n"), ConfigError);
    // comments and blanks are fine
    TrainConfig c2 = parse_train_config("# comment\n\nepochs=3\n");
    CHECK(c2.epochs == 3);
}

TEST_CASE("model config text round trips through the parser") {
    Dataset ds = small_dataset(16, 9);
    TrainConfig cfg = small_train_config(Variant::kCaliberG);
    ModelConfig mc = make_model_config(cfg, ds);
    ModelConfig back = parse_model_config(model_config_to_text(mc));
    CHECK(model_config_to_text(back) == model_config_to_text(mc));
}

TEST_CASE("zero epochs leaves the model at initialization") {
    Dataset ds = small_dataset(16, 11);
    TrainConfig cfg = small_train_config(Variant::kCaliberX, 0);
    Model model(make_model_config(cfg, ds));
    auto before = snapshot(model.params());
    TrainResult res = train_model(model, ds, {}, cfg);
    CHECK(res.epoch_neg_elbo.empty());
    CHECK(snapshot(model.params()) == before);
}

TEST_CASE("same seed gives bit-identical loss traces; frozen weights never move") {
    Dataset ds = small_dataset(24, 13);
    TrainConfig cfg = small_train_config(Variant::kCaliberX, 2);

    Model m1(make_model_config(cfg, ds));
    const std::uint64_t frozen_before = m1.frozen_weights_hash();
    TrainResult r1 = train_model(m1, ds, {}, cfg);
    CHECK(m1.frozen_weights_hash() == frozen_before);

    Model m2(make_model_config(cfg, ds));
    TrainResult r2 = train_model(m2, ds, {}, cfg);
    CHECK(r1.epoch_neg_elbo == r2.epoch_neg_elbo);
    CHECK(r1.epoch_nll == r2.epoch_nll);
    CHECK(snapshot(m1.params()) == snapshot(m2.params()));

    TrainConfig other = cfg;
    other.seed = 99;
    Model m3(make_model_config(other, ds));
    TrainResult r3 = train_model(m3, ds, {}, other);
    CHECK(r1.epoch_neg_elbo != r3.epoch_neg_elbo);
}

TEST_CASE("training descends on a learnable task over the default epoch budget") {
    Dataset ds = small_dataset(48, 17);
    TrainConfig cfg = small_train_config(Variant::kCaliberX, 50);
    Model model(make_model_config(cfg, ds));
    TrainResult res = train_model(model, ds, {}, cfg);
    CHECK(res.epoch_neg_elbo.back() < res.epoch_neg_elbo.front());
}

TEST_CASE("gamma=0 trace equals a pure maximum-likelihood run bit-exactly") {
    Dataset ds = small_dataset(24, 19);
    TrainConfig cfg = small_train_config(Variant::kCaliberX, 2);
    cfg.prior.gamma = 0.0;

    Model m1(make_model_config(cfg, ds));
    TrainResult r1 = train_model(m1, ds, {}, cfg);

    TrainConfig ml = cfg;
    ml.ml_objective = true;
    Model m2(make_model_config(ml, ds));
    TrainResult r2 = train_model(m2, ds, {}, ml);

    CHECK(r1.epoch_neg_elbo == r2.epoch_neg_elbo);
    CHECK(snapshot(m1.params()) == snapshot(m2.params()));
}

TEST_CASE("checkpoint round trip: resume matches the uninterrupted run bit-exactly") {
    Dataset ds = small_dataset(24, 23);
    std::vector<int> idx(ds.size());
    for (int i = 0; i < ds.size(); ++i) idx[i] = i;
    TrainConfig cfg = small_train_config(Variant::kCaliberX, 4);

    // Uninterrupted: 7 + 5 steps.
    Model m_ref(make_model_config(cfg, ds));
    Trainer t_ref(m_ref, cfg, ds.size());
    for (int s = 0; s < 12; ++s) t_ref.step(ds, idx);

    // Interrupted at step 7.
    const std::string path = "/tmp/caliber_test_ckpt.bin";
    Model m_a(make_model_config(cfg, ds));
    Trainer t_a(m_a, cfg, ds.size());
    for (int s = 0; s < 7; ++s) t_a.step(ds, idx);
    t_a.save_checkpoint(path);

    Model m_b(make_model_config(cfg, ds));
    Trainer t_b(m_b, cfg, ds.size());
    t_b.load_checkpoint(path);
    CHECK(t_b.current_step() == 7);
    CHECK(snapshot(m_b.params()) == snapshot(m_a.params()));
    for (int s = 0; s < 5; ++s) t_b.step(ds, idx);
    CHECK(snapshot(m_b.params()) == snapshot(m_ref.params()));

    // restore_model rebuilds from the file alone.
    CheckpointData ck = read_checkpoint(path);
    Model m_c = restore_model(ck);
    CHECK(snapshot(m_c.params()) == snapshot(m_a.params()));
    CHECK(m_c.config().n_classes == m_a.config().n_classes);

    // A different train config refuses the checkpoint.
    TrainConfig other = cfg;
    other.lr = 0.5;
    Model m_d(make_model_config(other, ds));
    Trainer t_d(m_d, other, ds.size());
    CHECK_THROWS_AS(t_d.load_checkpoint(path), ConfigError);

    std::filesystem::remove(path);
}

TEST_CASE("trainer validates its inputs") {
    Dataset ds = small_dataset(8, 29);
    TrainConfig cfg = small_train_config(Variant::kLora);
    cfg.lr = 0.0;
    Model model(make_model_config(small_train_config(Variant::kLora), ds));
    CHECK_THROWS_AS(Trainer(model, cfg, 8), ConfigError);

    TrainConfig ok = small_train_config(Variant::kLora);
    Dataset empty;
    empty.d_a = ds.d_a;
    empty.vocab = ds.vocab;
    empty.n_classes = 2;
    CHECK_THROWS_AS(train_model(model, empty, {}, ok), TrainingError);
}
