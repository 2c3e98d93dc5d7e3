// Command-line front end: synthetic data generation, training, Monte Carlo
// evaluation, attention export, and variant/seed sweeps.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "caliber/crossmodal.hpp"
#include "caliber/data.hpp"
#include "caliber/errors.hpp"
#include "caliber/eval.hpp"
#include "caliber/training.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::vector<std::string> split_csv(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string part;
    while (std::getline(in, part, ',')) {
        if (!part.empty()) out.push_back(part);
    }
    return out;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw caliber::FormatError("cannot open output file " + path, 0);
    return out;
}

void write_loss_csv(const std::string& path, const caliber::TrainResult& trace) {
    std::ofstream out = open_out(path);
    out.precision(12);
    out << "epoch,neg_elbo,nll,kl\n";
    for (std::size_t e = 0; e < trace.epoch_neg_elbo.size(); ++e)
        out << e << ',' << trace.epoch_neg_elbo[e] << ',' << trace.epoch_nll[e] << ','
            << trace.epoch_kl[e] << '\n';
}

struct TrainOutcome {
    caliber::TrainResult trace;
};

// Shared by `train` and `sweep`: build the model, run the epochs, write the
// checkpoint and loss curve.
TrainOutcome run_training(const caliber::TrainConfig& cfg, const caliber::Dataset& ds,
                          const std::string& ckpt_path) {
    caliber::Model model(caliber::make_model_config(cfg, ds));
    std::vector<int> idx(ds.size());
    for (int i = 0; i < ds.size(); ++i) idx[i] = i;
    if (idx.empty()) throw caliber::TrainingError("training dataset is empty");
    caliber::Trainer trainer(model, cfg, ds.size());
    caliber::TrainResult trace = trainer.run(ds, idx);
    trainer.save_checkpoint(ckpt_path);
    write_loss_csv(ckpt_path + ".loss.csv", trace);
    return {std::move(trace)};
}

caliber::EvalOutput run_eval(const std::string& ckpt_path, const caliber::Dataset& ds,
                             int mc_samples, std::uint64_t seed) {
    caliber::CheckpointData ck = caliber::read_checkpoint(ckpt_path);
    caliber::Model model = caliber::restore_model(ck);
    if (ds.d_a != model.config().d_a && caliber::variant_uses_audio(model.variant()))
        throw caliber::DimensionError("dataset audio width differs from the checkpoint model");
    if (ds.n_classes != model.config().n_classes)
        throw caliber::DimensionError("dataset class count differs from the checkpoint model");
    std::vector<int> idx(ds.size());
    for (int i = 0; i < ds.size(); ++i) idx[i] = i;
    return caliber::evaluate_model(model, ds, idx, mc_samples, seed,
                                   caliber::variant_name(model.variant()));
}

int dispatch(int argc, char** argv) {
    CLI::App app{"context-conditioned Bayesian low-rank adapters"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic multimodal dataset");
    std::string gen_config, gen_out;
    gen->add_option("--config", gen_config, "data config file")->required();
    gen->add_option("--out", gen_out, "output path prefix (.manifest/.blob)")->required();

    // train
    auto* train = app.add_subcommand("train", "train an adapter variant");
    std::string train_data, train_variant, train_config_path, train_out;
    std::int64_t train_seed = -1;
    train->add_option("--data", train_data, "dataset path prefix")->required();
    train->add_option("--variant", train_variant, "adapter variant override");
    train->add_option("--config", train_config_path, "train config file")->required();
    train->add_option("--seed", train_seed, "seed override");
    train->add_option("--out", train_out, "checkpoint output path")->required();

    // eval
    auto* eval = app.add_subcommand("eval", "Monte Carlo evaluation of a checkpoint");
    std::string eval_ckpt, eval_data, eval_report, eval_reliability, eval_entropy;
    int eval_mc = 10;
    std::uint64_t eval_seed = 1;
    eval->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
    eval->add_option("--data", eval_data, "dataset path prefix")->required();
    eval->add_option("--mc-samples", eval_mc, "posterior draws per prediction (0 = mean)");
    eval->add_option("--report", eval_report, "metrics JSON output")->required();
    eval->add_option("--reliability", eval_reliability, "reliability bins CSV output");
    eval->add_option("--entropy", eval_entropy, "entropy histogram CSV output");
    eval->add_option("--seed", eval_seed, "evaluation seed");

    // export-attention
    auto* exp = app.add_subcommand("export-attention",
                                   "write per-(layer, token) audio attention weights");
    std::string exp_ckpt, exp_data, exp_out;
    int exp_sample = 0;
    exp->add_option("--ckpt", exp_ckpt, "checkpoint path")->required();
    exp->add_option("--data", exp_data, "dataset path prefix")->required();
    exp->add_option("--sample", exp_sample, "sample id")->required();
    exp->add_option("--out", exp_out, "attention CSV output")->required();

    // sweep
    auto* sweep = app.add_subcommand("sweep", "train/eval a variant x seed grid");
    std::string sweep_train_data, sweep_eval_data, sweep_variants, sweep_seeds,
        sweep_config_path, sweep_out;
    int sweep_mc = 10;
    sweep->add_option("--train-data", sweep_train_data, "training dataset prefix")->required();
    sweep->add_option("--eval-data", sweep_eval_data, "evaluation dataset prefix")->required();
    sweep->add_option("--variants", sweep_variants, "comma-separated variant list")->required();
    sweep->add_option("--seeds", sweep_seeds, "comma-separated seed list")->required();
    sweep->add_option("--config", sweep_config_path, "train config file")->required();
    sweep->add_option("--out", sweep_out, "aggregated metrics CSV")->required();
    sweep->add_option("--mc-samples", sweep_mc, "posterior draws per prediction");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    if (gen->parsed()) {
        caliber::SynthConfig cfg = caliber::load_synth_config(gen_config);
        caliber::Dataset ds = caliber::generate(cfg);
        caliber::save_dataset(ds, gen_out);
        std::cout << "wrote " << ds.size() << " samples to " << gen_out << ".manifest/.blob\n";
        return 0;
    }

    if (train->parsed()) {
        caliber::TrainConfig cfg = caliber::load_train_config(train_config_path);
        if (!train_variant.empty()) cfg.adapter.variant = caliber::parse_variant(train_variant);
        if (train_seed >= 0) cfg.seed = static_cast<std::uint64_t>(train_seed);
        caliber::Dataset ds = caliber::load_dataset(train_data);
        TrainOutcome outcome = run_training(cfg, ds, train_out);
        std::cout << "trained " << caliber::variant_name(cfg.adapter.variant) << " for "
                  << cfg.epochs << " epochs; final negative ELBO "
                  << (outcome.trace.epoch_neg_elbo.empty() ? 0.0
                                                           : outcome.trace.epoch_neg_elbo.back())
                  << "; checkpoint " << train_out << "\n";
        return 0;
    }

    if (eval->parsed()) {
        caliber::Dataset ds = caliber::load_dataset(eval_data);
        caliber::EvalOutput out = run_eval(eval_ckpt, ds, eval_mc, eval_seed);
        open_out(eval_report) << caliber::metrics_to_json(out.metrics, true);
        const std::string rel_path =
            eval_reliability.empty() ? eval_report + ".reliability.csv" : eval_reliability;
        const std::string ent_path =
            eval_entropy.empty() ? eval_report + ".entropy.csv" : eval_entropy;
        auto rel = open_out(rel_path);
        caliber::write_reliability_csv(out.bins, rel);
        auto ent = open_out(ent_path);
        caliber::write_entropy_hist_csv(out.entropy, ent);
        std::cout << "auc " << out.metrics.auc << "  ece " << out.metrics.ece << "  nll "
                  << out.metrics.nll << "\n";
        return 0;
    }

    if (exp->parsed()) {
        caliber::CheckpointData ck = caliber::read_checkpoint(exp_ckpt);
        caliber::Model model = caliber::restore_model(ck);
        if (!caliber::variant_cross_attention(model.variant()))
            throw caliber::InputError("variant " + caliber::variant_name(model.variant()) +
                                      " has no token-level attention to export");
        caliber::Dataset ds = caliber::load_dataset(exp_data);
        if (exp_sample < 0 || exp_sample >= ds.size())
            throw caliber::InputError("sample id out of range");
        caliber::AttentionRecord rec;
        caliber::ForwardOptions opts;
        opts.mode = caliber::LatentMode::kMean;
        opts.attention = &rec;
        caliber::Tape tape(model.params());
        model.forward(tape, ds.samples[exp_sample], opts);
        auto out = open_out(exp_out);
        caliber::write_attention_csv(rec, out);
        std::cout << "wrote " << rec.rows.size() << " attention rows to " << exp_out << "\n";
        return 0;
    }

    if (sweep->parsed()) {
        caliber::TrainConfig base = caliber::load_train_config(sweep_config_path);
        caliber::Dataset train_ds = caliber::load_dataset(sweep_train_data);
        caliber::Dataset eval_ds = caliber::load_dataset(sweep_eval_data);
        const auto variants = split_csv(sweep_variants);
        const auto seeds = split_csv(sweep_seeds);
        if (variants.empty() || seeds.empty())
            throw caliber::ConfigError("sweep: empty variant or seed list");

        auto out = open_out(sweep_out);
        out.precision(12);
        out << "variant,seed,auc,ece,mean_entropy_correct,mean_entropy_incorrect,nll,"
               "final_neg_elbo\n";
        const std::string tmp_ckpt = sweep_out + ".cell.ckpt";
        for (const std::string& vname : variants) {
            for (const std::string& seed_text : seeds) {
                caliber::TrainConfig cfg = base;
                cfg.adapter.variant = caliber::parse_variant(vname);
                cfg.seed = static_cast<std::uint64_t>(std::stoull(seed_text));
                TrainOutcome outcome = run_training(cfg, train_ds, tmp_ckpt);
                caliber::EvalOutput ev = run_eval(tmp_ckpt, eval_ds, sweep_mc, cfg.seed);
                out << vname << ',' << seed_text << ',' << ev.metrics.auc << ','
                    << ev.metrics.ece << ',' << ev.metrics.mean_entropy_correct << ','
                    << ev.metrics.mean_entropy_incorrect << ',' << ev.metrics.nll << ','
                    << outcome.trace.epoch_neg_elbo.back() << '\n';
                std::cout << vname << " seed " << seed_text << ": auc " << ev.metrics.auc
                          << "\n";
            }
        }
        std::filesystem::remove(tmp_ckpt);
        std::filesystem::remove(tmp_ckpt + ".loss.csv");
        return 0;
    }

    return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const caliber::FormatError& e) {
        std::cerr << "data/format error: " << e.what() << "\n";
        return kExitData;
    } catch (const caliber::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitData;
    } catch (const caliber::InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitData;
    } catch (const caliber::MetricError& e) {
        std::cerr << "metric error: " << e.what() << "\n";
        return kExitData;
    } catch (const caliber::TrainingError& e) {
        std::cerr << "training error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const caliber::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const caliber::DomainError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const caliber::DimensionError& e) {
        std::cerr << "dimension error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
}
