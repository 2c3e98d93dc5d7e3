#include "caliber/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "caliber/errors.hpp"
#include "caliber/rng.hpp"

namespace caliber {

void SynthConfig::validate() const {
    if (n_samples < 0) throw ConfigError("n_samples must be >= 0");
    if (t_x_min < 1 || t_x_max < t_x_min) throw ConfigError("bad t_x range");
    if (t_a_min < 1 || t_a_max < t_a_min) throw ConfigError("bad t_a range");
    if (d_a < 1) throw ConfigError("d_a must be >= 1");
    if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
    if (vocab < 2 * n_classes) throw ConfigError("vocab too small for class token blocks");
    if (audio_signal_strength < 0.0 || audio_signal_strength > 1.0)
        throw ConfigError("audio_signal_strength must be in [0,1]");
    if (audio_noise_sigma < 0.0) throw ConfigError("audio_noise_sigma must be >= 0");
    if (text_ambiguity < 0.0 || text_ambiguity > 1.0)
        throw ConfigError("text_ambiguity must be in [0,1]");
    if (index_offset < 0) throw ConfigError("index_offset must be >= 0");
}

int Dataset::max_t_x() const {
    int m = 0;
    for (const auto& s : samples) m = std::max(m, static_cast<int>(s.tokens.size()));
    return m;
}

int class_token_block(int vocab, int n_classes) {
    // Half the vocabulary is split into class blocks; background draws over
    // the full vocabulary then produce frequent false class evidence, so
    // text_ambiguity buys real ambiguity rather than mere sparsity.
    return std::max(1, vocab / (2 * n_classes));
}

std::vector<double> class_audio_mean(std::uint64_t seed, int cls, int d_a) {
    Rng rng(mix_key({seed, fnv1a64("class-mean"), static_cast<std::uint64_t>(cls)}));
    std::vector<double> m(d_a);
    double norm = 0.0;
    for (double& v : m) {
        v = rng.next_normal();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : m) v /= norm;
    return m;
}

Dataset generate(const SynthConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.d_a = cfg.d_a;
    ds.vocab = cfg.vocab;
    ds.n_classes = cfg.n_classes;
    ds.samples.reserve(cfg.n_samples);
    ds.gen_meta.reserve(cfg.n_samples);

    std::vector<std::vector<double>> means(cfg.n_classes);
    for (int c = 0; c < cfg.n_classes; ++c) means[c] = class_audio_mean(cfg.seed, c, cfg.d_a);
    const int block = class_token_block(cfg.vocab, cfg.n_classes);

    for (int i = 0; i < cfg.n_samples; ++i) {
        Rng rng(mix_key({cfg.seed, fnv1a64("sample"),
                         static_cast<std::uint64_t>(i + cfg.index_offset)}));
        MultimodalSample s;
        s.label = static_cast<int>(rng.next_below(cfg.n_classes));

        const int t_x = cfg.t_x_min + static_cast<int>(rng.next_below(cfg.t_x_max - cfg.t_x_min + 1));
        s.tokens.resize(t_x);
        for (int t = 0; t < t_x; ++t) {
            if (rng.next_unit() < cfg.text_ambiguity) {
                s.tokens[t] = static_cast<std::uint32_t>(rng.next_below(cfg.vocab));
            } else {
                s.tokens[t] = static_cast<std::uint32_t>(
                    s.label * block + rng.next_below(block));
            }
        }

        const int t_a = cfg.t_a_min + static_cast<int>(rng.next_below(cfg.t_a_max - cfg.t_a_min + 1));
        const int w = 2;
        const int begin = static_cast<int>(rng.next_below(t_a - w + 1));
        s.audio.frames = Matrix(t_a, cfg.d_a);
        s.audio.mask.assign(t_a, 1);
        for (int f = 0; f < t_a; ++f) {
            const bool in_window = f >= begin && f < begin + w;
            if (in_window) {
                for (int j = 0; j < cfg.d_a; ++j) {
                    // Base draws are noise-magnitude independent, so datasets
                    // regenerated at another noise_sigma differ only in scale.
                    const double xi = rng.next_normal();
                    s.audio.frames.at(f, j) =
                        cfg.audio_signal_strength * means[s.label][j] +
                        cfg.audio_noise_sigma * xi;
                }
            } else {
                // Quiet label-independent background, so the informative
                // window stays acoustically salient the way localized
                // events are.
                for (int j = 0; j < cfg.d_a; ++j)
                    s.audio.frames.at(f, j) = 0.5 * rng.next_normal();
            }
        }
        ds.samples.push_back(std::move(s));
        ds.gen_meta.push_back({begin, w});
    }
    return ds;
}

namespace {

template <typename T>
void write_raw(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_raw(std::ifstream& in, T& v, std::size_t offset_for_error) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw FormatError("blob truncated", offset_for_error);
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path_prefix) {
    std::ofstream blob(path_prefix + ".blob", std::ios::binary);
    if (!blob) throw FormatError("cannot open blob file for writing", 0);
    std::ofstream man(path_prefix + ".manifest");
    if (!man) throw FormatError("cannot open manifest file for writing", 0);

    man << "caliber-dataset 1 " << ds.size() << ' ' << ds.d_a << ' ' << ds.vocab << ' '
        << ds.n_classes << '\n';

    std::uint64_t offset = 0;
    for (int i = 0; i < ds.size(); ++i) {
        const MultimodalSample& s = ds.samples[i];
        const std::uint64_t tokens_offset = offset;
        const std::uint64_t frames_offset =
            tokens_offset + 4ull * s.tokens.size();
        man << i << ' ' << s.tokens.size() << ' ' << s.audio.t_a() << ' ' << s.label << ' '
            << tokens_offset << ' ' << frames_offset << '\n';
        for (std::uint32_t tok : s.tokens) write_raw(blob, tok);
        for (double v : s.audio.frames.data) write_raw(blob, v);
        for (std::uint8_t m : s.audio.mask) write_raw(blob, m);
        offset = frames_offset + 8ull * s.audio.frames.data.size() + s.audio.mask.size();
    }
    if (!blob || !man) throw FormatError("write failed", offset);
}

Dataset load_dataset(const std::string& path_prefix) {
    std::ifstream man(path_prefix + ".manifest");
    if (!man) throw FormatError("cannot open manifest " + path_prefix + ".manifest", 0);

    std::string magic;
    int version = 0, n = 0;
    Dataset ds;
    man >> magic >> version >> n >> ds.d_a >> ds.vocab >> ds.n_classes;
    if (!man || magic != "caliber-dataset")
        throw FormatError("bad manifest header", 0);
    if (version != 1) throw FormatError("unsupported dataset version", 0);
    if (n < 0 || ds.d_a < 1 || ds.vocab < 1 || ds.n_classes < 1)
        throw FormatError("bad manifest header fields", 0);

    std::ifstream blob(path_prefix + ".blob", std::ios::binary);
    if (!blob) throw FormatError("cannot open blob " + path_prefix + ".blob", 0);

    ds.samples.resize(n);
    for (int i = 0; i < n; ++i) {
        long long id = 0, t_x = 0, t_a = 0, label = 0;
        std::uint64_t tokens_offset = 0, frames_offset = 0;
        man >> id >> t_x >> t_a >> label >> tokens_offset >> frames_offset;
        if (!man) {
            const std::streamoff pos = man.rdstate() ? 0 : static_cast<std::streamoff>(man.tellg());
            throw FormatError("manifest truncated at sample " + std::to_string(i),
                              static_cast<std::size_t>(pos < 0 ? 0 : pos));
        }
        if (id != i || t_x < 1 || t_a < 1 || label < 0 || label >= ds.n_classes)
            throw FormatError("bad manifest line for sample " + std::to_string(i),
                              static_cast<std::size_t>(tokens_offset));

        MultimodalSample& s = ds.samples[i];
        s.label = static_cast<int>(label);
        s.tokens.resize(t_x);
        blob.seekg(static_cast<std::streamoff>(tokens_offset));
        for (long long t = 0; t < t_x; ++t) {
            std::uint32_t tok = 0;
            read_raw(blob, tok, tokens_offset + 4ull * t);
            if (tok >= static_cast<std::uint32_t>(ds.vocab))
                throw FormatError("token id out of range", tokens_offset + 4ull * t);
            s.tokens[t] = tok;
        }
        blob.seekg(static_cast<std::streamoff>(frames_offset));
        s.audio.frames = Matrix(static_cast<int>(t_a), ds.d_a);
        for (std::size_t k = 0; k < s.audio.frames.data.size(); ++k)
            read_raw(blob, s.audio.frames.data[k], frames_offset + 8ull * k);
        const std::uint64_t mask_offset = frames_offset + 8ull * s.audio.frames.data.size();
        s.audio.mask.resize(t_a);
        for (long long k = 0; k < t_a; ++k) read_raw(blob, s.audio.mask[k], mask_offset + k);
        if (!s.audio.frames.all_finite())
            throw FormatError("non-finite frame value", frames_offset);
    }
    return ds;
}

}  // namespace caliber
