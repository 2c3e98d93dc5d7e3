#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "caliber/matrix.hpp"

namespace caliber {

// Frame-level audio embeddings for one sample. Masked-out frames are
// excluded from attention and pooling.
struct AudioFrames {
    Matrix frames;                   // T_a x d_a
    std::vector<std::uint8_t> mask;  // length T_a, 1 = valid

    int t_a() const { return frames.rows; }
    int d_a() const { return frames.cols; }
    int valid_count() const {
        int n = 0;
        for (auto m : mask) n += (m != 0);
        return n;
    }
};

struct MultimodalSample {
    std::vector<std::uint32_t> tokens;
    AudioFrames audio;
    int label = 0;
};

// Synthetic-data recipe. Labels are drawn uniformly; text encodes the label
// through class-specific token blocks blurred by text_ambiguity; a contiguous
// window of audio frames encodes the label through class-mean embeddings
// scaled by signal_strength with additive noise of std noise_sigma, while the
// remaining frames are unit Gaussian noise.
struct SynthConfig {
    int n_samples = 2000;
    int t_x_min = 4;
    int t_x_max = 10;
    int t_a_min = 8;
    int t_a_max = 16;
    int d_a = 24;
    int vocab = 64;
    int n_classes = 2;
    double audio_signal_strength = 1.0;  // 0 = audio carries no label signal
    double audio_noise_sigma = 0.0;
    double text_ambiguity = 0.0;         // 1 = text carries no label signal
    std::uint64_t seed = 1;
    // Per-sample streams are keyed by seed and sample index + index_offset;
    // the same seed with disjoint offset ranges yields disjoint draws from
    // one distribution (shared class means), e.g. a train/test file pair.
    int index_offset = 0;

    void validate() const;
};

// Where the label-carrying audio window sits; produced by generate() only
// (not part of the on-disk format).
struct SampleGenMeta {
    int window_begin = 0;
    int window_len = 0;
};

struct Dataset {
    int d_a = 0;
    int vocab = 0;
    int n_classes = 0;
    std::vector<MultimodalSample> samples;
    std::vector<SampleGenMeta> gen_meta;  // empty after load()

    int size() const { return static_cast<int>(samples.size()); }
    int max_t_x() const;
};

// Deterministic class-mean audio embedding for (seed, class); unit norm.
std::vector<double> class_audio_mean(std::uint64_t seed, int cls, int d_a);

// Number of signal tokens reserved per class for a given vocabulary.
int class_token_block(int vocab, int n_classes);

Dataset generate(const SynthConfig& cfg);

// On-disk format: <prefix>.manifest (text) + <prefix>.blob (binary).
// Manifest header:  caliber-dataset 1 <n> <d_a> <vocab> <n_classes>
// Manifest line:    <id> <T_x> <T_a> <label> <tokens_offset> <frames_offset>
// Blob per sample:  T_x uint32 token ids, then T_a*d_a float64 frame values,
// then T_a uint8 mask bytes, all little-endian, at the recorded offsets.
void save_dataset(const Dataset& ds, const std::string& path_prefix);
Dataset load_dataset(const std::string& path_prefix);

}  // namespace caliber
