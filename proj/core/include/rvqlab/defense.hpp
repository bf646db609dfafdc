#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rvqlab/signal.hpp"

namespace rvqlab::defense {

inline constexpr int kMaxStages = 32;
inline constexpr int kCodebookSize = 256;
inline constexpr int kLatentDim = 512;

// Residual vector quantizer over orthonormal DCT-II coefficients of windowed
// frames. Stage k quantizes the residual left by stages 1..k-1, so a depth-n
// decode sums the first n selected centroids.
struct RvqCodec {
    int n_max = kMaxStages;
    int k = kCodebookSize;
    int dim = kLatentDim;
    int frame_width = signal::kFrameWidth;
    int hop = signal::kHop;
    uint64_t seed = 0;
    std::vector<double> codebooks;  // n_max x k x dim, stage-major

    const double* stage(int s) const {
        return codebooks.data() + static_cast<std::size_t>(s) * k * dim;
    }
    double* stage(int s) {
        return codebooks.data() + static_cast<std::size_t>(s) * k * dim;
    }
    const double* centroid(int s, int c) const {
        return stage(s) + static_cast<std::size_t>(c) * dim;
    }
};

struct TokenGrid {
    std::vector<int> tokens;  // frames x depth, frame-major
    std::size_t frames = 0;
    int depth = 0;
    std::size_t source_samples = 0;  // lets decode undo the framing pad

    int at(std::size_t f, int s) const { return tokens[f * depth + s]; }
    int& at(std::size_t f, int s) { return tokens[f * depth + s]; }
};

enum class DefenseType { None, Rvq, Median, Resample };

struct DefenseKind {
    DefenseType type = DefenseType::None;
    int depth = 0;   // rvq stages
    int width = 0;   // median window
    int factor = 2;  // resample decimation

    // Spec strings: none | rvq:<n> | median:<w> | resample
    static DefenseKind parse(const std::string& spec);
    std::string str() const;
};

// Orthonormal DCT-II matrix, row k holding basis vector k; T T^t = I.
std::vector<double> dct_matrix(int n);

struct CodecTrainReport {
    std::vector<double> stage_energy;  // mean residual energy after stage k+1
    std::size_t fit_frames = 0;
};

// Greedy stage-wise k-means (k-means++ init, at most 25 iterations per stage,
// relative inertia tolerance 1e-6, empty clusters re-seeded to the farthest
// point). Needs at least 50*k frames in the corpus; fits on a seeded
// subsample when the corpus provides more than fit_cap frames.
RvqCodec train_codec(const signal::Corpus& corpus, int n_max = kMaxStages,
                     int k = kCodebookSize, uint64_t seed = 0,
                     CodecTrainReport* report = nullptr,
                     std::size_t fit_cap = 16384);

TokenGrid encode(const RvqCodec& codec, const signal::Waveform& w, int depth);
signal::Waveform decode(const RvqCodec& codec, const TokenGrid& tg);

signal::Waveform median_filter(const signal::Waveform& w, int width);
signal::Waveform resample_defense(const signal::Waveform& w);

// none -> identity; rvq -> decode(encode(w, depth)); median/resample as named.
signal::Waveform apply(const DefenseKind& d, const signal::Waveform& w,
                       const RvqCodec* codec = nullptr);

// n * log2(k) bits/frame * (sample_rate / hop) frames/s, in kbps.
double bitrate_kbps(const RvqCodec& codec, int depth);

// Binary codebook file: magic "RVQ1", n_max/k/dim u32, seed u64, then
// stage-major f64 centroid data.
void save_codec(const RvqCodec& codec, const std::string& path);
RvqCodec load_codec(const std::string& path);

}  // namespace rvqlab::defense
