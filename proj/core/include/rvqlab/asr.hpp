#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rvqlab/autodiff.hpp"
#include "rvqlab/signal.hpp"

namespace rvqlab::asr {

inline constexpr int kNumMels = 32;
inline constexpr int kContext = 2;  // frames of context on each side
inline constexpr int kBlank = 0;

struct ModelConfig {
    int frame_width = signal::kFrameWidth;
    int hop = signal::kHop;
    int n_mels = kNumMels;
    int context = kContext;
    int vocab = signal::kVocabSize;
    std::vector<int> layer_dims = {kNumMels * (2 * kContext + 1), 128, 128,
                                   signal::kVocabSize + 1};
};

// Differentiable front end (frame -> DFT power -> mel -> log) feeding a
// small per-frame classifier with +-2 frames of context. The DFT and the
// filterbank are fixed matrices, so gradients reach every input sample.
struct AcousticModel {
    ModelConfig config;
    autodiff::ParameterSet params;  // w1,b1,w2,b2,w3,b3
    std::shared_ptr<const autodiff::Tensor> dft_real;  // width x bins
    std::shared_ptr<const autodiff::Tensor> dft_imag;
    std::shared_ptr<const autodiff::Tensor> mel;  // bins x n_mels
};

AcousticModel make_model(uint64_t seed, const ModelConfig& config = {});

// Triangular mel-spaced filterbank, (n_bins x n_mels); every filter is
// nonnegative and its column sums to 1.
autodiff::Tensor make_filterbank(int n_mels, int n_bins, int sample_rate);

// Log-mel features (frames x n_mels) of the waveform node x, shaped (1, T).
autodiff::NodeId featurize(autodiff::Graph& g, const AcousticModel& m,
                           autodiff::NodeId x);

struct LogitsNodes {
    autodiff::NodeId logits;  // frames x (vocab + 1)
    std::vector<std::pair<std::string, autodiff::NodeId>> params;
};

LogitsNodes build_logits(autodiff::Graph& g, const AcousticModel& m,
                         autodiff::NodeId x);

// Frames needed for the blank-augmented alignment of `target` to exist.
std::size_t min_alignment_frames(const std::vector<int>& target);

// CTC negative log-likelihood of `target` given per-frame log-probabilities
// (frames x vocab+1, blank first). Gradients are attached to the log_probs
// node during the forward pass.
autodiff::NodeId ctc_loss(autodiff::Graph& g, autodiff::NodeId log_probs,
                          const std::vector<int>& target);

// Per-frame argmax (ties to the lowest id), collapse repeats, drop blanks.
std::vector<int> greedy_decode(const autodiff::Tensor& logits);

std::vector<int> transcribe(const AcousticModel& m, const signal::Waveform& w);

struct TrainConfig {
    double lr = 1e-2;
    int epochs = 30;
    int batch = 16;
    uint64_t seed = 0;
    double clip_norm = 5.0;
    double target_dev_wer = -1.0;  // >= 0 stops early once dev WER reaches it
    bool augment = false;          // level/interference jitter, redrawn per epoch
    bool verbose = false;
};

struct EpochStats {
    double mean_loss = 0.0;
    double dev_wer = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
};

// Minibatch SGD with global gradient-norm clipping, deterministic per seed.
TrainReport train_asr(AcousticModel& m, const signal::Corpus& train,
                      const signal::Corpus& dev, const TrainConfig& cfg);

// <prefix>.cgpt holds the parameters, <prefix>.json the architecture.
void save_model(const AcousticModel& m, const std::string& prefix);
AcousticModel load_model(const std::string& prefix);

}  // namespace rvqlab::asr
