#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace rvqlab::signal {

inline constexpr int kSampleRate = 16000;
inline constexpr int kFrameWidth = 512;
inline constexpr int kHop = 256;
inline constexpr int kVocabSize = 10;  // symbol ids 1..10, 0 is the CTC blank

struct Waveform {
    std::vector<double> samples;
    int sample_rate = kSampleRate;

    std::size_t size() const { return samples.size(); }
    double duration_s() const {
        return static_cast<double>(samples.size()) / sample_rate;
    }
};

struct Utterance {
    std::string id;  // manifest key; empty for ad-hoc waveforms
    Waveform waveform;
    std::vector<int> transcript;  // ids in 1..kVocabSize
    uint64_t seed = 0;            // synth seed, kept so the manifest can round-trip
};

enum class Split { Train, Dev, Test };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct Corpus {
    Split split = Split::Train;
    std::vector<Utterance> utterances;
    uint64_t seed = 0;
};

enum class WindowKind { SqrtHann };

// Frames are stored with the analysis window already applied.
struct FrameMatrix {
    std::vector<double> data;  // frame_count x width, row-major
    std::size_t frame_count = 0;
    int width = kFrameWidth;
    int hop = kHop;
    WindowKind window = WindowKind::SqrtHann;
    std::size_t source_samples = 0;  // pre-padding length, used to undo padding

    double* row(std::size_t f) { return data.data() + f * width; }
    const double* row(std::size_t f) const { return data.data() + f * width; }
};

// Periodic sqrt-Hann of the given width. win[n]^2 + win[n + width/2]^2 == 1,
// which is what makes analysis+synthesis an identity at 50% overlap.
std::vector<double> sqrt_hann_window(int width);

// Number of samples after padding the tail to a multiple of hop.
std::size_t padded_length(std::size_t samples, int width, int hop);

// Renders a transcript as a sequence of two-formant harmonic bursts (120 ms
// per symbol, 40 ms of silence between symbols and at both ends), adds
// Gaussian noise at 30 dB SNR and peak-normalizes to 0.7.
Utterance synth_utterance(const std::vector<int>& transcript, uint64_t seed);

// Uniform random transcripts with lengths in [min_len, max_len].
Corpus gen_corpus(std::size_t n_utts, int min_len, int max_len, uint64_t seed,
                  Split split = Split::Train);

// RIFF/WAVE PCM signed 16-bit mono 16 kHz.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& w);

// Slices w into 50%-overlapped sqrt-Hann windowed frames. The tail is
// zero-padded to a multiple of hop; the padded length must be >= width.
FrameMatrix frame(const Waveform& w, int width = kFrameWidth, int hop = kHop);

// Applies the synthesis window and overlap-adds back to source_samples
// samples. Identity on the interior when fed frame() output.
Waveform overlap_add(const FrameMatrix& fm);

// Corpus manifest: one JSON object per line {id, transcript, wav_path, seed}.
// save writes <dir>/manifest.jsonl plus one WAV per utterance under
// <dir>/wavs/; load reads the manifest back and pulls in the WAVs.
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

}  // namespace rvqlab::signal
