#include "rvqlab/signal.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rvqlab/error.hpp"
#include "rvqlab/rng.hpp"

namespace rvqlab::signal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kBurstSamples = 1920;  // 120 ms
constexpr int kGapSamples = 640;     // 40 ms
constexpr double kFormantBandwidthHz = 90.0;
constexpr double kMaxHarmonicHz = 4000.0;
constexpr double kNoiseSnrDb = 30.0;
constexpr double kPeakTarget = 0.7;

// One (F1, F2) pair per symbol id 1..10. Spacing is uneven on purpose:
// (3,4) and (5,6) sit close enough that a coarse codec can smear them into
// each other, while the rest stay far apart.
constexpr double kFormantTable[kVocabSize][2] = {
    {300.0, 2300.0},  // 1
    {420.0, 1800.0},  // 2
    {520.0, 1450.0},  // 3
    {580.0, 1320.0},  // 4
    {700.0, 1100.0},  // 5
    {760.0, 1000.0},  // 6
    {350.0, 2700.0},  // 7
    {880.0, 1700.0},  // 8
    {640.0, 2500.0},  // 9
    {950.0, 2900.0},  // 10
};

void render_burst(int symbol, double f0, double* out) {
    const double f1 = kFormantTable[symbol - 1][0];
    const double f2 = kFormantTable[symbol - 1][1];
    const double inv2bw2 = 1.0 / (2.0 * kFormantBandwidthHz * kFormantBandwidthHz);
    const int n_harmonics = static_cast<int>(kMaxHarmonicHz / f0);
    for (int m = 1; m <= n_harmonics; ++m) {
        const double fm = m * f0;
        const double d1 = fm - f1;
        const double d2 = fm - f2;
        const double amp = std::exp(-d1 * d1 * inv2bw2) +
                           0.8 * std::exp(-d2 * d2 * inv2bw2);
        if (amp < 1e-8) continue;
        const double w = 2.0 * M_PI * fm / kSampleRate;
        for (int t = 0; t < kBurstSamples; ++t) out[t] += amp * std::sin(w * t);
    }
    for (int t = 0; t < kBurstSamples; ++t) {
        const double env = 0.5 - 0.5 * std::cos(2.0 * M_PI * t / kBurstSamples);
        out[t] *= env;
    }
}

void put_u32(std::string& s, uint32_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
    s.push_back(static_cast<char>((v >> 16) & 0xff));
    s.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u16(std::string& s, uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
}

uint32_t get_u32(const std::string& s, size_t off) {
    return static_cast<uint8_t>(s[off]) |
           (static_cast<uint8_t>(s[off + 1]) << 8) |
           (static_cast<uint8_t>(s[off + 2]) << 16) |
           (static_cast<uint8_t>(s[off + 3]) << 24);
}

uint16_t get_u16(const std::string& s, size_t off) {
    return static_cast<uint16_t>(static_cast<uint8_t>(s[off]) |
                                 (static_cast<uint8_t>(s[off + 1]) << 8));
}

int split_index(Split s) { return static_cast<int>(s); }

}  // namespace

const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Dev: return "dev";
        case Split::Test: return "test";
    }
    return "train";
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "dev") return Split::Dev;
    if (name == "test") return Split::Test;
    throw InvalidArgument("unknown split name: " + name);
}

std::vector<double> sqrt_hann_window(int width) {
    if (width <= 0 || (width & (width - 1)) != 0)
        throw InvalidArgument("window width must be a positive power of two, got " +
                              std::to_string(width));
    std::vector<double> win(width);
    for (int n = 0; n < width; ++n)
        win[n] = std::sqrt(0.5 - 0.5 * std::cos(2.0 * M_PI * n / width));
    return win;
}

std::size_t padded_length(std::size_t samples, int width, int hop) {
    std::size_t padded = ((samples + hop - 1) / hop) * hop;
    if (padded < static_cast<std::size_t>(width))
        throw InvalidArgument("waveform too short to frame: " +
                              std::to_string(samples) + " samples, need >= " +
                              std::to_string(width) + " after padding");
    return padded;
}

Utterance synth_utterance(const std::vector<int>& transcript, uint64_t seed) {
    if (transcript.empty()) throw InvalidArgument("empty transcript");
    for (int id : transcript)
        if (id < 1 || id > kVocabSize)
            throw InvalidArgument("symbol id out of range: " + std::to_string(id));

    Rng rng(mix_seed(seed, 0x5eed));
    const double f0 = 118.0 + 14.0 * rng.uniform();

    const std::size_t total =
        transcript.size() * kBurstSamples + (transcript.size() + 1) * kGapSamples;
    std::vector<double> x(total, 0.0);
    std::size_t pos = kGapSamples;
    for (int id : transcript) {
        render_burst(id, f0, x.data() + pos);
        pos += kBurstSamples + kGapSamples;
    }

    double power = 0.0;
    for (double v : x) power += v * v;
    power /= static_cast<double>(total);
    const double sigma = std::sqrt(power * std::pow(10.0, -kNoiseSnrDb / 10.0));
    for (double& v : x) v += sigma * rng.gaussian();

    double peak = 0.0;
    for (double v : x) peak = std::max(peak, std::abs(v));
    const double scale = kPeakTarget / peak;
    for (double& v : x) v *= scale;

    Utterance utt;
    utt.waveform.samples = std::move(x);
    utt.waveform.sample_rate = kSampleRate;
    utt.transcript = transcript;
    utt.seed = seed;
    return utt;
}

Corpus gen_corpus(std::size_t n_utts, int min_len, int max_len, uint64_t seed,
                  Split split) {
    if (n_utts == 0) throw InvalidArgument("n_utts must be positive");
    if (min_len < 1 || max_len < min_len)
        throw InvalidArgument("bad transcript length range [" +
                              std::to_string(min_len) + ", " +
                              std::to_string(max_len) + "]");

    Corpus corpus;
    corpus.split = split;
    corpus.seed = seed;
    corpus.utterances.reserve(n_utts);

    Rng rng(mix_seed(seed, 0x100 + split_index(split)));
    for (std::size_t i = 0; i < n_utts; ++i) {
        const int len =
            min_len + static_cast<int>(rng.uniform_index(max_len - min_len + 1));
        std::vector<int> transcript(len);
        for (int& id : transcript)
            id = 1 + static_cast<int>(rng.uniform_index(kVocabSize));

        const uint64_t utt_seed = mix_seed(seed, split_index(split), i);
        Utterance utt = synth_utterance(transcript, utt_seed);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%s-%05zu", split_name(split), i);
        utt.id = buf;
        corpus.utterances.push_back(std::move(utt));
    }
    return corpus;
}

Waveform read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("wav: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0)
        throw FormatError("wav: riff_tag missing in " + path);
    if (bytes.compare(8, 4, "WAVE") != 0)
        throw FormatError("wav: wave_tag missing in " + path);

    bool have_fmt = false;
    size_t data_off = 0, data_len = 0;
    size_t off = 12;
    while (off + 8 <= bytes.size()) {
        const std::string id = bytes.substr(off, 4);
        const uint32_t size = get_u32(bytes, off + 4);
        const size_t body = off + 8;
        if (body + size > bytes.size())
            throw FormatError("wav: truncated chunk " + id);
        if (id == "fmt ") {
            if (size < 16) throw FormatError("wav: fmt chunk too small");
            const uint16_t audio_format = get_u16(bytes, body);
            const uint16_t channels = get_u16(bytes, body + 2);
            const uint32_t rate = get_u32(bytes, body + 4);
            const uint16_t bits = get_u16(bytes, body + 14);
            if (audio_format != 1)
                throw FormatError("wav: audio_format=" + std::to_string(audio_format));
            if (channels != 1)
                throw FormatError("wav: channels=" + std::to_string(channels));
            if (rate != static_cast<uint32_t>(kSampleRate))
                throw FormatError("wav: sample_rate=" + std::to_string(rate));
            if (bits != 16)
                throw FormatError("wav: bits_per_sample=" + std::to_string(bits));
            have_fmt = true;
        } else if (id == "data") {
            data_off = body;
            data_len = size;
        }
        off = body + size + (size & 1);
    }
    if (!have_fmt) throw FormatError("wav: fmt chunk missing in " + path);
    if (data_off == 0) throw FormatError("wav: data chunk missing in " + path);

    Waveform w;
    w.sample_rate = kSampleRate;
    w.samples.resize(data_len / 2);
    for (size_t i = 0; i < w.samples.size(); ++i) {
        const uint16_t raw = get_u16(bytes, data_off + 2 * i);
        w.samples[i] = static_cast<int16_t>(raw) / 32768.0;
    }
    return w;
}

void write_wav(const std::string& path, const Waveform& w) {
    if (w.samples.empty()) throw InvalidArgument("refusing to write empty waveform");
    if (w.sample_rate != kSampleRate)
        throw InvalidArgument("sample_rate=" + std::to_string(w.sample_rate) +
                              " (want " + std::to_string(kSampleRate) + ")");
    const uint32_t data_size = static_cast<uint32_t>(w.samples.size() * 2);
    std::string out;
    out.reserve(44 + data_size);
    out += "RIFF";
    put_u32(out, 36 + data_size);
    out += "WAVE";
    out += "fmt ";
    put_u32(out, 16);
    put_u16(out, 1);  // PCM
    put_u16(out, 1);  // mono
    put_u32(out, kSampleRate);
    put_u32(out, kSampleRate * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    out += "data";
    put_u32(out, data_size);
    for (double v : w.samples) {
        long q = std::lround(v * 32768.0);
        q = std::clamp(q, -32768L, 32767L);
        put_u16(out, static_cast<uint16_t>(static_cast<int16_t>(q)));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("wav: cannot open " + path + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw FormatError("wav: short write to " + path);
}

FrameMatrix frame(const Waveform& w, int width, int hop) {
    if (width <= 0 || (width & (width - 1)) != 0)
        throw InvalidArgument("frame width must be a power of two, got " +
                              std::to_string(width));
    if (hop <= 0 || (hop & (hop - 1)) != 0)
        throw InvalidArgument("hop must be a power of two, got " +
                              std::to_string(hop));
    if (hop > width) throw InvalidArgument("hop exceeds frame width");

    const std::size_t padded = padded_length(w.samples.size(), width, hop);
    const std::size_t n_frames = (padded - width) / hop + 1;
    const std::vector<double> win = sqrt_hann_window(width);

    FrameMatrix fm;
    fm.frame_count = n_frames;
    fm.width = width;
    fm.hop = hop;
    fm.window = WindowKind::SqrtHann;
    fm.source_samples = w.samples.size();
    fm.data.assign(n_frames * width, 0.0);
    for (std::size_t f = 0; f < n_frames; ++f) {
        double* row = fm.row(f);
        const std::size_t start = f * hop;
        const std::size_t avail =
            std::min(static_cast<std::size_t>(width), w.samples.size() - start);
        for (std::size_t n = 0; n < avail; ++n)
            row[n] = win[n] * w.samples[start + n];
    }
    return fm;
}

Waveform overlap_add(const FrameMatrix& fm) {
    if (fm.window != WindowKind::SqrtHann)
        throw InvalidArgument("overlap_add: unsupported window");
    if (fm.hop * 2 != fm.width)
        throw InvalidArgument("overlap_add: hop=" + std::to_string(fm.hop) +
                              " width=" + std::to_string(fm.width) +
                              " (need 50% overlap)");
    const std::vector<double> win = sqrt_hann_window(fm.width);
    const std::size_t padded =
        fm.frame_count == 0
            ? fm.source_samples
            : (fm.frame_count - 1) * fm.hop + fm.width;
    std::vector<double> acc(std::max(padded, fm.source_samples), 0.0);
    for (std::size_t f = 0; f < fm.frame_count; ++f) {
        const double* row = fm.row(f);
        double* dst = acc.data() + f * fm.hop;
        for (int n = 0; n < fm.width; ++n) dst[n] += win[n] * row[n];
    }
    Waveform w;
    w.sample_rate = kSampleRate;
    acc.resize(fm.source_samples);
    w.samples = std::move(acc);
    return w;
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "wavs");
    std::ofstream manifest(fs::path(dir) / "manifest.jsonl", std::ios::trunc);
    if (!manifest) throw FormatError("cannot open manifest in " + dir);
    for (const Utterance& utt : corpus.utterances) {
        const std::string rel = "wavs/" + utt.id + ".wav";
        write_wav((fs::path(dir) / rel).string(), utt.waveform);
        json line = {{"id", utt.id},
                     {"transcript", utt.transcript},
                     {"wav_path", rel},
                     {"seed", utt.seed}};
        manifest << line.dump() << "\n";
    }
    if (!manifest) throw FormatError("short write to manifest in " + dir);
}

Corpus load_corpus(const std::string& dir) {
    std::ifstream manifest(fs::path(dir) / "manifest.jsonl");
    if (!manifest)
        throw FormatError("cannot open " +
                          (fs::path(dir) / "manifest.jsonl").string());
    Corpus corpus;
    std::string line;
    size_t line_no = 0;
    while (std::getline(manifest, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError("manifest line " + std::to_string(line_no) + ": " +
                              e.what());
        }
        Utterance utt;
        utt.id = j.at("id").get<std::string>();
        utt.transcript = j.at("transcript").get<std::vector<int>>();
        utt.seed = j.at("seed").get<uint64_t>();
        utt.waveform =
            read_wav((fs::path(dir) / j.at("wav_path").get<std::string>()).string());
        corpus.utterances.push_back(std::move(utt));
    }
    if (!corpus.utterances.empty()) {
        const std::string& id = corpus.utterances.front().id;
        const auto dash = id.find('-');
        if (dash != std::string::npos) {
            try {
                corpus.split = split_from_name(id.substr(0, dash));
            } catch (const InvalidArgument&) {
            }
        }
    }
    return corpus;
}

}  // namespace rvqlab::signal
