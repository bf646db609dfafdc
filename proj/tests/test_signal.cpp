#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "rvqlab/error.hpp"
#include "rvqlab/rng.hpp"
#include "rvqlab/signal.hpp"

using namespace rvqlab;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
    fs::path p = fs::temp_directory_path() / (std::string("rvqlab_sig_") + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("sqrt-hann window satisfies the overlap-add identity") {
    const int w = 512;
    auto win = signal::sqrt_hann_window(w);
    REQUIRE(win.size() == static_cast<std::size_t>(w));
    for (int n = 0; n < w; ++n) {
        CHECK(win[n] >= 0.0);
        CHECK(win[n] <= 1.0);
    }
    // win^2[n] + win^2[n + w/2] == 1 is exactly what makes two overlapped
    // analysis+synthesis windows sum to one.
    for (int n = 0; n < w / 2; ++n) {
        double s = win[n] * win[n] + win[n + w / 2] * win[n + w / 2];
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("frame counts follow the tail-padding rule") {
    signal::Waveform w;
    w.samples.assign(1024, 0.1);
    auto fm = signal::frame(w);
    CHECK(fm.frame_count == 3);  // offsets 0, 256, 512
    CHECK(fm.width == 512);
    CHECK(fm.hop == 256);
    CHECK(fm.source_samples == 1024);

    signal::Waveform odd;
    odd.samples.assign(1000, 0.1);  // pads to 1024
    CHECK(signal::frame(odd).frame_count == 3);

    signal::Waveform tiny;
    tiny.samples.assign(512, 0.1);
    CHECK(signal::frame(tiny).frame_count == 1);
}

TEST_CASE("frame rejects invalid geometry") {
    signal::Waveform w;
    w.samples.assign(2048, 0.0);
    CHECK_THROWS_AS(signal::frame(w, 500, 256), InvalidArgument);
    CHECK_THROWS_AS(signal::frame(w, 512, 200), InvalidArgument);
    CHECK_THROWS_AS(signal::frame(w, 256, 512), InvalidArgument);
    signal::Waveform empty;
    CHECK_THROWS_AS(signal::frame(empty), InvalidArgument);
    // Framing tolerates other hops, but synthesis is defined at 50% overlap.
    CHECK_THROWS_AS(signal::overlap_add(signal::frame(w, 512, 128)),
                    InvalidArgument);
}

TEST_CASE("overlap-add reconstructs the interior exactly") {
    Rng rng(42);
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t n = 600 + rng.uniform_index(4000);
        signal::Waveform w;
        w.samples.resize(n);
        for (auto& v : w.samples) v = rng.uniform(-0.9, 0.9);
        auto fm = signal::frame(w);
        auto rec = signal::overlap_add(fm);
        REQUIRE(rec.samples.size() == n);
        // The head before one full overlap and the zero-padded tail are
        // attenuated; everything in between must come back exactly.
        std::size_t lo = 512 - 256;
        std::size_t hi = (fm.frame_count - 1) * 256;
        if (hi > n) hi = n;
        for (std::size_t i = lo; i < hi; ++i)
            CHECK(std::abs(rec.samples[i] - w.samples[i]) < 1e-10);
    }
}

TEST_CASE("synthesis produces the documented layout") {
    auto utt = signal::synth_utterance({3}, 99);
    // 40 ms lead-in + 120 ms burst + 40 ms tail at 16 kHz.
    CHECK(utt.waveform.samples.size() == 3200);
    CHECK(utt.transcript == std::vector<int>{3});

    auto two = signal::synth_utterance({3, 7}, 99);
    CHECK(two.waveform.samples.size() == 3200 + 2560);

    double peak = 0.0;
    for (double v : utt.waveform.samples) peak = std::max(peak, std::abs(v));
    CHECK(peak == doctest::Approx(0.7).epsilon(1e-9));
}

TEST_CASE("synthesis is deterministic in the seed") {
    auto a = signal::synth_utterance({1, 4, 2}, 7);
    auto b = signal::synth_utterance({1, 4, 2}, 7);
    auto c = signal::synth_utterance({1, 4, 2}, 8);
    CHECK(a.waveform.samples == b.waveform.samples);
    CHECK(a.waveform.samples != c.waveform.samples);
}

TEST_CASE("synthesis rejects bad transcripts") {
    CHECK_THROWS_AS(signal::synth_utterance({}, 1), InvalidArgument);
    CHECK_THROWS_AS(signal::synth_utterance({0}, 1), InvalidArgument);
    CHECK_THROWS_AS(signal::synth_utterance({11}, 1), InvalidArgument);
}

TEST_CASE("distinct symbols are acoustically distinct") {
    // Normalized cross-correlation peak between two different symbols stays
    // well below 1, so the recognizer has something to learn.
    auto a = signal::synth_utterance({1}, 5).waveform.samples;
    auto b = signal::synth_utterance({2}, 5).waveform.samples;
    double na = 0.0, nb = 0.0;
    for (double v : a) na += v * v;
    for (double v : b) nb += v * v;
    double best = 0.0;
    const int max_lag = 256;
    for (int lag = -max_lag; lag <= max_lag; ++lag) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            long j = static_cast<long>(i) + lag;
            if (j < 0 || j >= static_cast<long>(b.size())) continue;
            acc += a[i] * b[j];
        }
        best = std::max(best, std::abs(acc) / std::sqrt(na * nb));
    }
    CHECK(best < 0.9);
}

TEST_CASE("wav files round-trip within quantization error") {
    auto dir = temp_dir("wav");
    auto utt = signal::synth_utterance({2, 9}, 13);
    auto path = (dir / "x.wav").string();
    signal::write_wav(path, utt.waveform);
    auto back = signal::read_wav(path);
    REQUIRE(back.samples.size() == utt.waveform.samples.size());
    CHECK(back.sample_rate == 16000);
    for (std::size_t i = 0; i < back.samples.size(); ++i)
        CHECK(std::abs(back.samples[i] - utt.waveform.samples[i]) <=
              1.0 / 32768.0);
}

TEST_CASE("wav reader names the offending field") {
    auto dir = temp_dir("wavbad");

    // Stereo file: same header layout, channels = 2.
    auto write_wav_header = [](std::ofstream& f, uint16_t channels,
                               uint32_t rate, uint16_t bits) {
        auto u32 = [&](uint32_t v) { f.write(reinterpret_cast<char*>(&v), 4); };
        auto u16 = [&](uint16_t v) { f.write(reinterpret_cast<char*>(&v), 2); };
        f.write("RIFF", 4);
        u32(36);
        f.write("WAVE", 4);
        f.write("fmt ", 4);
        u32(16);
        u16(1);
        u16(channels);
        u32(rate);
        u32(rate * channels * bits / 8);
        u16(channels * bits / 8);
        u16(bits);
        f.write("data", 4);
        u32(0);
    };
    {
        std::ofstream f(dir / "stereo.wav", std::ios::binary);
        write_wav_header(f, 2, 16000, 16);
    }
    try {
        signal::read_wav((dir / "stereo.wav").string());
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("channels=2") != std::string::npos);
    }

    {
        std::ofstream f(dir / "rate.wav", std::ios::binary);
        write_wav_header(f, 1, 44100, 16);
    }
    try {
        signal::read_wav((dir / "rate.wav").string());
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("44100") != std::string::npos);
    }

    {
        std::ofstream f(dir / "trunc.wav", std::ios::binary);
        f.write("RIFF\x04\x00\x00\x00WA", 10);
    }
    CHECK_THROWS_AS(signal::read_wav((dir / "trunc.wav").string()),
                    FormatError);
    CHECK_THROWS_AS(signal::read_wav((dir / "missing.wav").string()), Error);
}

TEST_CASE("corpus generation is reproducible and well-formed") {
    auto c1 = signal::gen_corpus(20, 3, 8, 77, signal::Split::Dev);
    auto c2 = signal::gen_corpus(20, 3, 8, 77, signal::Split::Dev);
    REQUIRE(c1.utterances.size() == 20);
    CHECK(c1.split == signal::Split::Dev);
    for (std::size_t i = 0; i < 20; ++i) {
        const auto& u = c1.utterances[i];
        CHECK(u.transcript.size() >= 3);
        CHECK(u.transcript.size() <= 8);
        for (int s : u.transcript) {
            CHECK(s >= 1);
            CHECK(s <= 10);
        }
        CHECK(u.id.rfind("dev-", 0) == 0);
        CHECK(u.waveform.samples == c2.utterances[i].waveform.samples);
    }
    auto c3 = signal::gen_corpus(20, 3, 8, 78, signal::Split::Dev);
    CHECK(c1.utterances[0].waveform.samples !=
          c3.utterances[0].waveform.samples);
}

TEST_CASE("corpus save/load round-trips through the manifest") {
    auto dir = temp_dir("corpus");
    auto c = signal::gen_corpus(6, 3, 5, 11, signal::Split::Test);
    signal::save_corpus(c, dir.string());
    auto back = signal::load_corpus(dir.string());
    REQUIRE(back.utterances.size() == 6);
    CHECK(back.split == signal::Split::Test);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(back.utterances[i].id == c.utterances[i].id);
        CHECK(back.utterances[i].transcript == c.utterances[i].transcript);
        CHECK(back.utterances[i].seed == c.utterances[i].seed);
        REQUIRE(back.utterances[i].waveform.samples.size() ==
                c.utterances[i].waveform.samples.size());
        for (std::size_t j = 0; j < back.utterances[i].waveform.samples.size();
             ++j)
            CHECK(std::abs(back.utterances[i].waveform.samples[j] -
                           c.utterances[i].waveform.samples[j]) <=
                  1.0 / 32768.0);
    }
    CHECK_THROWS_AS(signal::load_corpus((dir / "nope").string()), Error);
}

TEST_CASE("split names round-trip") {
    CHECK(signal::split_from_name("train") == signal::Split::Train);
    CHECK(signal::split_from_name("dev") == signal::Split::Dev);
    CHECK(signal::split_from_name("test") == signal::Split::Test);
    CHECK(std::string(signal::split_name(signal::Split::Dev)) == "dev");
    CHECK_THROWS_AS(signal::split_from_name("validation"), InvalidArgument);
}
