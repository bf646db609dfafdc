#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <vector>

#include "rvqlab/asr.hpp"
#include "rvqlab/autodiff.hpp"
#include "rvqlab/error.hpp"
#include "rvqlab/rng.hpp"
#include "rvqlab/signal.hpp"

using namespace rvqlab;
using autodiff::Graph;
using autodiff::NodeId;
using autodiff::Tensor;

namespace {

// Reference CTC loss by exhaustive path enumeration: sum the probability of
// every frame-label path whose collapse (merge repeats, then drop blanks)
// equals the target. Tractable for F <= 4 and small vocabularies, and
// completely independent of the forward-algorithm implementation.
double ctc_brute_force(const Tensor& log_probs, const std::vector<int>& target) {
    const std::size_t frames = log_probs.rows();
    const std::size_t classes = log_probs.cols();
    double total = 0.0;
    std::vector<int> path(frames, 0);
    for (;;) {
        double lp = 0.0;
        for (std::size_t t = 0; t < frames; ++t) lp += log_probs(t, path[t]);
        std::vector<int> collapsed;
        for (std::size_t t = 0; t < frames; ++t)
            if (t == 0 || path[t] != path[t - 1]) collapsed.push_back(path[t]);
        std::vector<int> labels;
        for (int c : collapsed)
            if (c != asr::kBlank) labels.push_back(c);
        if (labels == target) total += std::exp(lp);

        std::size_t t = 0;
        while (t < frames) {
            if (++path[t] < static_cast<int>(classes)) break;
            path[t] = 0;
            ++t;
        }
        if (t == frames) break;
    }
    return -std::log(total);
}

Tensor random_log_probs(std::size_t frames, std::size_t classes, Rng& rng) {
    Tensor logits = Tensor::zeros({frames, classes});
    for (auto& v : logits.data) v = rng.uniform(-2.0, 2.0);
    Graph g;
    return g.value(g.log_softmax(g.leaf(logits)));
}

double ctc_value(const Tensor& log_probs, const std::vector<int>& target) {
    Graph g;
    return g.value(asr::ctc_loss(g, g.leaf(log_probs), target)).data[0];
}

signal::Waveform noise_waveform(std::size_t n, uint64_t seed) {
    signal::Waveform w;
    w.samples.resize(n);
    Rng rng(seed);
    for (auto& v : w.samples) v = 0.1 * rng.gaussian();
    return w;
}

}  // namespace

TEST_CASE("ctc matches hand-computed uniform cases") {
    // One frame, classes {blank, a}, both probability 1/2: the only path for
    // target [a] is "a".
    Tensor lp1 = Tensor::zeros({1, 2});
    lp1.data = {std::log(0.5), std::log(0.5)};
    CHECK(ctc_value(lp1, {1}) == doctest::Approx(-std::log(0.5)).epsilon(1e-12));

    // Two frames: paths {aa, a-, -a} carry probability 3/4.
    Tensor lp2 = Tensor::zeros({2, 2});
    lp2.data = {std::log(0.5), std::log(0.5), std::log(0.5), std::log(0.5)};
    CHECK(ctc_value(lp2, {1}) == doctest::Approx(-std::log(0.75)).epsilon(1e-12));
}

TEST_CASE("ctc equals exhaustive path enumeration on tiny instances") {
    Rng rng(2024);
    int tested = 0;
    while (tested < 80) {
        std::size_t frames = 1 + rng.uniform_index(4);   // F <= 4
        std::size_t vocab = 1 + rng.uniform_index(3);    // |V| <= 3
        std::size_t tlen = 1 + rng.uniform_index(2);     // |target| <= 2
        std::vector<int> target(tlen);
        for (auto& s : target)
            s = 1 + static_cast<int>(rng.uniform_index(vocab));
        Tensor lp = random_log_probs(frames, vocab + 1, rng);
        if (asr::min_alignment_frames(target) > frames) {
            CHECK_THROWS_AS(ctc_value(lp, target), InfeasibleAlignment);
            continue;
        }
        double ours = ctc_value(lp, target);
        double ref = ctc_brute_force(lp, target);
        CHECK(std::abs(ours - ref) <= 1e-9);
        ++tested;
    }
}

TEST_CASE("ctc gradient matches finite differences") {
    Rng rng(7);
    const std::vector<int> target = {2, 1};
    Tensor lp = random_log_probs(6, 4, rng);
    double err = autodiff::grad_check(
        [&](Graph& g, NodeId x) { return asr::ctc_loss(g, x, target); }, lp);
    CHECK(err <= 1e-5);

    // Repeated label: mandatory blank between the two a's.
    const std::vector<int> rep = {1, 1};
    Tensor lp2 = random_log_probs(5, 3, rng);
    CHECK(autodiff::grad_check(
              [&](Graph& g, NodeId x) { return asr::ctc_loss(g, x, rep); },
              lp2) <= 1e-5);
}

TEST_CASE("ctc validates its inputs") {
    Rng rng(8);
    Tensor lp = random_log_probs(3, 11, rng);
    CHECK_THROWS_AS(ctc_value(lp, {}), InvalidArgument);
    CHECK_THROWS_AS(ctc_value(lp, {0}), InvalidArgument);   // blank in target
    CHECK_THROWS_AS(ctc_value(lp, {11}), InvalidArgument);  // out of vocab
    CHECK_THROWS_AS(ctc_value(lp, {1, 2, 3, 4}), InfeasibleAlignment);
    Tensor lp2 = random_log_probs(2, 11, rng);
    CHECK_THROWS_AS(ctc_value(lp2, {1, 1}), InfeasibleAlignment);  // needs 3
}

TEST_CASE("minimum alignment length counts repeat separators") {
    CHECK(asr::min_alignment_frames({1}) == 1);
    CHECK(asr::min_alignment_frames({1, 2, 3}) == 3);
    CHECK(asr::min_alignment_frames({1, 1}) == 3);
    CHECK(asr::min_alignment_frames({5, 5, 5}) == 5);
    CHECK(asr::min_alignment_frames({1, 1, 2, 2}) == 6);
}

TEST_CASE("greedy decode collapses repeats and drops blanks") {
    auto logits_for = [](const std::vector<int>& path, int classes) {
        Tensor t = Tensor::zeros({path.size(), static_cast<std::size_t>(classes)});
        for (std::size_t i = 0; i < path.size(); ++i) t(i, path[i]) = 1.0;
        return t;
    };
    CHECK(asr::greedy_decode(logits_for({0, 1, 1, 0, 2}, 3)) ==
          std::vector<int>{1, 2});
    CHECK(asr::greedy_decode(logits_for({0, 0, 0}, 3)) == std::vector<int>{});
    CHECK(asr::greedy_decode(logits_for({1, 0, 1}, 3)) ==
          std::vector<int>{1, 1});
    // Ties go to the lowest class id, which here is the blank.
    Tensor tie = Tensor::zeros({1, 3});
    CHECK(asr::greedy_decode(tie) == std::vector<int>{});
}

TEST_CASE("featurize of silence hits the log floor exactly") {
    auto model = asr::make_model(3);
    Graph g;
    NodeId x = g.leaf(Tensor::zeros({1, 1024}));
    NodeId f = asr::featurize(g, model, x);
    const Tensor& feats = g.value(f);
    CHECK(feats.rows() == 3);
    CHECK(feats.cols() == 32);
    for (double v : feats.data) CHECK(v == std::log(1e-8));
}

TEST_CASE("featurize is 2-homogeneous in power up to the floor") {
    auto model = asr::make_model(3);
    auto w = noise_waveform(2048, 5);
    auto eval = [&](double scale) {
        Graph g;
        Tensor t = Tensor::zeros({1, w.samples.size()});
        for (std::size_t i = 0; i < w.samples.size(); ++i)
            t.data[i] = scale * w.samples[i];
        NodeId f = asr::featurize(g, model, g.leaf(t));
        return g.value(f).data;
    };
    auto base = eval(1.0);
    auto doubled = eval(2.0);
    // Exact except for the 1e-8 additive floor inside the log.
    for (std::size_t i = 0; i < base.size(); ++i)
        CHECK(std::abs(doubled[i] - base[i] - std::log(4.0)) < 1e-7);
}

TEST_CASE("featurize gradient reaches the samples") {
    auto model = asr::make_model(4);
    auto w = noise_waveform(700, 6);
    Tensor point = Tensor::zeros({1, w.samples.size()});
    point.data = w.samples;
    double err = autodiff::grad_check(
        [&](Graph& g, NodeId x) {
            return g.sum(asr::featurize(g, model, x));
        },
        point, 1e-6);
    CHECK(err <= 1e-5);
}

TEST_CASE("loss gradient w.r.t. samples matches finite differences") {
    auto model = asr::make_model(9);
    auto utt = signal::synth_utterance({4}, 17);
    const auto& xs = utt.waveform.samples;
    auto loss_at = [&](const std::vector<double>& samples) {
        Graph g;
        NodeId x = g.leaf(Tensor::matrix(1, samples.size(), samples));
        auto nodes = asr::build_logits(g, model, x);
        NodeId lp = g.log_softmax(nodes.logits);
        return g.value(asr::ctc_loss(g, lp, utt.transcript)).data[0];
    };
    Graph g;
    NodeId x = g.leaf(Tensor::matrix(1, xs.size(), xs));
    auto nodes = asr::build_logits(g, model, x);
    NodeId lp = g.log_softmax(nodes.logits);
    NodeId loss = asr::ctc_loss(g, lp, utt.transcript);
    g.backward(loss);
    const Tensor& grad = g.gradient(x);

    Rng rng(11);
    const double h = 1e-6;
    for (int k = 0; k < 12; ++k) {
        std::size_t i = rng.uniform_index(xs.size());
        auto plus = xs, minus = xs;
        plus[i] += h;
        minus[i] -= h;
        double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
        double rel = std::abs(grad.data[i] - fd) /
                     std::max(1.0, std::abs(grad.data[i]));
        CHECK(rel <= 1e-4);
    }
}

TEST_CASE("logits have one row per frame and vocab+1 columns") {
    auto model = asr::make_model(2);
    auto utt = signal::synth_utterance({1, 2}, 3);
    Graph g;
    NodeId x = g.leaf(
        Tensor::matrix(1, utt.waveform.samples.size(), utt.waveform.samples));
    auto nodes = asr::build_logits(g, model, x);
    auto fm = signal::frame(utt.waveform);
    CHECK(g.value(nodes.logits).rows() == fm.frame_count);
    CHECK(g.value(nodes.logits).cols() == 11);
    CHECK(nodes.params.size() == 6);
}

TEST_CASE("filterbank columns are unit-sum triangles") {
    Tensor fb = asr::make_filterbank(32, 257, 16000);
    REQUIRE(fb.rows() == 257);
    REQUIRE(fb.cols() == 32);
    for (std::size_t m = 0; m < 32; ++m) {
        double sum = 0.0;
        for (std::size_t b = 0; b < 257; ++b) {
            CHECK(fb(b, m) >= 0.0);
            sum += fb(b, m);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("training overfits a single utterance") {
    signal::Corpus train;
    train.utterances.push_back(signal::synth_utterance({3, 8}, 21));
    train.utterances[0].id = "train-00000";
    signal::Corpus dev;
    auto model = asr::make_model(5);
    asr::TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch = 1;
    cfg.seed = 5;
    auto report = asr::train_asr(model, train, dev, cfg);
    REQUIRE(report.epochs.size() == 50);
    for (std::size_t e = 1; e < 10; ++e)
        CHECK(report.epochs[e].mean_loss < report.epochs[e - 1].mean_loss);
    CHECK(report.epochs.back().mean_loss < report.epochs.front().mean_loss);
}

TEST_CASE("training is deterministic in the seed") {
    auto corpus = signal::gen_corpus(6, 3, 4, 31, signal::Split::Train);
    auto dev = signal::gen_corpus(2, 3, 4, 32, signal::Split::Dev);
    auto run = [&]() {
        auto model = asr::make_model(5);
        asr::TrainConfig cfg;
        cfg.epochs = 2;
        cfg.batch = 3;
        cfg.seed = 5;
        asr::train_asr(model, corpus, dev, cfg);
        return model.params.at("w1").data;
    };
    CHECK(run() == run());
}

TEST_CASE("augmented training is deterministic and worker-independent") {
    auto corpus = signal::gen_corpus(6, 3, 4, 31, signal::Split::Train);
    const auto pristine = corpus.utterances[0].waveform.samples;
    signal::Corpus dev;
    auto run = [&](bool augment) {
        auto model = asr::make_model(5);
        asr::TrainConfig cfg;
        cfg.epochs = 2;
        cfg.batch = 3;
        cfg.seed = 5;
        cfg.augment = augment;
        asr::train_asr(model, corpus, dev, cfg);
        return model.params.at("w1").data;
    };
    const auto one = run(true);
    setenv("RVQLAB_WORKERS", "4", 1);
    const auto many = run(true);
    unsetenv("RVQLAB_WORKERS");
    CHECK(one == many);
    CHECK(one != run(false));
    // The jitter is applied to a copy, never to the corpus itself.
    CHECK(corpus.utterances[0].waveform.samples == pristine);
}

TEST_CASE("model save/load round-trips and validates the sidecar") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "rvqlab_asr_model";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::string prefix = (dir / "m").string();

    auto model = asr::make_model(12);
    asr::save_model(model, prefix);
    auto back = asr::load_model(prefix);
    for (const char* name : {"w1", "b1", "w2", "b2", "w3", "b3"})
        CHECK(back.params.at(name).data == model.params.at(name).data);
    CHECK(back.config.n_mels == model.config.n_mels);

    // Sidecar that disagrees with the blob must be rejected.
    std::ifstream in(prefix + ".json");
    std::string sidecar((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
    in.close();
    auto pos = sidecar.find("128");
    REQUIRE(pos != std::string::npos);
    sidecar.replace(pos, 3, "127");
    std::ofstream out(prefix + ".json", std::ios::binary);
    out << sidecar;
    out.close();
    CHECK_THROWS_AS(asr::load_model(prefix), FormatError);
}

TEST_CASE("transcribe runs the full pipeline") {
    auto model = asr::make_model(1);
    auto utt = signal::synth_utterance({5}, 2);
    auto hyp = asr::transcribe(model, utt.waveform);
    for (int s : hyp) {
        CHECK(s >= 1);
        CHECK(s <= 10);
    }
}
