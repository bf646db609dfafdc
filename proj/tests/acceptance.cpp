// End-to-end acceptance gate. Builds (and caches) a full-scale corpus, model,
// codec and attack sweeps under ./acceptance_cache, then checks each claimed
// property, printing one PASS/FAIL line per criterion with the measured
// numbers. Delete the cache directory to force a rebuild from scratch.
#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rvqlab/asr.hpp"
#include "rvqlab/attack.hpp"
#include "rvqlab/autodiff.hpp"
#include "rvqlab/defense.hpp"
#include "rvqlab/error.hpp"
#include "rvqlab/harness.hpp"
#include "rvqlab/metrics.hpp"
#include "rvqlab/rng.hpp"
#include "rvqlab/signal.hpp"

using namespace rvqlab;
using autodiff::Graph;
using autodiff::NodeId;
using autodiff::Tensor;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
}

void verdict(int criterion, bool ok, const std::string& detail) {
    std::printf("ACCEPT%d %s: %s\n", criterion, ok ? "PASS" : "FAIL",
                detail.c_str());
    std::fflush(stdout);
    CHECK_MESSAGE(ok, "criterion ", criterion, ": ", detail);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot read " + p.string());
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

void spew(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw Error("cannot write " + p.string());
}

// FNV-1a over the file bytes, used to key cached sweeps on the actual
// model/codec content rather than just their paths.
uint64_t file_hash(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot hash " + p.string());
    uint64_t h = 1469598103934665603ull;
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0)
        for (std::streamsize i = 0; i < in.gcount(); ++i)
            h = (h ^ static_cast<unsigned char>(buf[i])) * 1099511628211ull;
    return h;
}

// ---------------------------------------------------------------------------
// Independent oracles
// ---------------------------------------------------------------------------

// CTC by exhaustive path enumeration (collapse repeats, then drop blanks).
double ctc_brute_force(const Tensor& log_probs, const std::vector<int>& target) {
    const std::size_t frames = log_probs.rows();
    const std::size_t classes = log_probs.cols();
    double total = 0.0;
    std::vector<int> path(frames, 0);
    for (;;) {
        double lp = 0.0;
        for (std::size_t t = 0; t < frames; ++t) lp += log_probs(t, path[t]);
        std::vector<int> labels;
        for (std::size_t t = 0; t < frames; ++t) {
            if (t > 0 && path[t] == path[t - 1]) continue;
            if (path[t] != asr::kBlank) labels.push_back(path[t]);
        }
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

// DCT-II basis straight from the textbook formula.
std::vector<double> reference_dct(int n) {
    std::vector<double> t(static_cast<std::size_t>(n) * n);
    for (int k = 0; k < n; ++k) {
        const double s = std::sqrt((k == 0 ? 1.0 : 2.0) / n);
        for (int i = 0; i < n; ++i)
            t[static_cast<std::size_t>(k) * n + i] =
                s * std::cos(M_PI * (2.0 * i + 1.0) * k / (2.0 * n));
    }
    return t;
}

// ---------------------------------------------------------------------------
// Cached full-scale artifacts
// ---------------------------------------------------------------------------

struct Artifacts {
    fs::path dir;
    std::string test_corpus_dir;
    std::string model_prefix;
    std::string codec_path;
    std::string input_fingerprint;  // hashes of model+codec the sweeps used

    signal::Corpus test_corpus;
    asr::AcousticModel model;
    defense::RvqCodec codec;
    std::vector<double> stage_energy;
    double dev_wer = 1.0;
    double train_seconds = 0.0;

    harness::SweepTable pgd, bpda, mini_pgd;
};

constexpr int kSweepIterations = 100;
constexpr uint64_t kTrainSeed = 101, kDevSeed = 102, kTestSeed = 103;
constexpr uint64_t kModelSeed = 7, kCodecSeed = 11;
constexpr int kTrainEpochs = 24;
constexpr bool kTrainAugment = true;
constexpr std::size_t kCodecFitCap = 16384;

harness::ExperimentConfig base_config(const Artifacts& art) {
    harness::ExperimentConfig cfg;
    cfg.corpus_dir = art.test_corpus_dir;
    cfg.model_prefix = art.model_prefix;
    cfg.codec_path = art.codec_path;
    cfg.iterations = kSweepIterations;
    return cfg;
}

harness::ExperimentConfig pgd_config(const Artifacts& art) {
    harness::ExperimentConfig cfg = base_config(art);
    cfg.out_dir = (art.dir / "sweep_pgd").string();
    cfg.attack_kind = "pgd";
    cfg.defenses = {"rvq:2",  "rvq:4",     "rvq:8",  "rvq:9", "rvq:16",
                    "rvq:32", "none",      "median:5", "resample"};
    cfg.epsilons = {0.005, 0.01, 0.02, 0.05};
    cfg.seeds = {0, 1, 2, 3, 4};
    cfg.max_utterances = 24;
    return cfg;
}

harness::ExperimentConfig bpda_config(const Artifacts& art) {
    harness::ExperimentConfig cfg = base_config(art);
    cfg.out_dir = (art.dir / "sweep_bpda").string();
    cfg.attack_kind = "bpda";
    cfg.defenses = {"rvq:9", "median:5", "resample"};
    cfg.epsilons = {0.02};
    cfg.seeds = {0};
    cfg.max_utterances = 12;
    return cfg;
}

harness::ExperimentConfig mini_pgd_config(const Artifacts& art) {
    harness::ExperimentConfig cfg = base_config(art);
    cfg.out_dir = (art.dir / "sweep_pgd_small").string();
    cfg.attack_kind = "pgd";
    cfg.defenses = {"rvq:9", "median:5", "resample", "none"};
    cfg.epsilons = {0.02};
    cfg.seeds = {0};
    cfg.max_utterances = 12;
    return cfg;
}

// Runs the sweep unless the output directory already holds results for the
// exact same finalized config and the same model/codec/corpus content.
harness::SweepTable cached_sweep(const harness::ExperimentConfig& cfg,
                                 const std::string& fingerprint,
                                 const char* label) {
    harness::ExperimentConfig finalized = cfg;
    finalized.finalize();
    const fs::path out(cfg.out_dir);
    const fs::path cfg_file = out / "config.json";
    const fs::path results = out / "results.csv";
    const fs::path fp_file = out / "inputs.json";
    if (fs::exists(cfg_file) && fs::exists(results) && fs::exists(fp_file) &&
        slurp(cfg_file) == finalized.to_json() &&
        slurp(fp_file) == fingerprint) {
        std::printf("[artifacts] reusing %s\n", label);
        std::fflush(stdout);
        harness::SweepTable table;
        table.rows = metrics::read_records_csv(results.string());
        table.aggregates = harness::aggregate(table.rows);
        std::istringstream err(slurp(out / "errors.csv"));
        std::string line;
        std::getline(err, line);  // header
        while (std::getline(err, line))
            if (!line.empty())
                throw Error(std::string(label) + ": cached sweep has row errors");
        return table;
    }
    std::printf("[artifacts] running %s...\n", label);
    std::fflush(stdout);
    const auto t0 = std::chrono::steady_clock::now();
    harness::SweepTable table = harness::run_sweep(cfg);
    std::printf("[artifacts] %s done in %.1f s (%zu rows)\n", label,
                seconds_since(t0), table.rows.size());
    std::fflush(stdout);
    if (!table.errors.empty())
        throw Error(std::string(label) + ": " +
                    std::to_string(table.errors.size()) + " rows failed, first: " +
                    table.errors.front().message);
    spew(fp_file, fingerprint);
    return table;
}

Artifacts build_artifacts() {
    Artifacts art;
    art.dir = fs::current_path() / "acceptance_cache";
    fs::create_directories(art.dir);
    art.test_corpus_dir = (art.dir / "corpus_test").string();
    art.model_prefix = (art.dir / "model").string();
    art.codec_path = (art.dir / "codec.rvq").string();

    if (!fs::exists(fs::path(art.test_corpus_dir) / "manifest.jsonl")) {
        std::printf("[artifacts] generating test corpus...\n");
        std::fflush(stdout);
        auto corpus = signal::gen_corpus(200, 3, 8, kTestSeed, signal::Split::Test);
        signal::save_corpus(corpus, art.test_corpus_dir);
    }
    art.test_corpus = signal::load_corpus(art.test_corpus_dir);

    std::optional<signal::Corpus> train;
    auto ensure_train = [&]() -> const signal::Corpus& {
        if (!train) {
            std::printf("[artifacts] generating training corpus...\n");
            std::fflush(stdout);
            train = signal::gen_corpus(2000, 3, 8, kTrainSeed, signal::Split::Train);
        }
        return *train;
    };

    const fs::path train_meta = art.dir / "train_report.json";
    bool model_cached = false;
    if (fs::exists(art.model_prefix + ".cgpt") && fs::exists(train_meta)) {
        const json j = json::parse(slurp(train_meta));
        model_cached = j.value("max_epochs", -1) == kTrainEpochs &&
                       j.value("augment", false) == kTrainAugment;
    }
    if (!model_cached) {
        auto dev = signal::gen_corpus(200, 3, 8, kDevSeed, signal::Split::Dev);
        asr::TrainConfig tc;
        tc.epochs = kTrainEpochs;
        tc.seed = kModelSeed;
        tc.augment = kTrainAugment;
        tc.verbose = true;
        std::printf("[artifacts] training recognizer (up to %d epochs)...\n",
                    tc.epochs);
        std::fflush(stdout);
        const auto t0 = std::chrono::steady_clock::now();
        art.model = asr::make_model(kModelSeed);
        auto report = asr::train_asr(art.model, ensure_train(), dev, tc);
        art.train_seconds = seconds_since(t0);
        art.dev_wer = report.epochs.back().dev_wer;
        asr::save_model(art.model, art.model_prefix);
        json j;
        j["dev_wer"] = art.dev_wer;
        j["seconds"] = art.train_seconds;
        j["epochs"] = report.epochs.size();
        j["max_epochs"] = kTrainEpochs;
        j["augment"] = kTrainAugment;
        spew(train_meta, j.dump(2) + "\n");
        std::printf("[artifacts] recognizer done in %.1f s, dev WER %.4f\n",
                    art.train_seconds, art.dev_wer);
        std::fflush(stdout);
    } else {
        art.model = asr::load_model(art.model_prefix);
        const json j = json::parse(slurp(train_meta));
        art.dev_wer = j.at("dev_wer").get<double>();
        art.train_seconds = j.at("seconds").get<double>();
        std::printf("[artifacts] reusing recognizer (dev WER %.4f)\n",
                    art.dev_wer);
        std::fflush(stdout);
    }

    const fs::path codec_meta = art.dir / "codec_report.json";
    bool codec_cached = false;
    if (fs::exists(art.codec_path) && fs::exists(codec_meta)) {
        const json j = json::parse(slurp(codec_meta));
        codec_cached = j.value("fit_cap", std::size_t(0)) == kCodecFitCap &&
                       j.value("seed", uint64_t(0)) == kCodecSeed;
    }
    if (!codec_cached) {
        std::printf("[artifacts] training codec (32 stages x 256)...\n");
        std::fflush(stdout);
        const auto t0 = std::chrono::steady_clock::now();
        defense::CodecTrainReport report;
        art.codec = defense::train_codec(ensure_train(), defense::kMaxStages,
                                         defense::kCodebookSize, kCodecSeed,
                                         &report, kCodecFitCap);
        defense::save_codec(art.codec, art.codec_path);
        art.stage_energy = report.stage_energy;
        json j;
        j["stage_energy"] = report.stage_energy;
        j["fit_frames"] = report.fit_frames;
        j["seconds"] = seconds_since(t0);
        j["fit_cap"] = kCodecFitCap;
        j["seed"] = kCodecSeed;
        spew(codec_meta, j.dump(2) + "\n");
        std::printf("[artifacts] codec done in %.1f s\n", seconds_since(t0));
        std::fflush(stdout);
    } else {
        art.codec = defense::load_codec(art.codec_path);
        art.stage_energy =
            json::parse(slurp(codec_meta)).at("stage_energy").get<std::vector<double>>();
        std::printf("[artifacts] reusing codec\n");
        std::fflush(stdout);
    }

    json fp;
    fp["model"] = file_hash(art.model_prefix + ".cgpt");
    fp["codec"] = file_hash(art.codec_path);
    fp["corpus"] = file_hash(fs::path(art.test_corpus_dir) / "manifest.jsonl");
    art.input_fingerprint = fp.dump();

    art.pgd = cached_sweep(pgd_config(art), art.input_fingerprint, "pgd sweep");
    art.bpda = cached_sweep(bpda_config(art), art.input_fingerprint, "bpda sweep");
    art.mini_pgd =
        cached_sweep(mini_pgd_config(art), art.input_fingerprint, "matched pgd sweep");
    return art;
}

const Artifacts* artifacts(std::string* error = nullptr) {
    static std::string build_error;
    static const Artifacts* art = []() -> const Artifacts* {
        try {
            static Artifacts a = build_artifacts();
            return &a;
        } catch (const std::exception& e) {
            build_error = e.what();
            return nullptr;
        }
    }();
    if (!art && error) *error = build_error;
    return art;
}

// Mean of `get(row)` over rows matching `pred`.
template <class Pred, class Get>
std::pair<double, std::size_t> mean_where(
    const std::vector<metrics::EvalRecord>& rows, Pred pred, Get get) {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
        if (pred(r)) {
            acc += get(r);
            ++n;
        }
    return {n ? acc / static_cast<double>(n) : 0.0, n};
}

}  // namespace

// ---------------------------------------------------------------------------
// 1. Gradients
// ---------------------------------------------------------------------------

TEST_CASE("criterion 1: gradients match finite differences") {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(41);
    double op_err = 0.0;
    auto track = [&](double e) { op_err = std::max(op_err, e); };

    {
        Tensor a = Tensor::zeros({3, 4});
        for (auto& v : a.data) v = rng.uniform(-1.0, 1.0);
        Tensor b = Tensor::zeros({4, 2});
        for (auto& v : b.data) v = rng.uniform(-1.0, 1.0);
        track(autodiff::grad_check(
            [&](Graph& g, NodeId x) {
                return g.mean(g.matmul(x, g.leaf(b)));
            },
            a));
        track(autodiff::grad_check(
            [&](Graph& g, NodeId x) {
                return g.mean(g.matmul(g.leaf(a), x));
            },
            b));
        Tensor bias = Tensor::zeros({4});
        for (auto& v : bias.data) v = rng.uniform(-1.0, 1.0);
        track(autodiff::grad_check(
            [&](Graph& g, NodeId x) {
                return g.mean(g.relu(g.bias_add(x, g.leaf(bias))));
            },
            a));
        track(autodiff::grad_check(
            [&](Graph& g, NodeId x) {
                return g.mean(g.bias_add(g.leaf(a), x));
            },
            bias));
        track(autodiff::grad_check(
            [&](Graph& g, NodeId x) {
                return g.mean(g.mul(x, g.add(x, g.leaf(a))));
            },
            a));
        Tensor pos = Tensor::zeros({2, 5});
        for (auto& v : pos.data) v = rng.uniform(0.5, 2.0);
        track(autodiff::grad_check(
            [&](Graph& g, NodeId x) { return g.mean(g.log(x)); }, pos));
        track(autodiff::grad_check(
            [&](Graph& g, NodeId x) {
                return g.mean(g.log_softmax(x));
            },
            pos));
        track(autodiff::grad_check(
            [&](Graph& g, NodeId x) {
                return g.mean(g.concat(
                    {g.slice_cols(x, 0, 2), g.slice_cols(x, 1, 4)}, 1));
            },
            pos));
    }

    // Loss gradient w.r.t. raw samples through the whole front end, on five
    // different single-burst utterances (full coordinate sweep each).
    double pipeline_err = 0.0;
    const asr::AcousticModel probe_model = asr::make_model(kModelSeed);
    for (int i = 0; i < 5; ++i) {
        auto utt = signal::synth_utterance(
            {1 + static_cast<int>(rng.uniform_index(10))}, 600 + i);
        Tensor point =
            Tensor::matrix(1, utt.waveform.samples.size(), utt.waveform.samples);
        const double err = autodiff::grad_check(
            [&](Graph& g, NodeId x) {
                auto nodes = asr::build_logits(g, probe_model, x);
                return asr::ctc_loss(g, g.log_softmax(nodes.logits),
                                     utt.transcript);
            },
            point, 1e-6);
        pipeline_err = std::max(pipeline_err, err);
    }

    const double elapsed = seconds_since(t0);
    const bool ok = op_err <= 1e-6 && pipeline_err <= 1e-4 && elapsed < 60.0;
    verdict(1, ok,
            "op suite max rel err " + fmt(op_err) +
                " (limit 1e-06); d(ctc)/d(samples) max rel err " +
                fmt(pipeline_err) + " (limit 1e-04); " + fmt(elapsed) +
                " s (limit 60)");
}

// ---------------------------------------------------------------------------
// 2. CTC oracle
// ---------------------------------------------------------------------------

TEST_CASE("criterion 2: ctc equals brute-force path enumeration") {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(4242);
    double worst = 0.0;
    int done = 0;
    while (done < 200) {
        const std::size_t frames = 1 + rng.uniform_index(4);
        const std::size_t vocab = 1 + rng.uniform_index(3);
        const std::size_t tlen = 1 + rng.uniform_index(2);
        std::vector<int> target(tlen);
        for (auto& s : target)
            s = 1 + static_cast<int>(rng.uniform_index(vocab));
        if (asr::min_alignment_frames(target) > frames) continue;

        Tensor logits = Tensor::zeros({frames, vocab + 1});
        for (auto& v : logits.data) v = rng.uniform(-2.0, 2.0);
        Graph g;
        const Tensor lp = g.value(g.log_softmax(g.leaf(logits)));
        Graph g2;
        const double ours = g2.value(asr::ctc_loss(g2, g2.leaf(lp), target)).data[0];
        worst = std::max(worst, std::abs(ours - ctc_brute_force(lp, target)));
        ++done;
    }
    const double elapsed = seconds_since(t0);
    const bool ok = worst <= 1e-9 && elapsed < 60.0;
    verdict(2, ok,
            "max |ctc - oracle| " + fmt(worst) +
                " over 200 instances (limit 1e-09); " + fmt(elapsed) + " s");
}

// ---------------------------------------------------------------------------
// 3. RVQ correctness
// ---------------------------------------------------------------------------

TEST_CASE("criterion 3: quantizer is greedy-exact, prefix-stable, contractive") {
    std::string err;
    const Artifacts* art = artifacts(&err);
    if (!art) {
        verdict(3, false, "artifact build failed: " + err);
        return;
    }
    const defense::RvqCodec& codec = art->codec;

    // Brute-force nearest-neighbor replay over 1000 frames drawn from a
    // shuffled pass over the corpus, with the DCT recomputed from scratch.
    const std::vector<double> dct = reference_dct(codec.dim);
    const int check_depth = 8;
    std::vector<std::size_t> order(art->test_corpus.utterances.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(2026);
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
    std::size_t checked = 0, mismatched = 0;
    for (std::size_t ui : order) {
        if (checked >= 1000) break;
        const auto& utt = art->test_corpus.utterances[ui];
        const auto fm = signal::frame(utt.waveform);
        const auto tg = defense::encode(codec, utt.waveform, check_depth);
        for (std::size_t f = 0; f < fm.frame_count && checked < 1000; ++f) {
            std::vector<double> residual(codec.dim, 0.0);
            for (int k = 0; k < codec.dim; ++k) {
                double acc = 0.0;
                const double* row = fm.row(f);
                const double* basis = dct.data() + static_cast<std::size_t>(k) *
                                                       codec.dim;
                for (int i = 0; i < codec.dim; ++i) acc += row[i] * basis[i];
                residual[k] = acc;
            }
            for (int s = 0; s < check_depth; ++s) {
                int best = 0;
                double best_dist = std::numeric_limits<double>::infinity();
                for (int c = 0; c < codec.k; ++c) {
                    const double* cent = codec.centroid(s, c);
                    double dist = 0.0;
                    for (int d = 0; d < codec.dim; ++d) {
                        const double diff = residual[d] - cent[d];
                        dist += diff * diff;
                    }
                    if (dist < best_dist) {
                        best_dist = dist;
                        best = c;
                    }
                }
                if (tg.at(f, s) != best) ++mismatched;
                const double* cent = codec.centroid(s, best);
                for (int d = 0; d < codec.dim; ++d) residual[d] -= cent[d];
            }
            ++checked;
        }
    }

    // Prefix consistency for every m <= n_max on one utterance.
    const auto& w = art->test_corpus.utterances[0].waveform;
    const auto full = defense::encode(codec, w, codec.n_max);
    std::size_t prefix_breaks = 0;
    for (int m = 1; m <= codec.n_max; ++m) {
        const auto part = defense::encode(codec, w, m);
        for (std::size_t f = 0; f < full.frames; ++f)
            for (int s = 0; s < m; ++s)
                prefix_breaks += part.at(f, s) != full.at(f, s);
    }

    std::size_t energy_rises = 0;
    for (std::size_t s = 1; s < art->stage_energy.size(); ++s)
        energy_rises += art->stage_energy[s] > art->stage_energy[s - 1] + 1e-12;

    const bool ok = mismatched == 0 && checked == 1000 && prefix_breaks == 0 &&
                    art->stage_energy.size() == 32 && energy_rises == 0;
    verdict(3, ok,
            std::to_string(mismatched) + " token mismatches over " +
                std::to_string(checked) + " frames x depth 8; " +
                std::to_string(prefix_breaks) +
                " prefix breaks over m=1..32; residual energy " +
                fmt(art->stage_energy.front()) + " -> " +
                fmt(art->stage_energy.back()) + " with " +
                std::to_string(energy_rises) + " rises");
}

// ---------------------------------------------------------------------------
// 4. Clean pipeline quality
// ---------------------------------------------------------------------------

TEST_CASE("criterion 4: clean dev accuracy and shallow clean-wer cost") {
    std::string err;
    const Artifacts* art = artifacts(&err);
    if (!art) {
        verdict(4, false, "artifact build failed: " + err);
        return;
    }

    auto clean_of = [&](const std::string& defense) {
        return mean_where(
            art->pgd.rows,
            [&](const metrics::EvalRecord& r) {
                return r.defense == defense && r.eps == 0.0;
            },
            [](const metrics::EvalRecord& r) { return r.wer_clean; });
    };
    const auto [none_clean, n_none] = clean_of("none");
    std::string hits;
    double worst_hit = 0.0;
    for (int depth : {8, 9, 16, 32}) {
        const auto [wer, n] = clean_of("rvq:" + std::to_string(depth));
        const double hit = wer - none_clean;
        worst_hit = std::max(worst_hit, hit);
        hits += " rvq:" + std::to_string(depth) + " +" + fmt(hit);
        (void)n;
    }

    const bool ok = art->dev_wer <= 0.10 && worst_hit <= 0.05 &&
                    art->train_seconds <= 900.0 && n_none > 0;
    verdict(4, ok,
            "dev WER " + fmt(art->dev_wer) + " (limit 0.10); clean WER " +
                fmt(none_clean) + "; depth>=8 clean hits" + hits +
                " (limit +0.05); training " + fmt(art->train_seconds) +
                " s (limit 900)");
}

// ---------------------------------------------------------------------------
// 5. Attack efficacy
// ---------------------------------------------------------------------------

TEST_CASE("criterion 5: pgd breaks the undefended model") {
    std::string err;
    const Artifacts* art = artifacts(&err);
    if (!art) {
        verdict(5, false, "artifact build failed: " + err);
        return;
    }
    const auto [mean_clean, n_clean] = mean_where(
        art->pgd.rows,
        [](const metrics::EvalRecord& r) {
            return r.defense == "none" && r.eps == 0.0;
        },
        [](const metrics::EvalRecord& r) { return r.wer_clean; });

    // 3x a near-zero clean baseline is vacuous, so an absolute floor of 0.5
    // keeps the bar meaningful either way.
    const double bar = std::max(3.0 * mean_clean, 0.5);
    std::size_t total = 0, broken = 0;
    for (const auto& r : art->pgd.rows) {
        if (r.defense != "none" || r.eps != 0.02) continue;
        ++total;
        broken += r.wer_adv >= bar;
    }
    const double frac = total ? static_cast<double>(broken) / total : 0.0;
    const bool ok = n_clean > 0 && total > 0 && frac >= 0.9;
    verdict(5, ok,
            "undefended: mean clean WER " + fmt(mean_clean) + ", " +
                std::to_string(broken) + "/" + std::to_string(total) +
                " utterances at eps 0.02 reach max(3x clean, 0.5) = " +
                fmt(bar) + " (" + fmt(frac) + ", limit 0.90)");
}

// ---------------------------------------------------------------------------
// 6. Finding 1 — monotone CCR
// ---------------------------------------------------------------------------

TEST_CASE("criterion 6: mean ccr non-decreasing in depth") {
    std::string err;
    const Artifacts* art = artifacts(&err);
    if (!art) {
        verdict(6, false, "artifact build failed: " + err);
        return;
    }
    const std::vector<int> depths = {2, 4, 8, 16, 32};
    bool ok = true;
    std::string detail;
    for (double eps : {0.005, 0.02}) {
        std::vector<double> curve;
        for (int d : depths) {
            const auto [m, n] = mean_where(
                art->pgd.rows,
                [&](const metrics::EvalRecord& r) {
                    return r.depth == d && r.eps == eps && r.attack == "pgd" &&
                           r.defense == "rvq:" + std::to_string(d);
                },
                [](const metrics::EvalRecord& r) { return r.ccr; });
            ok = ok && n > 0;
            curve.push_back(m);
        }
        int violations = 0;
        double worst = 0.0;
        for (std::size_t i = 1; i < curve.size(); ++i)
            if (curve[i] < curve[i - 1]) {
                ++violations;
                worst = std::max(worst, curve[i - 1] - curve[i]);
            }
        ok = ok && violations <= 1 && worst <= 0.01;
        detail += "eps " + fmt(eps) + ": ccr";
        for (double c : curve) detail += " " + fmt(c);
        detail += " (" + std::to_string(violations) + " dips, worst " +
                  fmt(worst) + "); ";
    }
    verdict(6, ok, detail + "limits: <=1 dip of <=0.01 per eps");
}

// ---------------------------------------------------------------------------
// 7. Finding 2 — non-monotonic WER in depth
// ---------------------------------------------------------------------------

TEST_CASE("criterion 7: interior depth minimizes defended wer") {
    std::string err;
    const Artifacts* art = artifacts(&err);
    if (!art) {
        verdict(7, false, "artifact build failed: " + err);
        return;
    }
    const std::vector<int> depths = {2, 4, 8, 9, 16, 32};
    const double eps = 0.02;
    int good_seeds = 0;
    std::string detail;
    for (uint64_t seed : {0, 1, 2, 3, 4}) {
        std::vector<double> curve;
        bool have_all = true;
        for (int d : depths) {
            const auto [m, n] = mean_where(
                art->pgd.rows,
                [&](const metrics::EvalRecord& r) {
                    return r.seed == seed && r.eps == eps && r.depth == d &&
                           r.defense == "rvq:" + std::to_string(d);
                },
                [](const metrics::EvalRecord& r) { return r.wer_adv; });
            have_all = have_all && n > 0;
            curve.push_back(m);
        }
        std::size_t arg = 0;
        for (std::size_t i = 1; i < curve.size(); ++i)
            if (curve[i] < curve[arg]) arg = i;
        const bool interior = arg != 0 && arg + 1 != curve.size();
        const bool margin = have_all &&
                            curve.front() - curve[arg] >= 0.02 &&
                            curve.back() - curve[arg] >= 0.02;
        if (interior && margin) ++good_seeds;
        detail += "seed " + std::to_string(seed) + ": min at depth " +
                  std::to_string(depths[arg]) + " (" + fmt(curve[arg]) +
                  " vs ends " + fmt(curve.front()) + "/" + fmt(curve.back()) +
                  "); ";
    }
    const bool ok = good_seeds >= 3;
    verdict(7, ok,
            detail + std::to_string(good_seeds) +
                "/5 seeds interior by >=0.02 (need 3)");
}

// ---------------------------------------------------------------------------
// 8. Finding 3 — CCR / delta-WER rank correlation
// ---------------------------------------------------------------------------

TEST_CASE("criterion 8: ccr ranks delta wer across the grid") {
    std::string err;
    const Artifacts* art = artifacts(&err);
    if (!art) {
        verdict(8, false, "artifact build failed: " + err);
        return;
    }
    const fs::path out = art->dir / "report_pgd";
    fs::create_directories(out);
    const auto rep = harness::report_correlation(art->pgd, out.string());
    if (!rep.rho_overall) {
        verdict(8, false, "spearman undefined over " +
                              std::to_string(rep.n_points) + " config means");
        return;
    }
    const double rho = *rep.rho_overall;
    std::string per;
    for (const auto& [eps, r] : rep.rho_per_eps)
        per += " eps " + fmt(eps) + ": " + (r ? fmt(*r) : "undef") + ";";
    const bool ok = rho >= 0.5;
    std::string note = rho >= 0.7
                           ? "meets the 0.7 target"
                           : "below the 0.7 target, judged at the documented "
                             "0.5 floor for this model scale";
    verdict(8, ok,
            "spearman rho " + fmt(rho) + " over " +
                std::to_string(rep.n_points) + " (depth x eps) means, " + note +
                ";" + per);
}

// ---------------------------------------------------------------------------
// 9. Adaptive attack comparison
// ---------------------------------------------------------------------------

TEST_CASE("criterion 9: bpda+eot ordering at matched bitrate") {
    std::string err;
    const Artifacts* art = artifacts(&err);
    if (!art) {
        verdict(9, false, "artifact build failed: " + err);
        return;
    }
    auto adv_mean = [&](const harness::SweepTable& t, const std::string& def) {
        return mean_where(
            t.rows,
            [&](const metrics::EvalRecord& r) {
                return r.defense == def && r.eps == 0.02;
            },
            [](const metrics::EvalRecord& r) { return r.wer_adv; });
    };
    const auto [bpda_rvq, n1] = adv_mean(art->bpda, "rvq:9");
    const auto [bpda_median, n2] = adv_mean(art->bpda, "median:5");
    const auto [bpda_resample, n3] = adv_mean(art->bpda, "resample");
    const auto [pgd_rvq, n4] = adv_mean(art->mini_pgd, "rvq:9");

    const bool have = n1 > 0 && n2 > 0 && n3 > 0 && n4 > 0;
    const bool adaptive_no_weaker = bpda_rvq >= pgd_rvq;
    const bool beats_baselines =
        bpda_rvq < bpda_median && bpda_rvq < bpda_resample;
    const bool ok = have && adaptive_no_weaker && beats_baselines;
    verdict(9, ok,
            "rvq:9 WER bpda " + fmt(bpda_rvq) + " >= pgd " + fmt(pgd_rvq) +
                "; bpda median:5 " + fmt(bpda_median) + ", resample " +
                fmt(bpda_resample) + " (rvq must be lowest)");
}

// ---------------------------------------------------------------------------
// 10. Determinism
// ---------------------------------------------------------------------------

TEST_CASE("criterion 10: sweeps are byte-identical across runs and workers") {
    std::string err;
    const Artifacts* art = artifacts(&err);
    if (!art) {
        verdict(10, false, "artifact build failed: " + err);
        return;
    }
    const fs::path det = art->dir / "determinism";
    fs::remove_all(det);

    harness::ExperimentConfig cfg = base_config(*art);
    cfg.defenses = {"rvq:2", "none"};
    cfg.epsilons = {0.01};
    cfg.max_utterances = 3;
    cfg.iterations = 3;

    auto run_into = [&](const char* name) {
        harness::ExperimentConfig c = cfg;
        c.out_dir = (det / name).string();
        harness::run_sweep(c);
        return slurp(fs::path(c.out_dir) / "results.csv") +
               slurp(fs::path(c.out_dir) / "aggregates.csv");
    };
    const std::string first = run_into("run1");
    const std::string second = run_into("run2");
    setenv("RVQLAB_WORKERS", "3", 1);
    std::string third;
    try {
        third = run_into("run3");
    } catch (...) {
        unsetenv("RVQLAB_WORKERS");
        throw;
    }
    unsetenv("RVQLAB_WORKERS");

    const bool ok = first == second && first == third;
    verdict(10, ok,
            std::string("rerun ") + (first == second ? "identical" : "DIFFERS") +
                "; 3-worker run " + (first == third ? "identical" : "DIFFERS") +
                " (" + std::to_string(first.size()) + " bytes compared)");
}
