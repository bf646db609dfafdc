// Command line front end: corpus generation, model/codec training, single
// attacks, the sweep grid and report rendering.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rvqlab/asr.hpp"
#include "rvqlab/attack.hpp"
#include "rvqlab/defense.hpp"
#include "rvqlab/error.hpp"
#include "rvqlab/harness.hpp"
#include "rvqlab/metrics.hpp"
#include "rvqlab/rng.hpp"
#include "rvqlab/signal.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int cmd_gen_corpus(const std::string& out_dir, std::size_t n, int min_len,
                   int max_len, uint64_t seed, const std::string& split) {
    auto corpus = rvqlab::signal::gen_corpus(
        n, min_len, max_len, seed, rvqlab::signal::split_from_name(split));
    rvqlab::signal::save_corpus(corpus, out_dir);
    std::printf("wrote %zu %s utterances to %s\n", corpus.utterances.size(),
                split.c_str(), out_dir.c_str());
    return 0;
}

int cmd_train_asr(const std::string& train_dir, const std::string& dev_dir,
                  const std::string& out_prefix, int epochs, double lr,
                  int batch, uint64_t seed, double target_dev_wer,
                  bool augment, bool quiet) {
    auto train = rvqlab::signal::load_corpus(train_dir);
    auto dev = rvqlab::signal::load_corpus(dev_dir);
    auto model = rvqlab::asr::make_model(seed);
    rvqlab::asr::TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.lr = lr;
    cfg.batch = batch;
    cfg.seed = seed;
    cfg.target_dev_wer = target_dev_wer;
    cfg.augment = augment;
    cfg.verbose = !quiet;
    auto report = rvqlab::asr::train_asr(model, train, dev, cfg);
    rvqlab::asr::save_model(model, out_prefix);
    double final_wer =
        report.epochs.empty() ? -1.0 : report.epochs.back().dev_wer;
    std::printf("saved model to %s.cgpt (dev wer %.4f after %zu epochs)\n",
                out_prefix.c_str(), final_wer, report.epochs.size());
    return 0;
}

int cmd_train_codec(const std::string& corpus_dir, const std::string& out_path,
                    int stages, int k, uint64_t seed, std::size_t fit_cap) {
    auto corpus = rvqlab::signal::load_corpus(corpus_dir);
    rvqlab::defense::CodecTrainReport report;
    auto codec =
        rvqlab::defense::train_codec(corpus, stages, k, seed, &report, fit_cap);
    rvqlab::defense::save_codec(codec, out_path);
    std::printf("saved codec to %s (fit on %zu frames)\n", out_path.c_str(),
                report.fit_frames);
    for (std::size_t s = 0; s < report.stage_energy.size(); ++s)
        std::printf("  stage %2zu residual energy %.6g\n", s + 1,
                    report.stage_energy[s]);
    return 0;
}

int cmd_attack(const std::string& corpus_dir, const std::string& model_prefix,
               const std::string& codec_path, const std::string& kind,
               const std::string& defense_spec, double eps, int iterations,
               int eot_samples, double jitter_sigma, uint64_t seed,
               std::size_t max_utts, const std::string& out_dir) {
    if (kind != "pgd" && kind != "bpda")
        throw rvqlab::InvalidArgument("attack kind must be pgd or bpda, got '" +
                                      kind + "'");
    auto corpus = rvqlab::signal::load_corpus(corpus_dir);
    auto model = rvqlab::asr::load_model(model_prefix);
    rvqlab::defense::DefenseKind d =
        rvqlab::defense::DefenseKind::parse(defense_spec);
    rvqlab::defense::RvqCodec codec;
    const rvqlab::defense::RvqCodec* codec_ptr = nullptr;
    if (d.type == rvqlab::defense::DefenseType::Rvq) {
        if (codec_path.empty())
            throw rvqlab::InvalidArgument("rvq defense needs --codec");
        codec = rvqlab::defense::load_codec(codec_path);
        codec_ptr = &codec;
    }
    fs::create_directories(fs::path(out_dir) / "wavs");
    std::ofstream manifest(fs::path(out_dir) / "attacks.jsonl",
                           std::ios::binary);
    if (!manifest)
        throw rvqlab::Error("cannot open " + out_dir + "/attacks.jsonl");
    std::size_t n = corpus.utterances.size();
    if (max_utts > 0 && max_utts < n) n = max_utts;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& utt = corpus.utterances[i];
        rvqlab::attack::AttackConfig cfg;
        cfg.epsilon = eps;
        cfg.iterations = iterations;
        cfg.eot_samples = eot_samples;
        cfg.jitter_sigma = jitter_sigma;
        cfg.seed = rvqlab::mix_seed(seed, utt.seed);
        rvqlab::attack::AttackResult r =
            kind == "pgd"
                ? rvqlab::attack::pgd(model, utt.waveform, utt.transcript, cfg)
                : rvqlab::attack::bpda_eot(model, d, codec_ptr, utt.waveform,
                                           utt.transcript, cfg);
        std::string wav_rel = "wavs/" + utt.id + ".wav";
        rvqlab::signal::write_wav((fs::path(out_dir) / wav_rel).string(),
                                  r.adversarial);
        json line;
        line["id"] = utt.id;
        line["eps"] = eps;
        line["kind"] = kind;
        line["defense"] = d.str();
        line["final_loss"] = r.loss_trace.back();
        line["delta_linf"] = r.delta_linf();
        line["adv_wav_path"] = wav_rel;
        manifest << line.dump() << "\n";
        std::printf("%s: loss %.4f -> %.4f, |delta|_inf %.5f\n", utt.id.c_str(),
                    r.loss_trace.front(), r.loss_trace.back(), r.delta_linf());
    }
    std::printf("wrote %zu adversarial wavs to %s\n", n, out_dir.c_str());
    return 0;
}

int cmd_sweep(const std::string& config_path) {
    auto cfg = rvqlab::harness::ExperimentConfig::from_json_file(config_path);
    auto table = rvqlab::harness::run_sweep(cfg);
    std::printf("sweep: %zu rows, %zu failures -> %s\n", table.rows.size(),
                table.errors.size(), cfg.out_dir.c_str());
    if (!table.errors.empty()) {
        for (const auto& e : table.errors)
            std::fprintf(stderr, "  failed: %s %s eps=%g seed=%llu: %s\n",
                         e.id.c_str(), e.defense.c_str(), e.eps,
                         static_cast<unsigned long long>(e.seed),
                         e.message.c_str());
        return 2;
    }
    return 0;
}

int cmd_report(const std::string& in_dir, const std::string& out_dir,
               int matched_depth, double baseline_eps, bool no_curves,
               bool no_correlation, bool no_baseline) {
    rvqlab::harness::SweepTable table;
    table.rows = rvqlab::metrics::read_records_csv(
        (fs::path(in_dir) / "results.csv").string());
    table.aggregates = rvqlab::harness::aggregate(table.rows);
    std::string out = out_dir.empty() ? in_dir : out_dir;
    bool failed = false;
    if (!no_curves) {
        try {
            auto s = rvqlab::harness::report_depth_curves(table, out);
            for (const auto& pe : s.per_eps)
                std::printf("depth curves: eps=%g argmin depth %d (%s)\n",
                            pe.eps, pe.argmin_depth,
                            pe.interior ? "interior" : "endpoint");
        } catch (const std::exception& e) {
            std::fprintf(stderr, "depth curves: %s\n", e.what());
            failed = true;
        }
    }
    if (!no_correlation) {
        try {
            auto r = rvqlab::harness::report_correlation(table, out);
            if (r.rho_overall)
                std::printf("correlation: rho=%.4f over %zu points\n",
                            *r.rho_overall, r.n_points);
            else
                std::printf("correlation: undefined over %zu points\n",
                            r.n_points);
        } catch (const std::exception& e) {
            std::fprintf(stderr, "correlation: %s\n", e.what());
            failed = true;
        }
    }
    if (!no_baseline) {
        try {
            auto b = rvqlab::harness::report_baseline_table(
                table, matched_depth, baseline_eps, out);
            for (const auto& row : b.rows)
                std::printf("baseline (%s): %-10s wer %.4f +- %.4f (n=%zu)\n",
                            row.attack.c_str(), row.defense.c_str(),
                            row.mean_wer_adv, row.sem_wer_adv, row.n);
        } catch (const std::exception& e) {
            std::fprintf(stderr, "baseline table: %s\n", e.what());
            failed = true;
        }
    }
    return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"residual vector quantization defense laboratory"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-corpus", "synthesize a labeled corpus");
    std::string gen_out, gen_split = "train";
    std::size_t gen_n = 2000;
    int gen_min = 3, gen_max = 8;
    uint64_t gen_seed = 0;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--n", gen_n, "number of utterances");
    gen->add_option("--min-len", gen_min, "minimum transcript length");
    gen->add_option("--max-len", gen_max, "maximum transcript length");
    gen->add_option("--seed", gen_seed, "corpus seed");
    gen->add_option("--split", gen_split, "train|dev|test");

    auto* tasr = app.add_subcommand("train-asr", "train the ctc recognizer");
    std::string tasr_train, tasr_dev, tasr_out;
    int tasr_epochs = 30, tasr_batch = 16;
    double tasr_lr = 1e-2, tasr_target = -1.0;
    uint64_t tasr_seed = 0;
    bool tasr_augment = false, tasr_quiet = false;
    tasr->add_option("--train", tasr_train, "training corpus dir")->required();
    tasr->add_option("--dev", tasr_dev, "dev corpus dir")->required();
    tasr->add_option("--out", tasr_out, "model path prefix")->required();
    tasr->add_option("--epochs", tasr_epochs, "max epochs");
    tasr->add_option("--lr", tasr_lr, "learning rate");
    tasr->add_option("--batch", tasr_batch, "minibatch size");
    tasr->add_option("--seed", tasr_seed, "init and shuffle seed");
    tasr->add_option("--target-dev-wer", tasr_target,
                     "stop once dev wer reaches this");
    tasr->add_flag("--augment", tasr_augment,
                   "level/interference jitter on training utterances");
    tasr->add_flag("--quiet", tasr_quiet, "suppress per-epoch logging");

    auto* tcod = app.add_subcommand("train-codec", "fit the rvq codebooks");
    std::string tcod_corpus, tcod_out;
    int tcod_stages = 32, tcod_k = 256;
    uint64_t tcod_seed = 0;
    std::size_t tcod_cap = 16384;
    tcod->add_option("--corpus", tcod_corpus, "training corpus dir")->required();
    tcod->add_option("--out", tcod_out, "codec output path")->required();
    tcod->add_option("--stages", tcod_stages, "number of quantizer stages");
    tcod->add_option("--k", tcod_k, "centroids per stage");
    tcod->add_option("--seed", tcod_seed, "k-means seed");
    tcod->add_option("--fit-cap", tcod_cap, "max frames used for fitting");

    auto* atk = app.add_subcommand("attack", "attack a corpus and dump wavs");
    std::string atk_corpus, atk_model, atk_codec, atk_kind = "pgd";
    std::string atk_defense = "none", atk_out;
    double atk_eps = 0.02, atk_sigma = 0.001;
    int atk_iters = 100, atk_eot = 8;
    uint64_t atk_seed = 0;
    std::size_t atk_max = 0;
    atk->add_option("--corpus", atk_corpus, "corpus dir")->required();
    atk->add_option("--model", atk_model, "model path prefix")->required();
    atk->add_option("--codec", atk_codec, "codec path (rvq defense only)");
    atk->add_option("--kind", atk_kind, "pgd|bpda");
    atk->add_option("--defense", atk_defense,
                    "defense in the bpda loop (none|rvq:<n>|median:<w>|resample)");
    atk->add_option("--eps", atk_eps, "l-inf budget");
    atk->add_option("--iterations", atk_iters, "attack iterations");
    atk->add_option("--eot-samples", atk_eot, "eot draws per step");
    atk->add_option("--jitter-sigma", atk_sigma, "eot jitter stddev");
    atk->add_option("--seed", atk_seed, "attack noise seed");
    atk->add_option("--max-utterances", atk_max, "cap on attacked utterances");
    atk->add_option("--out", atk_out, "output directory")->required();

    auto* swp = app.add_subcommand("sweep", "run the evaluation grid");
    std::string swp_config;
    swp->add_option("--config", swp_config, "experiment json")->required();

    auto* rep = app.add_subcommand("report", "render plots and tables");
    std::string rep_in, rep_out;
    int rep_depth = 9;
    double rep_eps = 0.02;
    bool rep_no_curves = false, rep_no_corr = false, rep_no_base = false;
    rep->add_option("--in", rep_in, "sweep output dir (with results.csv)")
        ->required();
    rep->add_option("--out", rep_out, "report output dir (default: --in)");
    rep->add_option("--matched-depth", rep_depth,
                    "rvq depth for the baseline table");
    rep->add_option("--baseline-eps", rep_eps, "eps for the baseline table");
    rep->add_flag("--no-curves", rep_no_curves, "skip depth curves");
    rep->add_flag("--no-correlation", rep_no_corr, "skip correlation report");
    rep->add_flag("--no-baseline", rep_no_base, "skip baseline table");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return cmd_gen_corpus(gen_out, gen_n, gen_min, gen_max, gen_seed,
                                  gen_split);
        if (tasr->parsed())
            return cmd_train_asr(tasr_train, tasr_dev, tasr_out, tasr_epochs,
                                 tasr_lr, tasr_batch, tasr_seed, tasr_target,
                                 tasr_augment, tasr_quiet);
        if (tcod->parsed())
            return cmd_train_codec(tcod_corpus, tcod_out, tcod_stages, tcod_k,
                                   tcod_seed, tcod_cap);
        if (atk->parsed())
            return cmd_attack(atk_corpus, atk_model, atk_codec, atk_kind,
                              atk_defense, atk_eps, atk_iters, atk_eot,
                              atk_sigma, atk_seed, atk_max, atk_out);
        if (swp->parsed()) return cmd_sweep(swp_config);
        if (rep->parsed())
            return cmd_report(rep_in, rep_out, rep_depth, rep_eps,
                              rep_no_curves, rep_no_corr, rep_no_base);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
