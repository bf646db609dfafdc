#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rvqlab/attack.hpp"
#include "rvqlab/metrics.hpp"

namespace rvqlab::harness {

struct ExperimentConfig {
    std::string corpus_dir;
    std::string model_prefix;
    std::string codec_path;  // may be empty when no rvq defense is swept
    std::string out_dir;

    std::string attack_kind = "pgd";  // "pgd" or "bpda"
    // Defense specs; the bare entry "rvq" expands over `depths`.
    std::vector<std::string> defenses = {"rvq", "none"};
    std::vector<int> depths = {2, 4, 6, 8, 10, 12, 14, 16,
                               18, 20, 22, 24, 26, 28, 30, 32};
    std::vector<double> epsilons;  // defaults depend on attack_kind
    std::vector<uint64_t> seeds = {0};
    std::size_t max_utterances = 0;  // 0 = whole corpus

    int iterations = 100;
    int eot_samples = 8;
    double jitter_sigma = 0.001;

    static ExperimentConfig from_json_file(const std::string& path);
    std::string to_json() const;
    // Fills epsilon defaults, validates lists and referenced paths.
    void finalize();
};

struct AggregateRow {
    std::string defense;
    int depth = -1;
    double eps = 0.0;
    std::string attack;
    uint64_t seed = 0;
    std::size_t n = 0;
    double mean_wer_clean = 0.0;
    double mean_wer_adv = 0.0;
    double sem_wer_adv = 0.0;
    double mean_delta_wer = 0.0;
    double sem_delta_wer = 0.0;
    double mean_ccr = 0.0;
    double sem_ccr = 0.0;
    double mean_snr_db = 0.0;
};

struct SweepError {
    std::string id;
    std::string defense;
    double eps = 0.0;
    std::string attack;
    uint64_t seed = 0;
    std::string message;
};

struct SweepTable {
    std::vector<metrics::EvalRecord> rows;
    std::vector<AggregateRow> aggregates;
    std::vector<SweepError> errors;
};

// Mean/SEM per (defense, depth, eps, attack, seed), in row order.
std::vector<AggregateRow> aggregate(const std::vector<metrics::EvalRecord>& rows);

// Full grid pass. Writes results.csv, aggregates.csv, errors.csv, config.json
// and meta.json under cfg.out_dir; failing rows are recorded and skipped.
SweepTable run_sweep(const ExperimentConfig& cfg);

struct DepthCurveSummary {
    struct PerEps {
        double eps = 0.0;
        std::vector<std::pair<int, double>> ccr_by_depth;
        std::vector<std::pair<int, double>> wer_by_depth;
        int argmin_depth = 0;
        bool interior = false;
    };
    std::vector<int> depths;
    std::vector<PerEps> per_eps;
};

// CCR-vs-depth and WER-vs-depth panels over the rvq rows (eps > 0), pooled
// across seeds. Writes depth_curves.svg and depth_curves.json.
DepthCurveSummary report_depth_curves(const SweepTable& table,
                                      const std::string& out_dir);

struct CorrelationReport {
    std::optional<double> rho_overall;  // empty when rank-undefined
    std::vector<std::pair<double, std::optional<double>>> rho_per_eps;
    std::size_t n_points = 0;
};

// Delta-WER vs CCR scatter over (depth, eps) configuration means.
// Writes correlation.svg and correlation.json.
CorrelationReport report_correlation(const SweepTable& table,
                                     const std::string& out_dir);

struct BaselineTable {
    struct Row {
        std::string attack;
        std::string defense;
        double mean_wer_adv = 0.0;
        double sem_wer_adv = 0.0;
        std::size_t n = 0;
    };
    std::vector<Row> rows;
};

// Defense comparison at one epsilon: rvq at the bitrate-matched depth vs
// median, resample and none. Writes baseline_table.csv.
BaselineTable report_baseline_table(const SweepTable& table, int matched_depth,
                                    double eps, const std::string& out_dir);

}  // namespace rvqlab::harness
