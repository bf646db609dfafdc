#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rvqlab/defense.hpp"
#include "rvqlab/signal.hpp"

namespace rvqlab::metrics {

// Unit-cost Levenshtein distance.
std::size_t edit_distance(const std::vector<int>& a, const std::vector<int>& b);

// edit_distance / |ref|; may exceed 1.
double wer(const std::vector<int>& ref, const std::vector<int>& hyp);

// Fraction of (frame, stage) token positions that differ.
double ccr(const defense::TokenGrid& clean, const defense::TokenGrid& adv);

// 10 log10(|clean|^2 / |clean - other|^2), capped to [-99, 99] dB.
double snr_db(const signal::Waveform& clean, const signal::Waveform& other);

// Rank correlation with average ranks for ties.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

struct EvalRecord {
    std::string id;
    std::string defense;      // defense spec string, e.g. "rvq:8"
    int depth = -1;           // rvq depth; -1 for other defenses
    double eps = 0.0;
    std::string attack;       // "pgd" or "bpda"
    double wer_clean = 0.0;   // clean input through the defense
    double wer_adv = 0.0;     // adversarial input through the defense
    double delta_wer = 0.0;   // vs the eps=0 baseline row
    double ccr = 0.0;
    double snr_db = 0.0;
    uint64_t seed = 0;
};

// wer_adv minus the eps=0 baseline's wer_adv for the same
// (id, defense, depth, seed).
double delta_wer(const EvalRecord& rec, const std::vector<EvalRecord>& table);

// CSV with a fixed header; floats printed with %.17g so files round-trip
// bit-exactly and identical runs produce identical bytes.
extern const char* const kEvalCsvHeader;
std::string to_csv_line(const EvalRecord& rec);
void write_records_csv(const std::string& path,
                       const std::vector<EvalRecord>& records);
std::vector<EvalRecord> read_records_csv(const std::string& path);

}  // namespace rvqlab::metrics
