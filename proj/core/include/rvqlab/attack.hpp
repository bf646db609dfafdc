#pragma once

#include <cstdint>
#include <vector>

#include "rvqlab/asr.hpp"
#include "rvqlab/defense.hpp"
#include "rvqlab/signal.hpp"

namespace rvqlab::attack {

struct AttackConfig {
    double epsilon = 0.02;     // l-inf radius in sample units
    double step_size = -1.0;   // < 0 means epsilon / 25
    int iterations = 100;
    int eot_samples = 8;       // EOT draws per step (bpda_eot only)
    double jitter_sigma = 0.001;
    uint64_t seed = 0;

    double alpha() const { return step_size >= 0.0 ? step_size : epsilon / 25.0; }
};

struct AttackResult {
    signal::Waveform adversarial;   // clip(x + delta, -1, 1)
    std::vector<double> delta;
    std::vector<double> loss_trace;  // length iterations + 1; last is final
    int iterations_run = 0;

    double delta_linf() const {
        double m = 0.0;
        for (double v : delta) m = std::max(m, std::abs(v));
        return m;
    }
};

// Iterated gradient-sign ascent on the CTC loss of the bare model (the
// defense is not in the loop), projected onto the eps ball and the valid
// sample range after every step. sign(0) is 0; delta starts at zero.
AttackResult pgd(const asr::AcousticModel& model, const signal::Waveform& x,
                 const std::vector<int>& y, const AttackConfig& cfg);

// Adaptive variant: each step averages gradients over eot_samples draws of
// Gaussian jitter added before the defense; the defense itself is treated as
// the identity in the backward pass, so the gradient at its output lands on
// its input. codec may be null unless the defense is rvq.
AttackResult bpda_eot(const asr::AcousticModel& model,
                      const defense::DefenseKind& d,
                      const defense::RvqCodec* codec, const signal::Waveform& x,
                      const std::vector<int>& y, const AttackConfig& cfg);

}  // namespace rvqlab::attack
