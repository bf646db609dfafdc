#include "rvqlab/attack.hpp"

#include <algorithm>
#include <cmath>

#include "rvqlab/autodiff.hpp"
#include "rvqlab/error.hpp"
#include "rvqlab/rng.hpp"

namespace rvqlab::attack {

using autodiff::Graph;
using autodiff::NodeId;
using autodiff::Tensor;

namespace {

void validate(const AttackConfig& cfg) {
    if (cfg.epsilon < 0.0) throw InvalidArgument("attack: epsilon < 0");
    if (cfg.iterations < 1) throw InvalidArgument("attack: iterations < 1");
    if (cfg.eot_samples < 1) throw InvalidArgument("attack: eot_samples < 1");
    if (cfg.jitter_sigma < 0.0) throw InvalidArgument("attack: sigma < 0");
}

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Loss and its gradient w.r.t. the (already defended, already clipped)
// waveform fed to the model.
double loss_and_grad(const asr::AcousticModel& model,
                     const std::vector<double>& samples,
                     const std::vector<int>& y, std::vector<double>* grad) {
    Graph g;
    const NodeId x = g.leaf(Tensor::matrix(1, samples.size(), samples));
    const asr::LogitsNodes nodes = asr::build_logits(g, model, x);
    const NodeId lsm = g.log_softmax(nodes.logits);
    const NodeId loss = asr::ctc_loss(g, lsm, y);
    if (grad) {
        g.backward(loss);
        *grad = g.gradient(x).data;
    }
    return g.value(loss).data[0];
}

void step_and_project(std::vector<double>& delta, const std::vector<double>& g,
                      double alpha, double eps) {
    for (std::size_t i = 0; i < delta.size(); ++i) {
        delta[i] += alpha * sign0(g[i]);
        delta[i] = std::clamp(delta[i], -eps, eps);
    }
}

std::vector<double> clipped_sum(const std::vector<double>& x,
                                const std::vector<double>& delta) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        out[i] = std::clamp(x[i] + delta[i], -1.0, 1.0);
    return out;
}

}  // namespace

AttackResult pgd(const asr::AcousticModel& model, const signal::Waveform& x,
                 const std::vector<int>& y, const AttackConfig& cfg) {
    validate(cfg);
    const double alpha = cfg.alpha();

    AttackResult res;
    res.delta.assign(x.samples.size(), 0.0);
    res.loss_trace.reserve(cfg.iterations + 1);

    std::vector<double> grad;
    for (int t = 0; t < cfg.iterations; ++t) {
        const std::vector<double> adv = clipped_sum(x.samples, res.delta);
        res.loss_trace.push_back(loss_and_grad(model, adv, y, &grad));
        step_and_project(res.delta, grad, alpha, cfg.epsilon);
    }
    const std::vector<double> adv = clipped_sum(x.samples, res.delta);
    res.loss_trace.push_back(loss_and_grad(model, adv, y, nullptr));

    res.adversarial.sample_rate = x.sample_rate;
    res.adversarial.samples = adv;
    res.iterations_run = cfg.iterations;
    return res;
}

AttackResult bpda_eot(const asr::AcousticModel& model,
                      const defense::DefenseKind& d,
                      const defense::RvqCodec* codec, const signal::Waveform& x,
                      const std::vector<int>& y, const AttackConfig& cfg) {
    validate(cfg);
    if (d.type == defense::DefenseType::Rvq && !codec)
        throw InvalidArgument("bpda_eot: rvq defense needs a codec");
    const double alpha = cfg.alpha();
    const std::size_t n = x.samples.size();

    AttackResult res;
    res.delta.assign(n, 0.0);
    res.loss_trace.reserve(cfg.iterations + 1);

    signal::Waveform jittered;
    jittered.sample_rate = x.sample_rate;
    jittered.samples.resize(n);

    // Mean EOT loss at the current delta; accumulates the identity-backward
    // gradient into *grad when non-null.
    auto eot_pass = [&](const std::vector<double>& adv, int iter,
                        std::vector<double>* grad) {
        if (grad) grad->assign(n, 0.0);
        double mean_loss = 0.0;
        std::vector<double> g_one;
        for (int i = 0; i < cfg.eot_samples; ++i) {
            Rng noise(mix_seed(cfg.seed, iter, i));
            for (std::size_t s = 0; s < n; ++s)
                jittered.samples[s] =
                    adv[s] + cfg.jitter_sigma * noise.gaussian();
            const signal::Waveform defended = defense::apply(d, jittered, codec);
            const double loss = loss_and_grad(model, defended.samples, y,
                                              grad ? &g_one : nullptr);
            mean_loss += loss;
            if (grad)
                for (std::size_t s = 0; s < n; ++s) (*grad)[s] += g_one[s];
        }
        const double inv = 1.0 / static_cast<double>(cfg.eot_samples);
        if (grad)
            for (double& v : *grad) v *= inv;
        return mean_loss * inv;
    };

    std::vector<double> grad;
    for (int t = 0; t < cfg.iterations; ++t) {
        const std::vector<double> adv = clipped_sum(x.samples, res.delta);
        res.loss_trace.push_back(eot_pass(adv, t, &grad));
        step_and_project(res.delta, grad, alpha, cfg.epsilon);
    }
    const std::vector<double> adv = clipped_sum(x.samples, res.delta);
    res.loss_trace.push_back(eot_pass(adv, cfg.iterations, nullptr));

    res.adversarial.sample_rate = x.sample_rate;
    res.adversarial.samples = adv;
    res.iterations_run = cfg.iterations;
    return res;
}

}  // namespace rvqlab::attack
