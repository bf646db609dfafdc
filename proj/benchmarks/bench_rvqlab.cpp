#include <benchmark/benchmark.h>

#include <vector>

#include "rvqlab/asr.hpp"
#include "rvqlab/attack.hpp"
#include "rvqlab/autodiff.hpp"
#include "rvqlab/defense.hpp"
#include "rvqlab/metrics.hpp"
#include "rvqlab/rng.hpp"
#include "rvqlab/signal.hpp"

using namespace rvqlab;
using autodiff::Graph;
using autodiff::NodeId;
using autodiff::Tensor;

namespace {

const signal::Utterance& bench_utt() {
    static signal::Utterance utt = signal::synth_utterance({1, 2, 3, 4}, 99);
    return utt;
}

const asr::AcousticModel& bench_model() {
    static asr::AcousticModel m = asr::make_model(1);
    return m;
}

// Random codebooks are as expensive to search as trained ones.
const defense::RvqCodec& bench_codec() {
    static defense::RvqCodec codec = [] {
        defense::RvqCodec c;
        c.codebooks.resize(static_cast<std::size_t>(c.n_max) * c.k * c.dim);
        Rng rng(7);
        for (double& v : c.codebooks) v = 0.05 * rng.gaussian();
        return c;
    }();
    return codec;
}

Tensor waveform_tensor() {
    const auto& xs = bench_utt().waveform.samples;
    return Tensor::matrix(1, xs.size(), xs);
}

}  // namespace

static void BM_FeaturizeForward(benchmark::State& state) {
    const Tensor x = waveform_tensor();
    for (auto _ : state) {
        Graph g;
        NodeId f = asr::featurize(g, bench_model(), g.leaf(x));
        benchmark::DoNotOptimize(g.value(f).data.data());
    }
}
BENCHMARK(BM_FeaturizeForward);

static void BM_LossForwardBackward(benchmark::State& state) {
    const Tensor x = waveform_tensor();
    const auto& y = bench_utt().transcript;
    for (auto _ : state) {
        Graph g;
        NodeId leaf = g.leaf(x);
        auto nodes = asr::build_logits(g, bench_model(), leaf);
        NodeId loss = asr::ctc_loss(g, g.log_softmax(nodes.logits), y);
        g.backward(loss);
        benchmark::DoNotOptimize(g.gradient(leaf).data.data());
    }
}
BENCHMARK(BM_LossForwardBackward);

static void BM_CtcForward(benchmark::State& state) {
    Rng rng(3);
    Tensor logits = Tensor::zeros({62, 11});
    for (double& v : logits.data) v = rng.uniform(-2.0, 2.0);
    Graph pre;
    const Tensor lp = pre.value(pre.log_softmax(pre.leaf(logits)));
    const std::vector<int> y = {1, 2, 3, 4, 5};
    for (auto _ : state) {
        Graph g;
        NodeId loss = asr::ctc_loss(g, g.leaf(lp), y);
        benchmark::DoNotOptimize(g.value(loss).data[0]);
    }
}
BENCHMARK(BM_CtcForward);

static void BM_RvqEncode(benchmark::State& state) {
    const int depth = static_cast<int>(state.range(0));
    for (auto _ : state) {
        auto tg = defense::encode(bench_codec(), bench_utt().waveform, depth);
        benchmark::DoNotOptimize(tg.tokens.data());
    }
    state.SetItemsProcessed(state.iterations() *
                            signal::frame(bench_utt().waveform).frame_count);
}
BENCHMARK(BM_RvqEncode)->Arg(1)->Arg(8)->Arg(32);

static void BM_RvqDecode(benchmark::State& state) {
    const auto tg = defense::encode(bench_codec(), bench_utt().waveform, 8);
    for (auto _ : state) {
        auto w = defense::decode(bench_codec(), tg);
        benchmark::DoNotOptimize(w.samples.data());
    }
}
BENCHMARK(BM_RvqDecode);

static void BM_MedianFilter(benchmark::State& state) {
    for (auto _ : state) {
        auto w = defense::median_filter(bench_utt().waveform, 5);
        benchmark::DoNotOptimize(w.samples.data());
    }
}
BENCHMARK(BM_MedianFilter);

static void BM_ResampleDefense(benchmark::State& state) {
    for (auto _ : state) {
        auto w = defense::resample_defense(bench_utt().waveform);
        benchmark::DoNotOptimize(w.samples.data());
    }
}
BENCHMARK(BM_ResampleDefense);

static void BM_PgdStep(benchmark::State& state) {
    attack::AttackConfig cfg;
    cfg.epsilon = 0.02;
    cfg.iterations = 1;
    for (auto _ : state) {
        auto r = attack::pgd(bench_model(), bench_utt().waveform,
                             bench_utt().transcript, cfg);
        benchmark::DoNotOptimize(r.delta.data());
    }
}
BENCHMARK(BM_PgdStep);

static void BM_EditDistance(benchmark::State& state) {
    Rng rng(5);
    std::vector<int> a(100), b(100);
    for (auto& v : a) v = 1 + static_cast<int>(rng.uniform_index(10));
    for (auto& v : b) v = 1 + static_cast<int>(rng.uniform_index(10));
    for (auto _ : state)
        benchmark::DoNotOptimize(metrics::edit_distance(a, b));
}
BENCHMARK(BM_EditDistance);

BENCHMARK_MAIN();
