#include "rvqlab/asr.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "rvqlab/error.hpp"
#include "rvqlab/metrics.hpp"
#include "rvqlab/parallel.hpp"
#include "rvqlab/rng.hpp"

namespace rvqlab::asr {

using autodiff::Graph;
using autodiff::NodeId;
using autodiff::Tensor;
using nlohmann::json;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kFeatureFloor = 1e-8;

double lse2(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double lse3(double a, double b, double c) { return lse2(lse2(a, b), c); }

std::shared_ptr<const Tensor> make_dft_real(int width) {
    const int bins = width / 2 + 1;
    Tensor t = Tensor::zeros({static_cast<std::size_t>(width),
                              static_cast<std::size_t>(bins)});
    for (int n = 0; n < width; ++n)
        for (int k = 0; k < bins; ++k)
            t(n, k) = std::cos(2.0 * M_PI * n * k / width);
    return std::make_shared<const Tensor>(std::move(t));
}

std::shared_ptr<const Tensor> make_dft_imag(int width) {
    const int bins = width / 2 + 1;
    Tensor t = Tensor::zeros({static_cast<std::size_t>(width),
                              static_cast<std::size_t>(bins)});
    for (int n = 0; n < width; ++n)
        for (int k = 0; k < bins; ++k)
            t(n, k) = -std::sin(2.0 * M_PI * n * k / width);
    return std::make_shared<const Tensor>(std::move(t));
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

}  // namespace

autodiff::Tensor make_filterbank(int n_mels, int n_bins, int sample_rate) {
    if (n_mels < 1 || n_bins < 2) throw InvalidArgument("bad filterbank size");
    const double nyquist = sample_rate / 2.0;
    const double mel_hi = hz_to_mel(nyquist);
    std::vector<double> points(n_mels + 2);
    for (int i = 0; i < n_mels + 2; ++i)
        points[i] = mel_hi * i / (n_mels + 1);

    Tensor fb = Tensor::zeros({static_cast<std::size_t>(n_bins),
                               static_cast<std::size_t>(n_mels)});
    for (int m = 0; m < n_mels; ++m) {
        const double left = points[m], center = points[m + 1],
                     right = points[m + 2];
        double sum = 0.0;
        for (int k = 0; k < n_bins; ++k) {
            const double mel_k = hz_to_mel(k * nyquist / (n_bins - 1));
            const double w = std::max(
                0.0, std::min((mel_k - left) / (center - left),
                              (right - mel_k) / (right - center)));
            fb(k, m) = w;
            sum += w;
        }
        if (sum <= 0.0)
            throw Error("filterbank row " + std::to_string(m) + " is empty");
        for (int k = 0; k < n_bins; ++k) fb(k, m) /= sum;
    }
    return fb;
}

AcousticModel make_model(uint64_t seed, const ModelConfig& config) {
    if (config.layer_dims.size() != 4 ||
        config.layer_dims.front() != config.n_mels * (2 * config.context + 1) ||
        config.layer_dims.back() != config.vocab + 1)
        throw InvalidArgument("layer dims out of step with feature/vocab sizes");

    AcousticModel m;
    m.config = config;
    m.dft_real = make_dft_real(config.frame_width);
    m.dft_imag = make_dft_imag(config.frame_width);
    m.mel = std::make_shared<const Tensor>(make_filterbank(
        config.n_mels, config.frame_width / 2 + 1, signal::kSampleRate));

    const auto& dims = config.layer_dims;
    for (std::size_t layer = 0; layer + 1 < dims.size(); ++layer) {
        const std::size_t fan_in = dims[layer], fan_out = dims[layer + 1];
        Rng rng(mix_seed(seed, 0xA5, layer));
        const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
        Tensor w = Tensor::zeros({fan_in, fan_out});
        for (double& v : w.data) v = std_dev * rng.gaussian();
        const std::string idx = std::to_string(layer + 1);
        m.params.add("w" + idx, std::move(w));
        m.params.add("b" + idx, Tensor::zeros({fan_out}));
    }
    return m;
}

NodeId featurize(Graph& g, const AcousticModel& m, NodeId x) {
    const Tensor& xt = g.value(x);
    if (xt.rank() != 2 || xt.rows() != 1)
        throw InvalidArgument("featurize expects a (1, T) waveform node, got " +
                              autodiff::shape_str(xt));
    const int width = m.config.frame_width, hop = m.config.hop;
    const std::size_t t_len = xt.cols();
    const std::size_t padded = signal::padded_length(t_len, width, hop);
    const std::size_t n_frames = (padded - width) / hop + 1;

    NodeId xp = x;
    if (padded > t_len)
        xp = g.concat({x, g.leaf(Tensor::zeros({1, padded - t_len}))}, 1);

    std::vector<NodeId> rows;
    rows.reserve(n_frames);
    for (std::size_t f = 0; f < n_frames; ++f)
        rows.push_back(g.slice_cols(xp, f * hop, f * hop + width));
    const NodeId frames = g.concat(rows, 0);

    const std::vector<double> win = signal::sqrt_hann_window(width);
    Tensor win_tile = Tensor::zeros({n_frames, static_cast<std::size_t>(width)});
    for (std::size_t f = 0; f < n_frames; ++f)
        std::copy(win.begin(), win.end(),
                  win_tile.data.begin() + f * width);
    const NodeId windowed = g.mul(frames, g.leaf(std::move(win_tile)));

    const NodeId re = g.fixed_matmul(windowed, m.dft_real);
    const NodeId im = g.fixed_matmul(windowed, m.dft_imag);
    const NodeId power = g.add(g.square(re), g.square(im));
    const NodeId melspec = g.fixed_matmul(power, m.mel);

    Tensor floor_tile =
        Tensor::zeros({n_frames, static_cast<std::size_t>(m.config.n_mels)});
    for (double& v : floor_tile.data) v = kFeatureFloor;
    return g.log(g.add(melspec, g.leaf(std::move(floor_tile))));
}

LogitsNodes build_logits(Graph& g, const AcousticModel& m, NodeId x) {
    const NodeId feats = featurize(g, m, x);
    const std::size_t n_frames = g.value(feats).rows();
    const std::size_t n_mels = g.value(feats).cols();
    const int ctx = m.config.context;

    const NodeId zpad = g.leaf(Tensor::zeros({static_cast<std::size_t>(ctx),
                                              n_mels}));
    const NodeId padded = g.concat({zpad, feats, zpad}, 0);
    std::vector<NodeId> shifted;
    shifted.reserve(2 * ctx + 1);
    for (int k = 0; k <= 2 * ctx; ++k)
        shifted.push_back(g.slice_rows(padded, k, k + n_frames));
    const NodeId stacked = g.concat(shifted, 1);

    LogitsNodes out;
    auto param = [&](const char* name) {
        const NodeId id = g.leaf(m.params.at(name));
        out.params.emplace_back(name, id);
        return id;
    };
    // Registration order must match make_model; keep the calls sequenced.
    const NodeId w1 = param("w1");
    const NodeId b1 = param("b1");
    const NodeId w2 = param("w2");
    const NodeId b2 = param("b2");
    const NodeId w3 = param("w3");
    const NodeId b3 = param("b3");
    const NodeId h1 = g.relu(g.bias_add(g.matmul(stacked, w1), b1));
    const NodeId h2 = g.relu(g.bias_add(g.matmul(h1, w2), b2));
    out.logits = g.bias_add(g.matmul(h2, w3), b3);
    return out;
}

std::size_t min_alignment_frames(const std::vector<int>& target) {
    std::size_t repeats = 0;
    for (std::size_t i = 1; i < target.size(); ++i)
        if (target[i] == target[i - 1]) ++repeats;
    return target.size() + repeats;
}

NodeId ctc_loss(Graph& g, NodeId log_probs, const std::vector<int>& target) {
    const Tensor& lp = g.value(log_probs);
    if (lp.rank() != 2)
        throw InvalidArgument("ctc_loss expects (frames, vocab+1) log-probs");
    const std::size_t n_frames = lp.rows();
    const int n_classes = static_cast<int>(lp.cols());
    if (target.empty()) throw InvalidArgument("ctc_loss: empty target");
    for (int id : target)
        if (id < 1 || id >= n_classes)
            throw InvalidArgument("ctc_loss: label " + std::to_string(id) +
                                  " outside [1, " + std::to_string(n_classes) +
                                  ")");
    const std::size_t needed = min_alignment_frames(target);
    if (n_frames < needed)
        throw InfeasibleAlignment("target needs >= " + std::to_string(needed) +
                                  " frames, have " + std::to_string(n_frames));

    const std::size_t L = target.size();
    const std::size_t S = 2 * L + 1;
    std::vector<int> ext(S, kBlank);
    for (std::size_t i = 0; i < L; ++i) ext[2 * i + 1] = target[i];

    auto can_skip = [&](std::size_t s) {
        return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2];
    };

    std::vector<double> alpha(n_frames * S, kNegInf);
    alpha[0 * S + 0] = lp(0, ext[0]);
    if (S > 1) alpha[0 * S + 1] = lp(0, ext[1]);
    for (std::size_t t = 1; t < n_frames; ++t)
        for (std::size_t s = 0; s < S; ++s) {
            double acc = alpha[(t - 1) * S + s];
            if (s >= 1) acc = lse2(acc, alpha[(t - 1) * S + s - 1]);
            if (can_skip(s)) acc = lse2(acc, alpha[(t - 1) * S + s - 2]);
            alpha[t * S + s] = acc == kNegInf ? kNegInf : acc + lp(t, ext[s]);
        }

    const double log_p = S >= 2 ? lse2(alpha[(n_frames - 1) * S + S - 1],
                                       alpha[(n_frames - 1) * S + S - 2])
                                : alpha[(n_frames - 1) * S + S - 1];
    if (log_p == kNegInf)
        throw InfeasibleAlignment("no feasible alignment path");

    std::vector<double> beta(n_frames * S, kNegInf);
    beta[(n_frames - 1) * S + S - 1] = lp(n_frames - 1, ext[S - 1]);
    if (S >= 2) beta[(n_frames - 1) * S + S - 2] = lp(n_frames - 1, ext[S - 2]);
    for (std::size_t t = n_frames - 1; t-- > 0;)
        for (std::size_t s = 0; s < S; ++s) {
            double acc = beta[(t + 1) * S + s];
            if (s + 1 < S) acc = lse2(acc, beta[(t + 1) * S + s + 1]);
            if (s + 2 < S && can_skip(s + 2))
                acc = lse2(acc, beta[(t + 1) * S + s + 2]);
            beta[t * S + s] = acc == kNegInf ? kNegInf : acc + lp(t, ext[s]);
        }

    // d(-log p)/d lp[t][c] = -(1/p) sum_{s: ext[s]=c} alpha beta / exp(lp),
    // everything kept in logs until the final exp.
    Tensor grad = Tensor::zeros(lp.shape);
    for (std::size_t t = 0; t < n_frames; ++t) {
        std::vector<double> lab(n_classes, kNegInf);
        for (std::size_t s = 0; s < S; ++s) {
            const double ab = alpha[t * S + s] + beta[t * S + s];
            if (ab == kNegInf) continue;
            lab[ext[s]] = lse2(lab[ext[s]], ab);
        }
        for (int c = 0; c < n_classes; ++c) {
            if (lab[c] == kNegInf) continue;
            grad.data[t * n_classes + c] =
                -std::exp(lab[c] - lp(t, c) - log_p);
        }
    }

    return g.custom_grad({log_probs}, Tensor::scalar(-log_p), {std::move(grad)});
}

std::vector<int> greedy_decode(const autodiff::Tensor& logits) {
    if (logits.rank() != 2)
        throw InvalidArgument("greedy_decode expects a logits matrix");
    std::vector<int> out;
    int prev = -1;
    for (std::size_t t = 0; t < logits.rows(); ++t) {
        int best = 0;
        double best_v = logits(t, 0);
        for (std::size_t c = 1; c < logits.cols(); ++c)
            if (logits(t, c) > best_v) {
                best_v = logits(t, c);
                best = static_cast<int>(c);
            }
        if (best != prev && best != kBlank) out.push_back(best);
        prev = best;
    }
    return out;
}

std::vector<int> transcribe(const AcousticModel& m, const signal::Waveform& w) {
    Graph g;
    const NodeId x = g.leaf(Tensor::matrix(1, w.samples.size(), w.samples));
    const LogitsNodes nodes = build_logits(g, m, x);
    return greedy_decode(g.value(nodes.logits));
}

namespace {

// Level and interference jitter: quiet 256-sample blocks gated down by a
// random factor (half the time), a handful of partially gated sine
// interferers, and a mild white noise floor. Amplitudes are small next to
// the formant bursts, so transcripts stay intact.
void augment_waveform(std::vector<double>& x, Rng& rng) {
    constexpr double kPi = 3.14159265358979323846;
    if (x.empty()) return;
    double rms = 0.0;
    for (double s : x) rms += s * s;
    rms = std::sqrt(rms / static_cast<double>(x.size()));

    if (rng.uniform() < 0.5) {
        const double gain = std::pow(10.0, rng.uniform(-2.0, -0.3));
        for (std::size_t b = 0; b + 256 <= x.size(); b += 256) {
            double block = 0.0;
            for (std::size_t i = 0; i < 256; ++i) block += x[b + i] * x[b + i];
            block = std::sqrt(block / 256.0);
            if (block < 0.25 * rms)
                for (std::size_t i = 0; i < 256; ++i) x[b + i] *= gain;
        }
    }

    const int tones = 6 + static_cast<int>(rng.uniform_index(11));
    for (int t = 0; t < tones; ++t) {
        const double freq = rng.uniform(60.0, 7900.0);
        const double amp = std::pow(10.0, rng.uniform(-3.5, -1.4));
        const double phase = rng.uniform(0.0, 2.0 * kPi);
        const auto len =
            static_cast<std::size_t>(x.size() * rng.uniform(0.25, 1.0));
        const std::size_t start = rng.uniform_index(x.size() - len + 1);
        const double step = 2.0 * kPi * freq / signal::kSampleRate;
        for (std::size_t i = start; i < start + len; ++i)
            x[i] += amp * std::sin(step * static_cast<double>(i) + phase);
    }

    const double snr_db = rng.uniform(20.0, 40.0);
    const double sigma = rms / std::pow(10.0, snr_db / 20.0);
    for (double& s : x) s = std::clamp(s + sigma * rng.gaussian(), -1.0, 1.0);
}

}  // namespace

TrainReport train_asr(AcousticModel& m, const signal::Corpus& train,
                      const signal::Corpus& dev, const TrainConfig& cfg) {
    if (train.utterances.empty())
        throw InvalidArgument("train_asr: empty training corpus");
    if (cfg.batch < 1 || cfg.lr <= 0.0 || cfg.epochs < 1)
        throw InvalidArgument("train_asr: bad hyperparameters");

    std::vector<std::string> names;
    for (const autodiff::Parameter& p : m.params.items()) names.push_back(p.name);

    struct UttGrad {
        double loss = 0.0;
        std::vector<std::pair<std::string, Tensor>> grads;
    };

    TrainReport report;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(train.utterances.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(mix_seed(cfg.seed, 0xE0, epoch));
        for (std::size_t i = order.size() - 1; i > 0; --i)
            std::swap(order[i], order[shuffle_rng.uniform_index(i + 1)]);

        double epoch_loss = 0.0;
        std::size_t seen = 0;
        try {
            for (std::size_t start = 0; start < order.size();
                 start += cfg.batch) {
                const std::size_t stop =
                    std::min(order.size(), start + cfg.batch);
                std::vector<UttGrad> slots(stop - start);
                parallel_for(stop - start, [&](std::size_t j) {
                    const std::size_t u = order[start + j];
                    const signal::Utterance& utt = train.utterances[u];
                    std::vector<double> samples = utt.waveform.samples;
                    if (cfg.augment) {
                        // Keyed on the utterance itself, not the batch slot,
                        // so worker count and batch size cannot change it.
                        Rng jitter(mix_seed(cfg.seed, 0xA9B0 + epoch, u));
                        augment_waveform(samples, jitter);
                    }
                    Graph g;
                    const NodeId x =
                        g.leaf(Tensor::matrix(1, samples.size(), samples));
                    const LogitsNodes nodes = build_logits(g, m, x);
                    const NodeId lsm = g.log_softmax(nodes.logits);
                    const NodeId loss = ctc_loss(g, lsm, utt.transcript);
                    g.backward(loss);
                    slots[j].loss = g.value(loss).data[0];
                    for (const auto& [name, id] : nodes.params)
                        slots[j].grads.emplace_back(name, g.gradient(id));
                });

                std::vector<Tensor> total;
                for (const std::string& name : names)
                    total.push_back(Tensor::zeros(m.params.at(name).shape));
                double batch_loss = 0.0;
                for (const UttGrad& s : slots) {
                    batch_loss += s.loss;
                    for (const auto& [name, grad] : s.grads) {
                        const std::size_t p =
                            std::find(names.begin(), names.end(), name) -
                            names.begin();
                        if (p == names.size() ||
                            grad.data.size() != total[p].data.size())
                            throw Error("train_asr: gradient for '" + name +
                                        "' does not match the parameter");
                        for (std::size_t i = 0; i < grad.data.size(); ++i)
                            total[p].data[i] += grad.data[i];
                    }
                }
                const double inv = 1.0 / static_cast<double>(slots.size());
                double norm_sq = 0.0;
                for (Tensor& t : total)
                    for (double& v : t.data) {
                        v *= inv;
                        norm_sq += v * v;
                    }
                const double norm = std::sqrt(norm_sq);
                const double scale =
                    norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
                for (std::size_t p = 0; p < names.size(); ++p) {
                    Tensor& dst = m.params.at(names[p]);
                    for (std::size_t i = 0; i < dst.data.size(); ++i)
                        dst.data[i] -= cfg.lr * scale * total[p].data[i];
                }
                epoch_loss += batch_loss;
                seen += slots.size();
            }
        } catch (const Error& e) {
            throw TrainingFailure(std::string("epoch ") + std::to_string(epoch) +
                                      ": " + e.what(),
                                  epoch);
        }

        EpochStats stats;
        stats.mean_loss = epoch_loss / static_cast<double>(seen);
        if (!std::isfinite(stats.mean_loss))
            throw TrainingFailure("non-finite training loss", epoch);

        if (!dev.utterances.empty()) {
            std::vector<double> wers(dev.utterances.size());
            parallel_for(dev.utterances.size(), [&](std::size_t i) {
                const signal::Utterance& utt = dev.utterances[i];
                wers[i] =
                    metrics::wer(utt.transcript, transcribe(m, utt.waveform));
            });
            double sum = 0.0;
            for (double v : wers) sum += v;
            stats.dev_wer = sum / static_cast<double>(wers.size());
        } else {
            stats.dev_wer = -1.0;
        }

        if (cfg.verbose)
            std::fprintf(stderr, "epoch %d  loss %.4f  dev-wer %.4f\n", epoch,
                         stats.mean_loss, stats.dev_wer);
        report.epochs.push_back(stats);

        if (cfg.target_dev_wer >= 0.0 && !dev.utterances.empty() &&
            stats.dev_wer <= cfg.target_dev_wer)
            break;
    }
    return report;
}

void save_model(const AcousticModel& m, const std::string& prefix) {
    m.params.save(prefix + ".cgpt");
    json side = {{"vocab_size", m.config.vocab},
                 {"frame", {{"width", m.config.frame_width},
                            {"hop", m.config.hop}}},
                 {"n_mels", m.config.n_mels},
                 {"context", m.config.context},
                 {"layers", m.config.layer_dims}};
    std::ofstream os(prefix + ".json", std::ios::trunc);
    if (!os) throw FormatError("cannot open " + prefix + ".json for writing");
    os << side.dump(2) << "\n";
    if (!os) throw FormatError("short write to " + prefix + ".json");
}

AcousticModel load_model(const std::string& prefix) {
    std::ifstream is(prefix + ".json");
    if (!is) throw FormatError("cannot open " + prefix + ".json");
    json side;
    try {
        is >> side;
    } catch (const json::exception& e) {
        throw FormatError("model sidecar " + prefix + ".json: " + e.what());
    }

    ModelConfig config;
    try {
        config.vocab = side.at("vocab_size").get<int>();
        config.frame_width = side.at("frame").at("width").get<int>();
        config.hop = side.at("frame").at("hop").get<int>();
        config.n_mels = side.at("n_mels").get<int>();
        config.context = side.at("context").get<int>();
        config.layer_dims = side.at("layers").get<std::vector<int>>();
    } catch (const json::exception& e) {
        throw FormatError("model sidecar " + prefix + ".json: " + e.what());
    }

    AcousticModel m;
    m.config = config;
    m.dft_real = make_dft_real(config.frame_width);
    m.dft_imag = make_dft_imag(config.frame_width);
    m.mel = std::make_shared<const Tensor>(make_filterbank(
        config.n_mels, config.frame_width / 2 + 1, signal::kSampleRate));
    m.params = autodiff::ParameterSet::load(prefix + ".cgpt");

    const auto& dims = config.layer_dims;
    for (std::size_t layer = 0; layer + 1 < dims.size(); ++layer) {
        const std::string idx = std::to_string(layer + 1);
        const Tensor& w = m.params.at("w" + idx);
        const Tensor& b = m.params.at("b" + idx);
        if (w.rank() != 2 ||
            w.rows() != static_cast<std::size_t>(dims[layer]) ||
            w.cols() != static_cast<std::size_t>(dims[layer + 1]) ||
            b.rank() != 1 ||
            b.shape[0] != static_cast<std::size_t>(dims[layer + 1]))
            throw FormatError("model " + prefix +
                              ": parameter shapes disagree with sidecar layers");
    }
    return m;
}

}  // namespace rvqlab::asr
