#include "rvqlab/defense.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "rvqlab/error.hpp"
#include "rvqlab/linalg.hpp"
#include "rvqlab/parallel.hpp"
#include "rvqlab/rng.hpp"

namespace rvqlab::defense {

namespace {

constexpr int kKmeansIters = 25;
constexpr double kInertiaTol = 1e-6;

// Nearest centroid by squared Euclidean distance, scanning in index order so
// ties resolve to the lowest index. The partial-sum early exit never changes
// the result: sums only grow, and replacement needs a strictly smaller total.
int nearest_centroid(const double* x, const double* centroids, int k, int dim,
                     double* best_dist_out = nullptr) {
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
        const double* cent = centroids + static_cast<std::size_t>(c) * dim;
        double acc = 0.0;
        int d = 0;
        for (; d + 8 <= dim; d += 8) {
            for (int j = 0; j < 8; ++j) {
                const double diff = x[d + j] - cent[d + j];
                acc += diff * diff;
            }
            if (acc > best_dist) break;
        }
        if (acc > best_dist) continue;
        for (; d < dim; ++d) {
            const double diff = x[d] - cent[d];
            acc += diff * diff;
        }
        if (acc < best_dist) {
            best_dist = acc;
            best = c;
        }
    }
    if (best_dist_out) *best_dist_out = best_dist;
    return best;
}

std::size_t frames_in(std::size_t samples) {
    const std::size_t padded =
        signal::padded_length(samples, signal::kFrameWidth, signal::kHop);
    return (padded - signal::kFrameWidth) / signal::kHop + 1;
}

struct KmeansScratch {
    std::vector<int> assign;
    std::vector<double> min_dist;
    std::vector<std::size_t> counts;
};

// One stage of k-means on `points` (n x dim). Centroids written in place.
void fit_stage(const double* points, std::size_t n, int k, int dim,
               uint64_t seed, double* centroids, KmeansScratch& scratch) {
    Rng rng(seed);
    scratch.assign.assign(n, 0);
    scratch.min_dist.assign(n, std::numeric_limits<double>::infinity());
    scratch.counts.assign(k, 0);

    // k-means++ seeding: D^2-weighted picks, min-distances updated
    // incrementally against the newest centroid.
    const std::size_t first = rng.uniform_index(n);
    std::memcpy(centroids, points + first * dim, sizeof(double) * dim);
    for (int c = 1; c < k; ++c) {
        const double* latest = centroids + static_cast<std::size_t>(c - 1) * dim;
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d =
                squared_distance_fast(points + i * dim, latest, dim);
            if (d < scratch.min_dist[i]) scratch.min_dist[i] = d;
            total += scratch.min_dist[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += scratch.min_dist[i];
                if (acc >= target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.uniform_index(n);
        }
        std::memcpy(centroids + static_cast<std::size_t>(c) * dim,
                    points + pick * dim, sizeof(double) * dim);
    }

    std::vector<double> dots(n * static_cast<std::size_t>(k));
    std::vector<double> cent_norm(k);
    std::vector<double> sums(static_cast<std::size_t>(k) * dim);
    double prev_inertia = std::numeric_limits<double>::infinity();

    for (int iter = 0; iter < kKmeansIters; ++iter) {
        for (int c = 0; c < k; ++c)
            cent_norm[c] = squared_norm(
                centroids + static_cast<std::size_t>(c) * dim, dim);

        // Assignment via |x|^2 + |c|^2 - 2 x.c; |x|^2 is constant per point so
        // the argmin only needs |c|^2 - 2 x.c. Each worker owns whole rows,
        // keeping results independent of the worker count.
        parallel_for(n, [&](std::size_t i) {
            const double* x = points + i * dim;
            double* drow = dots.data() + i * k;
            for (int c = 0; c < k; ++c)
                drow[c] = dot_fast(
                    x, centroids + static_cast<std::size_t>(c) * dim, dim);
            int best = 0;
            double best_score = cent_norm[0] - 2.0 * drow[0];
            for (int c = 1; c < k; ++c) {
                const double score = cent_norm[c] - 2.0 * drow[c];
                if (score < best_score) {
                    best_score = score;
                    best = c;
                }
            }
            scratch.assign[i] = best;
            scratch.min_dist[i] = best_score;  // offset by |x|^2, fixed below
        });

        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double xn = squared_norm(points + i * dim, dim);
            scratch.min_dist[i] = std::max(0.0, scratch.min_dist[i] + xn);
            inertia += scratch.min_dist[i];
        }

        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(scratch.counts.begin(), scratch.counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const int c = scratch.assign[i];
            ++scratch.counts[c];
            double* dst = sums.data() + static_cast<std::size_t>(c) * dim;
            const double* x = points + i * dim;
            for (int d = 0; d < dim; ++d) dst[d] += x[d];
        }
        for (int c = 0; c < k; ++c) {
            if (scratch.counts[c] == 0) continue;
            const double inv = 1.0 / static_cast<double>(scratch.counts[c]);
            double* dst = centroids + static_cast<std::size_t>(c) * dim;
            const double* src = sums.data() + static_cast<std::size_t>(c) * dim;
            for (int d = 0; d < dim; ++d) dst[d] = src[d] * inv;
        }
        for (int c = 0; c < k; ++c) {
            if (scratch.counts[c] != 0) continue;
            std::size_t far = 0;
            double far_dist = -1.0;
            for (std::size_t i = 0; i < n; ++i)
                if (scratch.min_dist[i] > far_dist) {
                    far_dist = scratch.min_dist[i];
                    far = i;
                }
            std::memcpy(centroids + static_cast<std::size_t>(c) * dim,
                        points + far * dim, sizeof(double) * dim);
            scratch.min_dist[far] = 0.0;
        }

        if (prev_inertia - inertia <
            kInertiaTol * std::max(prev_inertia, 1e-300))
            break;
        prev_inertia = inertia;
    }
}

void put_u32(std::ostream& os, uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff),
                 static_cast<char>((v >> 24) & 0xff)};
    os.write(b, 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    put_u32(os, static_cast<uint32_t>(v & 0xffffffffu));
    put_u32(os, static_cast<uint32_t>(v >> 32));
}

uint32_t take_u32(std::istream& is, const char* field) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw FormatError(std::string("rvq1: truncated ") + field);
    return b[0] | (b[1] << 8) | (b[2] << 16) | (uint32_t(b[3]) << 24);
}

uint64_t take_u64(std::istream& is, const char* field) {
    const uint64_t lo = take_u32(is, field);
    const uint64_t hi = take_u32(is, field);
    return lo | (hi << 32);
}

}  // namespace

DefenseKind DefenseKind::parse(const std::string& spec) {
    DefenseKind d;
    const auto colon = spec.find(':');
    const std::string head = spec.substr(0, colon);
    std::string arg;
    if (colon != std::string::npos) arg = spec.substr(colon + 1);

    auto arg_int = [&](const char* what) {
        try {
            std::size_t used = 0;
            const int v = std::stoi(arg, &used);
            if (used != arg.size()) throw std::invalid_argument(arg);
            return v;
        } catch (const std::exception&) {
            throw InvalidArgument("bad defense spec '" + spec + "': " + what);
        }
    };

    if (head == "none") {
        if (!arg.empty()) throw InvalidArgument("bad defense spec '" + spec + "'");
        d.type = DefenseType::None;
    } else if (head == "rvq") {
        d.type = DefenseType::Rvq;
        if (arg.empty())
            throw InvalidArgument("bad defense spec '" + spec +
                                  "': rvq needs a depth, e.g. rvq:8");
        d.depth = arg_int("depth must be an integer");
        if (d.depth < 1 || d.depth > kMaxStages)
            throw InvalidArgument("rvq depth " + std::to_string(d.depth) +
                                  " outside [1, " + std::to_string(kMaxStages) +
                                  "]");
    } else if (head == "median") {
        d.type = DefenseType::Median;
        if (arg.empty())
            throw InvalidArgument("bad defense spec '" + spec +
                                  "': median needs a width, e.g. median:5");
        d.width = arg_int("width must be an integer");
        if (d.width < 3 || d.width % 2 == 0)
            throw InvalidArgument("median width " + std::to_string(d.width) +
                                  " must be odd and >= 3");
    } else if (head == "resample") {
        d.type = DefenseType::Resample;
        if (!arg.empty()) {
            d.factor = arg_int("factor must be an integer");
            if (d.factor != 2)
                throw InvalidArgument("resample factor " +
                                      std::to_string(d.factor) +
                                      " unsupported (only 2)");
        }
    } else {
        throw InvalidArgument("unknown defense '" + spec + "'");
    }
    return d;
}

std::string DefenseKind::str() const {
    switch (type) {
        case DefenseType::None: return "none";
        case DefenseType::Rvq: return "rvq:" + std::to_string(depth);
        case DefenseType::Median: return "median:" + std::to_string(width);
        case DefenseType::Resample: return "resample";
    }
    return "none";
}

std::vector<double> dct_matrix(int n) {
    if (n <= 0) throw InvalidArgument("dct_matrix: n must be positive");
    std::vector<double> t(static_cast<std::size_t>(n) * n);
    const double s0 = std::sqrt(1.0 / n);
    const double sk = std::sqrt(2.0 / n);
    for (int k = 0; k < n; ++k) {
        const double s = k == 0 ? s0 : sk;
        for (int i = 0; i < n; ++i)
            t[static_cast<std::size_t>(k) * n + i] =
                s * std::cos(M_PI * (2.0 * i + 1.0) * k / (2.0 * n));
    }
    return t;
}

RvqCodec train_codec(const signal::Corpus& corpus, int n_max, int k,
                     uint64_t seed, CodecTrainReport* report,
                     std::size_t fit_cap) {
    if (n_max < 1 || n_max > kMaxStages)
        throw InvalidArgument("n_max " + std::to_string(n_max) + " outside [1, " +
                              std::to_string(kMaxStages) + "]");
    if (k < 2) throw InvalidArgument("codebook size must be >= 2");

    const int dim = kLatentDim;
    const std::vector<double> dct = dct_matrix(dim);

    std::size_t n_frames = 0;
    for (const signal::Utterance& utt : corpus.utterances)
        n_frames += frames_in(utt.waveform.samples.size());

    const std::size_t need = static_cast<std::size_t>(50) * k;
    if (n_frames < need)
        throw InvalidArgument("train_codec: have " + std::to_string(n_frames) +
                              " frames, need " + std::to_string(need));

    // Fit on a seeded subsample when the corpus is large, selecting frame
    // indices before extraction so the full coefficient matrix never has to
    // exist. Codebooks stay deterministic for fixed (corpus, seed).
    std::size_t n_fit = n_frames;
    std::vector<std::size_t> chosen(n_frames);
    std::iota(chosen.begin(), chosen.end(), 0);
    if (fit_cap > 0 && n_frames > fit_cap) {
        Rng shuffle_rng(mix_seed(seed, 0xf17));
        for (std::size_t i = n_frames - 1; i > 0; --i) {
            const std::size_t j = shuffle_rng.uniform_index(i + 1);
            std::swap(chosen[i], chosen[j]);
        }
        n_fit = fit_cap;
        chosen.resize(n_fit);
        std::sort(chosen.begin(), chosen.end());
    }

    std::vector<double> fit(n_fit * dim, 0.0);
    {
        std::size_t cursor = 0;   // global frame index of current utterance
        std::size_t next = 0;     // position in chosen
        for (const signal::Utterance& utt : corpus.utterances) {
            const std::size_t count = frames_in(utt.waveform.samples.size());
            if (next < n_fit && chosen[next] < cursor + count) {
                const signal::FrameMatrix fm = signal::frame(utt.waveform);
                while (next < n_fit && chosen[next] < cursor + count) {
                    const std::size_t f = chosen[next] - cursor;
                    gemm_nt_acc(1, dim, dim, fm.row(f), dct.data(),
                                        fit.data() + next * dim);
                    ++next;
                }
            }
            cursor += count;
            if (next == n_fit) break;
        }
    }

    RvqCodec codec;
    codec.n_max = n_max;
    codec.k = k;
    codec.dim = dim;
    codec.seed = seed;
    codec.codebooks.assign(
        static_cast<std::size_t>(n_max) * k * dim, 0.0);

    if (report) {
        report->stage_energy.clear();
        report->fit_frames = n_fit;
    }

    KmeansScratch scratch;
    std::vector<double> residuals = std::move(fit);
    for (int s = 0; s < n_max; ++s) {
        fit_stage(residuals.data(), n_fit, k, dim, mix_seed(seed, s),
                  codec.stage(s), scratch);
        // Subtract each point's nearest centroid so the next stage fits what
        // this stage leaves behind.
        std::vector<double> cent_norm(k);
        for (int c = 0; c < k; ++c)
            cent_norm[c] = squared_norm(codec.centroid(s, c), dim);
        std::vector<int> toks(n_fit);
        parallel_for(n_fit, [&](std::size_t i) {
            const double* x = residuals.data() + i * dim;
            int best = 0;
            double best_score = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double score =
                    cent_norm[c] - 2.0 * dot_fast(x, codec.centroid(s, c), dim);
                if (score < best_score) {
                    best_score = score;
                    best = c;
                }
            }
            toks[i] = best;
        });
        double energy = 0.0;
        for (std::size_t i = 0; i < n_fit; ++i) {
            double* r = residuals.data() + i * dim;
            const double* cent = codec.centroid(s, toks[i]);
            for (int d = 0; d < dim; ++d) r[d] -= cent[d];
            energy += squared_norm(r, dim);
        }
        if (report)
            report->stage_energy.push_back(energy / static_cast<double>(n_fit));
    }
    return codec;
}

TokenGrid encode(const RvqCodec& codec, const signal::Waveform& w, int depth) {
    if (depth < 1 || depth > codec.n_max)
        throw InvalidArgument("encode depth " + std::to_string(depth) +
                              " outside [1, " + std::to_string(codec.n_max) + "]");
    const signal::FrameMatrix fm = signal::frame(w, codec.frame_width, codec.hop);
    const std::vector<double> dct = dct_matrix(codec.dim);

    TokenGrid tg;
    tg.frames = fm.frame_count;
    tg.depth = depth;
    tg.source_samples = fm.source_samples;
    tg.tokens.assign(fm.frame_count * depth, 0);

    parallel_for(fm.frame_count, [&](std::size_t f) {
        std::vector<double> residual(codec.dim, 0.0);
        gemm_nt_acc(1, codec.dim, codec.dim, fm.row(f), dct.data(),
                            residual.data());
        for (int s = 0; s < depth; ++s) {
            const int tok = nearest_centroid(residual.data(), codec.stage(s),
                                             codec.k, codec.dim);
            const double* cent = codec.centroid(s, tok);
            for (int d = 0; d < codec.dim; ++d) residual[d] -= cent[d];
            tg.at(f, s) = tok;
        }
    });
    return tg;
}

signal::Waveform decode(const RvqCodec& codec, const TokenGrid& tg) {
    if (tg.depth < 1 || tg.depth > codec.n_max)
        throw CorruptTokens("token grid depth " + std::to_string(tg.depth) +
                            " outside [1, " + std::to_string(codec.n_max) + "]");
    for (int tok : tg.tokens)
        if (tok < 0 || tok >= codec.k)
            throw CorruptTokens("token " + std::to_string(tok) +
                                " outside [0, " + std::to_string(codec.k) + ")");

    const std::vector<double> dct = dct_matrix(codec.dim);
    signal::FrameMatrix fm;
    fm.frame_count = tg.frames;
    fm.width = codec.frame_width;
    fm.hop = codec.hop;
    fm.window = signal::WindowKind::SqrtHann;
    fm.source_samples = tg.source_samples;
    fm.data.assign(tg.frames * codec.dim, 0.0);

    parallel_for(tg.frames, [&](std::size_t f) {
        std::vector<double> coeffs(codec.dim, 0.0);
        for (int s = 0; s < tg.depth; ++s) {
            const double* cent = codec.centroid(s, tg.at(f, s));
            for (int d = 0; d < codec.dim; ++d) coeffs[d] += cent[d];
        }
        gemm_nn_acc(1, codec.dim, codec.dim, coeffs.data(), dct.data(),
                            fm.row(f));
    });

    signal::Waveform out = signal::overlap_add(fm);
    for (double& v : out.samples) v = std::clamp(v, -1.0, 1.0);
    return out;
}

signal::Waveform median_filter(const signal::Waveform& w, int width) {
    if (width < 3 || width % 2 == 0)
        throw InvalidArgument("median width " + std::to_string(width) +
                              " must be odd and >= 3");
    const std::size_t n = w.samples.size();
    signal::Waveform out;
    out.sample_rate = w.sample_rate;
    out.samples.resize(n);
    const int half = width / 2;
    std::vector<double> window;
    window.reserve(width);
    for (std::size_t i = 0; i < n; ++i) {
        // Symmetric shrink near the edges keeps the window odd-sized, so the
        // median is always a single sample.
        const int r = std::min<long>({half, static_cast<long>(i),
                                      static_cast<long>(n - 1 - i)});
        window.assign(w.samples.begin() + (i - r), w.samples.begin() + (i + r + 1));
        std::nth_element(window.begin(), window.begin() + r, window.end());
        out.samples[i] = window[r];
    }
    return out;
}

namespace {

// 120-tap Hamming-windowed sinc low-pass at 0.45 of Nyquist (3600 Hz).
std::vector<double> lowpass_taps() {
    constexpr int kTaps = 120;
    const double fc = 0.45 * 0.5;  // cycles per sample
    const double center = (kTaps - 1) / 2.0;
    std::vector<double> h(kTaps);
    double sum = 0.0;
    for (int i = 0; i < kTaps; ++i) {
        const double t = i - center;
        const double sinc =
            t == 0.0 ? 2.0 * fc : std::sin(2.0 * M_PI * fc * t) / (M_PI * t);
        const double ham = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (kTaps - 1));
        h[i] = sinc * ham;
        sum += h[i];
    }
    for (double& v : h) v /= sum;  // unity DC gain
    return h;
}

std::vector<double> convolve_same_delay(const std::vector<double>& x,
                                        const std::vector<double>& h) {
    std::vector<double> y(x.size() + h.size() - 1, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        for (std::size_t j = 0; j < h.size(); ++j) y[i + j] += xi * h[j];
    }
    return y;
}

}  // namespace

signal::Waveform resample_defense(const signal::Waveform& w) {
    const std::vector<double> h = lowpass_taps();
    const std::size_t n = w.samples.size();

    // Anti-alias, decimate by 2, zero-stuff, interpolate with the same
    // filter (gain 2). Both filters run at the original rate, so the two
    // half-sample delays add up to the integer (taps - 1).
    const std::vector<double> lp = convolve_same_delay(w.samples, h);
    std::vector<double> stuffed(lp.size(), 0.0);
    for (std::size_t i = 0; i < lp.size(); i += 2) stuffed[i] = 2.0 * lp[i];
    const std::vector<double> up = convolve_same_delay(stuffed, h);

    const std::size_t delay = h.size() - 1;
    signal::Waveform out;
    out.sample_rate = w.sample_rate;
    out.samples.resize(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + delay;
        out.samples[i] = j < up.size() ? std::clamp(up[j], -1.0, 1.0) : 0.0;
    }
    return out;
}

signal::Waveform apply(const DefenseKind& d, const signal::Waveform& w,
                       const RvqCodec* codec) {
    switch (d.type) {
        case DefenseType::None:
            return w;
        case DefenseType::Rvq:
            if (!codec)
                throw InvalidArgument("defense rvq:" + std::to_string(d.depth) +
                                      " needs a codec");
            return decode(*codec, encode(*codec, w, d.depth));
        case DefenseType::Median:
            return median_filter(w, d.width);
        case DefenseType::Resample:
            return resample_defense(w);
    }
    throw InvalidArgument("unhandled defense kind");
}

double bitrate_kbps(const RvqCodec& codec, int depth) {
    if (depth < 1 || depth > codec.n_max)
        throw InvalidArgument("bitrate depth " + std::to_string(depth) +
                              " outside [1, " + std::to_string(codec.n_max) + "]");
    const double bits_per_frame = depth * std::log2(static_cast<double>(codec.k));
    const double frames_per_s =
        static_cast<double>(signal::kSampleRate) / codec.hop;
    return bits_per_frame * frames_per_s / 1000.0;
}

void save_codec(const RvqCodec& codec, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("rvq1: cannot open " + path + " for writing");
    os.write("RVQ1", 4);
    put_u32(os, static_cast<uint32_t>(codec.n_max));
    put_u32(os, static_cast<uint32_t>(codec.k));
    put_u32(os, static_cast<uint32_t>(codec.dim));
    put_u64(os, codec.seed);
    os.write(reinterpret_cast<const char*>(codec.codebooks.data()),
             static_cast<std::streamsize>(codec.codebooks.size() * sizeof(double)));
    if (!os) throw FormatError("rvq1: short write to " + path);
}

RvqCodec load_codec(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("rvq1: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "RVQ1", 4) != 0)
        throw FormatError("rvq1: magic mismatch in " + path);
    RvqCodec codec;
    codec.n_max = static_cast<int>(take_u32(is, "n_max"));
    codec.k = static_cast<int>(take_u32(is, "k"));
    codec.dim = static_cast<int>(take_u32(is, "dim"));
    codec.seed = take_u64(is, "seed");
    if (codec.n_max < 1 || codec.n_max > 4096 || codec.k < 1 ||
        codec.k > 1 << 20 || codec.dim < 1 || codec.dim > 1 << 20)
        throw FormatError("rvq1: implausible header in " + path);
    const std::size_t count = static_cast<std::size_t>(codec.n_max) *
                              codec.k * codec.dim;
    codec.codebooks.resize(count);
    if (!is.read(reinterpret_cast<char*>(codec.codebooks.data()),
                 static_cast<std::streamsize>(count * sizeof(double))))
        throw FormatError("rvq1: truncated centroid data in " + path);
    for (double v : codec.codebooks)
        if (!std::isfinite(v))
            throw FormatError("rvq1: non-finite centroid in " + path);
    return codec;
}

}  // namespace rvqlab::defense
