#include "rvqlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rvqlab/error.hpp"

namespace rvqlab::metrics {

std::size_t edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::size_t> prev(m + 1), cur(m + 1);
    std::iota(prev.begin(), prev.end(), 0);
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] != b[j - 1]);
            cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

double wer(const std::vector<int>& ref, const std::vector<int>& hyp) {
    if (ref.empty()) throw InvalidArgument("wer: empty reference");
    return static_cast<double>(edit_distance(ref, hyp)) /
           static_cast<double>(ref.size());
}

double ccr(const defense::TokenGrid& clean, const defense::TokenGrid& adv) {
    if (clean.frames != adv.frames || clean.depth != adv.depth)
        throw InvalidArgument(
            "ccr: grid shapes differ, " + std::to_string(clean.frames) + "x" +
            std::to_string(clean.depth) + " vs " + std::to_string(adv.frames) +
            "x" + std::to_string(adv.depth));
    if (clean.tokens.empty()) throw InvalidArgument("ccr: empty grid");
    std::size_t differing = 0;
    for (std::size_t i = 0; i < clean.tokens.size(); ++i)
        differing += clean.tokens[i] != adv.tokens[i];
    return static_cast<double>(differing) /
           static_cast<double>(clean.tokens.size());
}

double snr_db(const signal::Waveform& clean, const signal::Waveform& other) {
    if (clean.samples.size() != other.samples.size())
        throw InvalidArgument("snr: lengths differ, " +
                              std::to_string(clean.samples.size()) + " vs " +
                              std::to_string(other.samples.size()));
    double sig = 0.0, err = 0.0;
    for (std::size_t i = 0; i < clean.samples.size(); ++i) {
        sig += clean.samples[i] * clean.samples[i];
        const double d = clean.samples[i] - other.samples[i];
        err += d * d;
    }
    if (err == 0.0) return 99.0;
    if (sig == 0.0) return -99.0;
    return std::clamp(10.0 * std::log10(sig / err), -99.0, 99.0);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double mean_rank = (i + j) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size())
        throw InvalidArgument("spearman: length mismatch");
    if (xs.size() < 3)
        throw InvalidArgument("spearman: need at least 3 points, have " +
                              std::to_string(xs.size()));
    const std::vector<double> rx = average_ranks(xs);
    const std::vector<double> ry = average_ranks(ys);
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = rx[i] - mx, dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw UndefinedCorrelation("spearman: constant sequence");
    return sxy / std::sqrt(sxx * syy);
}

double delta_wer(const EvalRecord& rec, const std::vector<EvalRecord>& table) {
    for (const EvalRecord& row : table) {
        if (row.eps == 0.0 && row.id == rec.id && row.defense == rec.defense &&
            row.depth == rec.depth && row.seed == rec.seed)
            return rec.wer_adv - row.wer_adv;
    }
    throw MissingBaseline("no eps=0 baseline for (" + rec.id + ", " +
                          rec.defense + ", seed " + std::to_string(rec.seed) +
                          ")");
}

const char* const kEvalCsvHeader =
    "id,defense,depth,eps,attack,wer_clean,wer_adv,delta_wer,ccr,snr_db,seed";

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string to_csv_line(const EvalRecord& r) {
    std::ostringstream os;
    os << r.id << ',' << r.defense << ',';
    if (r.depth >= 0) os << r.depth;
    os << ',' << fmt_double(r.eps) << ',' << r.attack << ','
       << fmt_double(r.wer_clean) << ',' << fmt_double(r.wer_adv) << ','
       << fmt_double(r.delta_wer) << ',' << fmt_double(r.ccr) << ','
       << fmt_double(r.snr_db) << ',' << r.seed;
    return os.str();
}

void write_records_csv(const std::string& path,
                       const std::vector<EvalRecord>& records) {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    os << kEvalCsvHeader << '\n';
    for (const EvalRecord& r : records) os << to_csv_line(r) << '\n';
    if (!os) throw FormatError("short write to " + path);
}

std::vector<EvalRecord> read_records_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open " + path);
    std::string line;
    if (!std::getline(is, line) || line != kEvalCsvHeader)
        throw FormatError(path + ": bad header line");
    std::vector<EvalRecord> out;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i)
            if (i == line.size() || line[i] == ',') {
                cells.push_back(line.substr(start, i - start));
                start = i + 1;
            }
        if (cells.size() != 11)
            throw FormatError(path + ":" + std::to_string(line_no) +
                              ": expected 11 columns, got " +
                              std::to_string(cells.size()));
        auto num = [&](int idx, const char* col) {
            try {
                std::size_t used = 0;
                const double v = std::stod(cells[idx], &used);
                if (used != cells[idx].size()) throw std::invalid_argument("");
                return v;
            } catch (const std::exception&) {
                throw FormatError(path + ":" + std::to_string(line_no) +
                                  ": bad " + col + " value '" + cells[idx] +
                                  "'");
            }
        };
        EvalRecord r;
        r.id = cells[0];
        r.defense = cells[1];
        r.depth = cells[2].empty() ? -1 : static_cast<int>(num(2, "depth"));
        r.eps = num(3, "eps");
        r.attack = cells[4];
        r.wer_clean = num(5, "wer_clean");
        r.wer_adv = num(6, "wer_adv");
        r.delta_wer = num(7, "delta_wer");
        r.ccr = num(8, "ccr");
        r.snr_db = num(9, "snr_db");
        try {
            r.seed = std::stoull(cells[10]);
        } catch (const std::exception&) {
            throw FormatError(path + ":" + std::to_string(line_no) +
                              ": bad seed value '" + cells[10] + "'");
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace rvqlab::metrics
