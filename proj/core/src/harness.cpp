#include "rvqlab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rvqlab/asr.hpp"
#include "rvqlab/defense.hpp"
#include "rvqlab/error.hpp"
#include "rvqlab/parallel.hpp"
#include "rvqlab/rng.hpp"
#include "rvqlab/signal.hpp"

namespace rvqlab::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Standard error of the mean; 0 for fewer than two samples.
double sem_of(const std::vector<double>& v) {
    std::size_t n = v.size();
    if (n < 2) return 0.0;
    double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(n - 1)) /
           std::sqrt(static_cast<double>(n));
}

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("harness: cannot open " + path + " for writing");
    out << text;
    out.flush();
    if (!out) throw Error("harness: short write to " + path);
}

const char* const kConfigKeys[] = {
    "corpus_dir", "model_prefix", "codec_path", "out_dir",   "attack",
    "defenses",   "depths",       "epsilons",   "seeds",     "max_utterances",
    "iterations", "eot_samples",  "jitter_sigma"};

template <typename T>
void require_no_duplicates(const std::vector<T>& v, const char* what) {
    std::set<T> seen;
    for (const T& x : v)
        if (!seen.insert(x).second)
            throw InvalidArgument(std::string("config: duplicate entry in ") + what);
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("config: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
    if (!j.is_object()) throw FormatError("config: top level must be an object");
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* k : kConfigKeys) known = known || item.key() == k;
        if (!known) throw FormatError("config: unknown key '" + item.key() + "'");
    }
    ExperimentConfig cfg;
    try {
        cfg.corpus_dir = j.value("corpus_dir", cfg.corpus_dir);
        cfg.model_prefix = j.value("model_prefix", cfg.model_prefix);
        cfg.codec_path = j.value("codec_path", cfg.codec_path);
        cfg.out_dir = j.value("out_dir", cfg.out_dir);
        cfg.attack_kind = j.value("attack", cfg.attack_kind);
        cfg.defenses = j.value("defenses", cfg.defenses);
        cfg.depths = j.value("depths", cfg.depths);
        cfg.epsilons = j.value("epsilons", cfg.epsilons);
        cfg.seeds = j.value("seeds", cfg.seeds);
        cfg.max_utterances = j.value("max_utterances", cfg.max_utterances);
        cfg.iterations = j.value("iterations", cfg.iterations);
        cfg.eot_samples = j.value("eot_samples", cfg.eot_samples);
        cfg.jitter_sigma = j.value("jitter_sigma", cfg.jitter_sigma);
    } catch (const json::exception& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
    return cfg;
}

std::string ExperimentConfig::to_json() const {
    json j;
    j["corpus_dir"] = corpus_dir;
    j["model_prefix"] = model_prefix;
    j["codec_path"] = codec_path;
    j["out_dir"] = out_dir;
    j["attack"] = attack_kind;
    j["defenses"] = defenses;
    j["depths"] = depths;
    j["epsilons"] = epsilons;
    j["seeds"] = seeds;
    j["max_utterances"] = max_utterances;
    j["iterations"] = iterations;
    j["eot_samples"] = eot_samples;
    j["jitter_sigma"] = jitter_sigma;
    return j.dump(2) + "\n";
}

void ExperimentConfig::finalize() {
    if (attack_kind != "pgd" && attack_kind != "bpda")
        throw InvalidArgument("config: attack must be 'pgd' or 'bpda', got '" +
                              attack_kind + "'");
    if (epsilons.empty()) {
        epsilons = attack_kind == "pgd"
                       ? std::vector<double>{0.001, 0.005, 0.01, 0.02, 0.05}
                       : std::vector<double>{0.01, 0.02};
    }
    for (double e : epsilons)
        if (!(e > 0.0))
            throw InvalidArgument(
                "config: epsilons must be > 0 (the eps=0 baseline is implicit)");
    if (defenses.empty()) throw InvalidArgument("config: defenses is empty");
    if (depths.empty()) throw InvalidArgument("config: depths is empty");
    for (int d : depths)
        if (d < 1 || d > defense::kMaxStages)
            throw InvalidArgument("config: depth " + std::to_string(d) +
                                  " outside [1, " +
                                  std::to_string(defense::kMaxStages) + "]");
    if (seeds.empty()) throw InvalidArgument("config: seeds is empty");
    if (iterations < 1) throw InvalidArgument("config: iterations must be >= 1");
    if (eot_samples < 1)
        throw InvalidArgument("config: eot_samples must be >= 1");
    if (jitter_sigma < 0.0)
        throw InvalidArgument("config: jitter_sigma must be >= 0");
    require_no_duplicates(epsilons, "epsilons");
    require_no_duplicates(depths, "depths");
    require_no_duplicates(seeds, "seeds");
    require_no_duplicates(defenses, "defenses");
    bool any_rvq = false;
    for (const auto& spec : defenses) {
        if (spec == "rvq") {
            any_rvq = true;
            continue;  // expands over `depths` at sweep time
        }
        defense::DefenseKind k = defense::DefenseKind::parse(spec);
        any_rvq = any_rvq || k.type == defense::DefenseType::Rvq;
    }
    if (corpus_dir.empty() || model_prefix.empty() || out_dir.empty())
        throw InvalidArgument(
            "config: corpus_dir, model_prefix and out_dir are required");
    if (!fs::exists(fs::path(corpus_dir) / "manifest.jsonl"))
        throw InvalidArgument("config: no corpus manifest under " + corpus_dir);
    if (!fs::exists(model_prefix + ".cgpt"))
        throw InvalidArgument("config: no model at " + model_prefix + ".cgpt");
    if (any_rvq) {
        if (codec_path.empty())
            throw InvalidArgument("config: rvq defense needs codec_path");
        if (!fs::exists(codec_path))
            throw InvalidArgument("config: no codec at " + codec_path);
    }
}

namespace {

std::vector<defense::DefenseKind> expand_defenses(const ExperimentConfig& cfg) {
    std::vector<defense::DefenseKind> out;
    std::set<std::string> seen;
    auto push = [&](const defense::DefenseKind& k) {
        if (seen.insert(k.str()).second) out.push_back(k);
    };
    for (const auto& spec : cfg.defenses) {
        if (spec == "rvq") {
            for (int d : cfg.depths) {
                defense::DefenseKind k;
                k.type = defense::DefenseType::Rvq;
                k.depth = d;
                push(k);
            }
        } else {
            push(defense::DefenseKind::parse(spec));
        }
    }
    return out;
}

void write_aggregates_csv(const std::string& path,
                          const std::vector<AggregateRow>& aggs) {
    std::string text =
        "defense,depth,eps,attack,seed,n,mean_wer_clean,mean_wer_adv,"
        "sem_wer_adv,mean_delta_wer,sem_delta_wer,mean_ccr,sem_ccr,"
        "mean_snr_db\n";
    for (const auto& a : aggs) {
        text += csv_quote(a.defense);
        text += ',';
        if (a.depth >= 0) text += std::to_string(a.depth);
        text += ',';
        text += fmt_g(a.eps);
        text += ',';
        text += a.attack;
        text += ',';
        text += std::to_string(a.seed);
        text += ',';
        text += std::to_string(a.n);
        for (double v : {a.mean_wer_clean, a.mean_wer_adv, a.sem_wer_adv,
                         a.mean_delta_wer, a.sem_delta_wer, a.mean_ccr,
                         a.sem_ccr, a.mean_snr_db}) {
            text += ',';
            text += fmt_g(v);
        }
        text += '\n';
    }
    write_text(path, text);
}

void write_errors_csv(const std::string& path,
                      const std::vector<SweepError>& errors) {
    std::string text = "id,defense,eps,attack,seed,message\n";
    for (const auto& e : errors) {
        text += csv_quote(e.id);
        text += ',';
        text += csv_quote(e.defense);
        text += ',';
        text += fmt_g(e.eps);
        text += ',';
        text += e.attack;
        text += ',';
        text += std::to_string(e.seed);
        text += ',';
        text += csv_quote(e.message);
        text += '\n';
    }
    write_text(path, text);
}

}  // namespace

std::vector<AggregateRow> aggregate(
    const std::vector<metrics::EvalRecord>& rows) {
    struct Acc {
        std::vector<double> wc, wa, dw, cc, sn;
    };
    std::vector<AggregateRow> out;
    std::vector<Acc> accs;
    std::map<std::string, std::size_t> index;
    for (const auto& r : rows) {
        std::string key = r.defense + "\x1f" + std::to_string(r.depth) + "\x1f" +
                          fmt_g(r.eps) + "\x1f" + r.attack + "\x1f" +
                          std::to_string(r.seed);
        auto [it, fresh] = index.try_emplace(key, out.size());
        if (fresh) {
            AggregateRow a;
            a.defense = r.defense;
            a.depth = r.depth;
            a.eps = r.eps;
            a.attack = r.attack;
            a.seed = r.seed;
            out.push_back(a);
            accs.emplace_back();
        }
        Acc& acc = accs[it->second];
        acc.wc.push_back(r.wer_clean);
        acc.wa.push_back(r.wer_adv);
        acc.dw.push_back(r.delta_wer);
        acc.cc.push_back(r.ccr);
        acc.sn.push_back(r.snr_db);
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        const Acc& acc = accs[i];
        AggregateRow& a = out[i];
        a.n = acc.wa.size();
        a.mean_wer_clean = mean_of(acc.wc);
        a.mean_wer_adv = mean_of(acc.wa);
        a.sem_wer_adv = sem_of(acc.wa);
        a.mean_delta_wer = mean_of(acc.dw);
        a.sem_delta_wer = sem_of(acc.dw);
        a.mean_ccr = mean_of(acc.cc);
        a.sem_ccr = sem_of(acc.cc);
        a.mean_snr_db = mean_of(acc.sn);
    }
    return out;
}

SweepTable run_sweep(const ExperimentConfig& user_cfg) {
    ExperimentConfig cfg = user_cfg;
    cfg.finalize();
    fs::create_directories(cfg.out_dir);

    signal::Corpus corpus = signal::load_corpus(cfg.corpus_dir);
    if (corpus.utterances.empty())
        throw InvalidArgument("sweep: corpus at " + cfg.corpus_dir + " is empty");
    asr::AcousticModel model = asr::load_model(cfg.model_prefix);
    std::vector<defense::DefenseKind> kinds = expand_defenses(cfg);
    bool any_rvq = false;
    for (const auto& k : kinds)
        any_rvq = any_rvq || k.type == defense::DefenseType::Rvq;
    defense::RvqCodec codec;
    const defense::RvqCodec* codec_ptr = nullptr;
    if (any_rvq) {
        codec = defense::load_codec(cfg.codec_path);
        codec_ptr = &codec;
    }

    // Per-seed utterance subset. Seeds exist so repeated sweeps can vary
    // which utterances are measured without touching the attack math.
    std::vector<std::vector<std::size_t>> subsets(cfg.seeds.size());
    for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
        std::vector<std::size_t> idx(corpus.utterances.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        if (cfg.max_utterances > 0 && cfg.max_utterances < idx.size()) {
            Rng rng(mix_seed(cfg.seeds[si], 0x5e7ec7));
            for (std::size_t i = 0; i + 1 < idx.size(); ++i) {
                std::size_t j = i + static_cast<std::size_t>(
                                        rng.uniform_index(idx.size() - i));
                std::swap(idx[i], idx[j]);
            }
            idx.resize(cfg.max_utterances);
            std::sort(idx.begin(), idx.end());
        }
        subsets[si] = std::move(idx);
    }

    const bool is_bpda = cfg.attack_kind == "bpda";

    // Phase 1: attacks. PGD ignores the defense and the sweep seed, so its
    // results are shared across every (defense, seed) pair; BPDA goes
    // through the defense and is keyed on it.
    struct AttackTask {
        std::size_t utt = 0;
        double eps = 0.0;
        const defense::DefenseKind* kind = nullptr;
        uint64_t seed = 0;
    };
    struct AttackOut {
        bool ok = false;
        std::string err;
        signal::Waveform adv;
    };
    auto attack_key = [&](const defense::DefenseKind& kind, double eps,
                          uint64_t seed, std::size_t utt) {
        std::string k = fmt_g(eps) + "|" + std::to_string(utt);
        if (is_bpda) k += "|" + kind.str() + "|" + std::to_string(seed);
        return k;
    };
    std::vector<AttackTask> atasks;
    std::map<std::string, std::size_t> akey_index;
    for (const auto& kind : kinds)
        for (double eps : cfg.epsilons)
            for (std::size_t si = 0; si < cfg.seeds.size(); ++si)
                for (std::size_t utt : subsets[si]) {
                    std::string key = attack_key(kind, eps, cfg.seeds[si], utt);
                    if (akey_index.count(key)) continue;
                    akey_index[key] = atasks.size();
                    atasks.push_back({utt, eps, &kind, cfg.seeds[si]});
                }
    std::vector<AttackOut> aouts(atasks.size());
    parallel_for(atasks.size(), [&](std::size_t i) {
        const AttackTask& t = atasks[i];
        AttackOut& o = aouts[i];
        try {
            const auto& utt = corpus.utterances[t.utt];
            attack::AttackConfig ac;
            ac.epsilon = t.eps;
            ac.iterations = cfg.iterations;
            ac.eot_samples = cfg.eot_samples;
            ac.jitter_sigma = cfg.jitter_sigma;
            ac.seed = mix_seed(t.seed, utt.seed);
            attack::AttackResult r =
                is_bpda ? attack::bpda_eot(model, *t.kind, codec_ptr,
                                           utt.waveform, utt.transcript, ac)
                        : attack::pgd(model, utt.waveform, utt.transcript, ac);
            o.adv = std::move(r.adversarial);
            o.ok = true;
        } catch (const std::exception& e) {
            o.err = e.what();
        }
    });

    // Phase 2: clean pass per (defense, utterance): defended transcription
    // plus the clean token grid CCR compares against.
    struct CleanOut {
        bool ok = false;
        std::string err;
        double wer_clean = 0.0;
        defense::TokenGrid grid;
    };
    std::vector<std::pair<std::size_t, std::size_t>> ctasks;  // (kind, utt)
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> ckey_index;
    for (std::size_t ki = 0; ki < kinds.size(); ++ki)
        for (std::size_t si = 0; si < cfg.seeds.size(); ++si)
            for (std::size_t utt : subsets[si]) {
                auto key = std::make_pair(ki, utt);
                if (ckey_index.count(key)) continue;
                ckey_index[key] = ctasks.size();
                ctasks.push_back(key);
            }
    std::vector<CleanOut> couts(ctasks.size());
    parallel_for(ctasks.size(), [&](std::size_t i) {
        const auto& [ki, ui] = ctasks[i];
        CleanOut& o = couts[i];
        try {
            const auto& kind = kinds[ki];
            const auto& utt = corpus.utterances[ui];
            signal::Waveform defended;
            if (kind.type == defense::DefenseType::Rvq) {
                o.grid = defense::encode(codec, utt.waveform, kind.depth);
                defended = defense::decode(codec, o.grid);
            } else {
                defended = defense::apply(kind, utt.waveform, codec_ptr);
            }
            o.wer_clean =
                metrics::wer(utt.transcript, asr::transcribe(model, defended));
            o.ok = true;
        } catch (const std::exception& e) {
            o.err = e.what();
        }
    });

    // Phase 3: adversarial pass. PGD rows reuse one attack result across
    // seeds, so the evaluation is keyed without the seed in that case.
    struct AdvTask {
        std::size_t ki = 0;
        std::size_t utt = 0;
        double eps = 0.0;
        std::size_t attack_idx = 0;
        std::size_t clean_idx = 0;
    };
    struct AdvOut {
        bool ok = false;
        std::string err;
        double wer_adv = 0.0;
        double ccr = 0.0;
        double snr = 0.0;
    };
    auto adv_key = [&](std::size_t ki, double eps, uint64_t seed,
                       std::size_t utt) {
        std::string k =
            std::to_string(ki) + "|" + fmt_g(eps) + "|" + std::to_string(utt);
        if (is_bpda) k += "|" + std::to_string(seed);
        return k;
    };
    std::vector<AdvTask> dtasks;
    std::map<std::string, std::size_t> dkey_index;
    for (std::size_t ki = 0; ki < kinds.size(); ++ki)
        for (double eps : cfg.epsilons)
            for (std::size_t si = 0; si < cfg.seeds.size(); ++si)
                for (std::size_t utt : subsets[si]) {
                    std::string key = adv_key(ki, eps, cfg.seeds[si], utt);
                    if (dkey_index.count(key)) continue;
                    dkey_index[key] = dtasks.size();
                    AdvTask t;
                    t.ki = ki;
                    t.utt = utt;
                    t.eps = eps;
                    t.attack_idx =
                        akey_index.at(attack_key(kinds[ki], eps, cfg.seeds[si], utt));
                    t.clean_idx = ckey_index.at(std::make_pair(ki, utt));
                    dtasks.push_back(t);
                }
    std::vector<AdvOut> douts(dtasks.size());
    parallel_for(dtasks.size(), [&](std::size_t i) {
        const AdvTask& t = dtasks[i];
        AdvOut& o = douts[i];
        const AttackOut& a = aouts[t.attack_idx];
        const CleanOut& c = couts[t.clean_idx];
        if (!a.ok) {
            o.err = "attack failed: " + a.err;
            return;
        }
        try {
            const auto& kind = kinds[t.ki];
            const auto& utt = corpus.utterances[t.utt];
            signal::Waveform defended;
            if (kind.type == defense::DefenseType::Rvq) {
                if (!c.ok) {
                    o.err = "clean pass failed: " + c.err;
                    return;
                }
                defense::TokenGrid adv_grid =
                    defense::encode(codec, a.adv, kind.depth);
                defended = defense::decode(codec, adv_grid);
                o.ccr = metrics::ccr(c.grid, adv_grid);
            } else {
                defended = defense::apply(kind, a.adv, codec_ptr);
                o.ccr = 0.0;
            }
            o.wer_adv =
                metrics::wer(utt.transcript, asr::transcribe(model, defended));
            o.snr = metrics::snr_db(utt.waveform, a.adv);
            o.ok = true;
        } catch (const std::exception& e) {
            o.err = e.what();
        }
    });

    // Phase 4: assemble rows in config order; eps=0 baselines come straight
    // from the clean pass.
    SweepTable table;
    for (std::size_t ki = 0; ki < kinds.size(); ++ki) {
        const auto& kind = kinds[ki];
        std::vector<double> eps_all;
        eps_all.push_back(0.0);
        for (double e : cfg.epsilons) eps_all.push_back(e);
        for (double eps : eps_all) {
            for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
                for (std::size_t utt : subsets[si]) {
                    metrics::EvalRecord rec;
                    rec.id = corpus.utterances[utt].id;
                    rec.defense = kind.str();
                    rec.depth =
                        kind.type == defense::DefenseType::Rvq ? kind.depth : -1;
                    rec.eps = eps;
                    rec.attack = cfg.attack_kind;
                    rec.seed = cfg.seeds[si];
                    const CleanOut& c = couts[ckey_index.at({ki, utt})];
                    if (eps == 0.0) {
                        if (!c.ok) {
                            table.errors.push_back({rec.id, rec.defense, eps,
                                                    rec.attack, rec.seed, c.err});
                            continue;
                        }
                        rec.wer_clean = c.wer_clean;
                        rec.wer_adv = c.wer_clean;
                        rec.delta_wer = 0.0;
                        rec.ccr = 0.0;
                        rec.snr_db = 99.0;
                    } else {
                        const AdvOut& a =
                            douts[dkey_index.at(adv_key(ki, eps, cfg.seeds[si], utt))];
                        if (!c.ok || !a.ok) {
                            table.errors.push_back({rec.id, rec.defense, eps,
                                                    rec.attack, rec.seed,
                                                    c.ok ? a.err : c.err});
                            continue;
                        }
                        rec.wer_clean = c.wer_clean;
                        rec.wer_adv = a.wer_adv;
                        rec.delta_wer = a.wer_adv - c.wer_clean;
                        rec.ccr = a.ccr;
                        rec.snr_db = a.snr;
                    }
                    table.rows.push_back(std::move(rec));
                }
            }
        }
    }
    table.aggregates = aggregate(table.rows);

    fs::path out(cfg.out_dir);
    metrics::write_records_csv((out / "results.csv").string(), table.rows);
    write_aggregates_csv((out / "aggregates.csv").string(), table.aggregates);
    write_errors_csv((out / "errors.csv").string(), table.errors);
    write_text((out / "config.json").string(), cfg.to_json());
    json meta;
    meta["rows"] = table.rows.size();
    meta["errors"] = table.errors.size();
    meta["corpus_utterances"] = corpus.utterances.size();
    meta["defenses"] = kinds.size();
    meta["attack_tasks"] = atasks.size();
    write_text((out / "meta.json").string(), meta.dump(2) + "\n");
    return table;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

struct PooledPoint {
    int depth = 0;
    double eps = 0.0;
    double ccr = 0.0;
    double wer = 0.0;
    double dwer = 0.0;
    std::size_t n = 0;
};

// Means over all rvq rows with eps > 0, grouped by (eps, depth), pooled
// across seeds and utterances.
std::vector<PooledPoint> pool_rvq_points(const SweepTable& table) {
    struct Acc {
        double ccr = 0.0, wer = 0.0, dwer = 0.0;
        std::size_t n = 0;
    };
    std::map<std::pair<double, int>, Acc> groups;
    for (const auto& r : table.rows) {
        if (r.depth < 1 || !(r.eps > 0.0)) continue;
        Acc& a = groups[{r.eps, r.depth}];
        a.ccr += r.ccr;
        a.wer += r.wer_adv;
        a.dwer += r.delta_wer;
        a.n += 1;
    }
    std::vector<PooledPoint> pts;
    for (const auto& [key, a] : groups) {
        PooledPoint p;
        p.eps = key.first;
        p.depth = key.second;
        p.n = a.n;
        double inv = 1.0 / static_cast<double>(a.n);
        p.ccr = a.ccr * inv;
        p.wer = a.wer * inv;
        p.dwer = a.dwer * inv;
        pts.push_back(p);
    }
    return pts;
}

const char* kPalette[] = {"#44709d", "#c0504d", "#4f9d55", "#8064a2",
                          "#d9822b", "#4bacc6", "#9d6a4f", "#6b6b6b"};
constexpr std::size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

std::string num2(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string num3g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

struct LinMap {
    double lo = 0.0, hi = 1.0, p0 = 0.0, p1 = 1.0;
    double operator()(double v) const {
        return p0 + (v - lo) / (hi - lo) * (p1 - p0);
    }
};

void svg_text(std::string& svg, double x, double y, const std::string& s,
              const char* anchor = "middle", int size = 12,
              const char* extra = "") {
    svg += "<text x=\"" + num2(x) + "\" y=\"" + num2(y) +
           "\" font-size=\"" + std::to_string(size) +
           "\" font-family=\"sans-serif\" text-anchor=\"" + anchor + "\"" +
           extra + ">" + s + "</text>\n";
}

void svg_line(std::string& svg, double x1, double y1, double x2, double y2,
              const char* stroke = "#333333", const char* extra = "") {
    svg += "<line x1=\"" + num2(x1) + "\" y1=\"" + num2(y1) + "\" x2=\"" +
           num2(x2) + "\" y2=\"" + num2(y2) + "\" stroke=\"" + stroke + "\"" +
           extra + "/>\n";
}

// One panel: x is rvq depth, one polyline per epsilon.
void draw_depth_panel(
    std::string& svg, double px, double py, double pw, double ph,
    const std::vector<int>& depths,
    const std::vector<std::pair<double, std::vector<std::pair<int, double>>>>&
        series,
    const std::string& title, const std::string& ylabel) {
    double ymax = 0.0;
    for (const auto& [eps, pts] : series)
        for (const auto& [d, v] : pts) ymax = std::max(ymax, v);
    if (ymax <= 0.0) ymax = 1.0;
    ymax *= 1.08;
    LinMap xm{static_cast<double>(depths.front()),
              static_cast<double>(depths.back()), px, px + pw};
    LinMap ym{0.0, ymax, py + ph, py};

    svg += "<rect x=\"" + num2(px) + "\" y=\"" + num2(py) + "\" width=\"" +
           num2(pw) + "\" height=\"" + num2(ph) +
           "\" fill=\"none\" stroke=\"#333333\"/>\n";
    svg_text(svg, px + pw / 2, py - 10, title, "middle", 13,
             " font-weight=\"bold\"");

    for (int i = 0; i <= 4; ++i) {
        double v = ymax * i / 4.0;
        double y = ym(v);
        if (i > 0)
            svg_line(svg, px, y, px + pw, y, "#cccccc",
                     " stroke-dasharray=\"3,3\"");
        svg_line(svg, px - 4, y, px, y);
        svg_text(svg, px - 7, y + 4, num3g(v), "end", 10);
    }
    std::size_t step = depths.size() > 10 ? 2 : 1;
    for (std::size_t i = 0; i < depths.size(); i += step) {
        double x = xm(depths[i]);
        svg_line(svg, x, py + ph, x, py + ph + 4);
        svg_text(svg, x, py + ph + 16, std::to_string(depths[i]), "middle", 10);
    }
    svg_text(svg, px + pw / 2, py + ph + 32, "rvq depth", "middle", 11);
    svg_text(svg, px - 44, py + ph / 2, ylabel, "middle", 11,
             (" transform=\"rotate(-90 " + num2(px - 44) + " " +
              num2(py + ph / 2) + ")\"")
                 .c_str());

    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = kPalette[s % kPaletteSize];
        const auto& pts = series[s].second;
        std::string poly = "<polyline fill=\"none\" stroke=\"";
        poly += color;
        poly += "\" stroke-width=\"1.8\" points=\"";
        for (const auto& [d, v] : pts)
            poly += num2(xm(d)) + "," + num2(ym(v)) + " ";
        poly += "\"/>\n";
        svg += poly;
        for (const auto& [d, v] : pts)
            svg += "<circle cx=\"" + num2(xm(d)) + "\" cy=\"" + num2(ym(v)) +
                   "\" r=\"2.6\" fill=\"" + color + "\"/>\n";
    }
}

}  // namespace

DepthCurveSummary report_depth_curves(const SweepTable& table,
                                      const std::string& out_dir) {
    std::vector<PooledPoint> pts = pool_rvq_points(table);
    if (pts.empty())
        throw InvalidArgument("depth curves: no rvq rows with eps > 0");
    std::set<int> depth_set;
    std::set<double> eps_set;
    for (const auto& p : pts) {
        depth_set.insert(p.depth);
        eps_set.insert(p.eps);
    }
    if (depth_set.size() < 2)
        throw InvalidArgument("depth curves: need at least two rvq depths");

    DepthCurveSummary summary;
    summary.depths.assign(depth_set.begin(), depth_set.end());
    for (double eps : eps_set) {
        DepthCurveSummary::PerEps pe;
        pe.eps = eps;
        for (const auto& p : pts) {
            if (p.eps != eps) continue;
            pe.ccr_by_depth.emplace_back(p.depth, p.ccr);
            pe.wer_by_depth.emplace_back(p.depth, p.wer);
        }
        std::size_t best = 0;
        for (std::size_t i = 1; i < pe.wer_by_depth.size(); ++i)
            if (pe.wer_by_depth[i].second < pe.wer_by_depth[best].second)
                best = i;
        pe.argmin_depth = pe.wer_by_depth[best].first;
        pe.interior = pe.argmin_depth != pe.wer_by_depth.front().first &&
                      pe.argmin_depth != pe.wer_by_depth.back().first;
        summary.per_eps.push_back(std::move(pe));
    }

    json j;
    j["depths"] = summary.depths;
    json arr = json::array();
    for (const auto& pe : summary.per_eps) {
        json e;
        e["eps"] = pe.eps;
        e["argmin_depth"] = pe.argmin_depth;
        e["interior"] = pe.interior;
        e["ccr_by_depth"] = pe.ccr_by_depth;
        e["wer_by_depth"] = pe.wer_by_depth;
        arr.push_back(e);
    }
    j["per_eps"] = arr;
    fs::create_directories(out_dir);
    write_text((fs::path(out_dir) / "depth_curves.json").string(),
               j.dump(2) + "\n");

    std::string svg =
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"980\" "
        "height=\"430\" viewBox=\"0 0 980 430\">\n"
        "<rect width=\"980\" height=\"430\" fill=\"#ffffff\"/>\n";
    std::vector<std::pair<double, std::vector<std::pair<int, double>>>> ccr_s,
        wer_s;
    for (const auto& pe : summary.per_eps) {
        ccr_s.emplace_back(pe.eps, pe.ccr_by_depth);
        wer_s.emplace_back(pe.eps, pe.wer_by_depth);
    }
    draw_depth_panel(svg, 70, 50, 360, 300, summary.depths, ccr_s,
                     "codebook change rate", "mean ccr");
    draw_depth_panel(svg, 540, 50, 360, 300, summary.depths, wer_s,
                     "defended wer under attack", "mean wer");
    double ly = 410;
    double lx = 70;
    for (std::size_t s = 0; s < summary.per_eps.size(); ++s) {
        const char* color = kPalette[s % kPaletteSize];
        svg_line(svg, lx, ly - 4, lx + 22, ly - 4, color,
                 " stroke-width=\"2.5\"");
        svg_text(svg, lx + 28, ly, "eps=" + num3g(summary.per_eps[s].eps),
                 "start", 11);
        lx += 110;
    }
    svg += "</svg>\n";
    write_text((fs::path(out_dir) / "depth_curves.svg").string(), svg);
    return summary;
}

CorrelationReport report_correlation(const SweepTable& table,
                                     const std::string& out_dir) {
    std::vector<PooledPoint> pts = pool_rvq_points(table);
    if (pts.empty())
        throw InvalidArgument("correlation report: no rvq rows with eps > 0");

    CorrelationReport rep;
    rep.n_points = pts.size();
    std::vector<double> xs, ys;
    for (const auto& p : pts) {
        xs.push_back(p.ccr);
        ys.push_back(p.dwer);
    }
    try {
        rep.rho_overall = metrics::spearman(xs, ys);
    } catch (const UndefinedCorrelation&) {
    } catch (const InvalidArgument&) {
    }
    std::set<double> eps_set;
    for (const auto& p : pts) eps_set.insert(p.eps);
    for (double eps : eps_set) {
        std::vector<double> ex, ey;
        for (const auto& p : pts) {
            if (p.eps != eps) continue;
            ex.push_back(p.ccr);
            ey.push_back(p.dwer);
        }
        std::optional<double> rho;
        try {
            rho = metrics::spearman(ex, ey);
        } catch (const UndefinedCorrelation&) {
        } catch (const InvalidArgument&) {
        }
        rep.rho_per_eps.emplace_back(eps, rho);
    }

    json j;
    j["n_points"] = rep.n_points;
    if (rep.rho_overall)
        j["rho_overall"] = *rep.rho_overall;
    else
        j["rho_overall"] = nullptr;
    json arr = json::array();
    for (const auto& [eps, rho] : rep.rho_per_eps) {
        json e;
        e["eps"] = eps;
        if (rho)
            e["rho"] = *rho;
        else
            e["rho"] = nullptr;
        arr.push_back(e);
    }
    j["per_eps"] = arr;
    fs::create_directories(out_dir);
    write_text((fs::path(out_dir) / "correlation.json").string(),
               j.dump(2) + "\n");

    double xmax = 0.0, ymin = 0.0, ymax = 0.0;
    for (const auto& p : pts) {
        xmax = std::max(xmax, p.ccr);
        ymin = std::min(ymin, p.dwer);
        ymax = std::max(ymax, p.dwer);
    }
    if (xmax <= 0.0) xmax = 1.0;
    xmax *= 1.08;
    if (ymax <= ymin) ymax = ymin + 1.0;
    double pad = (ymax - ymin) * 0.08;
    ymax += pad;
    ymin -= pad;
    double px = 80, py = 40, pw = 380, ph = 320;
    LinMap xm{0.0, xmax, px, px + pw};
    LinMap ym{ymin, ymax, py + ph, py};
    std::string svg =
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"520\" "
        "height=\"440\" viewBox=\"0 0 520 440\">\n"
        "<rect width=\"520\" height=\"440\" fill=\"#ffffff\"/>\n";
    svg += "<rect x=\"" + num2(px) + "\" y=\"" + num2(py) + "\" width=\"" +
           num2(pw) + "\" height=\"" + num2(ph) +
           "\" fill=\"none\" stroke=\"#333333\"/>\n";
    svg_text(svg, px + pw / 2, py - 12, "token churn vs damage", "middle", 13,
             " font-weight=\"bold\"");
    for (int i = 0; i <= 4; ++i) {
        double v = ymin + (ymax - ymin) * i / 4.0;
        svg_line(svg, px - 4, ym(v), px, ym(v));
        svg_text(svg, px - 7, ym(v) + 4, num3g(v), "end", 10);
        double xv = xmax * i / 4.0;
        svg_line(svg, xm(xv), py + ph, xm(xv), py + ph + 4);
        svg_text(svg, xm(xv), py + ph + 16, num3g(xv), "middle", 10);
    }
    if (ymin < 0.0 && ymax > 0.0)
        svg_line(svg, px, ym(0.0), px + pw, ym(0.0), "#999999",
                 " stroke-dasharray=\"4,3\"");
    svg_text(svg, px + pw / 2, py + ph + 34, "mean ccr", "middle", 11);
    svg_text(svg, px - 52, py + ph / 2, "mean delta wer", "middle", 11,
             (" transform=\"rotate(-90 " + num2(px - 52) + " " +
              num2(py + ph / 2) + ")\"")
                 .c_str());
    std::vector<double> eps_sorted(eps_set.begin(), eps_set.end());
    for (const auto& p : pts) {
        std::size_t ei = 0;
        for (std::size_t i = 0; i < eps_sorted.size(); ++i)
            if (eps_sorted[i] == p.eps) ei = i;
        double r = 3.0 + 0.22 * p.depth;
        svg += "<circle cx=\"" + num2(xm(p.ccr)) + "\" cy=\"" +
               num2(ym(p.dwer)) + "\" r=\"" + num2(r) + "\" fill=\"" +
               kPalette[ei % kPaletteSize] +
               "\" fill-opacity=\"0.72\" stroke=\"#333333\" "
               "stroke-width=\"0.5\"/>\n";
    }
    double ly = 428, lx = 80;
    for (std::size_t i = 0; i < eps_sorted.size(); ++i) {
        svg += "<circle cx=\"" + num2(lx) + "\" cy=\"" + num2(ly - 4) +
               "\" r=\"5\" fill=\"" + std::string(kPalette[i % kPaletteSize]) +
               "\" fill-opacity=\"0.72\"/>\n";
        svg_text(svg, lx + 10, ly, "eps=" + num3g(eps_sorted[i]), "start", 11);
        lx += 100;
    }
    svg += "</svg>\n";
    write_text((fs::path(out_dir) / "correlation.svg").string(), svg);
    return rep;
}

BaselineTable report_baseline_table(const SweepTable& table, int matched_depth,
                                    double eps, const std::string& out_dir) {
    if (!(eps > 0.0))
        throw InvalidArgument("baseline table: eps must be > 0");
    std::vector<std::string> kinds_present;
    for (const auto& r : table.rows) {
        if (r.eps != eps) continue;
        if (std::find(kinds_present.begin(), kinds_present.end(), r.attack) ==
            kinds_present.end())
            kinds_present.push_back(r.attack);
    }
    if (kinds_present.empty())
        throw MissingConfig("baseline table: no rows at eps=" + fmt_g(eps));

    BaselineTable bt;
    for (const auto& atk : kinds_present) {
        // Category matchers in presentation order.
        struct Cat {
            std::string label;
            std::function<bool(const metrics::EvalRecord&)> match;
        };
        std::vector<Cat> cats;
        std::string rvq_label = "rvq:" + std::to_string(matched_depth);
        cats.push_back({rvq_label, [&, matched_depth](const metrics::EvalRecord& r) {
                            return r.depth == matched_depth;
                        }});
        cats.push_back({"median", [](const metrics::EvalRecord& r) {
                            return r.defense.rfind("median:", 0) == 0;
                        }});
        cats.push_back({"resample", [](const metrics::EvalRecord& r) {
                            return r.defense == "resample";
                        }});
        cats.push_back({"none", [](const metrics::EvalRecord& r) {
                            return r.defense == "none";
                        }});
        std::vector<std::string> absent;
        for (const auto& cat : cats) {
            std::vector<double> vals;
            std::string label = cat.label;
            for (const auto& r : table.rows) {
                if (r.attack != atk || r.eps != eps || !cat.match(r)) continue;
                vals.push_back(r.wer_adv);
                if (cat.label == "median") label = r.defense;
            }
            if (vals.empty()) {
                absent.push_back(cat.label);
                continue;
            }
            BaselineTable::Row row;
            row.attack = atk;
            row.defense = label;
            row.n = vals.size();
            row.mean_wer_adv = mean_of(vals);
            row.sem_wer_adv = sem_of(vals);
            bt.rows.push_back(std::move(row));
        }
        if (!absent.empty()) {
            std::string msg = "baseline table (" + atk + ", eps=" + fmt_g(eps) +
                              "): missing rows for";
            for (const auto& a : absent) msg += " " + a;
            throw MissingConfig(msg);
        }
    }

    std::string text = "attack,defense,eps,n,mean_wer_adv,sem_wer_adv\n";
    for (const auto& r : bt.rows) {
        text += r.attack;
        text += ',';
        text += csv_quote(r.defense);
        text += ',';
        text += fmt_g(eps);
        text += ',';
        text += std::to_string(r.n);
        text += ',';
        text += fmt_g(r.mean_wer_adv);
        text += ',';
        text += fmt_g(r.sem_wer_adv);
        text += '\n';
    }
    fs::create_directories(out_dir);
    write_text((fs::path(out_dir) / "baseline_table.csv").string(), text);
    return bt;
}

}  // namespace rvqlab::harness
