#include "tsanet/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "tsanet/errors.hpp"

namespace tsanet {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int64_t x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + ": expected integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + ": expected number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: " + key + ": expected boolean, got '" + v + "'");
}

std::vector<int64_t> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int64_t> out;
    for (const auto& item : split_list(v)) out.push_back(parse_int(key, item));
    return out;
}

int64_t gcd64(int64_t a, int64_t b) { return b == 0 ? a : gcd64(b, a % b); }

} // namespace

int64_t parse_patch_size(const std::string& text, int64_t T) {
    const std::string t = trim(text);
    if (t.empty()) throw ConfigError("config: empty patch size");
    if (t == "T") return T;
    if (t.size() > 2 && t[0] == 'T' && t[1] == '/') {
        const int64_t div = parse_int("patch size", t.substr(2));
        if (div < 1 || T % div != 0)
            throw ConfigError("config: patch size " + t + " does not divide T=" + std::to_string(T));
        return T / div;
    }
    if (t.back() == 'T') {
        const int64_t mult = parse_int("patch size", t.substr(0, t.size() - 1));
        if (mult < 1) throw ConfigError("config: patch size " + t + " must be positive");
        return mult * T;
    }
    const int64_t d = parse_int("patch size", t);
    if (d < 1) throw ConfigError("config: patch size must be positive, got " + t);
    return d;
}

int64_t ExperimentConfig::segment_len() const {
    return static_cast<int64_t>(std::llround(preprocess.segment_s * kTargetHz));
}

// ---------------------------------------------------------------------------
// Expert resolution
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> expand_expert_names(const std::vector<std::string>& names) {
    if (names.size() == 1) {
        const std::string& n = names[0];
        if (n == "moe") return {"T/4", "T/2", "T", "2T", "4T"};
        if (n.rfind("single:", 0) == 0) return {n.substr(7)};
    }
    return names;
}

struct AutoPick {
    int64_t k = 1;
    int64_t window = 1;
};

// Deterministic joint (k, window) search for one grid: prefer hitting the
// preferred window exactly, then k close to 4, then the largest window, then
// the larger square (fewer tokens).
AutoPick resolve_auto(int64_t rows, int64_t width, int64_t preferred_window, bool windowed) {
    const int64_t k_max = std::min<int64_t>({rows, width, 64});
    AutoPick best;
    bool have = false;
    long long best_score[4] = {0, 0, 0, 0};
    for (int64_t k = 1; k <= k_max; ++k) {
        const int64_t tr = rows / k, tc = width / k;
        if (tr < 1 || tc < 1) break;
        int64_t w = 1;
        if (windowed) {
            const int64_t g = gcd64(tr, tc);
            for (int64_t cand = std::min(g, preferred_window); cand >= 1; --cand)
                if (g % cand == 0) {
                    w = cand;
                    break;
                }
        }
        long long score[4] = {windowed && w == preferred_window ? 0 : 1, std::llabs(k - 4), -w, -k};
        if (!have || std::lexicographical_compare(score, score + 4, best_score, best_score + 4)) {
            best = {k, w};
            std::copy(score, score + 4, best_score);
            have = true;
        }
    }
    return best;
}

} // namespace

std::vector<ExpertSpec> ExperimentConfig::resolve_experts() const {
    const auto names = expand_expert_names(tsa.experts);
    if (names.empty()) throw ConfigError("config: tsa.experts must name at least one patch size");
    const int64_t L = segment_len();
    const bool windowed = encoder.scope == AttentionScope::windowed;

    auto broadcast = [&](const std::vector<int64_t>& v, const char* what) {
        if (v.size() == 1) return std::vector<int64_t>(names.size(), v[0]);
        if (v.size() != names.size())
            throw ConfigError("config: " + std::string(what) + " list has " +
                              std::to_string(v.size()) + " entries for " +
                              std::to_string(names.size()) + " experts");
        return v;
    };

    std::vector<int64_t> k_list, w_list;
    if (!tsa.k_auto) k_list = broadcast(tsa.k, "tsa.k");
    if (!window_auto && !windows.empty()) w_list = broadcast(windows, "encoder.window");

    std::vector<ExpertSpec> specs;
    for (size_t i = 0; i < names.size(); ++i) {
        ExpertSpec spec;
        spec.patch_size_D = parse_patch_size(names[i], tsa.T);
        if (spec.patch_size_D > L)
            throw ConfigError("config: expert " + names[i] + " patch size " +
                              std::to_string(spec.patch_size_D) + " exceeds segment length " +
                              std::to_string(L));
        if (spec.patch_size_D > tsa.T && spec.patch_size_D % tsa.T != 0)
            throw ConfigError("config: expert " + names[i] + " patch size must be a multiple of T");
        const int64_t rows = L / spec.patch_size_D;
        const int64_t width = spec.patch_size_D >= tsa.T ? tsa.T : spec.patch_size_D;

        spec.encoder = encoder;
        if (tsa.k_auto) {
            const AutoPick pick = resolve_auto(rows, width, encoder.window, windowed);
            spec.k = pick.k;
            spec.encoder.window = windowed ? pick.window : encoder.window;
        } else {
            spec.k = k_list[i];
            if (window_auto && windowed && spec.k >= 1 && spec.k <= std::min(rows, width)) {
                // keep the explicit square; pick the largest feasible window
                // up to the configured preference
                const int64_t g = gcd64(rows / spec.k, width / spec.k);
                int64_t w = 1;
                for (int64_t cand = std::min(g, encoder.window); cand >= 1; --cand)
                    if (g % cand == 0) {
                        w = cand;
                        break;
                    }
                spec.encoder.window = w;
            } else {
                spec.encoder.window = w_list.empty() ? encoder.window : w_list[i];
            }
        }
        specs.push_back(std::move(spec));
    }
    return specs;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

std::vector<std::string> ExperimentConfig::check() const {
    std::vector<std::string> problems;

    if (signal.manifest.empty()) {
        if (signal.n_subjects < 1) problems.push_back("signal: n_subjects must be >= 1");
        if (signal.record_duration_s <= 0) problems.push_back("signal: record duration must be positive");
        if (signal.fs <= 0) problems.push_back("signal: fs must be positive");
        if (signal.pos.rate_bpm <= 0 || signal.neg.rate_bpm <= 0)
            problems.push_back("signal: class heart rates must be positive");
        if (signal.pos.jitter_s < 0 || signal.neg.jitter_s < 0 || signal.pos.noise < 0 ||
            signal.neg.noise < 0)
            problems.push_back("signal: jitter and noise must be nonnegative");
    }
    if (preprocess.denoise_window < 1 || preprocess.denoise_window % 2 == 0)
        problems.push_back("preprocess: denoise_window must be odd and >= 1");
    if (preprocess.segment_s <= 0) problems.push_back("preprocess: segment_s must be positive");
    if (tsa.T < 1) problems.push_back("tsa: T must be >= 1");
    if (tsa.stats_block < 1 || tsa.stats_budget < 1)
        problems.push_back("tsa: stats_block and stats_budget must be >= 1");

    auto train_problems = train.check();
    problems.insert(problems.end(), train_problems.begin(), train_problems.end());

    try {
        const auto specs = resolve_experts();
        const int64_t L = segment_len();
        for (size_t i = 0; i < specs.size(); ++i) {
            const auto& spec = specs[i];
            const int64_t rows = L / spec.patch_size_D;
            const int64_t width = spec.patch_size_D >= tsa.T ? tsa.T : spec.patch_size_D;
            if (spec.k < 1 || spec.k > std::min(rows, width)) {
                problems.push_back("expert " + std::to_string(i) + " (D=" +
                                   std::to_string(spec.patch_size_D) + "): k=" +
                                   std::to_string(spec.k) + " invalid for grid " +
                                   std::to_string(rows) + "x" + std::to_string(width));
                continue;
            }
            for (auto& p : spec.encoder.check(rows / spec.k, width / spec.k))
                problems.push_back("expert " + std::to_string(i) + " (D=" +
                                   std::to_string(spec.patch_size_D) + "): " + p);
        }
    } catch (const ConfigError& e) {
        problems.push_back(e.what());
    }
    return problems;
}

void ExperimentConfig::validate() const {
    auto problems = check();
    if (problems.empty()) return;
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

void ExperimentConfig::apply_override(const std::string& raw_key, const std::string& raw_value) {
    const std::string key = trim(raw_key);
    const std::string v = trim(raw_value);

    if (key == "seed") seed = static_cast<uint64_t>(parse_int(key, v));
    else if (key == "out_dir") out_dir = v;
    else if (key == "signal.n_subjects") signal.n_subjects = static_cast<int>(parse_int(key, v));
    else if (key == "signal.record_duration_s") signal.record_duration_s = parse_double(key, v);
    else if (key == "signal.fs") signal.fs = parse_double(key, v);
    else if (key == "signal.manifest") signal.manifest = v;
    else if (key == "signal.pos.rate_bpm") signal.pos.rate_bpm = parse_double(key, v);
    else if (key == "signal.pos.jitter_s") signal.pos.jitter_s = parse_double(key, v);
    else if (key == "signal.pos.noise") signal.pos.noise = parse_double(key, v);
    else if (key == "signal.neg.rate_bpm") signal.neg.rate_bpm = parse_double(key, v);
    else if (key == "signal.neg.jitter_s") signal.neg.jitter_s = parse_double(key, v);
    else if (key == "signal.neg.noise") signal.neg.noise = parse_double(key, v);
    else if (key == "preprocess.denoise_window") preprocess.denoise_window = static_cast<int>(parse_int(key, v));
    else if (key == "preprocess.segment_s") preprocess.segment_s = parse_double(key, v);
    else if (key == "tsa.T") tsa.T = parse_int(key, v);
    else if (key == "tsa.experts") {
        tsa.experts = split_list(v);
        if (tsa.experts.empty()) throw ConfigError("config: tsa.experts must not be empty");
    } else if (key == "tsa.k") {
        if (v == "auto") {
            tsa.k_auto = true;
            tsa.k.clear();
        } else {
            tsa.k_auto = false;
            tsa.k = parse_int_list(key, v);
            if (tsa.k.empty()) throw ConfigError("config: tsa.k must not be empty");
        }
    } else if (key == "tsa.stats_k") tsa.stats_k = parse_int_list(key, v);
    else if (key == "tsa.stats_block") tsa.stats_block = parse_int(key, v);
    else if (key == "tsa.stats_budget") tsa.stats_budget = parse_int(key, v);
    else if (key == "encoder.scope") encoder.scope = scope_from_string(v);
    else if (key == "encoder.depth") encoder.depth = static_cast<int>(parse_int(key, v));
    else if (key == "encoder.d_model") encoder.d_model = parse_int(key, v);
    else if (key == "encoder.heads") encoder.heads = static_cast<int>(parse_int(key, v));
    else if (key == "encoder.window") {
        if (v == "auto") {
            window_auto = true;
            windows.clear();
        } else {
            window_auto = false;
            windows = parse_int_list(key, v);
            if (windows.empty()) throw ConfigError("config: encoder.window must not be empty");
            encoder.window = windows[0];
        }
    } else if (key == "encoder.shift") encoder.shift = parse_bool(key, v);
    else if (key == "encoder.merge_stages") {
        encoder.merge_stages.clear();
        for (int64_t m : parse_int_list(key, v)) encoder.merge_stages.push_back(static_cast<int>(m));
    } else if (key == "encoder.mlp_ratio") encoder.mlp_ratio = parse_double(key, v);
    else if (key == "moe.gate_input") moe.gate_input = gate_input_from_string(v);
    else if (key == "train.epochs") train.epochs = static_cast<int>(parse_int(key, v));
    else if (key == "train.batch_size") train.batch_size = static_cast<int>(parse_int(key, v));
    else if (key == "train.lr") train.lr = parse_double(key, v);
    else if (key == "train.optimizer") train.optimizer = optimizer_from_string(v);
    else if (key == "train.train_frac") train.train_frac = parse_double(key, v);
    else if (key == "train.val_frac") train.val_frac = parse_double(key, v);
    else if (key == "train.test_frac") train.test_frac = parse_double(key, v);
    else if (key == "train.threshold") train.threshold = parse_double(key, v);
    else if (key == "train.aggregate") train.aggregate = aggregate_from_string(v);
    else
        throw ConfigError("config: unknown key '" + key + "'");

    if (key == "seed") train.seed = seed;
}

ExperimentConfig ExperimentConfig::defaults() { return ExperimentConfig{}; }

ExperimentConfig ExperimentConfig::from_entries(const std::map<std::string, std::string>& entries) {
    ExperimentConfig cfg;
    // Apply seed first so later keys cannot be clobbered by the train.seed sync.
    auto it = entries.find("seed");
    if (it != entries.end()) cfg.apply_override("seed", it->second);
    for (const auto& [k, v] : entries)
        if (k != "seed") cfg.apply_override(k, v);
    return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("config: cannot open " + path);
    std::map<std::string, std::string> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t comment = line.find('#');
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: " + path + ":" + std::to_string(lineno) +
                              ": expected key = value");
        entries[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return from_entries(entries);
}

std::string ExperimentConfig::to_kv_text() const {
    std::ostringstream out;
    out.precision(17);
    out << "seed = " << seed << "\n";
    out << "out_dir = " << out_dir << "\n";
    out << "signal.n_subjects = " << signal.n_subjects << "\n";
    out << "signal.record_duration_s = " << signal.record_duration_s << "\n";
    out << "signal.fs = " << signal.fs << "\n";
    if (!signal.manifest.empty()) out << "signal.manifest = " << signal.manifest << "\n";
    out << "signal.pos.rate_bpm = " << signal.pos.rate_bpm << "\n";
    out << "signal.pos.jitter_s = " << signal.pos.jitter_s << "\n";
    out << "signal.pos.noise = " << signal.pos.noise << "\n";
    out << "signal.neg.rate_bpm = " << signal.neg.rate_bpm << "\n";
    out << "signal.neg.jitter_s = " << signal.neg.jitter_s << "\n";
    out << "signal.neg.noise = " << signal.neg.noise << "\n";
    out << "preprocess.denoise_window = " << preprocess.denoise_window << "\n";
    out << "preprocess.segment_s = " << preprocess.segment_s << "\n";
    out << "tsa.T = " << tsa.T << "\n";
    out << "tsa.experts = ";
    for (size_t i = 0; i < tsa.experts.size(); ++i)
        out << (i ? "," : "") << tsa.experts[i];
    out << "\n";
    out << "tsa.k = ";
    if (tsa.k_auto)
        out << "auto";
    else
        for (size_t i = 0; i < tsa.k.size(); ++i) out << (i ? "," : "") << tsa.k[i];
    out << "\n";
    out << "encoder.scope = " << to_string(encoder.scope) << "\n";
    out << "encoder.depth = " << encoder.depth << "\n";
    out << "encoder.d_model = " << encoder.d_model << "\n";
    out << "encoder.heads = " << encoder.heads << "\n";
    out << "encoder.window = ";
    if (window_auto)
        out << "auto";
    else if (windows.empty())
        out << encoder.window;
    else
        for (size_t i = 0; i < windows.size(); ++i) out << (i ? "," : "") << windows[i];
    out << "\n";
    out << "encoder.shift = " << (encoder.shift ? "true" : "false") << "\n";
    if (!encoder.merge_stages.empty()) {
        out << "encoder.merge_stages = ";
        for (size_t i = 0; i < encoder.merge_stages.size(); ++i)
            out << (i ? "," : "") << encoder.merge_stages[i];
        out << "\n";
    }
    out << "encoder.mlp_ratio = " << encoder.mlp_ratio << "\n";
    out << "moe.gate_input = " << to_string(moe.gate_input) << "\n";
    out << "train.epochs = " << train.epochs << "\n";
    out << "train.batch_size = " << train.batch_size << "\n";
    out << "train.lr = " << train.lr << "\n";
    out << "train.optimizer = " << to_string(train.optimizer) << "\n";
    out << "train.train_frac = " << train.train_frac << "\n";
    out << "train.val_frac = " << train.val_frac << "\n";
    out << "train.test_frac = " << train.test_frac << "\n";
    out << "train.threshold = " << train.threshold << "\n";
    out << "train.aggregate = " << to_string(train.aggregate) << "\n";
    return out.str();
}

} // namespace tsanet
