#include "tsanet/signal.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tsanet/errors.hpp"
#include "tsanet/rng.hpp"

namespace tsanet {

namespace {

// Systolic peak plus a smaller dicrotic bump, both gaussian in time.
double pulse_template(double tau_s) {
    const double sys = std::exp(-0.5 * (tau_s - 0.12) * (tau_s - 0.12) / (0.030 * 0.030));
    const double dic = 0.35 * std::exp(-0.5 * (tau_s - 0.34) * (tau_s - 0.34) / (0.070 * 0.070));
    return sys + dic;
}

} // namespace

SignalRecord generate_synthetic(const std::string& subject_id, double duration_s,
                                const ClassParams& params, int label, double fs, uint64_t seed) {
    if (params.rate_bpm <= 0.0)
        throw ConfigError("generate_synthetic: heart rate must be positive, got " +
                          std::to_string(params.rate_bpm));
    if (duration_s <= 0.0)
        throw ConfigError("generate_synthetic: duration must be positive, got " +
                          std::to_string(duration_s));
    if (fs <= 0.0)
        throw ConfigError("generate_synthetic: sampling rate must be positive, got " +
                          std::to_string(fs));
    if (params.jitter_s < 0.0 || params.noise < 0.0)
        throw ConfigError("generate_synthetic: jitter and noise must be nonnegative");

    Rng rng(seed);
    const int64_t n = static_cast<int64_t>(std::llround(duration_s * fs));
    std::vector<double> x(static_cast<size_t>(n), 0.0);

    // Baseline wander (respiration-like).
    const double wander_hz = 0.04 + 0.02 * rng.uniform01();
    const double wander_phase = rng.uniform(0.0, 6.2831853071795862);
    for (int64_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / fs;
        x[static_cast<size_t>(i)] = 0.08 * std::sin(6.2831853071795862 * wander_hz * t + wander_phase);
    }

    // Pulse train with jittered beat-to-beat intervals.
    const double base_interval = 60.0 / params.rate_bpm;
    const double pulse_span = 0.60; // seconds of template support per beat
    double t_beat = rng.uniform(0.0, base_interval);
    while (t_beat < duration_s) {
        const double amp = 1.0 + 0.05 * rng.gauss();
        const int64_t i0 = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(t_beat * fs)));
        const int64_t i1 = std::min<int64_t>(n - 1, static_cast<int64_t>(std::floor((t_beat + pulse_span) * fs)));
        for (int64_t i = i0; i <= i1; ++i) {
            const double tau = static_cast<double>(i) / fs - t_beat;
            x[static_cast<size_t>(i)] += amp * pulse_template(tau);
        }
        double interval = base_interval + params.jitter_s * rng.gauss();
        interval = std::max(0.3, std::min(interval, 2.0 * base_interval));
        t_beat += interval;
    }

    if (params.noise > 0.0)
        for (auto& v : x) v += params.noise * rng.gauss();

    SignalRecord rec;
    rec.subject_id = subject_id;
    rec.samples = std::move(x);
    rec.fs = fs;
    rec.label = label;
    rec.source = SignalSource::synthetic;
    return rec;
}

SignalRecord resample(const SignalRecord& rec, double target_hz) {
    if (target_hz <= 0.0)
        throw ConfigError("resample: target rate must be positive, got " + std::to_string(target_hz));
    if (rec.samples.empty()) throw ConfigError("resample: empty input record");
    if (rec.fs <= 0.0) throw ConfigError("resample: record has invalid sampling rate");

    if (rec.fs == target_hz) return rec;

    const int64_t n_in = static_cast<int64_t>(rec.samples.size());
    const int64_t n_out = static_cast<int64_t>(std::llround(static_cast<double>(n_in) * target_hz / rec.fs));
    SignalRecord out = rec;
    out.fs = target_hz;
    out.samples.assign(static_cast<size_t>(n_out), 0.0);
    const double step = rec.fs / target_hz;
    for (int64_t i = 0; i < n_out; ++i) {
        double pos = static_cast<double>(i) * step;
        if (pos >= static_cast<double>(n_in - 1)) {
            out.samples[static_cast<size_t>(i)] = rec.samples[static_cast<size_t>(n_in - 1)];
            continue;
        }
        const int64_t lo = static_cast<int64_t>(pos);
        const double frac = pos - static_cast<double>(lo);
        out.samples[static_cast<size_t>(i)] =
            (1.0 - frac) * rec.samples[static_cast<size_t>(lo)] +
            frac * rec.samples[static_cast<size_t>(lo + 1)];
    }
    return out;
}

SignalRecord denoise(const SignalRecord& rec, int window) {
    if (window < 1 || window % 2 == 0)
        throw ConfigError("denoise: window must be odd and >= 1, got " + std::to_string(window));
    if (window == 1) return rec;

    const int64_t n = static_cast<int64_t>(rec.samples.size());
    const int64_t half = window / 2;
    SignalRecord out = rec;
    for (int64_t i = 0; i < n; ++i) {
        const int64_t lo = std::max<int64_t>(0, i - half);
        const int64_t hi = std::min<int64_t>(n - 1, i + half);
        double s = 0.0;
        for (int64_t j = lo; j <= hi; ++j) s += rec.samples[static_cast<size_t>(j)];
        out.samples[static_cast<size_t>(i)] = s / static_cast<double>(hi - lo + 1);
    }
    return out;
}

namespace {

void znormalize(std::vector<double>& v) {
    if (v.empty()) return;
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= n;
    const double std_dev = std::sqrt(var);
    if (std_dev < 1e-12) {
        std::fill(v.begin(), v.end(), 0.0);
        return;
    }
    for (auto& x : v) x = (x - mean) / std_dev;
}

} // namespace

SignalRecord normalize(const SignalRecord& rec) {
    SignalRecord out = rec;
    znormalize(out.samples);
    return out;
}

SignalRecord preprocess(const SignalRecord& rec, int denoise_window, double target_hz) {
    return normalize(denoise(resample(rec, target_hz), denoise_window));
}

std::vector<Segment> segment(const SignalRecord& rec, double duration_s) {
    if (rec.fs != kTargetHz)
        throw ConfigError("segment: record must be preprocessed to 128 Hz, got fs=" +
                          std::to_string(rec.fs));
    if (duration_s <= 0.0)
        throw ConfigError("segment: duration must be positive, got " + std::to_string(duration_s));

    const int64_t L = static_cast<int64_t>(std::llround(duration_s * kTargetHz));
    const int64_t n = static_cast<int64_t>(rec.samples.size());
    std::vector<Segment> segments;
    for (int64_t start = 0; start + L <= n; start += L) {
        Segment seg;
        seg.subject_id = rec.subject_id;
        seg.label = rec.label;
        seg.segment_index = static_cast<int64_t>(segments.size());
        seg.values.assign(rec.samples.begin() + start, rec.samples.begin() + start + L);
        znormalize(seg.values);
        segments.push_back(std::move(seg));
    }
    return segments;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("manifest: cannot open " + path);
    Manifest m;
    std::string line;
    bool saw_version = false;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (line.rfind("#version=", 0) == 0) {
                m.version = std::stoi(line.substr(9));
                saw_version = true;
            } else if (line.rfind("#seed=", 0) == 0) {
                m.seed = std::stoull(line.substr(6));
                m.has_seed = true;
            }
            continue;
        }
        std::stringstream ss(line);
        std::string path_field, subject, label_str, fs_str;
        if (!std::getline(ss, path_field, ',') || !std::getline(ss, subject, ',') ||
            !std::getline(ss, label_str, ',') || !std::getline(ss, fs_str))
            throw DataError("manifest: malformed line " + std::to_string(lineno) + " in " + path);
        ManifestEntry e;
        e.path = path_field;
        e.subject_id = subject;
        try {
            e.label = std::stoi(label_str);
            e.fs = std::stod(fs_str);
        } catch (const std::exception&) {
            throw DataError("manifest: bad numeric field at line " + std::to_string(lineno) +
                            " in " + path);
        }
        if (e.subject_id.empty())
            throw DataError("manifest: empty subject_id at line " + std::to_string(lineno));
        if (e.label != 0 && e.label != 1)
            throw DataError("manifest: label must be 0 or 1 at line " + std::to_string(lineno));
        m.entries.push_back(std::move(e));
    }
    if (!saw_version) throw DataError("manifest: missing #version line in " + path);
    if (m.version != 1)
        throw DataError("manifest: unsupported version " + std::to_string(m.version));
    return m;
}

void save_manifest(const std::string& path, const Manifest& manifest) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("manifest: cannot write " + path);
    out << "#version=" << manifest.version << "\n";
    if (manifest.has_seed) out << "#seed=" << manifest.seed << "\n";
    for (const auto& e : manifest.entries)
        out << e.path << "," << e.subject_id << "," << e.label << "," << e.fs << "\n";
    if (!out) throw DataError("manifest: write failed for " + path);
}

// ---------------------------------------------------------------------------
// Waveform binary format
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'P', 'P', 'G', '1'};

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
           static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

uint64_t get_u64(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

} // namespace

void save_waveform(const std::string& path, const SignalRecord& rec) {
    const double fs_rounded = std::round(rec.fs);
    if (rec.fs <= 0.0 || fs_rounded != rec.fs || rec.fs > 4294967295.0)
        throw ConfigError("save_waveform: fs must be a positive integer, got " +
                          std::to_string(rec.fs));
    std::string buf;
    buf.reserve(16 + rec.samples.size() * 4);
    buf.append(kMagic, 4);
    put_u32(buf, static_cast<uint32_t>(fs_rounded));
    put_u64(buf, static_cast<uint64_t>(rec.samples.size()));
    for (double v : rec.samples) {
        const uint32_t bits = std::bit_cast<uint32_t>(static_cast<float>(v));
        put_u32(buf, bits);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("save_waveform: cannot write " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("save_waveform: write failed for " + path);
}

SignalRecord load_waveform(const std::string& path, const std::string& subject_id, int label) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_waveform: cannot open " + path);
    unsigned char header[16];
    in.read(reinterpret_cast<char*>(header), 16);
    if (in.gcount() != 16 || std::memcmp(header, kMagic, 4) != 0)
        throw DataError("load_waveform: bad header in " + path);
    const uint32_t fs = get_u32(header + 4);
    const uint64_t count = get_u64(header + 8);
    std::vector<unsigned char> raw(static_cast<size_t>(count) * 4);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<uint64_t>(in.gcount()) != raw.size())
        throw DataError("load_waveform: truncated sample data in " + path);

    SignalRecord rec;
    rec.subject_id = subject_id;
    rec.label = label;
    rec.fs = static_cast<double>(fs);
    rec.source = SignalSource::file;
    rec.samples.resize(static_cast<size_t>(count));
    for (uint64_t i = 0; i < count; ++i) {
        const uint32_t bits = get_u32(raw.data() + i * 4);
        rec.samples[static_cast<size_t>(i)] = static_cast<double>(std::bit_cast<float>(bits));
    }
    return rec;
}

} // namespace tsanet
