#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tsanet {

enum class SignalSource { synthetic, file };

/// A labeled 1D waveform with sampling frequency and subject identity.
struct SignalRecord {
    std::string subject_id;
    std::vector<double> samples;
    double fs = 0.0; // Hz
    int label = 0;   // 1 = positive class
    SignalSource source = SignalSource::synthetic;
};

/// A fixed-length, z-normalized window cut from a preprocessed record.
struct Segment {
    std::string subject_id;
    std::vector<double> values;
    int label = 0;
    int64_t segment_index = 0;
};

/// Class-conditional generator knobs: mean heart rate, beat-interval jitter
/// (HRV magnitude, seconds), and additive noise level.
struct ClassParams {
    double rate_bpm = 60.0;
    double jitter_s = 0.05;
    double noise = 0.05;
};

constexpr double kTargetHz = 128.0;

/// Quasi-periodic pulse train: per-beat template pulses with jittered
/// beat-to-beat intervals, baseline wander, and additive noise.
/// Deterministic for a fixed seed.
SignalRecord generate_synthetic(const std::string& subject_id, double duration_s,
                                const ClassParams& params, int label, double fs, uint64_t seed);

/// Linear-interpolation resampling; output length = round(len * target/fs).
SignalRecord resample(const SignalRecord& rec, double target_hz);

/// Centered moving average with shrunken windows at the edges. Window must be
/// odd and >= 1; window 1 is the identity.
SignalRecord denoise(const SignalRecord& rec, int window);

/// Z-score over the whole record; constant records map to all-zeros.
SignalRecord normalize(const SignalRecord& rec);

/// resample(128) -> denoise -> normalize.
SignalRecord preprocess(const SignalRecord& rec, int denoise_window = 9,
                        double target_hz = kTargetHz);

/// Non-overlapping windows of duration_s * 128 samples; the trailing
/// remainder is dropped and each segment is re-normalized. Requires a record
/// already preprocessed to 128 Hz. A record shorter than one window yields
/// an empty list.
std::vector<Segment> segment(const SignalRecord& rec, double duration_s);

// ---------------------------------------------------------------------------
// Manifest and waveform files
// ---------------------------------------------------------------------------

struct ManifestEntry {
    std::string path;
    std::string subject_id;
    int label = 0;
    double fs = 0.0;
};

/// Newline-delimited `path,subject_id,label,fs` records with a `#version=1`
/// first line. Extra `#key=value` comment lines (e.g. `#seed=`) are allowed.
struct Manifest {
    int version = 1;
    bool has_seed = false;
    uint64_t seed = 0;
    std::vector<ManifestEntry> entries;
};

Manifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const Manifest& manifest);

/// Binary waveform format: magic "PPG1", u32 sampling rate, u64 sample
/// count (16-byte header), then little-endian 32-bit float samples.
void save_waveform(const std::string& path, const SignalRecord& rec);
SignalRecord load_waveform(const std::string& path, const std::string& subject_id, int label);

} // namespace tsanet
