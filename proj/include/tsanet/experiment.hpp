#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tsanet/moe.hpp"
#include "tsanet/signal.hpp"
#include "tsanet/train_eval.hpp"

namespace tsanet {

/// Parses patch-size shorthand relative to T: "T", "2T", "4T", "T/2", "T/4",
/// or a plain sample count.
int64_t parse_patch_size(const std::string& text, int64_t T);

struct SignalConfig {
    int n_subjects = 40;
    double record_duration_s = 600.0;
    double fs = 128.0; // generation rate; preprocessing always resamples to 128
    std::string manifest; // when set, load records from here instead of synthesizing
    ClassParams pos{85.0, 0.02, 0.05};
    ClassParams neg{60.0, 0.08, 0.05};
};

struct PreprocessConfig {
    int denoise_window = 9;
    double segment_s = 600.0;
};

struct TsaConfig {
    int64_t T = kBaseT;
    std::vector<std::string> experts{"T"}; // patch multipliers; "moe" expands to the 5 defaults
    bool k_auto = true;
    std::vector<int64_t> k; // explicit per-expert square sides (broadcast if single)
    std::vector<int64_t> stats_k{2, 3, 4, 5};
    int64_t stats_block = 64;
    int64_t stats_budget = 64;
};

struct MoeSettings {
    GateInput gate_input = GateInput::summary;
};

/// Flat key=value experiment configuration driving every subcommand. All
/// cross-module constraints are validated up front; check() reports every
/// violated constraint at once.
struct ExperimentConfig {
    uint64_t seed = 7;
    std::string out_dir = "runs/default";

    SignalConfig signal;
    PreprocessConfig preprocess;
    TsaConfig tsa;
    EncoderConfig encoder;              // shared encoder settings
    bool window_auto = false;           // resolve per-expert windows jointly with k
    std::vector<int64_t> windows;       // explicit per-expert windows (broadcast if single)
    MoeSettings moe;
    TrainConfig train;

    int64_t segment_len() const; // segment_s * 128

    /// Expert specs with per-expert k and window resolved. When k is "auto",
    /// picks for each patch size the (k, window) pair that first reaches the
    /// preferred window (encoder.window), then minimizes |k - 4|, then
    /// maximizes the window; deterministic.
    std::vector<ExpertSpec> resolve_experts() const;

    std::vector<std::string> check() const;
    void validate() const;

    void apply_override(const std::string& key, const std::string& value);

    static ExperimentConfig defaults();
    static ExperimentConfig from_file(const std::string& path);
    static ExperimentConfig from_entries(const std::map<std::string, std::string>& entries);

    std::string to_kv_text() const;
};

} // namespace tsanet
