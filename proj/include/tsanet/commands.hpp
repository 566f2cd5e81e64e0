#pragma once

#include <string>
#include <vector>

#include "tsanet/experiment.hpp"

namespace tsanet {

/// Builds the working corpus for a config: synthesizes records in memory (or
/// loads the configured manifest), preprocesses to 128 Hz, and segments.
/// Deterministic for a fixed config.
std::vector<Segment> build_corpus(const ExperimentConfig& config);

/// Constructs the gated-MoE model the config describes; init flows from the
/// root seed.
MoeModel build_model(const ExperimentConfig& config);

/// Writes `content` to `path` via a temp file + rename.
void write_file_atomic(const std::string& path, const std::string& content);

// Subcommand bodies; each returns 0 on success and throws on failure
// (ConfigError -> exit 2, DataError -> 3, NumericError -> 4).

/// Writes waveform files and a manifest for the synthetic corpus.
int cmd_synth(const ExperimentConfig& config);

/// Loads a manifest, preprocesses every record to 128 Hz, writes the
/// preprocessed waveforms plus a new manifest, and reports segment counts.
int cmd_preprocess(const ExperimentConfig& config, const std::string& manifest_in);

/// Emits the attention-cost comparison CSV (variant,L,k_or_b,tokens,pairs)
/// across the configured signal lengths.
int cmd_tokenize_stats(const ExperimentConfig& config);

/// Full pipeline: corpus -> split -> train -> checkpoint + loss curve +
/// summary JSON.
int cmd_train(const ExperimentConfig& config);

/// Rebuilds the corpus and split, loads a checkpoint, evaluates the chosen
/// split, and writes metrics.json / metrics.csv / roc.csv.
int cmd_eval(const ExperimentConfig& config, const std::string& checkpoint_path,
             const std::string& split_name);

/// Computes ROC/AUC from a `score,label` CSV.
int cmd_roc(const ExperimentConfig& config, const std::string& scores_csv);

} // namespace tsanet
