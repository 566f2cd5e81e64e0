#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tsanet/moe.hpp"
#include "tsanet/signal.hpp"

namespace tsanet {

enum class OptimizerKind { sgd_momentum, adam };
enum class PatientAggregate { mean_score, majority_vote };

OptimizerKind optimizer_from_string(const std::string& s);
std::string to_string(OptimizerKind o);
PatientAggregate aggregate_from_string(const std::string& s);
std::string to_string(PatientAggregate a);

struct TrainConfig {
    int epochs = 30;
    int batch_size = 8;
    double lr = 1e-3;
    OptimizerKind optimizer = OptimizerKind::adam;
    uint64_t seed = 7;
    double train_frac = 0.6, val_frac = 0.2, test_frac = 0.2;
    double threshold = 0.5;
    PatientAggregate aggregate = PatientAggregate::mean_score;

    std::vector<std::string> check() const;
};

/// Subject-disjoint segment index lists. Subjects are stratified by label and
/// shuffled deterministically before assignment.
struct DatasetSplit {
    std::vector<int> train, val, test;
};

DatasetSplit split_by_subject(const std::vector<Segment>& segments, double train_frac,
                              double val_frac, double test_frac, uint64_t seed);

struct TrainResult {
    std::vector<double> batch_losses;                 // pre-update loss per batch, in order
    std::vector<std::pair<int, double>> val_auc;      // (epoch, held-out AUC)
    int best_epoch = -1;
    double best_val_auc = 0.0;
};

/// Minimizes binary cross-entropy of the ensemble score against labels with
/// per-batch gradient accumulation. Deterministic for a fixed seed. Keeps the
/// best-validation parameter snapshot and restores it at the end. Aborts with
/// NumericError on divergence (non-finite loss).
TrainResult train(MoeModel& model, const std::vector<Segment>& segments,
                  const DatasetSplit& split, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct ConfusionMatrix {
    int64_t tp = 0, fp = 0, tn = 0, fn = 0;

    int64_t total() const { return tp + fp + tn + fn; }
    double sensitivity() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn); }
    double specificity() const { return tn + fp == 0 ? 0.0 : static_cast<double>(tn) / static_cast<double>(tn + fp); }
    double accuracy() const { return total() == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(total()); }
};

ConfusionMatrix confusion_matrix(const std::vector<double>& scores, const std::vector<int>& labels,
                                 double threshold);

struct RocPoint {
    double threshold = 0.0;
    double fpr = 0.0;
    double tpr = 0.0;
};

struct RocResult {
    std::vector<RocPoint> points; // swept over all distinct score thresholds
    double auc = 0.0;             // trapezoidal; equals the Mann-Whitney statistic
};

/// Requires both classes present; ties contribute half weight, matching the
/// pairwise probability that a positive outranks a negative.
RocResult roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct EvalReport {
    ConfusionMatrix record_level;
    ConfusionMatrix patient_level;
    double sensitivity = 0.0; // record-level
    double specificity = 0.0;
    double accuracy = 0.0;
    bool has_roc = false; // false when only one class is present
    RocResult roc;        // over record-level scores
    double threshold = 0.5;
};

/// Metrics from per-segment scores: record-level counts from thresholding,
/// patient-level counts from per-subject aggregated scores (mean by default,
/// majority vote optionally). ROC/AUC are filled when both classes appear.
EvalReport evaluate_scores(const std::vector<double>& scores, const std::vector<int>& labels,
                           const std::vector<std::string>& subject_ids, double threshold,
                           PatientAggregate aggregate);

/// Runs the model over the segments and delegates to evaluate_scores.
EvalReport evaluate(const MoeModel& model, const std::vector<Segment>& segments,
                    double threshold = 0.5,
                    PatientAggregate aggregate = PatientAggregate::mean_score);

/// Stable-key JSON document for an EvalReport.
std::string eval_report_json(const EvalReport& report, uint64_t seed);
/// Metrics CSV: header + one row, columns sensitivity, accuracy, specificity, auc.
std::string eval_report_csv(const EvalReport& report, uint64_t seed);
/// ROC points CSV: threshold, fpr, tpr.
std::string roc_points_csv(const RocResult& roc, uint64_t seed);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Single-file checkpoint: magic "TSCK", u32 version, u32 entry count, then
/// per entry a length-prefixed name, u8 dtype (0 = f64), u64 element count,
/// and little-endian payload.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& params);

/// Loads into an existing parameter set; names and element counts must match
/// exactly (missing or unexpected entries are an error).
void load_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& params);

} // namespace tsanet
