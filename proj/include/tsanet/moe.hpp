#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tsanet/encoder.hpp"
#include "tsanet/signal.hpp"
#include "tsanet/tsa.hpp"

namespace tsanet {

constexpr int kGateBins = 64;
constexpr int kGateSummaryDim = kGateBins + 4; // bins + std, skew, min, max

enum class GateInput { summary, raw };

GateInput gate_input_from_string(const std::string& s);
std::string to_string(GateInput g);

/// Fixed-length gate summary of a segment: 64 chunk means concatenated with
/// (std, skewness, min, max). Deterministic.
std::vector<double> gate_features(const Segment& seg);
std::vector<double> gate_features(const std::vector<double>& values);

/// Softmax(x * W_g): x is [feature_dim], W_g is [feature_dim, n_experts];
/// returns the [n_experts] gate weight vector (nonnegative, sums to 1).
Tensor gate_forward(const Tensor& x, const Tensor& w_g);

/// Weighted ensemble y = sum_i gate_i * score_i over aligned [N] vectors.
Tensor moe_ensemble(const Tensor& gate, const Tensor& scores);

/// One expert pipeline at a fixed dynamic patch size.
struct ExpertSpec {
    int64_t patch_size_D = kBaseT;
    int64_t k = 4;
    EncoderConfig encoder;
};

struct ExpertOutput {
    int index = 0;
    double score = 0.0;       // E_i(x) in (0,1)
    double gate_weight = 0.0; // G(x)_i
};

/// Tokenizer + encoder + head for one dynamic patch size D.
class Expert {
public:
    Expert(const ExpertSpec& spec, int64_t segment_len, int64_t base_T, Rng& init);

    /// Scalar probability node for one segment.
    Tensor score(const Segment& seg) const;

    const ExpertSpec& spec() const { return spec_; }
    int64_t token_count() const { return tokenizer_.token_count(); }

    std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const;

private:
    ExpertSpec spec_;
    int64_t segment_len_, base_T_;
    SquareTokenizer tokenizer_;
    Encoder encoder_;
    ClassifierHead head_;
};

struct MoeOutput {
    Tensor y;      // scalar final score, convex combination of expert scores
    Tensor gate;   // [n_experts]
    Tensor scores; // [n_experts]
    std::vector<ExpertOutput> experts;
};

/// Softmax-gated dense mixture of TSA experts over dynamic patch sizes.
/// The gate reads either the 68-dim segment summary (default) or the raw
/// segment values, per the configured GateInput.
class MoeModel {
public:
    MoeModel(const std::vector<ExpertSpec>& specs, int64_t segment_len, int64_t base_T,
             GateInput gate_input, uint64_t init_seed);

    MoeOutput forward(const Segment& seg) const;

    int n_experts() const { return static_cast<int>(experts_.size()); }
    int64_t segment_len() const { return segment_len_; }
    const std::vector<Expert>& experts() const { return experts_; }
    GateInput gate_input() const { return gate_input_; }
    const Tensor& gate_weight_matrix() const { return w_gate_; }

    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<Tensor> parameters() const;

private:
    std::vector<Expert> experts_;
    int64_t segment_len_, base_T_;
    GateInput gate_input_;
    Tensor w_gate_; // [gate_dim, n_experts]
};

} // namespace tsanet
