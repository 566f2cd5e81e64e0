#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tsanet/tensor.hpp"
#include "tsanet/tsa.hpp"

namespace tsanet {

enum class AttentionScope { global, windowed };

AttentionScope scope_from_string(const std::string& s);
std::string to_string(AttentionScope s);

/// Scaled dot-product attention: Softmax(Q K^T / sqrt(d_k)) V.
/// Q is [n, d_k], K is [m, d_k], V is [m, d_v].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int64_t d_k);

struct EncoderConfig {
    AttentionScope scope = AttentionScope::windowed;
    int depth = 2;
    int64_t d_model = 16;
    int heads = 2;
    int64_t window = 2;  // tokens per window side (windowed only)
    bool shift = true;   // alternate half-window shifts on odd blocks (windowed only)
    std::vector<int> merge_stages; // merge after this many blocks (1-based counts)
    double mlp_ratio = 2.0;

    /// Every violated constraint for a token grid of the given shape;
    /// empty means valid.
    std::vector<std::string> check(int64_t token_rows, int64_t token_cols) const;
    void validate(int64_t token_rows, int64_t token_cols) const;
};

/// Window decomposition of a token grid: a row permutation grouping tokens by
/// window (after an optional cyclic half-window roll) plus the additive
/// attention mask that blocks pairs a shift would otherwise mix across the
/// rolled boundary.
struct WindowLayout {
    int64_t rows = 0, cols = 0, window = 0;
    int64_t n_windows = 0;
    bool shifted = false;
    std::vector<int64_t> fwd_rows; // window-grouped position -> token row index
    std::vector<int64_t> inv_rows; // token row index -> window-grouped position
    Tensor mask;                   // [n_windows, w*w, w*w] additive; undefined when not shifted
};

WindowLayout make_window_layout(int64_t rows, int64_t cols, int64_t window, bool shifted);

/// Multi-head self-attention over a token grid, either global or restricted
/// to (optionally shifted) windows.
class MultiheadAttention {
public:
    MultiheadAttention(int64_t d_model, int heads, Rng& init);

    /// Global attention over all tokens.
    Tensor forward(const Tensor& x) const;
    /// Windowed attention under the given layout.
    Tensor forward(const Tensor& x, const WindowLayout& layout) const;

    std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const;

private:
    Tensor project_heads_and_attend(const Tensor& q, const Tensor& k, const Tensor& v,
                                    const WindowLayout* layout) const;

    int64_t d_model_, d_head_;
    int heads_;
    Tensor wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
};

/// Post-norm transformer block:
/// x = LN(x + Attn(x)); x = LN(x + MLP(x)).
class EncoderBlock {
public:
    EncoderBlock(int64_t d_model, int heads, double mlp_ratio, Rng& init);

    Tensor forward(const Tensor& x, const WindowLayout* layout) const;
    std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const;

private:
    MultiheadAttention attn_;
    Tensor ln1_g_, ln1_b_, ln2_g_, ln2_b_;
    Tensor mlp_w1_, mlp_b1_, mlp_w2_, mlp_b2_;
};

/// Configurable 2D transformer encoder over token grids. Runs `depth` blocks
/// with the configured attention scope, merging 2x2 token neighborhoods
/// (halving each grid side, doubling d_model) at the configured stages, and
/// mean-pools the final tokens into one feature vector.
class Encoder {
public:
    Encoder(const EncoderConfig& config, int64_t token_rows, int64_t token_cols, Rng& init);

    /// tokens is [token_rows*token_cols, d_model]; returns [feature_dim].
    Tensor encode(const Tensor& tokens) const;

    int64_t feature_dim() const { return feature_dim_; }
    const EncoderConfig& config() const { return config_; }

    std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const;

private:
    struct MergeLayer {
        std::vector<int64_t> row_perm; // groups each 2x2 neighborhood into 4 adjacent rows
        Tensor w, b;
        int64_t in_rows, in_cols, in_dim;
    };

    EncoderConfig config_;
    int64_t token_rows_, token_cols_, feature_dim_;
    std::vector<EncoderBlock> blocks_;
    std::vector<int> block_stage_;              // stage index per block
    std::vector<int> merge_after_;              // merge layer index applied after block i, or -1
    std::vector<MergeLayer> merges_;
    std::vector<WindowLayout> plain_layouts_;   // per stage
    std::vector<WindowLayout> shifted_layouts_; // per stage (windowed+shift only)
    std::vector<bool> block_shifted_;
};

/// Two-layer MLP head ending in a single logit; probability is its sigmoid.
class ClassifierHead {
public:
    ClassifierHead(int64_t in_dim, int64_t hidden, Rng& init);

    Tensor logit(const Tensor& features) const;       // [in_dim] -> scalar
    Tensor probability(const Tensor& features) const; // sigmoid(logit), in (0,1)

    std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const;

private:
    int64_t in_dim_, hidden_;
    Tensor w1_, b1_, w2_, b2_;
};

} // namespace tsanet
