#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tsanet/signal.hpp"
#include "tsanet/tensor.hpp"

namespace tsanet {

constexpr int64_t kBaseT = 1024; // canonical patch width: 8 s at 128 Hz

/// 2D numerical representation of one segment: each row holds D consecutive
/// raw points, down-sampled to the canonical width T when D exceeds it.
struct Grid2D {
    int64_t rows = 0;
    int64_t width = 0;
    std::vector<double> values; // rows * width, row-major; row r starts at raw index r*D
    int64_t patch_size_D = 0;
    int64_t base_T = 0;
    int64_t downsample_factor = 1; // D/width, >= 1
};

/// Wraps a 1D sample sequence into a Grid2D at dynamic patch size D.
/// For D >= T each row mean-pools D points down to width T (D must be a
/// multiple of T); for D < T each row keeps its D points (width D). Trailing
/// points that do not fill a row are dropped.
Grid2D build_grid(const std::vector<double>& samples, int64_t D, int64_t T);
Grid2D build_grid(const Segment& seg, int64_t D, int64_t T);

/// k x k square tokens with their 2D positions and projected embeddings.
struct TokenGrid {
    int64_t token_rows = 0;
    int64_t token_cols = 0;
    int64_t k = 1;
    Tensor embeddings; // [token_rows*token_cols, d_model]
    std::vector<std::pair<int64_t, int64_t>> positions; // (row, col) per token
};

/// Learned linear projection of k*k squares to d_model plus additive learned
/// 2D positional embeddings (one table per token row, one per token column).
/// Edge remainders that do not fill a square are dropped.
class SquareTokenizer {
public:
    SquareTokenizer(int64_t grid_rows, int64_t grid_width, int64_t k, int64_t d_model, Rng& init);

    TokenGrid forward(const Grid2D& grid) const;
    /// Same tokenization over an arbitrary values tensor shaped like the grid
    /// (rank-2 [rows,width] or flat [rows*width]); lets gradients flow into
    /// the grid values themselves.
    TokenGrid forward(const Tensor& grid_values) const;

    int64_t token_rows() const { return token_rows_; }
    int64_t token_cols() const { return token_cols_; }
    int64_t token_count() const { return token_rows_ * token_cols_; }
    int64_t d_model() const { return d_model_; }

    std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const;

private:
    int64_t grid_rows_, grid_width_, k_, d_model_;
    int64_t token_rows_, token_cols_;
    std::vector<int64_t> square_idx_;   // gathers k*k squares into [n_tokens, k*k]
    std::vector<int64_t> row_pos_idx_;  // token -> row-embedding row
    std::vector<int64_t> col_pos_idx_;  // token -> col-embedding row
    Tensor w_proj_; // [k*k, d_model]
    Tensor b_proj_; // [d_model]
    Tensor row_emb_; // [token_rows, d_model]
    Tensor col_emb_; // [token_cols, d_model]
};

// ---------------------------------------------------------------------------
// Analytical attention-cost model
// ---------------------------------------------------------------------------

enum class AttentionVariant { full_1d, block_sparse, time_decay_sparse, tsa };

AttentionVariant attention_variant_from_string(const std::string& s);
std::string to_string(AttentionVariant v);

struct CostParams {
    int64_t block = 64;    // block_sparse: tokens attended per token
    int64_t budget = 64;   // time_decay_sparse: per-token neighborhood cap
    int64_t patch_D = kBaseT; // tsa: dynamic patch size
    int64_t base_T = kBaseT;  // tsa: canonical width
    int64_t k = 4;            // tsa: square side
};

struct CostModel {
    AttentionVariant variant;
    int64_t L = 0;
    uint64_t token_count = 0;
    uint64_t attention_pair_count = 0;
};

/// Closed-form token and attention-pair counts per variant:
///  - full_1d:            tokens = L, pairs = L^2
///  - block_sparse(b):    tokens = L, pairs = L*b
///  - time_decay_sparse:  tokens = L, pairs = sum_i n(i) with n(i) the dyadic
///    neighborhood {0, +-1, +-2, +-4, ...} clipped to the sequence and capped
///    at the budget B, so pairs <= L*B and density decays with distance
///  - tsa(D, T, k):       tokens = floor(rows/k)*floor(width/k) of the D-grid,
///    pairs = tokens^2
CostModel build_cost_model(AttentionVariant variant, int64_t L, const CostParams& params);

} // namespace tsanet
