#include "tsanet/tsa.hpp"

#include <cmath>

#include "tsanet/errors.hpp"

namespace tsanet {

Grid2D build_grid(const std::vector<double>& samples, int64_t D, int64_t T) {
    const int64_t L = static_cast<int64_t>(samples.size());
    if (D < 1 || T < 1)
        throw ConfigError("build_grid: D and T must be >= 1, got D=" + std::to_string(D) +
                          " T=" + std::to_string(T));
    if (D > L)
        throw ConfigError("build_grid: patch size D=" + std::to_string(D) +
                          " exceeds segment length L=" + std::to_string(L));
    if (D > T && D % T != 0)
        throw ConfigError("build_grid: D=" + std::to_string(D) +
                          " must be an integer multiple of T=" + std::to_string(T));

    Grid2D g;
    g.patch_size_D = D;
    g.base_T = T;
    g.rows = L / D;
    if (D >= T) {
        g.width = T;
        g.downsample_factor = D / T;
    } else {
        g.width = D;
        g.downsample_factor = 1;
    }
    g.values.resize(static_cast<size_t>(g.rows * g.width));

    const int64_t f = g.downsample_factor;
    for (int64_t r = 0; r < g.rows; ++r) {
        const double* src = samples.data() + r * D;
        double* dst = g.values.data() + r * g.width;
        if (f == 1) {
            for (int64_t c = 0; c < g.width; ++c) dst[c] = src[c];
        } else {
            for (int64_t c = 0; c < g.width; ++c) {
                double s = 0.0;
                for (int64_t j = 0; j < f; ++j) s += src[c * f + j];
                dst[c] = s / static_cast<double>(f);
            }
        }
    }
    return g;
}

Grid2D build_grid(const Segment& seg, int64_t D, int64_t T) {
    return build_grid(seg.values, D, T);
}

// ---------------------------------------------------------------------------
// SquareTokenizer
// ---------------------------------------------------------------------------

SquareTokenizer::SquareTokenizer(int64_t grid_rows, int64_t grid_width, int64_t k, int64_t d_model,
                                 Rng& init)
    : grid_rows_(grid_rows), grid_width_(grid_width), k_(k), d_model_(d_model) {
    if (k < 1 || k > std::min(grid_rows, grid_width))
        throw ConfigError("tokenize_squares: k=" + std::to_string(k) +
                          " invalid for grid " + std::to_string(grid_rows) + "x" +
                          std::to_string(grid_width));
    if (d_model < 1) throw ConfigError("tokenize_squares: d_model must be >= 1");

    token_rows_ = grid_rows / k;
    token_cols_ = grid_width / k;

    const int64_t n_tokens = token_rows_ * token_cols_;
    square_idx_.reserve(static_cast<size_t>(n_tokens * k * k));
    row_pos_idx_.reserve(static_cast<size_t>(n_tokens));
    col_pos_idx_.reserve(static_cast<size_t>(n_tokens));
    for (int64_t tr = 0; tr < token_rows_; ++tr) {
        for (int64_t tc = 0; tc < token_cols_; ++tc) {
            for (int64_t dr = 0; dr < k; ++dr)
                for (int64_t dc = 0; dc < k; ++dc)
                    square_idx_.push_back((tr * k + dr) * grid_width + tc * k + dc);
            row_pos_idx_.push_back(tr);
            col_pos_idx_.push_back(tc);
        }
    }

    const double proj_std = 1.0 / std::sqrt(static_cast<double>(k * k));
    w_proj_ = Tensor::randn({k * k, d_model}, init, proj_std, true);
    b_proj_ = Tensor::zeros({d_model}, true);
    row_emb_ = Tensor::randn({token_rows_, d_model}, init, 0.02, true);
    col_emb_ = Tensor::randn({token_cols_, d_model}, init, 0.02, true);
}

TokenGrid SquareTokenizer::forward(const Tensor& grid_values) const {
    if (grid_values.numel() != grid_rows_ * grid_width_)
        throw ConfigError("tokenize_squares: grid values shape " + shape_str(grid_values.shape()) +
                          " does not match grid " + std::to_string(grid_rows_) + "x" +
                          std::to_string(grid_width_));

    const int64_t n_tokens = token_rows_ * token_cols_;
    // [n_tokens, k*k] square contents, then linear projection and 2D
    // positional embeddings indexed by (token row, token col).
    Tensor squares = gather(grid_values, square_idx_, {n_tokens, k_ * k_});
    Tensor emb = add_rowvec(matmul(squares, w_proj_), b_proj_);

    std::vector<int64_t> row_gather, col_gather;
    row_gather.reserve(static_cast<size_t>(n_tokens * d_model_));
    col_gather.reserve(static_cast<size_t>(n_tokens * d_model_));
    for (int64_t t = 0; t < n_tokens; ++t) {
        for (int64_t j = 0; j < d_model_; ++j) {
            row_gather.push_back(row_pos_idx_[static_cast<size_t>(t)] * d_model_ + j);
            col_gather.push_back(col_pos_idx_[static_cast<size_t>(t)] * d_model_ + j);
        }
    }
    emb = add(emb, gather(row_emb_, std::move(row_gather), {n_tokens, d_model_}));
    emb = add(emb, gather(col_emb_, std::move(col_gather), {n_tokens, d_model_}));

    TokenGrid out;
    out.token_rows = token_rows_;
    out.token_cols = token_cols_;
    out.k = k_;
    out.embeddings = emb;
    out.positions.reserve(static_cast<size_t>(n_tokens));
    for (int64_t t = 0; t < n_tokens; ++t)
        out.positions.emplace_back(row_pos_idx_[static_cast<size_t>(t)],
                                   col_pos_idx_[static_cast<size_t>(t)]);
    return out;
}

TokenGrid SquareTokenizer::forward(const Grid2D& grid) const {
    if (grid.rows != grid_rows_ || grid.width != grid_width_)
        throw ConfigError("tokenize_squares: grid " + std::to_string(grid.rows) + "x" +
                          std::to_string(grid.width) + " does not match tokenizer built for " +
                          std::to_string(grid_rows_) + "x" + std::to_string(grid_width_));
    return forward(Tensor::from_data({grid.rows, grid.width}, grid.values));
}

std::vector<std::pair<std::string, Tensor>> SquareTokenizer::named_parameters(
    const std::string& prefix) const {
    return {{prefix + ".w_proj", w_proj_},
            {prefix + ".b_proj", b_proj_},
            {prefix + ".row_emb", row_emb_},
            {prefix + ".col_emb", col_emb_}};
}

// ---------------------------------------------------------------------------
// Cost model
// ---------------------------------------------------------------------------

AttentionVariant attention_variant_from_string(const std::string& s) {
    if (s == "full_1d") return AttentionVariant::full_1d;
    if (s == "block_sparse") return AttentionVariant::block_sparse;
    if (s == "time_decay_sparse") return AttentionVariant::time_decay_sparse;
    if (s == "tsa") return AttentionVariant::tsa;
    throw ConfigError("unknown attention variant '" + s + "'");
}

std::string to_string(AttentionVariant v) {
    switch (v) {
        case AttentionVariant::full_1d: return "full_1d";
        case AttentionVariant::block_sparse: return "block_sparse";
        case AttentionVariant::time_decay_sparse: return "time_decay_sparse";
        case AttentionVariant::tsa: return "tsa";
    }
    throw ConfigError("unknown attention variant");
}

CostModel build_cost_model(AttentionVariant variant, int64_t L, const CostParams& params) {
    if (L <= 0) throw ConfigError("build_cost_model: L must be positive, got " + std::to_string(L));
    CostModel m;
    m.variant = variant;
    m.L = L;
    const uint64_t uL = static_cast<uint64_t>(L);
    switch (variant) {
        case AttentionVariant::full_1d:
            m.token_count = uL;
            m.attention_pair_count = uL * uL;
            break;
        case AttentionVariant::block_sparse: {
            if (params.block < 1) throw ConfigError("build_cost_model: block must be >= 1");
            m.token_count = uL;
            m.attention_pair_count = uL * static_cast<uint64_t>(params.block);
            break;
        }
        case AttentionVariant::time_decay_sparse: {
            if (params.budget < 1) throw ConfigError("build_cost_model: budget must be >= 1");
            m.token_count = uL;
            uint64_t pairs = 0;
            for (int64_t i = 0; i < L; ++i) {
                int64_t n_i = 1; // self
                for (int64_t off = 1; off < L; off *= 2) {
                    if (i - off >= 0) ++n_i;
                    if (i + off <= L - 1) ++n_i;
                }
                pairs += static_cast<uint64_t>(std::min(n_i, params.budget));
            }
            m.attention_pair_count = pairs;
            break;
        }
        case AttentionVariant::tsa: {
            if (params.k < 1) throw ConfigError("build_cost_model: k must be >= 1");
            // Reuses the Grid2D arithmetic: rows = floor(L/D), width = T or D.
            if (params.patch_D > L)
                throw ConfigError("build_cost_model: patch_D=" + std::to_string(params.patch_D) +
                                  " exceeds L=" + std::to_string(L));
            if (params.patch_D > params.base_T && params.patch_D % params.base_T != 0)
                throw ConfigError("build_cost_model: patch_D must be a multiple of base_T");
            const int64_t rows = L / params.patch_D;
            const int64_t width =
                params.patch_D >= params.base_T ? params.base_T : params.patch_D;
            const uint64_t tokens =
                static_cast<uint64_t>(rows / params.k) * static_cast<uint64_t>(width / params.k);
            m.token_count = tokens;
            m.attention_pair_count = tokens * tokens;
            break;
        }
    }
    return m;
}

} // namespace tsanet
