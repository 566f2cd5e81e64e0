#include "tsanet/encoder.hpp"

#include <cmath>

#include "tsanet/errors.hpp"

namespace tsanet {

AttentionScope scope_from_string(const std::string& s) {
    if (s == "global") return AttentionScope::global;
    if (s == "windowed") return AttentionScope::windowed;
    throw ConfigError("unknown attention scope '" + s + "'");
}

std::string to_string(AttentionScope s) {
    return s == AttentionScope::global ? "global" : "windowed";
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int64_t d_k) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != d_k || k.dim(1) != d_k ||
        k.dim(0) != v.dim(0))
        throw ConfigError("attention: incompatible shapes q=" + shape_str(q.shape()) +
                          " k=" + shape_str(k.shape()) + " v=" + shape_str(v.shape()) +
                          " d_k=" + std::to_string(d_k));
    Tensor scores = mul_scalar(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d_k)));
    return matmul(softmax(scores, 1), v);
}

// ---------------------------------------------------------------------------
// EncoderConfig validation
// ---------------------------------------------------------------------------

std::vector<std::string> EncoderConfig::check(int64_t token_rows, int64_t token_cols) const {
    std::vector<std::string> problems;
    if (token_rows < 1 || token_cols < 1)
        problems.push_back("encoder: token grid " + std::to_string(token_rows) + "x" +
                           std::to_string(token_cols) + " is empty");
    if (depth < 0) problems.push_back("encoder: depth must be >= 0");
    if (d_model < 1) problems.push_back("encoder: d_model must be >= 1");
    if (heads < 1) problems.push_back("encoder: heads must be >= 1");
    if (heads >= 1 && d_model >= 1 && d_model % heads != 0)
        problems.push_back("encoder: d_model=" + std::to_string(d_model) +
                           " not divisible by heads=" + std::to_string(heads));
    if (mlp_ratio <= 0.0) problems.push_back("encoder: mlp_ratio must be positive");

    int prev = 0;
    for (int m : merge_stages) {
        if (m < 1 || m > depth)
            problems.push_back("encoder: merge stage " + std::to_string(m) +
                               " outside [1, depth=" + std::to_string(depth) + "]");
        if (m <= prev)
            problems.push_back("encoder: merge stages must be strictly increasing");
        prev = m;
    }

    // Walk the stages, checking window divisibility and merge parity.
    int64_t r = token_rows, c = token_cols;
    const size_t n_stages = merge_stages.size() + 1;
    for (size_t s = 0; s < n_stages; ++s) {
        if (scope == AttentionScope::windowed && depth > 0) {
            if (window < 1) {
                problems.push_back("encoder: window must be >= 1");
                break;
            }
            if (window > std::min(r, c))
                problems.push_back("encoder: window=" + std::to_string(window) +
                                   " exceeds token grid " + std::to_string(r) + "x" +
                                   std::to_string(c) + " at stage " + std::to_string(s));
            else if (r % window != 0 || c % window != 0)
                problems.push_back("encoder: window=" + std::to_string(window) +
                                   " does not divide token grid " + std::to_string(r) + "x" +
                                   std::to_string(c) + " at stage " + std::to_string(s));
        }
        if (s + 1 < n_stages) {
            if (r % 2 != 0 || c % 2 != 0) {
                problems.push_back("encoder: merge after block " +
                                   std::to_string(merge_stages[s]) + " needs even token grid, got " +
                                   std::to_string(r) + "x" + std::to_string(c));
                break;
            }
            r /= 2;
            c /= 2;
        }
    }
    return problems;
}

void EncoderConfig::validate(int64_t token_rows, int64_t token_cols) const {
    auto problems = check(token_rows, token_cols);
    if (problems.empty()) return;
    std::string msg = "invalid encoder config:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
}

// ---------------------------------------------------------------------------
// Window layout
// ---------------------------------------------------------------------------

WindowLayout make_window_layout(int64_t rows, int64_t cols, int64_t window, bool shifted) {
    if (window < 1 || rows % window != 0 || cols % window != 0)
        throw ConfigError("window_partition: window=" + std::to_string(window) +
                          " does not divide token grid " + std::to_string(rows) + "x" +
                          std::to_string(cols));
    WindowLayout layout;
    layout.rows = rows;
    layout.cols = cols;
    layout.window = window;
    layout.shifted = shifted;
    const int64_t br = rows / window, bc = cols / window;
    layout.n_windows = br * bc;
    const int64_t n = rows * cols;
    const int64_t s = shifted ? window / 2 : 0;

    layout.fwd_rows.resize(static_cast<size_t>(n));
    layout.inv_rows.resize(static_cast<size_t>(n));
    int64_t p = 0;
    for (int64_t bi = 0; bi < br; ++bi) {
        for (int64_t bj = 0; bj < bc; ++bj) {
            for (int64_t di = 0; di < window; ++di) {
                for (int64_t dj = 0; dj < window; ++dj) {
                    // Roll the grid up-left by s before partitioning.
                    const int64_t i = bi * window + di;
                    const int64_t j = bj * window + dj;
                    const int64_t oi = (i + s) % rows;
                    const int64_t oj = (j + s) % cols;
                    const int64_t orig = oi * cols + oj;
                    layout.fwd_rows[static_cast<size_t>(p)] = orig;
                    layout.inv_rows[static_cast<size_t>(orig)] = p;
                    ++p;
                }
            }
        }
    }

    if (shifted && s > 0) {
        // Region labels in rolled coordinates; pairs from different regions
        // were not neighbors before the roll and must not attend each other.
        // An axis fully covered by the window gains no new pairs from the
        // roll, so it contributes a single region.
        auto label = [&](int64_t idx, int64_t extent) {
            if (extent == window) return 0;
            if (idx < extent - window) return 0;
            if (idx < extent - s) return 1;
            return 2;
        };
        const int64_t ww = window * window;
        std::vector<double> mask(static_cast<size_t>(layout.n_windows * ww * ww), 0.0);
        std::vector<int> ids(static_cast<size_t>(ww));
        int64_t w_idx = 0;
        for (int64_t bi = 0; bi < br; ++bi) {
            for (int64_t bj = 0; bj < bc; ++bj) {
                int64_t q = 0;
                for (int64_t di = 0; di < window; ++di)
                    for (int64_t dj = 0; dj < window; ++dj)
                        ids[static_cast<size_t>(q++)] =
                            3 * label(bi * window + di, rows) + label(bj * window + dj, cols);
                double* m = mask.data() + w_idx * ww * ww;
                for (int64_t a = 0; a < ww; ++a)
                    for (int64_t b = 0; b < ww; ++b)
                        if (ids[static_cast<size_t>(a)] != ids[static_cast<size_t>(b)])
                            m[a * ww + b] = -1e9;
                ++w_idx;
            }
        }
        layout.mask = Tensor::from_data({layout.n_windows, ww, ww}, std::move(mask));
    }
    return layout;
}

namespace {

std::vector<int64_t> expand_rows(const std::vector<int64_t>& row_perm, int64_t d,
                                 int64_t col_offset = 0, int64_t src_width = -1) {
    const int64_t width = src_width < 0 ? d : src_width;
    std::vector<int64_t> idx;
    idx.reserve(row_perm.size() * static_cast<size_t>(d));
    for (int64_t r : row_perm)
        for (int64_t j = 0; j < d; ++j) idx.push_back(r * width + col_offset + j);
    return idx;
}

std::vector<int64_t> iota_rows(int64_t n) {
    std::vector<int64_t> v(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i)] = i;
    return v;
}

} // namespace

// ---------------------------------------------------------------------------
// MultiheadAttention
// ---------------------------------------------------------------------------

MultiheadAttention::MultiheadAttention(int64_t d_model, int heads, Rng& init)
    : d_model_(d_model), d_head_(d_model / heads), heads_(heads) {
    if (heads < 1 || d_model % heads != 0)
        throw ConfigError("attention: d_model=" + std::to_string(d_model) +
                          " not divisible by heads=" + std::to_string(heads));
    const double std = 1.0 / std::sqrt(static_cast<double>(d_model));
    wq_ = Tensor::randn({d_model, d_model}, init, std, true);
    bq_ = Tensor::zeros({d_model}, true);
    wk_ = Tensor::randn({d_model, d_model}, init, std, true);
    bk_ = Tensor::zeros({d_model}, true);
    wv_ = Tensor::randn({d_model, d_model}, init, std, true);
    bv_ = Tensor::zeros({d_model}, true);
    wo_ = Tensor::randn({d_model, d_model}, init, std, true);
    bo_ = Tensor::zeros({d_model}, true);
}

Tensor MultiheadAttention::project_heads_and_attend(const Tensor& q, const Tensor& k,
                                                    const Tensor& v,
                                                    const WindowLayout* layout) const {
    const int64_t n = q.dim(0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_head_));

    std::vector<Tensor> head_outs;
    head_outs.reserve(static_cast<size_t>(heads_));
    for (int h = 0; h < heads_; ++h) {
        const int64_t off = static_cast<int64_t>(h) * d_head_;
        if (layout == nullptr) {
            auto slice = expand_rows(iota_rows(n), d_head_, off, d_model_);
            Tensor qh = gather(q, slice, {n, d_head_});
            Tensor kh = gather(k, slice, {n, d_head_});
            Tensor vh = gather(v, std::move(slice), {n, d_head_});
            Tensor scores = mul_scalar(matmul_nt(qh, kh), scale);
            head_outs.push_back(matmul(softmax(scores, 1), vh));
        } else {
            const int64_t ww = layout->window * layout->window;
            const int64_t W = layout->n_windows;
            auto win_slice = expand_rows(layout->fwd_rows, d_head_, off, d_model_);
            Tensor qh = reshape(gather(q, win_slice, {n, d_head_}), {W, ww, d_head_});
            Tensor kh = reshape(gather(k, win_slice, {n, d_head_}), {W, ww, d_head_});
            Tensor vh = reshape(gather(v, std::move(win_slice), {n, d_head_}), {W, ww, d_head_});
            Tensor scores = mul_scalar(bmm_nt(qh, kh), scale);
            if (layout->mask.defined()) scores = add(scores, layout->mask);
            Tensor out = bmm(softmax(scores, 2), vh); // [W, ww, d_head]
            head_outs.push_back(gather(reshape(out, {n, d_head_}),
                                       expand_rows(layout->inv_rows, d_head_), {n, d_head_}));
        }
    }
    return add_rowvec(matmul(concat_cols(head_outs), wo_), bo_);
}

Tensor MultiheadAttention::forward(const Tensor& x) const {
    Tensor q = add_rowvec(matmul(x, wq_), bq_);
    Tensor k = add_rowvec(matmul(x, wk_), bk_);
    Tensor v = add_rowvec(matmul(x, wv_), bv_);
    return project_heads_and_attend(q, k, v, nullptr);
}

Tensor MultiheadAttention::forward(const Tensor& x, const WindowLayout& layout) const {
    Tensor q = add_rowvec(matmul(x, wq_), bq_);
    Tensor k = add_rowvec(matmul(x, wk_), bk_);
    Tensor v = add_rowvec(matmul(x, wv_), bv_);
    return project_heads_and_attend(q, k, v, &layout);
}

std::vector<std::pair<std::string, Tensor>> MultiheadAttention::named_parameters(
    const std::string& prefix) const {
    return {{prefix + ".wq", wq_}, {prefix + ".bq", bq_}, {prefix + ".wk", wk_},
            {prefix + ".bk", bk_}, {prefix + ".wv", wv_}, {prefix + ".bv", bv_},
            {prefix + ".wo", wo_}, {prefix + ".bo", bo_}};
}

// ---------------------------------------------------------------------------
// EncoderBlock
// ---------------------------------------------------------------------------

EncoderBlock::EncoderBlock(int64_t d_model, int heads, double mlp_ratio, Rng& init)
    : attn_(d_model, heads, init) {
    const int64_t hidden = std::max<int64_t>(1, static_cast<int64_t>(std::llround(
                                                    mlp_ratio * static_cast<double>(d_model))));
    ln1_g_ = Tensor::full({d_model}, 1.0, true);
    ln1_b_ = Tensor::zeros({d_model}, true);
    ln2_g_ = Tensor::full({d_model}, 1.0, true);
    ln2_b_ = Tensor::zeros({d_model}, true);
    mlp_w1_ = Tensor::randn({d_model, hidden}, init, 1.0 / std::sqrt(static_cast<double>(d_model)), true);
    mlp_b1_ = Tensor::zeros({hidden}, true);
    mlp_w2_ = Tensor::randn({hidden, d_model}, init, 1.0 / std::sqrt(static_cast<double>(hidden)), true);
    mlp_b2_ = Tensor::zeros({d_model}, true);
}

Tensor EncoderBlock::forward(const Tensor& x, const WindowLayout* layout) const {
    Tensor attended = layout ? attn_.forward(x, *layout) : attn_.forward(x);
    Tensor h = layernorm(add(x, attended), ln1_g_, ln1_b_);
    Tensor m = add_rowvec(matmul(gelu(add_rowvec(matmul(h, mlp_w1_), mlp_b1_)), mlp_w2_), mlp_b2_);
    return layernorm(add(h, m), ln2_g_, ln2_b_);
}

std::vector<std::pair<std::string, Tensor>> EncoderBlock::named_parameters(
    const std::string& prefix) const {
    auto params = attn_.named_parameters(prefix + ".attn");
    params.emplace_back(prefix + ".ln1_g", ln1_g_);
    params.emplace_back(prefix + ".ln1_b", ln1_b_);
    params.emplace_back(prefix + ".ln2_g", ln2_g_);
    params.emplace_back(prefix + ".ln2_b", ln2_b_);
    params.emplace_back(prefix + ".mlp_w1", mlp_w1_);
    params.emplace_back(prefix + ".mlp_b1", mlp_b1_);
    params.emplace_back(prefix + ".mlp_w2", mlp_w2_);
    params.emplace_back(prefix + ".mlp_b2", mlp_b2_);
    return params;
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

Encoder::Encoder(const EncoderConfig& config, int64_t token_rows, int64_t token_cols, Rng& init)
    : config_(config), token_rows_(token_rows), token_cols_(token_cols) {
    config.validate(token_rows, token_cols);

    const size_t n_stages = config.merge_stages.size() + 1;
    std::vector<int64_t> stage_rows(n_stages), stage_cols(n_stages), stage_dim(n_stages);
    stage_rows[0] = token_rows;
    stage_cols[0] = token_cols;
    stage_dim[0] = config.d_model;
    for (size_t s = 1; s < n_stages; ++s) {
        stage_rows[s] = stage_rows[s - 1] / 2;
        stage_cols[s] = stage_cols[s - 1] / 2;
        stage_dim[s] = stage_dim[s - 1] * 2;
    }
    feature_dim_ = stage_dim[n_stages - 1];

    const bool windowed = config.scope == AttentionScope::windowed;
    if (windowed && config.depth > 0) {
        plain_layouts_.reserve(n_stages);
        shifted_layouts_.reserve(n_stages);
        for (size_t s = 0; s < n_stages; ++s) {
            plain_layouts_.push_back(
                make_window_layout(stage_rows[s], stage_cols[s], config.window, false));
            if (config.shift)
                shifted_layouts_.push_back(
                    make_window_layout(stage_rows[s], stage_cols[s], config.window, true));
        }
    }

    // Blocks in execution order, with merges between stages.
    int stage = 0;
    size_t next_merge = 0;
    for (int b = 0; b < config.depth; ++b) {
        blocks_.emplace_back(stage_dim[static_cast<size_t>(stage)], config.heads,
                             config.mlp_ratio, init);
        block_stage_.push_back(stage);
        block_shifted_.push_back(windowed && config.shift && (b % 2 == 1));

        int merge_idx = -1;
        if (next_merge < config.merge_stages.size() && config.merge_stages[next_merge] == b + 1) {
            MergeLayer m;
            m.in_rows = stage_rows[static_cast<size_t>(stage)];
            m.in_cols = stage_cols[static_cast<size_t>(stage)];
            m.in_dim = stage_dim[static_cast<size_t>(stage)];
            m.row_perm.reserve(static_cast<size_t>(m.in_rows * m.in_cols));
            for (int64_t i = 0; i < m.in_rows / 2; ++i) {
                for (int64_t j = 0; j < m.in_cols / 2; ++j) {
                    m.row_perm.push_back((2 * i) * m.in_cols + 2 * j);
                    m.row_perm.push_back((2 * i) * m.in_cols + 2 * j + 1);
                    m.row_perm.push_back((2 * i + 1) * m.in_cols + 2 * j);
                    m.row_perm.push_back((2 * i + 1) * m.in_cols + 2 * j + 1);
                }
            }
            m.w = Tensor::randn({4 * m.in_dim, 2 * m.in_dim}, init,
                                1.0 / std::sqrt(static_cast<double>(4 * m.in_dim)), true);
            m.b = Tensor::zeros({2 * m.in_dim}, true);
            merge_idx = static_cast<int>(merges_.size());
            merges_.push_back(std::move(m));
            ++next_merge;
            ++stage;
        }
        merge_after_.push_back(merge_idx);
    }
}

Tensor Encoder::encode(const Tensor& tokens) const {
    if (tokens.rank() != 2 || tokens.dim(0) != token_rows_ * token_cols_ ||
        tokens.dim(1) != config_.d_model)
        throw ConfigError("encode: tokens " + shape_str(tokens.shape()) +
                          " do not match encoder built for " + std::to_string(token_rows_) + "x" +
                          std::to_string(token_cols_) + " tokens at d_model=" +
                          std::to_string(config_.d_model));
    Tensor x = tokens;
    for (size_t b = 0; b < blocks_.size(); ++b) {
        const WindowLayout* layout = nullptr;
        if (config_.scope == AttentionScope::windowed) {
            const size_t stage = static_cast<size_t>(block_stage_[b]);
            layout = block_shifted_[b] ? &shifted_layouts_[stage] : &plain_layouts_[stage];
        }
        x = blocks_[b].forward(x, layout);
        const int merge_idx = merge_after_[b];
        if (merge_idx >= 0) {
            const MergeLayer& m = merges_[static_cast<size_t>(merge_idx)];
            const int64_t n_out = (m.in_rows / 2) * (m.in_cols / 2);
            Tensor grouped = gather(x, expand_rows(m.row_perm, m.in_dim), {4 * n_out, m.in_dim});
            x = add_rowvec(matmul(reshape(grouped, {n_out, 4 * m.in_dim}), m.w), m.b);
        }
    }
    return mean_rows(x);
}

std::vector<std::pair<std::string, Tensor>> Encoder::named_parameters(
    const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> params;
    for (size_t b = 0; b < blocks_.size(); ++b) {
        auto block_params = blocks_[b].named_parameters(prefix + ".block" + std::to_string(b));
        params.insert(params.end(), block_params.begin(), block_params.end());
    }
    for (size_t m = 0; m < merges_.size(); ++m) {
        params.emplace_back(prefix + ".merge" + std::to_string(m) + ".w", merges_[m].w);
        params.emplace_back(prefix + ".merge" + std::to_string(m) + ".b", merges_[m].b);
    }
    return params;
}

// ---------------------------------------------------------------------------
// ClassifierHead
// ---------------------------------------------------------------------------

ClassifierHead::ClassifierHead(int64_t in_dim, int64_t hidden, Rng& init)
    : in_dim_(in_dim), hidden_(hidden) {
    if (in_dim < 1 || hidden < 1)
        throw ConfigError("classifier head: dimensions must be >= 1");
    w1_ = Tensor::randn({in_dim, hidden}, init, 1.0 / std::sqrt(static_cast<double>(in_dim)), true);
    b1_ = Tensor::zeros({hidden}, true);
    w2_ = Tensor::randn({hidden, 1}, init, 1.0 / std::sqrt(static_cast<double>(hidden)), true);
    b2_ = Tensor::zeros({1}, true);
}

Tensor ClassifierHead::logit(const Tensor& features) const {
    if (features.numel() != in_dim_)
        throw ConfigError("classifier head: features " + shape_str(features.shape()) +
                          " do not match in_dim=" + std::to_string(in_dim_));
    Tensor x = reshape(features, {1, in_dim_});
    Tensor h = gelu(add_rowvec(matmul(x, w1_), b1_));
    return reshape(add_rowvec(matmul(h, w2_), b2_), {1});
}

Tensor ClassifierHead::probability(const Tensor& features) const {
    return sigmoid(logit(features));
}

std::vector<std::pair<std::string, Tensor>> ClassifierHead::named_parameters(
    const std::string& prefix) const {
    return {{prefix + ".w1", w1_},
            {prefix + ".b1", b1_},
            {prefix + ".w2", w2_},
            {prefix + ".b2", b2_}};
}

} // namespace tsanet
