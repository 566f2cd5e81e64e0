#include "tsanet/moe.hpp"

#include <algorithm>
#include <cmath>

#include "tsanet/errors.hpp"

namespace tsanet {

GateInput gate_input_from_string(const std::string& s) {
    if (s == "summary") return GateInput::summary;
    if (s == "raw") return GateInput::raw;
    throw ConfigError("unknown gate input '" + s + "'");
}

std::string to_string(GateInput g) { return g == GateInput::summary ? "summary" : "raw"; }

std::vector<double> gate_features(const std::vector<double>& values) {
    const int64_t n = static_cast<int64_t>(values.size());
    std::vector<double> out(kGateSummaryDim, 0.0);
    if (n == 0) return out;

    for (int b = 0; b < kGateBins; ++b) {
        const int64_t lo = n * b / kGateBins;
        const int64_t hi = n * (b + 1) / kGateBins;
        if (hi <= lo) continue;
        double s = 0.0;
        for (int64_t i = lo; i < hi; ++i) s += values[static_cast<size_t>(i)];
        out[static_cast<size_t>(b)] = s / static_cast<double>(hi - lo);
    }

    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(n);
    double m2 = 0.0, m3 = 0.0;
    double mn = values[0], mx = values[0];
    for (double v : values) {
        const double c = v - mean;
        m2 += c * c;
        m3 += c * c * c;
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    m2 /= static_cast<double>(n);
    m3 /= static_cast<double>(n);
    const double std_dev = std::sqrt(m2);
    out[kGateBins + 0] = std_dev;
    out[kGateBins + 1] = m3 / (std_dev * std_dev * std_dev + 1e-12);
    out[kGateBins + 2] = mn;
    out[kGateBins + 3] = mx;
    return out;
}

std::vector<double> gate_features(const Segment& seg) { return gate_features(seg.values); }

Tensor gate_forward(const Tensor& x, const Tensor& w_g) {
    if (x.rank() != 1 || w_g.rank() != 2 || x.dim(0) != w_g.dim(0))
        throw ConfigError("gate_forward: shape mismatch x=" + shape_str(x.shape()) +
                          " w_g=" + shape_str(w_g.shape()));
    const int64_t n_experts = w_g.dim(1);
    Tensor logits = matmul(reshape(x, {1, x.dim(0)}), w_g);
    return reshape(softmax(logits, 1), {n_experts});
}

Tensor moe_ensemble(const Tensor& gate, const Tensor& scores) {
    if (gate.rank() != 1 || scores.rank() != 1 || gate.dim(0) != scores.dim(0))
        throw ConfigError("moe_ensemble: shape mismatch gate=" + shape_str(gate.shape()) +
                          " scores=" + shape_str(scores.shape()));
    return sum_all(mul(gate, scores));
}

// ---------------------------------------------------------------------------
// Expert
// ---------------------------------------------------------------------------

namespace {

std::pair<int64_t, int64_t> grid_shape_for(int64_t L, int64_t D, int64_t T) {
    if (D < 1 || T < 1) throw ConfigError("expert: D and T must be >= 1");
    if (D > L)
        throw ConfigError("patch size D=" + std::to_string(D) + " exceeds segment length L=" +
                          std::to_string(L));
    if (D > T && D % T != 0)
        throw ConfigError("patch size D=" + std::to_string(D) +
                          " must be an integer multiple of T=" + std::to_string(T));
    const int64_t rows = L / D;
    const int64_t width = D >= T ? T : D;
    return {rows, width};
}

} // namespace

Expert::Expert(const ExpertSpec& spec, int64_t segment_len, int64_t base_T, Rng& init)
    : spec_(spec),
      segment_len_(segment_len),
      base_T_(base_T),
      tokenizer_(grid_shape_for(segment_len, spec.patch_size_D, base_T).first,
                 grid_shape_for(segment_len, spec.patch_size_D, base_T).second, spec.k,
                 spec.encoder.d_model, init),
      encoder_(spec.encoder, tokenizer_.token_rows(), tokenizer_.token_cols(), init),
      head_(encoder_.feature_dim(), encoder_.feature_dim(), init) {}

Tensor Expert::score(const Segment& seg) const {
    if (static_cast<int64_t>(seg.values.size()) != segment_len_)
        throw ConfigError("expert: segment length " + std::to_string(seg.values.size()) +
                          " does not match model segment length " + std::to_string(segment_len_));
    Grid2D grid = build_grid(seg, spec_.patch_size_D, base_T_);
    TokenGrid tokens = tokenizer_.forward(grid);
    return head_.probability(encoder_.encode(tokens.embeddings));
}

std::vector<std::pair<std::string, Tensor>> Expert::named_parameters(
    const std::string& prefix) const {
    auto params = tokenizer_.named_parameters(prefix + ".tokenizer");
    auto enc = encoder_.named_parameters(prefix + ".encoder");
    params.insert(params.end(), enc.begin(), enc.end());
    auto head = head_.named_parameters(prefix + ".head");
    params.insert(params.end(), head.begin(), head.end());
    return params;
}

// ---------------------------------------------------------------------------
// MoeModel
// ---------------------------------------------------------------------------

MoeModel::MoeModel(const std::vector<ExpertSpec>& specs, int64_t segment_len, int64_t base_T,
                   GateInput gate_input, uint64_t init_seed)
    : segment_len_(segment_len), base_T_(base_T), gate_input_(gate_input) {
    if (specs.empty()) throw ConfigError("moe: at least one expert required");
    Rng init(init_seed);
    experts_.reserve(specs.size());
    for (size_t i = 0; i < specs.size(); ++i) {
        try {
            experts_.emplace_back(specs[i], segment_len, base_T, init);
        } catch (const ConfigError& e) {
            throw ConfigError("expert " + std::to_string(i) + " (D=" +
                              std::to_string(specs[i].patch_size_D) + "): " + e.what());
        }
    }
    const int64_t gate_dim = gate_input == GateInput::summary ? kGateSummaryDim : segment_len;
    // Zero gate start: uniform weights until the gate learns a preference.
    w_gate_ = Tensor::zeros({gate_dim, static_cast<int64_t>(specs.size())}, true);
}

MoeOutput MoeModel::forward(const Segment& seg) const {
    if (static_cast<int64_t>(seg.values.size()) != segment_len_)
        throw ConfigError("moe: segment length " + std::to_string(seg.values.size()) +
                          " does not match model segment length " + std::to_string(segment_len_));

    std::vector<Tensor> expert_scores;
    expert_scores.reserve(experts_.size());
    for (size_t i = 0; i < experts_.size(); ++i) {
        try {
            expert_scores.push_back(experts_[i].score(seg));
        } catch (const ConfigError& e) {
            throw ConfigError("expert " + std::to_string(i) + " (D=" +
                              std::to_string(experts_[i].spec().patch_size_D) + "): " + e.what());
        }
    }

    std::vector<double> gate_x = gate_input_ == GateInput::summary
                                     ? gate_features(seg)
                                     : seg.values;
    const int64_t gate_dim = static_cast<int64_t>(gate_x.size());
    Tensor x = Tensor::from_data({gate_dim}, std::move(gate_x));

    MoeOutput out;
    out.gate = gate_forward(x, w_gate_);
    out.scores = concat_vec(expert_scores);
    out.y = moe_ensemble(out.gate, out.scores);
    out.experts.reserve(experts_.size());
    for (size_t i = 0; i < experts_.size(); ++i) {
        ExpertOutput e;
        e.index = static_cast<int>(i);
        e.score = out.scores.value()[i];
        e.gate_weight = out.gate.value()[i];
        out.experts.push_back(e);
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> MoeModel::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> params;
    for (size_t i = 0; i < experts_.size(); ++i) {
        auto e = experts_[i].named_parameters("expert" + std::to_string(i));
        params.insert(params.end(), e.begin(), e.end());
    }
    params.emplace_back("gate.w_g", w_gate_);
    return params;
}

std::vector<Tensor> MoeModel::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

} // namespace tsanet
