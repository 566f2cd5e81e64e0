#include "doctest.h"

#include <cmath>
#include <numeric>

#include "tsanet/errors.hpp"
#include "tsanet/tsa.hpp"

#include "testutil.hpp"

using namespace tsanet;

namespace {

std::vector<double> ramp(int64_t n) {
    std::vector<double> v(static_cast<size_t>(n));
    std::iota(v.begin(), v.end(), 0.0);
    return v;
}

// Forces the projection to select the mean of each square, with positional
// embeddings zeroed, so token embeddings expose the raw square contents.
void make_mean_projector(SquareTokenizer& tok, int64_t k) {
    auto params = tok.named_parameters("t");
    for (auto& [name, tensor] : params) {
        Tensor t = tensor;
        if (name == "t.w_proj")
            t.mutable_value().assign(t.value().size(), 1.0 / static_cast<double>(k * k));
        else
            t.mutable_value().assign(t.value().size(), 0.0);
    }
}

} // namespace

TEST_CASE("grid arithmetic for the canonical 10-minute segment") {
    const auto samples = ramp(76800);

    Grid2D g1 = build_grid(samples, 1024, 1024);
    CHECK(g1.rows == 75);
    CHECK(g1.width == 1024);
    CHECK(g1.downsample_factor == 1);

    Grid2D g2 = build_grid(samples, 2048, 1024);
    CHECK(g2.rows == 37);
    CHECK(g2.width == 1024);
    CHECK(g2.downsample_factor == 2);
    // 37*2048 = 75776 consumed; the last 1024 raw points fall off the end
    CHECK(g2.rows * g2.patch_size_D == 75776);

    Grid2D g3 = build_grid(samples, 512, 1024);
    CHECK(g3.rows == 150);
    CHECK(g3.width == 512);
    CHECK(g3.downsample_factor == 1);
}

TEST_CASE("grid flattening is the identity when no down-sampling happened") {
    const auto samples = ramp(76800);
    Grid2D g = build_grid(samples, 1024, 1024);
    REQUIRE(g.values.size() == 75 * 1024);
    for (size_t i = 0; i < g.values.size(); ++i) CHECK(g.values[i] == samples[i]);
}

TEST_CASE("down-sampling mean-pools each factor-sized chunk") {
    const auto samples = ramp(8192);
    Grid2D g = build_grid(samples, 2048, 1024); // factor 2
    for (int64_t r = 0; r < g.rows; ++r)
        for (int64_t c = 0; c < g.width; ++c) {
            const double expect = (samples[static_cast<size_t>(r * 2048 + 2 * c)] +
                                   samples[static_cast<size_t>(r * 2048 + 2 * c + 1)]) /
                                  2.0;
            CHECK(g.values[static_cast<size_t>(r * g.width + c)] ==
                  doctest::Approx(expect).epsilon(1e-15));
        }

    // Constant rows stay constant through any down-sample factor.
    std::vector<double> flat(4096, 3.25);
    Grid2D cg = build_grid(flat, 4096, 1024);
    for (double v : cg.values) CHECK(v == doctest::Approx(3.25).epsilon(1e-15));
}

TEST_CASE("grid construction rejects invalid patch sizes") {
    const auto samples = ramp(4096);
    CHECK_THROWS_AS(build_grid(samples, 8192, 1024), ConfigError); // D > L
    CHECK_THROWS_AS(build_grid(samples, 1536, 1024), ConfigError); // D > T, not a multiple
    CHECK_THROWS_AS(build_grid(samples, 0, 1024), ConfigError);
}

TEST_CASE("k=1 tokens carry single grid points") {
    Rng rng(1);
    SquareTokenizer tok(2, 2, 1, 1, rng);
    make_mean_projector(tok, 1);
    Grid2D g;
    g.rows = 2;
    g.width = 2;
    g.patch_size_D = 2;
    g.base_T = 2;
    g.values = {10, 20, 30, 40};
    TokenGrid tokens = tok.forward(g);
    CHECK(tokens.token_rows == 2);
    CHECK(tokens.token_cols == 2);
    REQUIRE(tokens.embeddings.numel() == 4);
    CHECK(tokens.embeddings.value() == std::vector<double>{10, 20, 30, 40});
    CHECK(tokens.positions[1] == std::pair<int64_t, int64_t>{0, 1});
    CHECK(tokens.positions[2] == std::pair<int64_t, int64_t>{1, 0});
}

TEST_CASE("canonical 10-minute tokenization yields 4608 tokens") {
    Rng rng(2);
    SquareTokenizer tok(75, 1024, 4, 8, rng);
    CHECK(tok.token_rows() == 18);
    CHECK(tok.token_cols() == 256);
    CHECK(tok.token_count() == 4608);
    CHECK(tok.token_count() * 10 <= 76800); // the >10x token-reduction claim
}

TEST_CASE("token-reduction inequality holds across lengths and squares") {
    for (int64_t L : {76800LL, 90000LL, 153600LL, 300000LL}) {
        for (int64_t k : {4LL, 5LL, 6LL, 8LL}) {
            CostParams p;
            p.patch_D = 1024;
            p.base_T = 1024;
            p.k = k;
            const CostModel m = build_cost_model(AttentionVariant::tsa, L, p);
            CHECK(m.token_count * 10 <= static_cast<uint64_t>(L));
        }
    }
}

TEST_CASE("tokenizer rejects oversized squares") {
    Rng rng(3);
    CHECK_THROWS_AS(SquareTokenizer(3, 8, 4, 4, rng), ConfigError);
    CHECK_THROWS_AS(SquareTokenizer(3, 8, 0, 4, rng), ConfigError);
}

TEST_CASE("token time ordering follows the raw signal") {
    // Ramp through build_grid + tokenize: token means must strictly increase
    // along token rows and, within a row, along token columns.
    const int64_t L = 4096, D = 64, T = 64, k = 4;
    Grid2D g = build_grid(ramp(L), D, T);
    Rng rng(4);
    SquareTokenizer tok(g.rows, g.width, k, 1, rng);
    make_mean_projector(tok, k);
    TokenGrid tokens = tok.forward(g);
    const auto& v = tokens.embeddings.value();
    for (int64_t r = 0; r < tokens.token_rows; ++r) {
        for (int64_t c = 0; c < tokens.token_cols; ++c) {
            const double val = v[static_cast<size_t>(r * tokens.token_cols + c)];
            // brute-force mean over the k x k square in raw coordinates
            double expect = 0.0;
            for (int64_t dr = 0; dr < k; ++dr)
                for (int64_t dc = 0; dc < k; ++dc)
                    expect += static_cast<double>((r * k + dr) * D + c * k + dc);
            expect /= static_cast<double>(k * k);
            CHECK(val == doctest::Approx(expect).epsilon(1e-12));
            if (c > 0) CHECK(val > v[static_cast<size_t>(r * tokens.token_cols + c - 1)]);
            if (r > 0) CHECK(val > v[static_cast<size_t>((r - 1) * tokens.token_cols + c)]);
        }
    }
}

TEST_CASE("cost model closed forms") {
    CostParams p;
    const CostModel full = build_cost_model(AttentionVariant::full_1d, 1024, p);
    CHECK(full.token_count == 1024);
    CHECK(full.attention_pair_count == 1048576);

    p.block = 64;
    const CostModel block = build_cost_model(AttentionVariant::block_sparse, 1024, p);
    CHECK(block.attention_pair_count == 65536);

    p.patch_D = 1024;
    p.base_T = 1024;
    p.k = 4;
    const CostModel tsa = build_cost_model(AttentionVariant::tsa, 76800, p);
    CHECK(tsa.token_count == 4608);
    CHECK(tsa.attention_pair_count == 4608ULL * 4608ULL);
    const CostModel full10m = build_cost_model(AttentionVariant::full_1d, 76800, p);
    const double factor = static_cast<double>(full10m.attention_pair_count) /
                          static_cast<double>(tsa.attention_pair_count);
    CHECK(factor > 270.0);
    CHECK(factor < 285.0);
}

TEST_CASE("time-decay cost stays within budget and decays with distance") {
    CostParams p;
    p.budget = 64;
    for (int64_t L : {100LL, 1024LL, 76800LL}) {
        const CostModel m = build_cost_model(AttentionVariant::time_decay_sparse, L, p);
        CHECK(m.token_count == static_cast<uint64_t>(L));
        CHECK(m.attention_pair_count <= static_cast<uint64_t>(L) * 64ULL);
        CHECK(m.attention_pair_count >= static_cast<uint64_t>(L)); // at least self
    }
    // Small budget binds exactly.
    p.budget = 1;
    const CostModel tight = build_cost_model(AttentionVariant::time_decay_sparse, 50, p);
    CHECK(tight.attention_pair_count == 50);
}

TEST_CASE("attention variant names round trip") {
    for (auto v : {AttentionVariant::full_1d, AttentionVariant::block_sparse,
                   AttentionVariant::time_decay_sparse, AttentionVariant::tsa})
        CHECK(attention_variant_from_string(to_string(v)) == v);
    CHECK_THROWS_AS(attention_variant_from_string("banded"), ConfigError);
}

TEST_CASE("tokenizer parameters receive gradients through the pipeline") {
    const int64_t L = 256, D = 16, T = 16, k = 2;
    Grid2D g = build_grid(ramp(L), D, T);
    Rng rng(9);
    SquareTokenizer tok(g.rows, g.width, k, 4, rng);

    std::vector<Tensor> leaves;
    for (auto& [name, t] : tok.named_parameters("t")) leaves.push_back(t);
    Tensor grid_leaf = Tensor::from_data({g.rows, g.width}, g.values, true);
    leaves.push_back(grid_leaf);

    auto loss = [&] {
        Rng wr(5);
        TokenGrid tokens = tok.forward(grid_leaf);
        Tensor w = Tensor::randn(tokens.embeddings.shape(), wr, 1.0);
        return sum_all(mul(tokens.embeddings, w));
    };
    CHECK(testutil::max_grad_error(loss, leaves) < 1e-4);
}
