#include "doctest.h"

#include <cmath>

#include "tsanet/errors.hpp"
#include "tsanet/moe.hpp"

#include "testutil.hpp"

using namespace tsanet;

namespace {

Segment make_segment(int64_t n, uint64_t seed, int label = 1) {
    Rng rng(seed);
    Segment seg;
    seg.subject_id = "s" + std::to_string(seed);
    seg.label = label;
    seg.values.resize(static_cast<size_t>(n));
    for (auto& v : seg.values) v = rng.gauss();
    return seg;
}

// Small single-expert spec over 64-sample segments.
ExpertSpec tiny_spec() {
    ExpertSpec spec;
    spec.patch_size_D = 16;
    spec.k = 2;
    spec.encoder.scope = AttentionScope::global;
    spec.encoder.depth = 1;
    spec.encoder.d_model = 4;
    spec.encoder.heads = 1;
    spec.encoder.mlp_ratio = 2.0;
    return spec;
}

} // namespace

TEST_CASE("gate features of the zero segment vanish") {
    Segment zero;
    zero.values.assign(704, 0.0);
    const auto f = gate_features(zero);
    REQUIRE(f.size() == kGateSummaryDim);
    for (double v : f) CHECK(v == 0.0);
}

TEST_CASE("gate features are deterministic and bin means match brute force") {
    Segment seg = make_segment(768, 5);
    const auto a = gate_features(seg);
    const auto b = gate_features(seg);
    CHECK(a == b);

    // brute-force chunk means over the same integer boundaries
    const int64_t n = 768;
    for (int bin = 0; bin < kGateBins; ++bin) {
        const int64_t lo = n * bin / kGateBins;
        const int64_t hi = n * (bin + 1) / kGateBins;
        double mean = 0.0;
        for (int64_t i = lo; i < hi; ++i) mean += seg.values[static_cast<size_t>(i)];
        mean /= static_cast<double>(hi - lo);
        CHECK(a[static_cast<size_t>(bin)] == doctest::Approx(mean).epsilon(1e-12));
    }
    CHECK(a[kGateBins + 2] == *std::min_element(seg.values.begin(), seg.values.end()));
    CHECK(a[kGateBins + 3] == *std::max_element(seg.values.begin(), seg.values.end()));
}

TEST_CASE("zero gate weights give uniform expert weights") {
    Tensor x = Tensor::from_data({5}, {1, -2, 3, 0.5, 4});
    Tensor w = Tensor::zeros({5, 4});
    Tensor g = gate_forward(x, w);
    REQUIRE(g.numel() == 4);
    for (double v : g.value()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("a dominated gate saturates") {
    Tensor x = Tensor::from_data({1}, {1.0});
    Tensor w = Tensor::from_data({1, 3}, {100.0, 0.0, -3.0});
    Tensor g = gate_forward(x, w);
    CHECK(g.value()[0] > 0.999);
}

TEST_CASE("gate weights always sum to one") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        Tensor x = Tensor::randn({kGateSummaryDim}, rng, 2.0);
        Tensor w = Tensor::randn({kGateSummaryDim, 5}, rng, 1.0);
        Tensor g = gate_forward(x, w);
        double sum = 0.0;
        for (double v : g.value()) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("gate gradient matches finite differences") {
    Rng rng(3);
    Tensor x = Tensor::randn({8}, rng, 1.0);
    Tensor w = Tensor::randn({8, 4}, rng, 0.5, true);
    // probe: weighted sum of the gate vector
    auto loss = [&] {
        Rng wr(11);
        Tensor probe = Tensor::randn({4}, wr, 1.0);
        return sum_all(mul(gate_forward(x, w), probe));
    };
    CHECK(testutil::max_grad_error(loss, {w}) < 1e-4);
}

TEST_CASE("one-hot gates select a single expert bitwise") {
    Tensor scores = Tensor::from_data({4}, {0.21, 0.47, 0.83, 0.09});
    for (int64_t hot = 0; hot < 4; ++hot) {
        std::vector<double> g(4, 0.0);
        g[static_cast<size_t>(hot)] = 1.0;
        Tensor y = moe_ensemble(Tensor::from_data({4}, g), scores);
        CHECK(y.item() == scores.value()[static_cast<size_t>(hot)]);
    }
}

TEST_CASE("agreeing experts are a fixed point of the ensemble") {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> g(5);
        double sum = 0.0;
        for (auto& v : g) sum += (v = rng.uniform(0.01, 1.0));
        for (auto& v : g) v /= sum;
        Tensor y = moe_ensemble(Tensor::from_data({5}, g), Tensor::full({5}, 0.5));
        CHECK(y.item() == doctest::Approx(0.5).epsilon(1e-15));
    }
}

TEST_CASE("uniform gate averages the expert scores") {
    Tensor scores = Tensor::from_data({5}, {0.2, 0.4, 0.6, 0.8, 1.0 - 1e-9});
    Tensor y = moe_ensemble(Tensor::full({5}, 0.2), scores);
    double mean = 0.0;
    for (double v : scores.value()) mean += v;
    mean /= 5.0;
    CHECK(std::abs(y.item() - mean) < 1e-12);
}

TEST_CASE("ensemble output stays inside the expert score range") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const int64_t n = 1 + static_cast<int64_t>(rng.below(6));
        std::vector<double> g(static_cast<size_t>(n)), s(static_cast<size_t>(n));
        double sum = 0.0;
        for (auto& v : g) sum += (v = rng.uniform(0.0, 1.0) + 1e-9);
        for (auto& v : g) v /= sum;
        for (auto& v : s) v = rng.uniform(0.0, 1.0);
        Tensor y = moe_ensemble(Tensor::from_data({n}, g), Tensor::from_data({n}, s));
        CHECK(y.item() >= *std::min_element(s.begin(), s.end()) - 1e-12);
        CHECK(y.item() <= *std::max_element(s.begin(), s.end()) + 1e-12);
    }
}

TEST_CASE("single-expert mixture reduces to that expert bitwise") {
    const uint64_t seed = 1234;
    MoeModel model({tiny_spec()}, 64, 16, GateInput::summary, seed);
    Segment seg = make_segment(64, 9);
    MoeOutput out = model.forward(seg);

    Rng twin_rng(seed);
    Expert twin(tiny_spec(), 64, 16, twin_rng); // same init stream as the model's expert
    CHECK(out.y.item() == twin.score(seg).item());
    CHECK(out.gate.value()[0] == 1.0);
}

TEST_CASE("moe forward reports expert scores and gate weights that recompose y") {
    std::vector<ExpertSpec> specs(3, tiny_spec());
    specs[1].patch_size_D = 8;
    specs[1].k = 2;
    specs[2].patch_size_D = 32;
    specs[2].k = 2;
    MoeModel model(specs, 64, 16, GateInput::summary, 42);
    Segment seg = make_segment(64, 10);
    MoeOutput out = model.forward(seg);
    REQUIRE(out.experts.size() == 3);
    double recomposed = 0.0;
    for (const auto& e : out.experts) {
        CHECK(e.score > 0.0);
        CHECK(e.score < 1.0);
        recomposed += e.score * e.gate_weight;
    }
    CHECK(out.y.item() == doctest::Approx(recomposed).epsilon(1e-15));
}

TEST_CASE("incompatible expert patch sizes name the failing expert") {
    std::vector<ExpertSpec> specs(2, tiny_spec());
    specs[1].patch_size_D = 128; // exceeds the 64-sample segment
    try {
        MoeModel model(specs, 64, 16, GateInput::summary, 1);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("expert 1") != std::string::npos);
        CHECK(msg.find("128") != std::string::npos);
    }
}

TEST_CASE("gradients reach every expert with nonzero gate weight") {
    std::vector<ExpertSpec> specs(2, tiny_spec());
    specs[1].patch_size_D = 8;
    MoeModel model(specs, 64, 16, GateInput::summary, 17);
    Segment seg = make_segment(64, 12);
    MoeOutput out = model.forward(seg);
    // zero gate matrix -> uniform weights 0.5/0.5, both experts active
    CHECK(out.gate.value()[0] == doctest::Approx(0.5).epsilon(1e-12));
    backward(out.y);
    for (int e = 0; e < 2; ++e) {
        double norm = 0.0;
        for (auto& [name, t] : model.named_parameters()) {
            if (name.rfind("expert" + std::to_string(e), 0) != 0) continue;
            if (!t.has_grad()) continue;
            for (double gv : t.grad()) norm += gv * gv;
        }
        CHECK(norm > 0.0);
    }
}

TEST_CASE("raw gate input consumes the whole segment") {
    MoeModel model({tiny_spec()}, 64, 16, GateInput::raw, 3);
    CHECK(model.gate_weight_matrix().dim(0) == 64);
    Segment seg = make_segment(64, 13);
    CHECK(model.forward(seg).y.item() > 0.0);
}

TEST_CASE("moe end-to-end gradient check at toy scale") {
    std::vector<ExpertSpec> specs(2, tiny_spec());
    specs[1].patch_size_D = 8;
    MoeModel model(specs, 64, 16, GateInput::summary, 23);
    Segment seg = make_segment(64, 14);

    std::vector<Tensor> leaves;
    for (auto& [name, t] : model.named_parameters()) leaves.push_back(t);
    auto loss = [&] { return cross_entropy_binary(model.forward(seg).y, 1.0); };
    CHECK(testutil::max_grad_error(loss, leaves) < 1e-3);
}
