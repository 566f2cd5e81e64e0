#include "doctest.h"

#include <cmath>
#include <fstream>

#include "tsanet/errors.hpp"
#include "tsanet/signal.hpp"

#include "testutil.hpp"

using namespace tsanet;

TEST_CASE("synthetic generation is deterministic and sized exactly") {
    ClassParams p{72.0, 0.03, 0.05};
    SignalRecord a = generate_synthetic("s1", 600.0, p, 1, 128.0, 99);
    SignalRecord b = generate_synthetic("s1", 600.0, p, 1, 128.0, 99);
    CHECK(a.samples == b.samples);
    CHECK(a.samples.size() == 76800); // 600 s at 128 Hz
    CHECK(a.fs == 128.0);

    SignalRecord c = generate_synthetic("s1", 600.0, p, 1, 128.0, 100);
    CHECK(a.samples != c.samples);
}

TEST_CASE("class parameters separate estimated beat rates") {
    ClassParams neg{60.0, 0.08, 0.05};
    ClassParams pos{85.0, 0.02, 0.05};
    SignalRecord rn = generate_synthetic("neg", 120.0, neg, 0, 128.0, 7);
    SignalRecord rp = generate_synthetic("pos", 120.0, pos, 1, 128.0, 8);
    const double rate_n = testutil::autocorr_rate_bpm(rn.samples, 128.0);
    const double rate_p = testutil::autocorr_rate_bpm(rp.samples, 128.0);
    CHECK(rate_p - rate_n > 15.0);
    CHECK(rate_n == doctest::Approx(60.0).epsilon(0.15));
    CHECK(rate_p == doctest::Approx(85.0).epsilon(0.15));
}

TEST_CASE("generator rejects non-physiological parameters") {
    CHECK_THROWS_AS(generate_synthetic("x", 10.0, {0.0, 0.01, 0.0}, 0, 128.0, 1), ConfigError);
    CHECK_THROWS_AS(generate_synthetic("x", 10.0, {-50.0, 0.01, 0.0}, 0, 128.0, 1), ConfigError);
    CHECK_THROWS_AS(generate_synthetic("x", -1.0, {60.0, 0.01, 0.0}, 0, 128.0, 1), ConfigError);
}

TEST_CASE("resample identity at equal rates") {
    SignalRecord r = generate_synthetic("s", 10.0, {60, 0.02, 0.01}, 0, 128.0, 3);
    SignalRecord out = resample(r, 128.0);
    CHECK(out.samples == r.samples);
    CHECK(out.fs == 128.0);
}

TEST_CASE("resample keeps constants constant") {
    SignalRecord r;
    r.subject_id = "c";
    r.fs = 200.0;
    r.samples.assign(1000, 4.2);
    SignalRecord out = resample(r, 128.0);
    CHECK(out.samples.size() == 640);
    for (double v : out.samples) CHECK(v == doctest::Approx(4.2).epsilon(1e-12));
}

TEST_CASE("resample of a pure sine matches the analytic sine") {
    SignalRecord r;
    r.subject_id = "sine";
    r.fs = 256.0;
    for (int i = 0; i < 1024; ++i)
        r.samples.push_back(std::sin(2.0 * M_PI * static_cast<double>(i) / 256.0));
    SignalRecord out = resample(r, 128.0);
    double rms = 0.0;
    for (size_t i = 0; i < out.samples.size(); ++i) {
        const double expect = std::sin(2.0 * M_PI * static_cast<double>(i) / 128.0);
        rms += (out.samples[i] - expect) * (out.samples[i] - expect);
    }
    rms = std::sqrt(rms / static_cast<double>(out.samples.size()));
    CHECK(rms < 1e-3);
}

TEST_CASE("resample rejects empty input") {
    SignalRecord r;
    r.fs = 128.0;
    CHECK_THROWS_AS(resample(r, 64.0), ConfigError);
}

TEST_CASE("denoise window 1 is the identity and constants are fixed points") {
    SignalRecord r = generate_synthetic("s", 5.0, {70, 0.02, 0.1}, 0, 128.0, 5);
    CHECK(denoise(r, 1).samples == r.samples);

    SignalRecord c;
    c.fs = 128.0;
    c.samples.assign(100, -3.0);
    SignalRecord out = denoise(c, 9);
    CHECK(out.samples.size() == 100);
    for (double v : out.samples) CHECK(v == doctest::Approx(-3.0).epsilon(1e-12));

    CHECK_THROWS_AS(denoise(r, 4), ConfigError);
    CHECK_THROWS_AS(denoise(r, 0), ConfigError);
}

TEST_CASE("denoise reduces white-noise variance across seeds") {
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        SignalRecord r;
        r.fs = 128.0;
        for (int i = 0; i < 4000; ++i) r.samples.push_back(rng.gauss());
        SignalRecord out = denoise(r, 9);
        auto variance = [](const std::vector<double>& v) {
            double mean = 0.0;
            for (double x : v) mean += x;
            mean /= static_cast<double>(v.size());
            double var = 0.0;
            for (double x : v) var += (x - mean) * (x - mean);
            return var / static_cast<double>(v.size());
        };
        CHECK(variance(out.samples) < variance(r.samples));
    }
}

TEST_CASE("normalize gives zero mean, unit std, and zeros for constants") {
    SignalRecord r = generate_synthetic("s", 20.0, {65, 0.03, 0.05}, 0, 128.0, 9);
    SignalRecord out = normalize(r);
    double mean = 0.0;
    for (double v : out.samples) mean += v;
    mean /= static_cast<double>(out.samples.size());
    double var = 0.0;
    for (double v : out.samples) var += (v - mean) * (v - mean);
    var /= static_cast<double>(out.samples.size());
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-9);

    SignalRecord c;
    c.fs = 128.0;
    c.samples.assign(50, 7.0);
    for (double v : normalize(c).samples) CHECK(v == 0.0);
}

TEST_CASE("segmentation window counts and remainder rule") {
    ClassParams p{60, 0.05, 0.02};
    SignalRecord r1200 = preprocess(generate_synthetic("a", 1200.0, p, 0, 128.0, 1), 1);
    CHECK(segment(r1200, 600.0).size() == 2);

    SignalRecord r900 = preprocess(generate_synthetic("a", 900.0, p, 0, 128.0, 2), 1);
    auto segs = segment(r900, 600.0);
    REQUIRE(segs.size() == 1);
    CHECK(segs[0].values.size() == 76800);

    SignalRecord r300 = preprocess(generate_synthetic("a", 300.0, p, 0, 128.0, 3), 1);
    CHECK(segment(r300, 600.0).empty());

    SignalRecord wrong_fs = generate_synthetic("a", 700.0, p, 0, 100.0, 4);
    CHECK_THROWS_AS(segment(wrong_fs, 600.0), ConfigError);
}

TEST_CASE("segment values are slices of the normalized record before re-normalization") {
    ClassParams p{75, 0.04, 0.05};
    SignalRecord rec = preprocess(generate_synthetic("a", 1200.0, p, 1, 128.0, 11), 9);
    auto segs = segment(rec, 600.0);
    REQUIRE(segs.size() == 2);
    const int64_t L = 76800;
    for (size_t s = 0; s < segs.size(); ++s) {
        // Re-normalize the raw slice the same way and compare; also confirms
        // each emitted segment is exactly the z-scored slice.
        std::vector<double> slice(rec.samples.begin() + static_cast<int64_t>(s) * L,
                                  rec.samples.begin() + static_cast<int64_t>(s + 1) * L);
        double mean = 0.0;
        for (double v : slice) mean += v;
        mean /= static_cast<double>(L);
        double var = 0.0;
        for (double v : slice) var += (v - mean) * (v - mean);
        var /= static_cast<double>(L);
        const double sd = std::sqrt(var);
        for (int64_t i = 0; i < L; ++i)
            CHECK(segs[s].values[static_cast<size_t>(i)] ==
                  doctest::Approx((slice[static_cast<size_t>(i)] - mean) / sd).epsilon(1e-12));
    }
}

TEST_CASE("every emitted segment satisfies the normalization invariant") {
    ClassParams p{80, 0.02, 0.1};
    SignalRecord rec = preprocess(generate_synthetic("a", 2500.0, p, 1, 100.0, 21), 9);
    for (const auto& seg : segment(rec, 600.0)) {
        CHECK(seg.values.size() == 76800);
        double mean = 0.0;
        for (double v : seg.values) mean += v;
        mean /= static_cast<double>(seg.values.size());
        double var = 0.0;
        for (double v : seg.values) var += (v - mean) * (v - mean);
        var /= static_cast<double>(seg.values.size());
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-6);
    }
}

TEST_CASE("manifest round trip and validation") {
    const std::string dir = testutil::scratch_dir("manifest");
    Manifest m;
    m.has_seed = true;
    m.seed = 42;
    m.entries.push_back({"a.ppg", "s1", 1, 128.0});
    m.entries.push_back({"b.ppg", "s2", 0, 100.0});
    save_manifest(dir + "/m.csv", m);

    Manifest loaded = load_manifest(dir + "/m.csv");
    CHECK(loaded.version == 1);
    CHECK(loaded.has_seed);
    CHECK(loaded.seed == 42);
    REQUIRE(loaded.entries.size() == 2);
    CHECK(loaded.entries[0].subject_id == "s1");
    CHECK(loaded.entries[1].fs == 100.0);

    {
        std::ofstream bad(dir + "/bad.csv");
        bad << "#version=1\nx.ppg,s1,3,128\n";
    }
    CHECK_THROWS_AS(load_manifest(dir + "/bad.csv"), DataError);
    {
        std::ofstream bad(dir + "/noversion.csv");
        bad << "x.ppg,s1,1,128\n";
    }
    CHECK_THROWS_AS(load_manifest(dir + "/noversion.csv"), DataError);
}

TEST_CASE("waveform files round trip at float precision and are byte-stable") {
    const std::string dir = testutil::scratch_dir("waveform");
    SignalRecord rec = generate_synthetic("w", 3.0, {66, 0.02, 0.05}, 1, 128.0, 77);
    save_waveform(dir + "/w.ppg", rec);
    save_waveform(dir + "/w2.ppg", rec);

    auto slurp = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    CHECK(slurp(dir + "/w.ppg") == slurp(dir + "/w2.ppg"));

    SignalRecord loaded = load_waveform(dir + "/w.ppg", "w", 1);
    CHECK(loaded.fs == 128.0);
    CHECK(loaded.source == SignalSource::file);
    REQUIRE(loaded.samples.size() == rec.samples.size());
    for (size_t i = 0; i < rec.samples.size(); ++i)
        CHECK(loaded.samples[i] ==
              doctest::Approx(rec.samples[i]).epsilon(1e-6)); // f32 storage

    CHECK_THROWS_AS(load_waveform(dir + "/missing.ppg", "x", 0), DataError);
}
