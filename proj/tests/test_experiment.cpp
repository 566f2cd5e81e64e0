#include "doctest.h"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "tsanet/commands.hpp"
#include "tsanet/errors.hpp"
#include "tsanet/experiment.hpp"

#include "testutil.hpp"

using namespace tsanet;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Small-but-real pipeline config: 8 subjects, 30 s records/segments.
ExperimentConfig smoke_config(const std::string& out_dir) {
    ExperimentConfig cfg;
    cfg.seed = 21;
    cfg.out_dir = out_dir;
    cfg.signal.n_subjects = 8;
    cfg.signal.record_duration_s = 30.0;
    cfg.preprocess.segment_s = 30.0;
    cfg.tsa.T = 256;
    cfg.tsa.experts = {"T"};
    cfg.tsa.k_auto = false;
    cfg.tsa.k = {3};
    cfg.encoder.scope = AttentionScope::windowed;
    cfg.encoder.depth = 1;
    cfg.encoder.d_model = 8;
    cfg.encoder.heads = 2;
    cfg.windows = {5};
    cfg.encoder.window = 5;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 4;
    cfg.train.train_frac = 0.5;
    cfg.train.val_frac = 0.25;
    cfg.train.test_frac = 0.25;
    cfg.train.seed = cfg.seed;
    return cfg;
}

} // namespace

TEST_CASE("patch size shorthand") {
    CHECK(parse_patch_size("T", 1024) == 1024);
    CHECK(parse_patch_size("2T", 1024) == 2048);
    CHECK(parse_patch_size("4T", 1024) == 4096);
    CHECK(parse_patch_size("T/2", 1024) == 512);
    CHECK(parse_patch_size("T/4", 1024) == 256);
    CHECK(parse_patch_size("768", 1024) == 768);
    CHECK_THROWS_AS(parse_patch_size("T/3", 1024), ConfigError); // does not divide
    CHECK_THROWS_AS(parse_patch_size("0T", 1024), ConfigError);
    CHECK_THROWS_AS(parse_patch_size("", 1024), ConfigError);
    CHECK_THROWS_AS(parse_patch_size("q", 1024), ConfigError);
}

TEST_CASE("config files parse with comments and reject unknown keys") {
    const std::string dir = testutil::scratch_dir("config");
    {
        std::ofstream out(dir + "/exp.cfg");
        out << "# experiment\n";
        out << "seed = 99\n";
        out << "tsa.experts = T/2, T  # two experts\n";
        out << "encoder.depth = 3\n";
        out << "train.lr = 0.01\n";
    }
    ExperimentConfig cfg = ExperimentConfig::from_file(dir + "/exp.cfg");
    CHECK(cfg.seed == 99);
    CHECK(cfg.train.seed == 99);
    CHECK(cfg.tsa.experts == std::vector<std::string>{"T/2", "T"});
    CHECK(cfg.encoder.depth == 3);
    CHECK(cfg.train.lr == 0.01);

    CHECK_THROWS_AS(cfg.apply_override("nonsense.key", "1"), ConfigError);
    CHECK_THROWS_AS(cfg.apply_override("train.epochs", "three"), ConfigError);
    {
        std::ofstream out(dir + "/bad.cfg");
        out << "seed 99\n";
    }
    CHECK_THROWS_AS(ExperimentConfig::from_file(dir + "/bad.cfg"), ConfigError);
}

TEST_CASE("config text round trips through the parser") {
    ExperimentConfig cfg = smoke_config("x");
    const std::string text = cfg.to_kv_text();
    const std::string dir = testutil::scratch_dir("roundtrip");
    {
        std::ofstream out(dir + "/rt.cfg");
        out << text;
    }
    ExperimentConfig back = ExperimentConfig::from_file(dir + "/rt.cfg");
    CHECK(back.to_kv_text() == text);
}

TEST_CASE("expert shorthand expansion") {
    ExperimentConfig cfg;
    cfg.tsa.experts = {"moe"};
    auto specs = cfg.resolve_experts();
    REQUIRE(specs.size() == 5);
    CHECK(specs[0].patch_size_D == 256);
    CHECK(specs[1].patch_size_D == 512);
    CHECK(specs[2].patch_size_D == 1024);
    CHECK(specs[3].patch_size_D == 2048);
    CHECK(specs[4].patch_size_D == 4096);

    cfg.tsa.experts = {"single:T"};
    specs = cfg.resolve_experts();
    REQUIRE(specs.size() == 1);
    CHECK(specs[0].patch_size_D == 1024);
}

TEST_CASE("auto square/window resolution is valid for every default expert") {
    ExperimentConfig cfg; // 600 s segments, windowed, window preference 2
    cfg.tsa.experts = {"moe"};
    cfg.tsa.k_auto = true;
    auto specs = cfg.resolve_experts();
    const int64_t L = cfg.segment_len();
    for (const auto& spec : specs) {
        const int64_t rows = L / spec.patch_size_D;
        const int64_t width = spec.patch_size_D >= cfg.tsa.T ? cfg.tsa.T : spec.patch_size_D;
        CHECK(spec.k >= 1);
        CHECK(spec.k <= std::min(rows, width));
        CHECK(spec.encoder.check(rows / spec.k, width / spec.k).empty());
    }
    CHECK(cfg.check().empty());
}

TEST_CASE("auto window with explicit squares picks feasible windows") {
    ExperimentConfig cfg; // 600 s segments
    cfg.tsa.experts = {"T/4", "T/2", "T", "2T", "4T"};
    cfg.tsa.k_auto = false;
    cfg.tsa.k = {10, 10, 6, 6, 4};
    cfg.window_auto = true;
    cfg.encoder.window = 5; // preference cap
    auto specs = cfg.resolve_experts();
    std::vector<int64_t> windows;
    for (const auto& s : specs) windows.push_back(s.encoder.window);
    CHECK(windows == std::vector<int64_t>{5, 3, 2, 2, 4});
    CHECK(cfg.check().empty());
}

TEST_CASE("explicit k and window lists broadcast or match expert count") {
    ExperimentConfig cfg;
    cfg.tsa.experts = {"T/4", "T"};
    cfg.tsa.k_auto = false;
    cfg.tsa.k = {6};
    auto specs = cfg.resolve_experts();
    CHECK(specs[0].k == 6);
    CHECK(specs[1].k == 6);

    cfg.tsa.k = {6, 4, 2};
    CHECK_THROWS_AS(cfg.resolve_experts(), ConfigError);
}

TEST_CASE("config check lists every violation at once") {
    ExperimentConfig cfg = smoke_config("x");
    cfg.signal.n_subjects = 0;
    cfg.preprocess.denoise_window = 4;
    cfg.train.batch_size = 0;
    cfg.train.train_frac = 0.9; // fractions no longer sum to 1
    auto problems = cfg.check();
    CHECK(problems.size() >= 4);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("synth writes byte-identical corpora for one seed") {
    const std::string dir_a = testutil::scratch_dir("synth_a");
    const std::string dir_b = testutil::scratch_dir("synth_b");
    ExperimentConfig cfg;
    cfg.signal.n_subjects = 4;
    cfg.signal.record_duration_s = 10.0;
    cfg.preprocess.segment_s = 10.0;
    cfg.tsa.T = 128;
    cfg.seed = 77;

    cfg.out_dir = dir_a;
    CHECK(cmd_synth(cfg) == 0);
    cfg.out_dir = dir_b;
    CHECK(cmd_synth(cfg) == 0);

    for (const char* f : {"manifest.csv", "S0000.ppg", "S0001.ppg", "S0002.ppg", "S0003.ppg"})
        CHECK(slurp(dir_a + "/data/" + f) == slurp(dir_b + "/data/" + f));

    Manifest m = load_manifest(dir_a + "/data/manifest.csv");
    CHECK(m.entries.size() == 4);
    CHECK(m.has_seed);
    CHECK(m.seed == 77);

    // Positive and negative synthesized records separate in estimated rate.
    SignalRecord neg = load_waveform(dir_a + "/data/S0000.ppg", "S0000", 0);
    SignalRecord pos = load_waveform(dir_a + "/data/S0001.ppg", "S0001", 1);
    const double rate_n = testutil::autocorr_rate_bpm(neg.samples, neg.fs);
    const double rate_p = testutil::autocorr_rate_bpm(pos.samples, pos.fs);
    CHECK(rate_p - rate_n > 15.0);
}

TEST_CASE("preprocess command rewrites a manifest at 128 Hz") {
    const std::string dir = testutil::scratch_dir("prep");
    ExperimentConfig cfg;
    cfg.out_dir = dir;
    cfg.seed = 5;
    cfg.signal.n_subjects = 2;
    cfg.signal.record_duration_s = 12.0;
    cfg.signal.fs = 100.0; // forces an actual resample
    cfg.preprocess.segment_s = 10.0;
    cfg.tsa.T = 128;
    CHECK(cmd_synth(cfg) == 0);
    CHECK(cmd_preprocess(cfg, dir + "/data/manifest.csv") == 0);

    Manifest out = load_manifest(dir + "/preprocessed/manifest.csv");
    REQUIRE(out.entries.size() == 2);
    for (const auto& e : out.entries) {
        CHECK(e.fs == 128.0);
        SignalRecord rec = load_waveform(dir + "/preprocessed/" + e.path, e.subject_id, e.label);
        CHECK(rec.fs == 128.0);
        CHECK(rec.samples.size() == 1536); // 12 s at 128 Hz
    }
}

TEST_CASE("tokenize-stats emits the canonical table") {
    const std::string dir = testutil::scratch_dir("stats");
    ExperimentConfig cfg;
    cfg.out_dir = dir;
    CHECK(cmd_tokenize_stats(cfg) == 0);
    const std::string csv = slurp(dir + "/token_stats.csv");
    CHECK(csv.find("variant,L,k_or_b,tokens,pairs\n") != std::string::npos);
    CHECK(csv.rfind("# seed=", 0) == 0);
    CHECK(csv.find("tsa,76800,4,4608,21233664") != std::string::npos);
    CHECK(csv.find("full_1d,76800,0,76800,5898240000") != std::string::npos);
    CHECK(csv.find("block_sparse,1024,64,1024,65536") != std::string::npos);

    // every tsa row with k >= 4 obeys the 10x token reduction
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line); // header
    while (std::getline(lines, line)) {
        std::istringstream row(line);
        std::string variant, L_str, k_str, tokens_str, pairs_str;
        std::getline(row, variant, ',');
        std::getline(row, L_str, ',');
        std::getline(row, k_str, ',');
        std::getline(row, tokens_str, ',');
        std::getline(row, pairs_str, ',');
        if (variant == "tsa" && std::stoll(k_str) >= 4)
            CHECK(std::stoll(tokens_str) * 10 <= std::stoll(L_str));
    }
}

TEST_CASE("training runs are byte-identical for one seed and config") {
    const std::string dir_a = testutil::scratch_dir("train_a");
    const std::string dir_b = testutil::scratch_dir("train_b");
    ExperimentConfig cfg = smoke_config(dir_a);
    CHECK(cmd_train(cfg) == 0);
    cfg.out_dir = dir_b;
    CHECK(cmd_train(cfg) == 0);
    for (const char* f : {"checkpoint.tsck", "loss_curve.csv", "train_summary.json"})
        CHECK(slurp(dir_a + "/" + f) == slurp(dir_b + "/" + f));
}

TEST_CASE("train and eval commands produce stable artifacts") {
    const std::string dir = testutil::scratch_dir("pipeline");
    ExperimentConfig cfg = smoke_config(dir);
    CHECK(cmd_train(cfg) == 0);
    CHECK(slurp(dir + "/loss_curve.csv").find("epoch,batch,loss") != std::string::npos);
    CHECK(slurp(dir + "/train_summary.json").find("best_val_auc") != std::string::npos);

    CHECK(cmd_eval(cfg, dir + "/checkpoint.tsck", "test") == 0);
    const std::string metrics_a = slurp(dir + "/metrics.json");
    const std::string csv = slurp(dir + "/metrics.csv");
    CHECK(csv.find("sensitivity,accuracy,specificity,auc") != std::string::npos);
    CHECK(slurp(dir + "/roc.csv").find("threshold,fpr,tpr") != std::string::npos);

    // identical re-run: byte-for-byte equal metric outputs
    CHECK(cmd_eval(cfg, dir + "/checkpoint.tsck", "test") == 0);
    CHECK(slurp(dir + "/metrics.json") == metrics_a);

    CHECK_THROWS_AS(cmd_eval(cfg, dir + "/checkpoint.tsck", "bogus"), ConfigError);
}

TEST_CASE("single-expert config runs the no-MoE pipeline") {
    ExperimentConfig cfg = smoke_config("x");
    cfg.tsa.experts = {"single:T"};
    MoeModel model = build_model(cfg);
    CHECK(model.n_experts() == 1);
    // degenerate softmax: the lone expert always gets the full gate weight
    auto segments = build_corpus(cfg);
    REQUIRE(!segments.empty());
    CHECK(model.forward(segments[0]).gate.value()[0] == 1.0);
}

TEST_CASE("roc command consumes a scores csv") {
    const std::string dir = testutil::scratch_dir("roccmd");
    {
        std::ofstream out(dir + "/scores.csv");
        out << "score,label\n0.9,1\n0.7,1\n0.4,0\n0.2,0\n";
    }
    ExperimentConfig cfg;
    cfg.out_dir = dir;
    CHECK(cmd_roc(cfg, dir + "/scores.csv") == 0);
    CHECK(slurp(dir + "/roc_summary.json").find("\"auc\": 1.0") != std::string::npos);
    CHECK_THROWS_AS(cmd_roc(cfg, dir + "/missing.csv"), DataError);
}

TEST_CASE("atomic writes replace files completely") {
    const std::string dir = testutil::scratch_dir("atomic");
    write_file_atomic(dir + "/f.txt", "first");
    write_file_atomic(dir + "/f.txt", "second");
    CHECK(slurp(dir + "/f.txt") == "second");
    CHECK(!std::filesystem::exists(dir + "/f.txt.tmp"));
}
