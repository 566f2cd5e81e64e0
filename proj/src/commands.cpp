#include "tsanet/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "tsanet/errors.hpp"
#include "tsanet/tsa.hpp"

#include "json.hpp"

namespace fs = std::filesystem;

namespace tsanet {

namespace {

std::string subject_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "S%04d", i);
    return buf;
}

SignalRecord synth_subject(const ExperimentConfig& config, int i) {
    const int label = i % 2;
    const ClassParams& params = label == 1 ? config.signal.pos : config.signal.neg;
    const uint64_t seed = mix_seed(config.seed, "synth-" + subject_name(i));
    return generate_synthetic(subject_name(i), config.signal.record_duration_s, params, label,
                              config.signal.fs, seed);
}

std::vector<SignalRecord> load_records(const ExperimentConfig& config) {
    std::vector<SignalRecord> records;
    if (config.signal.manifest.empty()) {
        records.reserve(static_cast<size_t>(config.signal.n_subjects));
        for (int i = 0; i < config.signal.n_subjects; ++i) records.push_back(synth_subject(config, i));
    } else {
        const Manifest manifest = load_manifest(config.signal.manifest);
        const fs::path base = fs::path(config.signal.manifest).parent_path();
        for (const auto& e : manifest.entries) {
            fs::path p(e.path);
            if (p.is_relative()) p = base / p;
            SignalRecord rec = load_waveform(p.string(), e.subject_id, e.label);
            if (rec.fs != e.fs)
                throw DataError("manifest fs " + std::to_string(e.fs) + " disagrees with file fs " +
                                std::to_string(rec.fs) + " for " + e.path);
            records.push_back(std::move(rec));
        }
    }
    return records;
}

} // namespace

std::vector<Segment> build_corpus(const ExperimentConfig& config) {
    std::vector<Segment> segments;
    for (const auto& rec : load_records(config)) {
        const SignalRecord prepped = preprocess(rec, config.preprocess.denoise_window);
        auto segs = segment(prepped, config.preprocess.segment_s);
        segments.insert(segments.end(), std::make_move_iterator(segs.begin()),
                        std::make_move_iterator(segs.end()));
    }
    return segments;
}

MoeModel build_model(const ExperimentConfig& config) {
    return MoeModel(config.resolve_experts(), config.segment_len(), config.tsa.T,
                    config.moe.gate_input, mix_seed(config.seed, "model-init"));
}

void write_file_atomic(const std::string& path, const std::string& content) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw DataError("write failed for " + tmp.string());
    }
    fs::rename(tmp, target);
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int cmd_synth(const ExperimentConfig& config) {
    config.validate();
    const fs::path data_dir = fs::path(config.out_dir) / "data";
    std::error_code ec;
    fs::create_directories(data_dir, ec);
    if (ec) throw DataError("cannot create " + data_dir.string() + ": " + ec.message());

    Manifest manifest;
    manifest.has_seed = true;
    manifest.seed = config.seed;
    for (int i = 0; i < config.signal.n_subjects; ++i) {
        const SignalRecord rec = synth_subject(config, i);
        const std::string file = subject_name(i) + ".ppg";
        save_waveform((data_dir / file).string(), rec);
        manifest.entries.push_back({file, rec.subject_id, rec.label, rec.fs});
    }
    save_manifest((data_dir / "manifest.csv").string(), manifest);
    std::cout << "wrote " << config.signal.n_subjects << " records to " << data_dir.string()
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

int cmd_preprocess(const ExperimentConfig& config, const std::string& manifest_in) {
    config.validate();
    const Manifest manifest = load_manifest(manifest_in);
    const fs::path base = fs::path(manifest_in).parent_path();
    const fs::path out_dir = fs::path(config.out_dir) / "preprocessed";
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());

    Manifest out_manifest;
    out_manifest.has_seed = manifest.has_seed;
    out_manifest.seed = manifest.seed;
    for (const auto& e : manifest.entries) {
        fs::path p(e.path);
        if (p.is_relative()) p = base / p;
        const SignalRecord rec = load_waveform(p.string(), e.subject_id, e.label);
        const SignalRecord prepped = preprocess(rec, config.preprocess.denoise_window);
        const std::string file = e.subject_id + ".ppg";
        save_waveform((out_dir / file).string(), prepped);
        out_manifest.entries.push_back({file, e.subject_id, e.label, prepped.fs});
        const auto segs = segment(prepped, config.preprocess.segment_s);
        std::cout << e.subject_id << ": " << prepped.samples.size() << " samples @128Hz, "
                  << segs.size() << " segments\n";
    }
    save_manifest((out_dir / "manifest.csv").string(), out_manifest);
    return 0;
}

// ---------------------------------------------------------------------------
// tokenize-stats
// ---------------------------------------------------------------------------

namespace {

const std::vector<double> kStatsLengthsSeconds = {8, 30, 60, 180, 360, 600};

} // namespace

int cmd_tokenize_stats(const ExperimentConfig& config) {
    config.validate();
    std::ostringstream csv;
    csv << "# seed=" << config.seed << "\n";
    csv << "variant,L,k_or_b,tokens,pairs\n";
    for (double seconds : kStatsLengthsSeconds) {
        const int64_t L = static_cast<int64_t>(std::llround(seconds * kTargetHz));
        CostParams params;
        params.block = config.tsa.stats_block;
        params.budget = config.tsa.stats_budget;
        params.base_T = config.tsa.T;
        params.patch_D = config.tsa.T;

        const CostModel full = build_cost_model(AttentionVariant::full_1d, L, params);
        csv << "full_1d," << L << ",0," << full.token_count << "," << full.attention_pair_count
            << "\n";
        const CostModel block = build_cost_model(AttentionVariant::block_sparse, L, params);
        csv << "block_sparse," << L << "," << params.block << "," << block.token_count << ","
            << block.attention_pair_count << "\n";
        const CostModel decay = build_cost_model(AttentionVariant::time_decay_sparse, L, params);
        csv << "time_decay_sparse," << L << "," << params.budget << "," << decay.token_count << ","
            << decay.attention_pair_count << "\n";
        for (int64_t k : config.tsa.stats_k) {
            if (params.patch_D > L) continue; // grid needs at least one row
            CostParams tsa_params = params;
            tsa_params.k = k;
            const CostModel tsa = build_cost_model(AttentionVariant::tsa, L, tsa_params);
            csv << "tsa," << L << "," << k << "," << tsa.token_count << ","
                << tsa.attention_pair_count << "\n";
        }
    }
    const std::string out_path = (fs::path(config.out_dir) / "token_stats.csv").string();
    const std::string content = csv.str();
    write_file_atomic(out_path, content);
    const auto rows = std::count(content.begin(), content.end(), '\n') - 1;
    std::cout << "wrote " << out_path << " (" << rows << " rows)\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const ExperimentConfig& config) {
    config.validate();
    const std::vector<Segment> segments = build_corpus(config);
    if (segments.empty()) throw DataError("train: corpus is empty (records shorter than a segment?)");
    const DatasetSplit split = split_by_subject(segments, config.train.train_frac,
                                                config.train.val_frac, config.train.test_frac,
                                                config.seed);
    MoeModel model = build_model(config);
    const TrainResult result = train(model, segments, split, config.train);

    const fs::path out_dir(config.out_dir);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());
    save_checkpoint((out_dir / "checkpoint.tsck").string(), model.named_parameters());

    std::ostringstream curve;
    curve << "# seed=" << config.seed << "\n";
    curve << "epoch,batch,loss\n";
    curve.precision(17);
    const size_t batches_per_epoch =
        (split.train.size() + static_cast<size_t>(config.train.batch_size) - 1) /
        static_cast<size_t>(config.train.batch_size);
    for (size_t i = 0; i < result.batch_losses.size(); ++i)
        curve << i / std::max<size_t>(1, batches_per_epoch) << ","
              << i % std::max<size_t>(1, batches_per_epoch) << "," << result.batch_losses[i] << "\n";
    write_file_atomic((out_dir / "loss_curve.csv").string(), curve.str());

    nlohmann::ordered_json summary;
    summary["seed"] = config.seed;
    summary["n_segments"] = segments.size();
    summary["n_train"] = split.train.size();
    summary["n_val"] = split.val.size();
    summary["n_test"] = split.test.size();
    summary["epochs"] = config.train.epochs;
    summary["best_epoch"] = result.best_epoch;
    summary["best_val_auc"] = result.best_val_auc;
    summary["final_train_loss"] =
        result.batch_losses.empty() ? 0.0 : result.batch_losses.back();
    write_file_atomic((out_dir / "train_summary.json").string(), summary.dump(2) + "\n");

    std::cout << "checkpoint: " << (out_dir / "checkpoint.tsck").string() << "\n";
    std::cout << "best val AUC " << result.best_val_auc << " at epoch " << result.best_epoch
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const ExperimentConfig& config, const std::string& checkpoint_path,
             const std::string& split_name) {
    config.validate();
    const std::vector<Segment> segments = build_corpus(config);
    const DatasetSplit split = split_by_subject(segments, config.train.train_frac,
                                                config.train.val_frac, config.train.test_frac,
                                                config.seed);
    MoeModel model = build_model(config);
    load_checkpoint(checkpoint_path, model.named_parameters());

    std::vector<Segment> chosen;
    if (split_name == "all") {
        chosen = segments;
    } else {
        const std::vector<int>* idx = nullptr;
        if (split_name == "train") idx = &split.train;
        else if (split_name == "val") idx = &split.val;
        else if (split_name == "test") idx = &split.test;
        else throw ConfigError("eval: unknown split '" + split_name + "'");
        for (int i : *idx) chosen.push_back(segments[static_cast<size_t>(i)]);
    }

    const EvalReport report = evaluate(model, chosen, config.train.threshold,
                                       config.train.aggregate);
    const fs::path out_dir(config.out_dir);
    write_file_atomic((out_dir / "metrics.json").string(), eval_report_json(report, config.seed));
    write_file_atomic((out_dir / "metrics.csv").string(), eval_report_csv(report, config.seed));
    write_file_atomic((out_dir / "roc.csv").string(), roc_points_csv(report.roc, config.seed));

    std::cout << "split=" << split_name << " n=" << chosen.size() << " sensitivity="
              << report.sensitivity << " accuracy=" << report.accuracy << " specificity="
              << report.specificity << " auc=" << report.roc.auc << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// roc
// ---------------------------------------------------------------------------

int cmd_roc(const ExperimentConfig& config, const std::string& scores_csv) {
    std::ifstream in(scores_csv);
    if (!in) throw DataError("roc: cannot open " + scores_csv);
    std::vector<double> scores;
    std::vector<int> labels;
    std::string line;
    int lineno = 0;
    bool first_content = true;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::stringstream ss(line);
        std::string score_str, label_str;
        if (!std::getline(ss, score_str, ',') || !std::getline(ss, label_str))
            throw DataError("roc: malformed line " + std::to_string(lineno) + " in " + scores_csv);
        try {
            const double score = std::stod(score_str);
            labels.push_back(std::stoi(label_str));
            scores.push_back(score);
        } catch (const std::exception&) {
            if (first_content) { // header row
                first_content = false;
                continue;
            }
            throw DataError("roc: bad number at line " + std::to_string(lineno) + " in " +
                            scores_csv);
        }
        first_content = false;
    }
    const RocResult roc = roc_auc(scores, labels);

    const fs::path out_dir(config.out_dir);
    write_file_atomic((out_dir / "roc.csv").string(), roc_points_csv(roc, config.seed));
    nlohmann::ordered_json j;
    j["seed"] = config.seed;
    j["n"] = scores.size();
    j["auc"] = roc.auc;
    write_file_atomic((out_dir / "roc_summary.json").string(), j.dump(2) + "\n");
    std::cout << "auc=" << roc.auc << " (" << scores.size() << " scores)\n";
    return 0;
}

} // namespace tsanet
