#include "tsanet/train_eval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "tsanet/errors.hpp"

#include "json.hpp"

namespace tsanet {

OptimizerKind optimizer_from_string(const std::string& s) {
    if (s == "sgd_momentum") return OptimizerKind::sgd_momentum;
    if (s == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + s + "'");
}

std::string to_string(OptimizerKind o) {
    return o == OptimizerKind::sgd_momentum ? "sgd_momentum" : "adam";
}

PatientAggregate aggregate_from_string(const std::string& s) {
    if (s == "mean") return PatientAggregate::mean_score;
    if (s == "vote") return PatientAggregate::majority_vote;
    throw ConfigError("unknown patient aggregate '" + s + "'");
}

std::string to_string(PatientAggregate a) {
    return a == PatientAggregate::mean_score ? "mean" : "vote";
}

std::vector<std::string> TrainConfig::check() const {
    std::vector<std::string> problems;
    if (epochs < 0) problems.push_back("train: epochs must be >= 0");
    if (batch_size < 1) problems.push_back("train: batch_size must be >= 1");
    if (lr < 0.0) problems.push_back("train: learning rate must be >= 0");
    if (train_frac < 0 || val_frac < 0 || test_frac < 0 ||
        std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
        problems.push_back("train: split fractions must be nonnegative and sum to 1");
    if (threshold < 0.0 || threshold > 1.0)
        problems.push_back("train: threshold must lie in [0,1]");
    return problems;
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

DatasetSplit split_by_subject(const std::vector<Segment>& segments, double train_frac,
                              double val_frac, double test_frac, uint64_t seed) {
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9 || train_frac < 0 ||
        val_frac < 0 || test_frac < 0)
        throw ConfigError("split_by_subject: fractions must be nonnegative and sum to 1");

    // Subjects stratified by label, shuffled deterministically.
    std::map<std::string, int> subject_label;
    for (const auto& s : segments) {
        auto it = subject_label.find(s.subject_id);
        if (it == subject_label.end())
            subject_label.emplace(s.subject_id, s.label);
        else if (it->second != s.label)
            throw DataError("split_by_subject: subject " + s.subject_id +
                            " has inconsistent labels");
    }
    std::vector<std::string> pos, neg;
    for (const auto& [id, label] : subject_label) (label == 1 ? pos : neg).push_back(id);

    Rng rng(mix_seed(seed, "subject-split"));
    rng.shuffle(pos);
    rng.shuffle(neg);

    std::map<std::string, int> assignment; // 0 train, 1 val, 2 test
    auto assign = [&](const std::vector<std::string>& ids) {
        const auto n = static_cast<double>(ids.size());
        const auto n_train = static_cast<size_t>(std::llround(train_frac * n));
        const auto n_val = static_cast<size_t>(std::llround(val_frac * n));
        for (size_t i = 0; i < ids.size(); ++i)
            assignment[ids[i]] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
    };
    assign(pos);
    assign(neg);

    DatasetSplit split;
    for (size_t i = 0; i < segments.size(); ++i) {
        const int bucket = assignment.at(segments[i].subject_id);
        (bucket == 0 ? split.train : bucket == 1 ? split.val : split.test)
            .push_back(static_cast<int>(i));
    }

    // Disjointness is structural, but assert it on every run anyway.
    std::set<std::string> train_subj, val_subj, test_subj;
    for (int i : split.train) train_subj.insert(segments[static_cast<size_t>(i)].subject_id);
    for (int i : split.val) val_subj.insert(segments[static_cast<size_t>(i)].subject_id);
    for (int i : split.test) test_subj.insert(segments[static_cast<size_t>(i)].subject_id);
    for (const auto& s : val_subj)
        if (train_subj.count(s)) throw DataError("split_by_subject: subject " + s + " in two splits");
    for (const auto& s : test_subj)
        if (train_subj.count(s) || val_subj.count(s))
            throw DataError("split_by_subject: subject " + s + " in two splits");
    return split;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<double>> snapshot_values(const std::vector<Tensor>& params) {
    std::vector<std::vector<double>> snap;
    snap.reserve(params.size());
    for (const auto& p : params) snap.push_back(p.value());
    return snap;
}

void restore_values(std::vector<Tensor>& params, const std::vector<std::vector<double>>& snap) {
    for (size_t i = 0; i < params.size(); ++i) params[i].mutable_value() = snap[i];
}

std::vector<double> model_scores(const MoeModel& model, const std::vector<Segment>& segments,
                                 const std::vector<int>& indices) {
    NoGradGuard no_grad;
    std::vector<double> scores;
    scores.reserve(indices.size());
    for (int i : indices) scores.push_back(model.forward(segments[static_cast<size_t>(i)]).y.item());
    return scores;
}

} // namespace

TrainResult train(MoeModel& model, const std::vector<Segment>& segments, const DatasetSplit& split,
                  const TrainConfig& config) {
    auto problems = config.check();
    if (!problems.empty()) {
        std::string msg = "invalid train config:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ConfigError(msg);
    }
    if (split.train.empty()) throw DataError("train: empty training split");

    std::vector<Tensor> params = model.parameters();
    SgdMomentum sgd(params, config.lr);
    Adam adam(params, config.lr);

    Rng shuffle_rng(mix_seed(config.seed, "batch-shuffle"));
    TrainResult result;
    std::vector<std::vector<double>> best_snapshot = snapshot_values(params);

    std::vector<int> order = split.train;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
            const double inv_batch = 1.0 / static_cast<double>(end - start);

            for (auto& p : params) p.zero_grad();
            double batch_loss = 0.0;
            for (size_t j = start; j < end; ++j) {
                const Segment& seg = segments[static_cast<size_t>(order[j])];
                MoeOutput out = model.forward(seg);
                Tensor loss = cross_entropy_binary(out.y, static_cast<double>(seg.label));
                batch_loss += loss.item();
                backward(mul_scalar(loss, inv_batch));
            }
            batch_loss *= inv_batch;
            if (!std::isfinite(batch_loss))
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   ", batch starting at " + std::to_string(start));
            result.batch_losses.push_back(batch_loss);

            if (config.optimizer == OptimizerKind::adam)
                adam.step();
            else
                sgd.step();
        }

        if (!split.val.empty()) {
            std::vector<double> scores = model_scores(model, segments, split.val);
            std::vector<int> labels;
            labels.reserve(split.val.size());
            for (int i : split.val) labels.push_back(segments[static_cast<size_t>(i)].label);
            bool has_pos = false, has_neg = false;
            for (int l : labels) (l == 1 ? has_pos : has_neg) = true;
            if (has_pos && has_neg) {
                const double auc = roc_auc(scores, labels).auc;
                result.val_auc.emplace_back(epoch, auc);
                // ties go to the later epoch: equal ranking, better calibration
                if (auc >= result.best_val_auc || result.best_epoch < 0) {
                    result.best_val_auc = auc;
                    result.best_epoch = epoch;
                    best_snapshot = snapshot_values(params);
                }
            }
        }
    }

    // Restore the best-validation snapshot; without a usable validation set
    // (empty or single-class) the final parameters stand.
    if (result.best_epoch >= 0) restore_values(params, best_snapshot);
    return result;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

ConfusionMatrix confusion_matrix(const std::vector<double>& scores, const std::vector<int>& labels,
                                 double threshold) {
    if (scores.size() != labels.size())
        throw ConfigError("confusion_matrix: " + std::to_string(scores.size()) + " scores vs " +
                          std::to_string(labels.size()) + " labels");
    ConfusionMatrix m;
    for (size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] >= threshold;
        if (labels[i] == 1)
            predicted ? ++m.tp : ++m.fn;
        else
            predicted ? ++m.fp : ++m.tn;
    }
    return m;
}

RocResult roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw DataError("roc_auc: scores and labels must be nonempty and aligned");
    int64_t n_pos = 0, n_neg = 0;
    for (int l : labels) (l == 1 ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0)
        throw DataError("roc_auc: both classes must be present (got " + std::to_string(n_pos) +
                        " positive, " + std::to_string(n_neg) + " negative)");

    std::vector<size_t> idx(scores.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });

    RocResult r;
    r.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    double area2 = 0.0; // twice the unnormalized area, exact in integer counts
    int64_t tp = 0, fp = 0;
    size_t i = 0;
    while (i < idx.size()) {
        const double s = scores[idx[i]];
        int64_t d_tp = 0, d_fp = 0;
        while (i < idx.size() && scores[idx[i]] == s) {
            (labels[idx[i]] == 1 ? d_tp : d_fp)++;
            ++i;
        }
        // Trapezoid over the tie group: ties count half.
        area2 += static_cast<double>(d_fp) * static_cast<double>(2 * tp + d_tp);
        tp += d_tp;
        fp += d_fp;
        r.points.push_back({s, static_cast<double>(fp) / static_cast<double>(n_neg),
                            static_cast<double>(tp) / static_cast<double>(n_pos)});
    }
    r.auc = area2 / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
    return r;
}

EvalReport evaluate_scores(const std::vector<double>& scores, const std::vector<int>& labels,
                           const std::vector<std::string>& subject_ids, double threshold,
                           PatientAggregate aggregate) {
    if (scores.empty()) throw DataError("evaluate: empty dataset");
    if (scores.size() != labels.size() || scores.size() != subject_ids.size())
        throw ConfigError("evaluate: scores, labels, and subject ids must align");

    EvalReport report;
    report.threshold = threshold;
    report.record_level = confusion_matrix(scores, labels, threshold);
    report.sensitivity = report.record_level.sensitivity();
    report.specificity = report.record_level.specificity();
    report.accuracy = report.record_level.accuracy();
    bool has_pos = false, has_neg = false;
    for (int l : labels) (l == 1 ? has_pos : has_neg) = true;
    if (has_pos && has_neg) {
        report.has_roc = true;
        report.roc = roc_auc(scores, labels);
    }

    // Patient level: aggregate the subject's segment scores, then threshold.
    std::map<std::string, std::pair<std::vector<double>, int>> per_subject;
    for (size_t i = 0; i < scores.size(); ++i) {
        auto& entry = per_subject[subject_ids[i]];
        entry.first.push_back(scores[i]);
        entry.second = labels[i];
    }
    std::vector<double> subject_scores;
    std::vector<int> subject_labels;
    for (const auto& [id, entry] : per_subject) {
        const auto& s = entry.first;
        double agg;
        if (aggregate == PatientAggregate::mean_score) {
            agg = 0.0;
            for (double v : s) agg += v;
            agg /= static_cast<double>(s.size());
        } else {
            int64_t votes = 0;
            for (double v : s)
                if (v >= threshold) ++votes;
            agg = 2 * votes >= static_cast<int64_t>(s.size()) ? 1.0 : 0.0;
        }
        subject_scores.push_back(agg);
        subject_labels.push_back(entry.second);
    }
    report.patient_level = confusion_matrix(subject_scores, subject_labels, threshold);
    return report;
}

EvalReport evaluate(const MoeModel& model, const std::vector<Segment>& segments, double threshold,
                    PatientAggregate aggregate) {
    if (segments.empty()) throw DataError("evaluate: empty dataset");
    NoGradGuard no_grad;
    std::vector<double> scores;
    std::vector<int> labels;
    std::vector<std::string> subjects;
    scores.reserve(segments.size());
    for (const auto& seg : segments) {
        scores.push_back(model.forward(seg).y.item());
        labels.push_back(seg.label);
        subjects.push_back(seg.subject_id);
    }
    return evaluate_scores(scores, labels, subjects, threshold, aggregate);
}

namespace {

nlohmann::ordered_json matrix_json(const ConfusionMatrix& m) {
    return {{"tp", m.tp},
            {"fp", m.fp},
            {"tn", m.tn},
            {"fn", m.fn},
            {"sensitivity", m.sensitivity()},
            {"specificity", m.specificity()},
            {"accuracy", m.accuracy()}};
}

} // namespace

std::string eval_report_json(const EvalReport& report, uint64_t seed) {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["threshold"] = report.threshold;
    j["sensitivity"] = report.sensitivity;
    j["accuracy"] = report.accuracy;
    j["specificity"] = report.specificity;
    if (report.has_roc)
        j["auc"] = report.roc.auc;
    else
        j["auc"] = nullptr;
    j["record"] = matrix_json(report.record_level);
    j["patient"] = matrix_json(report.patient_level);
    nlohmann::ordered_json roc = nlohmann::ordered_json::array();
    for (const auto& p : report.roc.points) {
        nlohmann::ordered_json point;
        if (std::isinf(p.threshold))
            point["threshold"] = "inf";
        else
            point["threshold"] = p.threshold;
        point["fpr"] = p.fpr;
        point["tpr"] = p.tpr;
        roc.push_back(point);
    }
    j["roc"] = roc;
    return j.dump(2) + "\n";
}

std::string eval_report_csv(const EvalReport& report, uint64_t seed) {
    std::ostringstream out;
    out << "# seed=" << seed << "\n";
    out << "sensitivity,accuracy,specificity,auc\n";
    out.precision(17);
    out << report.sensitivity << "," << report.accuracy << "," << report.specificity << ",";
    if (report.has_roc)
        out << report.roc.auc;
    else
        out << "nan";
    out << "\n";
    return out.str();
}

std::string roc_points_csv(const RocResult& roc, uint64_t seed) {
    std::ostringstream out;
    out << "# seed=" << seed << "\n";
    out << "threshold,fpr,tpr\n";
    out.precision(17);
    for (const auto& p : roc.points) {
        if (std::isinf(p.threshold))
            out << "inf";
        else
            out << p.threshold;
        out << "," << p.fpr << "," << p.tpr << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'T', 'S', 'C', 'K'};
constexpr uint32_t kCheckpointVersion = 1;

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
           static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

uint64_t get_u64(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

} // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& params) {
    std::string buf;
    buf.append(kCheckpointMagic, 4);
    put_u32(buf, kCheckpointVersion);
    put_u32(buf, static_cast<uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        put_u32(buf, static_cast<uint32_t>(name.size()));
        buf.append(name);
        buf.push_back(0); // dtype f64
        put_u64(buf, static_cast<uint64_t>(t.numel()));
        for (double v : t.value()) put_u64(buf, std::bit_cast<uint64_t>(v));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("save_checkpoint: cannot write " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("save_checkpoint: write failed for " + path);
}

void load_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_checkpoint: cannot open " + path);
    std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (data.size() < 12 || std::memcmp(data.data(), kCheckpointMagic, 4) != 0)
        throw DataError("load_checkpoint: bad header in " + path);
    if (get_u32(data.data() + 4) != kCheckpointVersion)
        throw DataError("load_checkpoint: unsupported version in " + path);
    const uint32_t n_entries = get_u32(data.data() + 8);

    std::map<std::string, std::vector<double>> loaded;
    size_t off = 12;
    for (uint32_t e = 0; e < n_entries; ++e) {
        if (off + 4 > data.size()) throw DataError("load_checkpoint: truncated file " + path);
        const uint32_t name_len = get_u32(data.data() + off);
        off += 4;
        if (off + name_len + 9 > data.size())
            throw DataError("load_checkpoint: truncated file " + path);
        std::string name(reinterpret_cast<const char*>(data.data() + off), name_len);
        off += name_len;
        const uint8_t dtype = data[off++];
        if (dtype != 0) throw DataError("load_checkpoint: unsupported dtype in " + path);
        const uint64_t count = get_u64(data.data() + off);
        off += 8;
        if (off + count * 8 > data.size())
            throw DataError("load_checkpoint: truncated payload in " + path);
        std::vector<double> values(static_cast<size_t>(count));
        for (uint64_t i = 0; i < count; ++i)
            values[static_cast<size_t>(i)] = std::bit_cast<double>(get_u64(data.data() + off + i * 8));
        off += count * 8;
        loaded.emplace(std::move(name), std::move(values));
    }

    std::string errors;
    for (const auto& [name, t] : params) {
        auto it = loaded.find(name);
        if (it == loaded.end()) {
            errors += "\n  - missing parameter " + name;
            continue;
        }
        if (static_cast<int64_t>(it->second.size()) != t.numel()) {
            errors += "\n  - parameter " + name + " has " + std::to_string(it->second.size()) +
                      " values, expected " + std::to_string(t.numel());
            continue;
        }
        Tensor handle = t; // shared storage; assigns into the live parameter
        handle.mutable_value() = it->second;
        loaded.erase(it);
    }
    for (const auto& [name, values] : loaded) errors += "\n  - unexpected parameter " + name;
    if (!errors.empty()) throw DataError("load_checkpoint: " + path + errors);
}

} // namespace tsanet
