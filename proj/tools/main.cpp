#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "tsanet/commands.hpp"
#include "tsanet/errors.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config file (key = value lines)");
    cmd->add_option("--set", args.overrides, "override a config key, e.g. --set train.epochs=5")
        ->take_all();
    cmd->add_option("--out", args.out_dir, "output directory (overrides config and TSANET_OUT_DIR)");
    cmd->add_option("--seed", args.seed, "root seed (overrides config)");
}

tsanet::ExperimentConfig make_config(const CommonArgs& args) {
    tsanet::ExperimentConfig config = args.config_path.empty()
                                          ? tsanet::ExperimentConfig::defaults()
                                          : tsanet::ExperimentConfig::from_file(args.config_path);
    for (const auto& kv : args.overrides) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw tsanet::ConfigError("--set expects key=value, got '" + kv + "'");
        config.apply_override(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (args.seed >= 0) config.apply_override("seed", std::to_string(args.seed));
    if (const char* env = std::getenv("TSANET_OUT_DIR"); env && *env) config.out_dir = env;
    if (!args.out_dir.empty()) config.out_dir = args.out_dir;
    return config;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"long-range 1D signal transformer with time-square tokenization"};
    app.require_subcommand(1);

    CommonArgs synth_args, pre_args, stats_args, train_args, eval_args, roc_args;
    std::string manifest_in, checkpoint_path, split_name = "test", scores_csv, experts;

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic labeled corpus");
    add_common(synth, synth_args);

    CLI::App* pre = app.add_subcommand("preprocess", "resample/denoise/normalize a manifest");
    add_common(pre, pre_args);
    pre->add_option("--manifest", manifest_in, "input manifest")->required();

    CLI::App* stats = app.add_subcommand("tokenize-stats", "attention-cost comparison CSV");
    add_common(stats, stats_args);

    CLI::App* tr = app.add_subcommand("train", "train the model on the configured corpus");
    add_common(tr, train_args);
    tr->add_option("--experts", experts, "expert patch sizes, e.g. 'single:T' or 'T/4,T,4T'");

    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(ev, eval_args);
    ev->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    ev->add_option("--split", split_name, "train|val|test|all (default test)");

    CLI::App* roc = app.add_subcommand("roc", "ROC/AUC from a score,label CSV");
    add_common(roc, roc_args);
    roc->add_option("--scores", scores_csv, "CSV of score,label rows")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return tsanet::cmd_synth(make_config(synth_args));
        if (pre->parsed()) return tsanet::cmd_preprocess(make_config(pre_args), manifest_in);
        if (stats->parsed()) return tsanet::cmd_tokenize_stats(make_config(stats_args));
        if (tr->parsed()) {
            if (!experts.empty()) train_args.overrides.push_back("tsa.experts=" + experts);
            return tsanet::cmd_train(make_config(train_args));
        }
        if (ev->parsed())
            return tsanet::cmd_eval(make_config(eval_args), checkpoint_path, split_name);
        if (roc->parsed()) return tsanet::cmd_roc(make_config(roc_args), scores_csv);
    } catch (const tsanet::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const tsanet::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const tsanet::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
