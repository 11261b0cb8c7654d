#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fisel/commands.hpp"

namespace {

struct GlobalArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
};

void add_global_flags(CLI::App* cmd, GlobalArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON config file");
    cmd->add_option("--set", args.overrides,
                    "Override one config key, e.g. --set train.lr_model=0.01 (repeatable)");
    cmd->add_option("--seed", args.seed, "Override train.seed and synth.seed");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deep sparse network trainer with hybrid-grained interaction selection"};
    app.require_subcommand(1);

    GlobalArgs args;
    std::string grain_str = "hybrid";
    std::string mask_str = "learned";
    std::string split_str = "test";
    std::string checkpoint_path;

    CLI::App* synth = app.add_subcommand("synth", "Generate a planted-interaction dataset");
    add_global_flags(synth, args);

    CLI::App* preprocess =
        app.add_subcommand("preprocess", "Build vocabulary and encoded splits from raw TSV");
    add_global_flags(preprocess, args);

    CLI::App* baseline =
        app.add_subcommand("baseline", "Train with every interaction kept (mask all-ones)");
    add_global_flags(baseline, args);

    CLI::App* search = app.add_subcommand(
        "search", "Alternating selection/model optimization over train+validation batches");
    add_global_flags(search, args);
    search->add_option("--grain", grain_str, "Selection granularity: hybrid|field|value");

    CLI::App* retrain = app.add_subcommand(
        "retrain", "Freeze the searched selection and train a fresh model against it");
    add_global_flags(retrain, args);
    CLI::Option* retrain_grain =
        retrain->add_option("--grain", grain_str,
                            "Freeze granularity (default: the grain recorded by search)");
    retrain->add_option("--mask", mask_str, "Mask source: learned|keep_all|drop_all");

    CLI::App* evaluate =
        app.add_subcommand("evaluate", "Score a checkpoint and emit metric/keep-ratio reports");
    add_global_flags(evaluate, args);
    evaluate->add_option("--checkpoint", checkpoint_path,
                         "Checkpoint to score (default: <output.dir>/retrain.ckpt)");
    evaluate->add_option("--split", split_str, "Split to score: train|val|test");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const fisel::Config cfg = fisel::load_config(args.config_path, args.overrides, args.seed);
        if (synth->parsed()) {
            fisel::cmd_synth(cfg);
        } else if (preprocess->parsed()) {
            fisel::cmd_preprocess(cfg);
        } else if (baseline->parsed()) {
            fisel::cmd_baseline(cfg);
        } else if (search->parsed()) {
            fisel::cmd_search(cfg, fisel::parse_grain(grain_str));
        } else if (retrain->parsed()) {
            std::optional<fisel::Grain> grain_flag;
            if (retrain_grain->count() > 0) grain_flag = fisel::parse_grain(grain_str);
            fisel::cmd_retrain(cfg, grain_flag, fisel::parse_mask_source(mask_str));
        } else if (evaluate->parsed()) {
            fisel::cmd_evaluate(cfg, checkpoint_path, split_str);
        }
    } catch (const fisel::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const fisel::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
