#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "ehr/cli/pipeline.hpp"
#include "ehr/errors.hpp"

namespace {

struct CliState {
    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::size_t k_features = 0;
    std::size_t max_len = 0;
    std::size_t epochs = 0;
    double lr = 0.0;
    std::size_t batch_size = 0;
    std::size_t min_group_size = 0;
};

void add_common_flags(CLI::App* cmd, CliState& state) {
    cmd->add_option("--config", state.config_path, "JSON run configuration file");
    cmd->add_option("--seed", state.seed, "global seed overriding the config");
    cmd->add_option("--out", state.out_dir, "output directory for artifacts")
        ->capture_default_str();
    cmd->add_option("--threads", state.threads,
                    "worker threads; 1 is the fully deterministic path (stages currently run "
                    "single-threaded for any value)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
}

void add_featurize_flags(CLI::App* cmd, CliState& state) {
    cmd->add_option("--k-features", state.k_features,
                    "number of structured features kept by the chi-square selector");
    cmd->add_option("--max-len", state.max_len,
                    "fixed token truncation length (0 = percentile rule)");
}

void add_train_flags(CLI::App* cmd, CliState& state) {
    cmd->add_option("--epochs", state.epochs, "maximum training epochs");
    cmd->add_option("--lr", state.lr, "Adam learning rate");
    cmd->add_option("--batch-size", state.batch_size, "minibatch size");
}

void add_probe_flags(CLI::App* cmd, CliState& state) {
    cmd->add_option("--min-group-size", state.min_group_size,
                    "minimum stays per modifier group in the concept scan");
}

ehr::cli::RunConfig effective_config(const CLI::App* sub, const CliState& state) {
    ehr::cli::RunConfig config;
    if (!state.config_path.empty()) {
        config = ehr::cli::RunConfig::from_file(state.config_path);
    }
    auto has = [sub](const std::string& flag) {
        const CLI::Option* option = sub->get_option_no_throw(flag);
        return option != nullptr && option->count() > 0;
    };
    if (has("--seed")) config.seed = state.seed;
    if (has("--k-features")) config.featurize.k_features = state.k_features;
    if (has("--max-len")) config.featurize.max_len = state.max_len;
    if (has("--epochs")) config.train.max_epochs = state.epochs;
    if (has("--lr")) config.train.lr = state.lr;
    if (has("--batch-size")) config.train.batch_size = state.batch_size;
    if (has("--min-group-size")) config.probe.min_group_size = state.min_group_size;
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stayembed: learn and evaluate visit embeddings from mixed free-text and "
                 "structured records"};
    app.require_subcommand(1);
    CliState state;

    using StageFn = void (*)(const ehr::cli::RunConfig&, const ehr::cli::StagePaths&);
    std::map<std::string, StageFn> stages;

    auto add_stage = [&](const std::string& name, const std::string& description, StageFn fn) {
        CLI::App* cmd = app.add_subcommand(name, description);
        add_common_flags(cmd, state);
        stages[name] = fn;
        return cmd;
    };

    add_stage("generate", "draw a synthetic dataset", ehr::cli::stage_generate);
    add_stage("split", "assign patients to train/validation/test", ehr::cli::stage_split);
    CLI::App* featurize =
        add_stage("featurize", "fit vocabulary, truncation and feature selection",
                  ehr::cli::stage_featurize);
    add_featurize_flags(featurize, state);
    CLI::App* train = add_stage("train", "train the hybrid network", ehr::cli::stage_train);
    add_train_flags(train, state);
    add_stage("embed", "write visit embeddings for every stay", ehr::cli::stage_embed);
    add_stage("eval", "run the rf / deep / emb+rf comparison", ehr::cli::stage_eval);
    CLI::App* probe =
        add_stage("probe", "concept scan and random-cosine baseline", ehr::cli::stage_probe);
    add_probe_flags(probe, state);
    CLI::App* pipeline =
        add_stage("pipeline", "run every stage in order", ehr::cli::stage_pipeline);
    add_featurize_flags(pipeline, state);
    add_train_flags(pipeline, state);
    add_probe_flags(pipeline, state);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    const CLI::App* sub = app.get_subcommands().front();
    try {
        const ehr::cli::RunConfig config = effective_config(sub, state);
        const ehr::cli::StagePaths paths{state.out_dir};
        stages.at(sub->get_name())(config, paths);
    } catch (const ehr::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
