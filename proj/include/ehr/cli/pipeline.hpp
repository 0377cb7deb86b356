#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ehr/generator.hpp"
#include "ehr/metrics/forest.hpp"
#include "ehr/net/hybridnet.hpp"

namespace ehr::cli {

struct SplitConfig {
    std::size_t n_val_patients = 0;
    std::size_t n_test_patients = 0;
    std::size_t min_distinct_codes = 2;
};

struct FeaturizeConfig {
    std::size_t min_count = 5;
    double percentile = 90.0;
    std::size_t k_features = 64;
    std::size_t max_len = 0;  // 0 = use the percentile rule
};

struct ProbeConfig {
    std::vector<std::string> entities;  // empty = derive from generator concepts
    std::array<std::string, 2> modifiers{"state0", "state1"};
    std::size_t min_group_size = 25;
    std::size_t baseline_samples = 20000;
};

// Full effective configuration of a run. Sections and keys mirror the JSON
// config file; unknown keys anywhere are rejected. The global seed drives
// every stage through derived per-stage streams; sections carry no seeds of
// their own.
struct RunConfig {
    std::uint64_t seed = 0;
    GeneratorConfig generator;
    SplitConfig split;
    FeaturizeConfig featurize;
    net::ModelConfig model;  // vocab_size/n_structured resolved from the fitted preprocessing
    net::TrainConfig train;
    metrics::ForestConfig forest;
    ProbeConfig probe;

    static RunConfig from_file(const std::string& path);
    static RunConfig parse(const std::string& text, const std::string& context);

    // The effective config as a JSON object string, echoed into manifests.
    std::string echo_json() const;
};

// Artifact layout under one output directory.
struct StagePaths {
    std::string out_dir;

    std::string dataset() const { return out_dir + "/dataset.jsonl"; }
    std::string splits() const { return out_dir + "/splits.csv"; }
    std::string preprocessing() const { return out_dir + "/preprocessing.json"; }
    std::string checkpoint() const { return out_dir + "/model.ckpt"; }
    std::string history() const { return out_dir + "/train_history.csv"; }
    std::string embeddings() const { return out_dir + "/embeddings.csv"; }
    std::string metrics(const std::string& kind) const {
        return out_dir + "/metrics_" + kind + ".csv";
    }
    std::string comparison() const { return out_dir + "/comparison.txt"; }
    std::string probe_csv() const { return out_dir + "/probe.csv"; }
    std::string baseline_csv() const { return out_dir + "/random_baseline.csv"; }
    std::string manifest(const std::string& stage) const {
        return out_dir + "/" + stage + ".manifest.json";
    }
};

// Each stage reads its upstream artifacts from disk, writes its outputs and a
// manifest. A missing upstream artifact raises a ConfigError naming the
// subcommand that produces it.
void stage_generate(const RunConfig& config, const StagePaths& paths);
void stage_split(const RunConfig& config, const StagePaths& paths);
void stage_featurize(const RunConfig& config, const StagePaths& paths);
void stage_train(const RunConfig& config, const StagePaths& paths);
void stage_embed(const RunConfig& config, const StagePaths& paths);
void stage_eval(const RunConfig& config, const StagePaths& paths);
void stage_probe(const RunConfig& config, const StagePaths& paths);
void stage_pipeline(const RunConfig& config, const StagePaths& paths);

}  // namespace ehr::cli
