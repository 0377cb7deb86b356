#include "ehr/cli/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "ehr/errors.hpp"
#include "ehr/featurize.hpp"
#include "ehr/format.hpp"
#include "ehr/manifest.hpp"
#include "ehr/metrics/metrics.hpp"
#include "ehr/metrics/protocol.hpp"
#include "ehr/probe/probe.hpp"
#include "ehr/rng.hpp"

namespace ehr::cli {
namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, const std::string& context,
                         const std::set<std::string>& allowed) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (allowed.count(key) == 0) {
            throw ConfigError("unknown key '" + key + "' in " + context);
        }
    }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out, const std::string& context) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(context + "." + key + ": " + e.what());
    }
}

ConceptSpec parse_concept(const json& obj, const std::string& context) {
    reject_unknown_keys(obj, context,
                        {"name", "entities", "states", "assign_prob", "words_per_entity",
                         "modifier_words", "entity_word_weight", "modifier_word_weight",
                         "modifier_features", "modifier_event_rate"});
    ConceptSpec spec;
    read_field(obj, "name", spec.name, context);
    read_field(obj, "entities", spec.entities, context);
    if (obj.contains("states")) {
        const auto states = obj.at("states").get<std::vector<std::string>>();
        if (states.size() != 2) throw ConfigError(context + ".states must have exactly 2 entries");
        spec.states = {states[0], states[1]};
    }
    read_field(obj, "assign_prob", spec.assign_prob, context);
    read_field(obj, "words_per_entity", spec.words_per_entity, context);
    read_field(obj, "modifier_words", spec.modifier_words, context);
    read_field(obj, "entity_word_weight", spec.entity_word_weight, context);
    read_field(obj, "modifier_word_weight", spec.modifier_word_weight, context);
    read_field(obj, "modifier_features", spec.modifier_features, context);
    read_field(obj, "modifier_event_rate", spec.modifier_event_rate, context);
    return spec;
}

GeneratorConfig parse_generator(const json& obj, const std::string& context) {
    reject_unknown_keys(
        obj, context,
        {"n_patients", "stays_per_patient_mean", "label_prevalences", "vocab_size",
         "docs_per_stay_mean", "doc_length", "topic_words_per_label", "n_structured_features",
         "features_per_label", "base_event_rate", "label_event_rate", "signal_strength",
         "concepts"});
    GeneratorConfig config;
    read_field(obj, "n_patients", config.n_patients, context);
    read_field(obj, "stays_per_patient_mean", config.stays_per_patient_mean, context);
    if (obj.contains("label_prevalences")) {
        const auto values = obj.at("label_prevalences").get<std::vector<double>>();
        if (values.size() != kNumLabels) {
            throw ConfigError(context + ".label_prevalences must have exactly " +
                              std::to_string(kNumLabels) + " entries");
        }
        std::copy(values.begin(), values.end(), config.label_prevalences.begin());
    }
    read_field(obj, "vocab_size", config.vocab_size, context);
    read_field(obj, "docs_per_stay_mean", config.docs_per_stay_mean, context);
    read_field(obj, "doc_length", config.doc_length, context);
    read_field(obj, "topic_words_per_label", config.topic_words_per_label, context);
    read_field(obj, "n_structured_features", config.n_structured_features, context);
    read_field(obj, "features_per_label", config.features_per_label, context);
    read_field(obj, "base_event_rate", config.base_event_rate, context);
    read_field(obj, "label_event_rate", config.label_event_rate, context);
    read_field(obj, "signal_strength", config.signal_strength, context);
    if (obj.contains("concepts")) {
        config.concept_pairs.clear();
        std::size_t i = 0;
        for (const json& c : obj.at("concepts")) {
            config.concept_pairs.push_back(
                parse_concept(c, context + ".concepts[" + std::to_string(i) + "]"));
            ++i;
        }
    }
    return config;
}

json concept_to_json(const ConceptSpec& spec) {
    return json{{"name", spec.name},
                {"entities", spec.entities},
                {"states", std::vector<std::string>(spec.states.begin(), spec.states.end())},
                {"assign_prob", spec.assign_prob},
                {"words_per_entity", spec.words_per_entity},
                {"modifier_words", spec.modifier_words},
                {"entity_word_weight", spec.entity_word_weight},
                {"modifier_word_weight", spec.modifier_word_weight},
                {"modifier_features", spec.modifier_features},
                {"modifier_event_rate", spec.modifier_event_rate}};
}

std::string require_input(const std::string& path, const std::string& what,
                          const std::string& producer) {
    if (!std::filesystem::exists(path)) {
        throw ConfigError("missing " + what + " at " + path + "; run `stayembed " + producer +
                          "` first");
    }
    return path;
}

class StageTimer {
public:
    StageTimer() : start_(std::chrono::steady_clock::now()) {}

    double seconds() const {
        const auto elapsed = std::chrono::steady_clock::now() - start_;
        return std::chrono::duration<double>(elapsed).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

void ensure_out_dir(const StagePaths& paths) {
    std::error_code ec;
    std::filesystem::create_directories(paths.out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + paths.out_dir + ": " + ec.message());
}

void emit_manifest(const RunConfig& config, const StagePaths& paths, const std::string& stage,
                   std::uint64_t stage_seed, const StageTimer& timer,
                   const std::vector<std::string>& inputs, const std::vector<std::string>& outputs) {
    Manifest manifest;
    manifest.stage = stage;
    manifest.seed = stage_seed;
    manifest.wall_seconds = timer.seconds();
    manifest.config_echo = config.echo_json();
    for (const std::string& path : inputs) manifest.inputs.emplace_back(path, file_hash(path));
    for (const std::string& path : outputs) manifest.outputs.emplace_back(path, file_hash(path));
    write_manifest(manifest, paths.manifest(stage));
}

net::ModelConfig resolve_model_config(const RunConfig& config, const Preprocessing& prep) {
    net::ModelConfig model = config.model;
    model.vocab_size = prep.vocabulary.size();
    model.n_structured = prep.selector.columns.size();
    model.seed = Rng::derive_seed(config.seed, "model");
    return model;
}

void check_checkpoint_freshness(const net::Checkpoint& ckpt, const std::string& prep_path) {
    const std::string current = file_hash(prep_path);
    if (ckpt.preprocessing_hash != current) {
        throw IntegrityError("checkpoint was trained against a different featurization (" +
                             ckpt.preprocessing_hash + " vs " + current +
                             "); rerun `stayembed train`");
    }
}

std::vector<std::string> probe_entity_tags(const RunConfig& config) {
    if (!config.probe.entities.empty()) return config.probe.entities;
    std::vector<std::string> tags;
    for (const ConceptSpec& spec : config.generator.concept_pairs) {
        for (const std::string& entity : spec.entities) {
            tags.push_back(spec.name + ":" + entity);
        }
    }
    if (tags.empty()) {
        throw ConfigError("probe has no entities: list probe.entities or configure generator "
                          "concepts");
    }
    return tags;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text, const std::string& context) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(context + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError(context + ": config must be a JSON object");
    reject_unknown_keys(j, context,
                        {"seed", "generator", "split", "featurize", "model", "train", "forest",
                         "probe"});

    RunConfig config;
    read_field(j, "seed", config.seed, context);
    if (j.contains("generator")) {
        config.generator = parse_generator(j.at("generator"), context + ".generator");
    }
    if (j.contains("split")) {
        const json& s = j.at("split");
        reject_unknown_keys(s, context + ".split",
                            {"n_val_patients", "n_test_patients", "min_distinct_codes"});
        read_field(s, "n_val_patients", config.split.n_val_patients, context + ".split");
        read_field(s, "n_test_patients", config.split.n_test_patients, context + ".split");
        read_field(s, "min_distinct_codes", config.split.min_distinct_codes, context + ".split");
    }
    if (j.contains("featurize")) {
        const json& f = j.at("featurize");
        reject_unknown_keys(f, context + ".featurize",
                            {"min_count", "percentile", "k_features", "max_len"});
        read_field(f, "min_count", config.featurize.min_count, context + ".featurize");
        read_field(f, "percentile", config.featurize.percentile, context + ".featurize");
        read_field(f, "k_features", config.featurize.k_features, context + ".featurize");
        read_field(f, "max_len", config.featurize.max_len, context + ".featurize");
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        reject_unknown_keys(m, context + ".model",
                            {"word_dim", "conv_widths", "channels_per_width", "mlp_hidden",
                             "dropout_rate"});
        read_field(m, "word_dim", config.model.word_dim, context + ".model");
        read_field(m, "conv_widths", config.model.conv_widths, context + ".model");
        read_field(m, "channels_per_width", config.model.channels_per_width, context + ".model");
        read_field(m, "mlp_hidden", config.model.mlp_hidden, context + ".model");
        read_field(m, "dropout_rate", config.model.dropout_rate, context + ".model");
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        reject_unknown_keys(t, context + ".train",
                            {"lr", "batch_size", "max_epochs", "patience",
                             "min_rel_improvement"});
        read_field(t, "lr", config.train.lr, context + ".train");
        read_field(t, "batch_size", config.train.batch_size, context + ".train");
        read_field(t, "max_epochs", config.train.max_epochs, context + ".train");
        read_field(t, "patience", config.train.patience, context + ".train");
        read_field(t, "min_rel_improvement", config.train.min_rel_improvement,
                   context + ".train");
    }
    if (j.contains("forest")) {
        const json& f = j.at("forest");
        reject_unknown_keys(f, context + ".forest",
                            {"n_trees", "max_depth", "min_samples_leaf", "features_per_split",
                             "bootstrap"});
        read_field(f, "n_trees", config.forest.n_trees, context + ".forest");
        read_field(f, "max_depth", config.forest.max_depth, context + ".forest");
        read_field(f, "min_samples_leaf", config.forest.min_samples_leaf, context + ".forest");
        read_field(f, "features_per_split", config.forest.features_per_split,
                   context + ".forest");
        read_field(f, "bootstrap", config.forest.bootstrap, context + ".forest");
    }
    if (j.contains("probe")) {
        const json& p = j.at("probe");
        reject_unknown_keys(p, context + ".probe",
                            {"entities", "modifiers", "min_group_size", "baseline_samples"});
        read_field(p, "entities", config.probe.entities, context + ".probe");
        if (p.contains("modifiers")) {
            const auto modifiers = p.at("modifiers").get<std::vector<std::string>>();
            if (modifiers.size() != 2) {
                throw ConfigError(context + ".probe.modifiers must have exactly 2 entries");
            }
            config.probe.modifiers = {modifiers[0], modifiers[1]};
        }
        read_field(p, "min_group_size", config.probe.min_group_size, context + ".probe");
        read_field(p, "baseline_samples", config.probe.baseline_samples, context + ".probe");
    }
    return config;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse(text, path);
}

std::string RunConfig::echo_json() const {
    json concepts = json::array();
    for (const ConceptSpec& spec : generator.concept_pairs) {
        concepts.push_back(concept_to_json(spec));
    }
    json j{
        {"seed", seed},
        {"generator",
         {{"n_patients", generator.n_patients},
          {"stays_per_patient_mean", generator.stays_per_patient_mean},
          {"label_prevalences",
           std::vector<double>(generator.label_prevalences.begin(),
                               generator.label_prevalences.end())},
          {"vocab_size", generator.vocab_size},
          {"docs_per_stay_mean", generator.docs_per_stay_mean},
          {"doc_length", generator.doc_length},
          {"topic_words_per_label", generator.topic_words_per_label},
          {"n_structured_features", generator.n_structured_features},
          {"features_per_label", generator.features_per_label},
          {"base_event_rate", generator.base_event_rate},
          {"label_event_rate", generator.label_event_rate},
          {"signal_strength", generator.signal_strength},
          {"concepts", concepts}}},
        {"split",
         {{"n_val_patients", split.n_val_patients},
          {"n_test_patients", split.n_test_patients},
          {"min_distinct_codes", split.min_distinct_codes}}},
        {"featurize",
         {{"min_count", featurize.min_count},
          {"percentile", featurize.percentile},
          {"k_features", featurize.k_features},
          {"max_len", featurize.max_len}}},
        {"model",
         {{"word_dim", model.word_dim},
          {"conv_widths", model.conv_widths},
          {"channels_per_width", model.channels_per_width},
          {"mlp_hidden", model.mlp_hidden},
          {"dropout_rate", model.dropout_rate}}},
        {"train",
         {{"lr", train.lr},
          {"batch_size", train.batch_size},
          {"max_epochs", train.max_epochs},
          {"patience", train.patience},
          {"min_rel_improvement", train.min_rel_improvement}}},
        {"forest",
         {{"n_trees", forest.n_trees},
          {"max_depth", forest.max_depth},
          {"min_samples_leaf", forest.min_samples_leaf},
          {"features_per_split", forest.features_per_split},
          {"bootstrap", forest.bootstrap}}},
        {"probe",
         {{"entities", probe.entities},
          {"modifiers", std::vector<std::string>(probe.modifiers.begin(), probe.modifiers.end())},
          {"min_group_size", probe.min_group_size},
          {"baseline_samples", probe.baseline_samples}}}};
    return j.dump();
}

void stage_generate(const RunConfig& config, const StagePaths& paths) {
    StageTimer timer;
    ensure_out_dir(paths);
    GeneratorConfig generator = config.generator;
    generator.seed = Rng::derive_seed(config.seed, "generate");
    const Dataset dataset = generate_synthetic(generator);
    write_dataset(dataset, paths.dataset());
    emit_manifest(config, paths, "generate", generator.seed, timer, {}, {paths.dataset()});
}

void stage_split(const RunConfig& config, const StagePaths& paths) {
    StageTimer timer;
    ensure_out_dir(paths);
    const Dataset dataset =
        read_dataset(require_input(paths.dataset(), "dataset", "generate"));
    const std::uint64_t seed = Rng::derive_seed(config.seed, "split");
    const SplitAssignment splits =
        split_patients(dataset, config.split.n_val_patients, config.split.n_test_patients,
                       config.split.min_distinct_codes, seed);
    write_splits(splits, paths.splits());
    emit_manifest(config, paths, "split", seed, timer, {paths.dataset()}, {paths.splits()});
}

void stage_featurize(const RunConfig& config, const StagePaths& paths) {
    StageTimer timer;
    ensure_out_dir(paths);
    const Dataset dataset =
        read_dataset(require_input(paths.dataset(), "dataset", "generate"));
    const SplitAssignment splits = read_splits(require_input(paths.splits(), "splits", "split"));
    const Preprocessing prep =
        fit_preprocessing(dataset, splits, config.featurize.min_count, config.featurize.percentile,
                          config.featurize.k_features, config.featurize.max_len);
    write_preprocessing(prep, paths.preprocessing());
    emit_manifest(config, paths, "featurize", config.seed, timer,
                  {paths.dataset(), paths.splits()}, {paths.preprocessing()});
}

void stage_train(const RunConfig& config, const StagePaths& paths) {
    StageTimer timer;
    ensure_out_dir(paths);
    const Dataset dataset =
        read_dataset(require_input(paths.dataset(), "dataset", "generate"));
    const SplitAssignment splits = read_splits(require_input(paths.splits(), "splits", "split"));
    const std::string prep_path =
        require_input(paths.preprocessing(), "featurization file", "featurize");
    const Preprocessing prep = read_preprocessing(prep_path);

    const net::ModelConfig model = resolve_model_config(config, prep);
    net::TrainConfig train_config = config.train;
    train_config.seed = Rng::derive_seed(config.seed, "train");

    const net::TrainResult result = net::train(dataset, splits, prep, model, train_config);
    net::save_checkpoint(result.params, model, file_hash(prep_path), paths.checkpoint());

    std::ofstream history(paths.history(), std::ios::binary);
    if (!history) throw IoError("cannot open " + paths.history() + " for writing");
    history << "epoch,train_loss,val_loss\n";
    for (const net::EpochStats& epoch : result.history) {
        history << epoch.epoch << "," << format_double(epoch.train_loss) << ","
                << format_double(epoch.val_loss) << "\n";
    }
    if (!history) throw IoError("failed writing " + paths.history());
    history.close();

    emit_manifest(config, paths, "train", train_config.seed, timer,
                  {paths.dataset(), paths.splits(), prep_path},
                  {paths.checkpoint(), paths.history()});
}

void stage_embed(const RunConfig& config, const StagePaths& paths) {
    StageTimer timer;
    ensure_out_dir(paths);
    const Dataset dataset =
        read_dataset(require_input(paths.dataset(), "dataset", "generate"));
    const std::string prep_path =
        require_input(paths.preprocessing(), "featurization file", "featurize");
    const Preprocessing prep = read_preprocessing(prep_path);
    const net::Checkpoint ckpt =
        net::load_checkpoint(require_input(paths.checkpoint(), "checkpoint", "train"));
    check_checkpoint_freshness(ckpt, prep_path);

    std::vector<net::VisitEmbedding> embeddings;
    embeddings.reserve(dataset.stays.size());
    for (const Stay& stay : dataset.stays) {
        embeddings.push_back(net::extract_embedding(ckpt.params, ckpt.config, prep, stay));
    }
    net::write_embeddings_csv(embeddings, ckpt.config.embedding_width(), paths.embeddings());

    emit_manifest(config, paths, "embed", config.seed, timer,
                  {paths.dataset(), prep_path, paths.checkpoint()}, {paths.embeddings()});
}

void stage_eval(const RunConfig& config, const StagePaths& paths) {
    StageTimer timer;
    ensure_out_dir(paths);
    const Dataset dataset =
        read_dataset(require_input(paths.dataset(), "dataset", "generate"));
    const SplitAssignment splits = read_splits(require_input(paths.splits(), "splits", "split"));
    const std::string prep_path =
        require_input(paths.preprocessing(), "featurization file", "featurize");
    const Preprocessing prep = read_preprocessing(prep_path);
    const net::Checkpoint ckpt =
        net::load_checkpoint(require_input(paths.checkpoint(), "checkpoint", "train"));
    check_checkpoint_freshness(ckpt, prep_path);

    metrics::ForestConfig forest = config.forest;
    forest.seed = Rng::derive_seed(config.seed, "forest");
    const metrics::ProtocolResult result =
        metrics::three_way_protocol(dataset, splits, prep, ckpt.params, ckpt.config, forest);

    metrics::write_metrics_csv(result.rf, paths.metrics("rf"));
    metrics::write_metrics_csv(result.deep, paths.metrics("deep"));
    metrics::write_metrics_csv(result.emb_rf, paths.metrics("emb_rf"));

    std::ofstream table(paths.comparison(), std::ios::binary);
    if (!table) throw IoError("cannot open " + paths.comparison() + " for writing");
    table << metrics::format_comparison_table({"rf", "deep", "emb+rf"},
                                              {&result.rf, &result.deep, &result.emb_rf});
    if (!table) throw IoError("failed writing " + paths.comparison());
    table.close();

    emit_manifest(config, paths, "eval", forest.seed, timer,
                  {paths.dataset(), paths.splits(), prep_path, paths.checkpoint()},
                  {paths.metrics("rf"), paths.metrics("deep"), paths.metrics("emb_rf"),
                   paths.comparison()});
}

void stage_probe(const RunConfig& config, const StagePaths& paths) {
    StageTimer timer;
    ensure_out_dir(paths);
    const Dataset dataset =
        read_dataset(require_input(paths.dataset(), "dataset", "generate"));
    const std::vector<net::VisitEmbedding> rows =
        net::read_embeddings_csv(require_input(paths.embeddings(), "embeddings", "embed"));
    const probe::EmbeddingIndex index(rows);

    const std::vector<probe::DirectionResult> results = probe::concept_scan(
        probe_entity_tags(config),
        {config.probe.modifiers[0], config.probe.modifiers[1]}, dataset, index,
        config.probe.min_group_size);
    probe::write_scan_csv(results, paths.probe_csv());

    const std::uint64_t baseline_seed = Rng::derive_seed(config.seed, "baseline");
    const probe::CosineBaseline baseline =
        probe::random_cosine_baseline(index.dim(), config.probe.baseline_samples, baseline_seed);
    std::ofstream out(paths.baseline_csv(), std::ios::binary);
    if (!out) throw IoError("cannot open " + paths.baseline_csv() + " for writing");
    out << "dim,n_samples,mean,stddev\n";
    out << index.dim() << "," << config.probe.baseline_samples << ","
        << format_double(baseline.mean) << "," << format_double(baseline.stddev) << "\n";
    if (!out) throw IoError("failed writing " + paths.baseline_csv());
    out.close();

    emit_manifest(config, paths, "probe", baseline_seed, timer,
                  {paths.dataset(), paths.embeddings()},
                  {paths.probe_csv(), paths.baseline_csv()});
}

void stage_pipeline(const RunConfig& config, const StagePaths& paths) {
    stage_generate(config, paths);
    stage_split(config, paths);
    stage_featurize(config, paths);
    stage_train(config, paths);
    stage_embed(config, paths);
    stage_eval(config, paths);
    stage_probe(config, paths);
}

}  // namespace ehr::cli
