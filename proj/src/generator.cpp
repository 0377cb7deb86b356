#include "ehr/generator.hpp"

#include <algorithm>
#include <cstdio>

#include "ehr/rng.hpp"

namespace ehr {

void GeneratorConfig::validate() const {
    for (double p : label_prevalences) {
        if (!(p > 0.0 && p < 1.0)) {
            throw ConfigError("label prevalence " + std::to_string(p) + " outside (0,1)");
        }
    }
    if (stays_per_patient_mean < 1.0) throw ConfigError("stays_per_patient_mean must be >= 1");
    if (docs_per_stay_mean < 1.0) throw ConfigError("docs_per_stay_mean must be >= 1");
    if (doc_length == 0) throw ConfigError("doc_length must be positive");
    if (signal_strength < 0.0) throw ConfigError("signal_strength must be >= 0");
    if (base_event_rate < 0.0 || label_event_rate < 0.0) {
        throw ConfigError("event rates must be >= 0");
    }
    if (features_per_label * kNumLabels > n_structured_features) {
        throw ConfigError("features_per_label * 19 exceeds n_structured_features");
    }
    for (const ConceptSpec& c : concept_pairs) {
        if (c.entities.size() < 2) throw ConfigError("concept " + c.name + " needs >= 2 entities");
        if (c.assign_prob < 0.0 || c.assign_prob > 1.0) {
            throw ConfigError("concept " + c.name + " assign_prob outside [0,1]");
        }
    }
    if (reserved_words() + 1 > vocab_size) {
        throw ConfigError("vocab_size " + std::to_string(vocab_size) +
                          " too small for reserved word blocks (" +
                          std::to_string(reserved_words()) + ")");
    }
}

std::size_t GeneratorConfig::reserved_words() const {
    std::size_t n = topic_words_per_label * kNumLabels;
    for (const ConceptSpec& c : concept_pairs) {
        n += c.entities.size() * c.words_per_entity + c.modifier_words;
    }
    return n;
}

namespace {

std::string word_name(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "w%05zu", i);
    return buf;
}

std::string feature_name(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "feat%04zu", i);
    return buf;
}

struct WordBlock {
    std::size_t begin = 0;
    std::size_t count = 0;
};

// A candidate source of tokens with its mixture weight.
struct TokenSource {
    WordBlock block;
    double weight = 0.0;
};

// Per-concept assignment for one stay.
struct ConceptDraw {
    bool assigned = false;
    std::size_t entity = 0;
    int state = 0;
};

}  // namespace

Dataset generate_synthetic(const GeneratorConfig& config) {
    config.validate();

    // Vocabulary layout: label topics first, then the concept blocks, then
    // background words. Everything is positional so the layout is a pure
    // function of the config.
    std::vector<WordBlock> label_topics(kNumLabels);
    std::size_t next_word = 0;
    for (std::size_t l = 0; l < kNumLabels; ++l) {
        label_topics[l] = {next_word, config.topic_words_per_label};
        next_word += config.topic_words_per_label;
    }
    std::vector<std::vector<WordBlock>> entity_blocks(config.concept_pairs.size());
    std::vector<WordBlock> modifier_blocks(config.concept_pairs.size());
    for (std::size_t ci = 0; ci < config.concept_pairs.size(); ++ci) {
        const ConceptSpec& c = config.concept_pairs[ci];
        for (std::size_t e = 0; e < c.entities.size(); ++e) {
            entity_blocks[ci].push_back({next_word, c.words_per_entity});
            next_word += c.words_per_entity;
        }
        modifier_blocks[ci] = {next_word, c.modifier_words};
        next_word += c.modifier_words;
    }
    const WordBlock background{next_word, config.vocab_size - next_word};

    // Structured feature layout: label blocks, then concept modifier blocks,
    // the rest background.
    std::vector<std::size_t> feature_label(config.n_structured_features, kNumLabels);
    std::size_t next_feature = 0;
    for (std::size_t l = 0; l < kNumLabels; ++l) {
        for (std::size_t k = 0; k < config.features_per_label; ++k) {
            feature_label[next_feature++] = l;
        }
    }
    std::vector<std::vector<std::size_t>> modifier_features(config.concept_pairs.size());
    for (std::size_t ci = 0; ci < config.concept_pairs.size(); ++ci) {
        for (std::size_t k = 0;
             k < config.concept_pairs[ci].modifier_features && next_feature < config.n_structured_features;
             ++k) {
            modifier_features[ci].push_back(next_feature++);
        }
    }

    Rng rng(config.seed);
    Dataset dataset;
    char id_buf[24];

    std::size_t stay_counter = 0;
    for (std::size_t p = 0; p < config.n_patients; ++p) {
        std::snprintf(id_buf, sizeof(id_buf), "p%06zu", p);
        const std::string patient_id = id_buf;
        const int n_stays = 1 + rng.poisson(config.stays_per_patient_mean - 1.0);
        for (int si = 0; si < n_stays; ++si) {
            Stay stay;
            std::snprintf(id_buf, sizeof(id_buf), "s%07zu", stay_counter++);
            stay.stay_id = id_buf;
            stay.patient_id = patient_id;

            stay.labels.resize(kNumLabels, 0);
            for (std::size_t l = 0; l < kNumLabels; ++l) {
                stay.labels[l] = rng.bernoulli(config.label_prevalences[l]) ? 1 : 0;
            }

            std::vector<ConceptDraw> draws(config.concept_pairs.size());
            for (std::size_t ci = 0; ci < config.concept_pairs.size(); ++ci) {
                const ConceptSpec& c = config.concept_pairs[ci];
                if (!rng.bernoulli(c.assign_prob)) continue;
                draws[ci].assigned = true;
                draws[ci].entity = rng.index(c.entities.size());
                draws[ci].state = static_cast<int>(rng.index(2));
                const std::string base = c.name + ":" + c.entities[draws[ci].entity];
                stay.tags.insert(base);
                stay.tags.insert(base + ":" + c.states[draws[ci].state]);
            }

            // Token sources active for this stay. Background always competes
            // with weight 1, so signal_strength 0 removes all label signal.
            std::vector<TokenSource> sources;
            sources.push_back({background, 1.0});
            for (std::size_t l = 0; l < kNumLabels; ++l) {
                if (stay.labels[l] && config.signal_strength > 0.0) {
                    sources.push_back({label_topics[l], config.signal_strength});
                }
            }
            for (std::size_t ci = 0; ci < config.concept_pairs.size(); ++ci) {
                if (!draws[ci].assigned) continue;
                const ConceptSpec& c = config.concept_pairs[ci];
                if (c.entity_word_weight > 0.0) {
                    sources.push_back({entity_blocks[ci][draws[ci].entity], c.entity_word_weight});
                }
                if (draws[ci].state == 1 && c.modifier_word_weight > 0.0) {
                    sources.push_back({modifier_blocks[ci], c.modifier_word_weight});
                }
            }
            double total_weight = 0.0;
            for (const TokenSource& s : sources) total_weight += s.weight;

            const int n_docs = 1 + rng.poisson(config.docs_per_stay_mean - 1.0);
            for (int d = 0; d < n_docs; ++d) {
                const int len = std::max(1, rng.poisson(static_cast<double>(config.doc_length)));
                std::vector<std::string> doc;
                doc.reserve(static_cast<std::size_t>(len));
                for (int t = 0; t < len; ++t) {
                    double pick = rng.uniform() * total_weight;
                    std::size_t chosen = 0;
                    for (std::size_t s = 0; s < sources.size(); ++s) {
                        pick -= sources[s].weight;
                        if (pick < 0.0) {
                            chosen = s;
                            break;
                        }
                    }
                    const WordBlock& b = sources[chosen].block;
                    doc.push_back(word_name(b.begin + rng.index(b.count)));
                }
                stay.documents.push_back(std::move(doc));
            }

            // Structured events: a Poisson count per feature, emitted as one
            // to three timestamped events partitioning the count.
            for (std::size_t f = 0; f < config.n_structured_features; ++f) {
                double rate = config.base_event_rate;
                if (feature_label[f] < kNumLabels && stay.labels[feature_label[f]]) {
                    rate += config.signal_strength * config.label_event_rate;
                }
                for (std::size_t ci = 0; ci < config.concept_pairs.size(); ++ci) {
                    if (draws[ci].assigned && draws[ci].state == 1 &&
                        std::find(modifier_features[ci].begin(), modifier_features[ci].end(), f) !=
                            modifier_features[ci].end()) {
                        rate += config.concept_pairs[ci].modifier_event_rate;
                    }
                }
                int count = rng.poisson(rate);
                if (count <= 0) continue;
                const std::string name = feature_name(f);
                const int n_events = 1 + static_cast<int>(rng.index(
                                             std::min<std::size_t>(3, static_cast<std::size_t>(count))));
                for (int e = 0; e < n_events; ++e) {
                    const int remaining_events = n_events - e;
                    int v = remaining_events == 1
                                ? count
                                : 1 + static_cast<int>(rng.index(
                                          static_cast<std::size_t>(count - remaining_events + 1)));
                    count -= v;
                    const double time = std::floor(rng.uniform(0.0, 240.0) * 1000.0) / 1000.0;
                    stay.events.push_back(Event{name, static_cast<double>(v), time});
                }
            }

            dataset.stays.push_back(std::move(stay));
        }
    }

    dataset.provenance = "synthetic:seed=" + std::to_string(config.seed);
    dataset.validate();
    return dataset;
}

}  // namespace ehr
