#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ehr/corpus.hpp"

namespace ehr {

// A planted concept: a family of entities (e.g. two bacteria) crossed with two
// modifier states (e.g. sensitive/resistant). Entity marker words separate the
// entities; the modifier word/feature block is shared across entities and is
// mixed in only under state 1, so the state-1-minus-state-0 shift points the
// same way for every entity. Affected stays are tagged
// "<name>:<entity>" and "<name>:<entity>:<state>".
struct ConceptSpec {
    std::string name;
    std::vector<std::string> entities;
    std::array<std::string, 2> states{"state0", "state1"};
    double assign_prob = 0.0;
    std::size_t words_per_entity = 4;
    std::size_t modifier_words = 4;
    double entity_word_weight = 1.0;
    double modifier_word_weight = 1.0;
    std::size_t modifier_features = 0;
    double modifier_event_rate = 0.0;
};

struct GeneratorConfig {
    std::size_t n_patients = 0;
    double stays_per_patient_mean = 1.3;  // stays = 1 + Poisson(mean - 1)
    std::array<double, kNumLabels> label_prevalences = kDefaultPrevalences;
    std::size_t vocab_size = 500;
    double docs_per_stay_mean = 2.0;  // docs = 1 + Poisson(mean - 1)
    std::size_t doc_length = 40;      // words per document, Poisson around this
    std::size_t topic_words_per_label = 5;
    std::size_t n_structured_features = 200;
    std::size_t features_per_label = 3;
    double base_event_rate = 0.03;  // background Poisson rate per feature, keeps events sparse
    double label_event_rate = 2.0;  // rate added per associated feature when the label is active
    double signal_strength = 1.0;   // scales both topic-word mixing and the event-rate lift
    std::vector<ConceptSpec> concept_pairs;
    std::uint64_t seed = 0;

    // Observed per-chapter presence, most to least frequent.
    static constexpr std::array<double, kNumLabels> kDefaultPrevalences = {
        0.718, 0.595, 0.572, 0.418, 0.387, 0.366, 0.354, 0.341, 0.325, 0.279,
        0.278, 0.263, 0.245, 0.168, 0.151, 0.101, 0.093, 0.051, 0.003};

    void validate() const;  // throws ConfigError

    // Number of vocabulary slots taken by label topics and concept blocks;
    // the rest of the vocabulary is background words.
    std::size_t reserved_words() const;
};

// Draws a full dataset from the config. The seed determines every byte of the
// output: labels are independent Bernoulli(prevalence), active labels mix
// their topic words into the documents and raise the Poisson rates of their
// associated features, and concept assignments add marker words, modifier
// shifts and tags.
Dataset generate_synthetic(const GeneratorConfig& config);

}  // namespace ehr
