#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "ehr/corpus.hpp"

namespace ehr {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;

// Word -> id map fitted on the training split. Ids 0 and 1 are reserved for
// PAD and UNK; real words start at 2, ordered by descending corpus frequency
// with ties broken lexicographically.
struct Vocabulary {
    std::unordered_map<std::string, int> word_to_id;
    std::vector<std::string> words;  // ordered by id - 2
    std::size_t min_count = 1;

    std::size_t size() const { return words.size() + 2; }

    int id_of(const std::string& word) const {
        auto it = word_to_id.find(word);
        return it == word_to_id.end() ? kUnkId : it->second;
    }
};

Vocabulary build_vocabulary(const std::vector<const Stay*>& train_stays, std::size_t min_count);

// Nearest-rank percentile of per-stay concatenated document lengths:
// the element at 1-based index ceil(p/100 * N) of the sorted lengths.
std::size_t compute_truncation_length(const std::vector<const Stay*>& train_stays,
                                      double percentile);

// Documents concatenated in stored order, each word mapped to its id (UNK
// when absent), truncated to the first max_len tokens. No padding here;
// padding is a batch-time concern.
std::vector<int> encode_text(const Stay& stay, const Vocabulary& vocabulary, std::size_t max_len);

// Sum of event values per feature, time ignored. Features with no events are
// absent from the map.
std::map<std::string, double> aggregate_structured(const Stay& stay);

// Chi-square score per candidate feature against the 19 binary labels: for
// each label the stays split into two classes, observed mass is the feature
// sum within each class, expected mass is the class frequency times the total
// feature sum, and the score is the max over labels of sum (obs-exp)^2/exp.
// A feature with zero total mass scores 0.
std::map<std::string, double> chi2_scores(
    const std::vector<std::map<std::string, double>>& aggregated,
    const std::vector<const std::vector<int>*>& labels);

struct FeatureSelector {
    std::map<std::string, std::size_t> columns;             // kept feature -> column index
    std::vector<std::pair<std::string, double>> kept;       // in column order, with scores
    std::size_t k = 0;

    bool contains(const std::string& feature) const { return columns.count(feature) != 0; }
};

// Top-k features by score, ties broken by lexicographic name; column indices
// follow that order.
FeatureSelector select_features(const std::map<std::string, double>& scores, std::size_t k);

struct EncodedStay {
    std::string stay_id;
    std::vector<int> token_ids;
    std::map<std::size_t, double> structured;  // column -> summed value
    std::vector<int> labels;
};

// The full fitted preprocessing state plus its config echo.
struct Preprocessing {
    Vocabulary vocabulary;
    std::size_t truncation_length = 0;
    FeatureSelector selector;
    std::size_t min_count = 1;
    double percentile = 90.0;

    EncodedStay apply(const Stay& stay) const;
};

// Fits vocabulary, truncation length and selector on the training split only.
// When configured_max_len > 0 it overrides the percentile-based length.
Preprocessing fit_preprocessing(const Dataset& dataset, const SplitAssignment& splits,
                                std::size_t min_count, double percentile, std::size_t k_features,
                                std::size_t configured_max_len);

// Versioned JSON round-trip of the fitted state.
void write_preprocessing(const Preprocessing& prep, const std::string& path);
Preprocessing read_preprocessing(const std::string& path);

}  // namespace ehr
