#include "ehr/featurize.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace ehr {

using nlohmann::json;

Vocabulary build_vocabulary(const std::vector<const Stay*>& train_stays, std::size_t min_count) {
    if (min_count < 1) throw ConfigError("min_count must be >= 1");
    std::unordered_map<std::string, std::size_t> counts;
    for (const Stay* stay : train_stays) {
        for (const auto& doc : stay->documents) {
            for (const auto& word : doc) ++counts[word];
        }
    }
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (const auto& [word, count] : counts) {
        if (count >= min_count) kept.emplace_back(word, count);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary v;
    v.min_count = min_count;
    v.words.reserve(kept.size());
    for (const auto& [word, count] : kept) {
        v.word_to_id.emplace(word, static_cast<int>(v.words.size()) + 2);
        v.words.push_back(word);
    }
    return v;
}

static std::size_t stay_text_length(const Stay& stay) {
    std::size_t n = 0;
    for (const auto& doc : stay.documents) n += doc.size();
    return n;
}

std::size_t compute_truncation_length(const std::vector<const Stay*>& train_stays,
                                      double percentile) {
    if (train_stays.empty()) throw ConfigError("cannot compute truncation length on empty set");
    if (!(percentile > 0.0 && percentile <= 100.0)) {
        throw ConfigError("percentile must be in (0,100]");
    }
    std::vector<std::size_t> lengths;
    lengths.reserve(train_stays.size());
    for (const Stay* s : train_stays) lengths.push_back(stay_text_length(*s));
    std::sort(lengths.begin(), lengths.end());
    const std::size_t rank = static_cast<std::size_t>(
        std::ceil(percentile / 100.0 * static_cast<double>(lengths.size())));
    return lengths[std::max<std::size_t>(rank, 1) - 1];
}

std::vector<int> encode_text(const Stay& stay, const Vocabulary& vocabulary, std::size_t max_len) {
    std::vector<int> ids;
    for (const auto& doc : stay.documents) {
        for (const auto& word : doc) {
            if (ids.size() >= max_len) return ids;
            ids.push_back(vocabulary.id_of(word));
        }
    }
    return ids;
}

std::map<std::string, double> aggregate_structured(const Stay& stay) {
    std::map<std::string, double> sums;
    for (const Event& e : stay.events) {
        if (e.value < 0.0) {
            throw IntegrityError("negative event value for feature " + e.feature + " on stay " +
                                 stay.stay_id);
        }
        sums[e.feature] += e.value;
    }
    return sums;
}

std::map<std::string, double> chi2_scores(
    const std::vector<std::map<std::string, double>>& aggregated,
    const std::vector<const std::vector<int>*>& labels) {
    if (aggregated.size() != labels.size()) {
        throw ShapeError("chi2_scores: feature/label row count mismatch");
    }
    const std::size_t n = aggregated.size();

    // Per-label positive-class frequency.
    std::array<double, kNumLabels> pos_frac{};
    for (const auto* lv : labels) {
        if (lv->size() != kNumLabels) throw ShapeError("chi2_scores: label vector length != 19");
        for (std::size_t l = 0; l < kNumLabels; ++l) pos_frac[l] += (*lv)[l] ? 1.0 : 0.0;
    }
    for (double& f : pos_frac) f /= n > 0 ? static_cast<double>(n) : 1.0;

    // Per feature: total mass and positive-class mass for each label.
    struct Mass {
        double total = 0.0;
        std::array<double, kNumLabels> positive{};
    };
    std::map<std::string, Mass> masses;
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& [feature, value] : aggregated[i]) {
            if (value < 0.0) throw IntegrityError("negative feature value for " + feature);
            Mass& m = masses[feature];
            m.total += value;
            for (std::size_t l = 0; l < kNumLabels; ++l) {
                if ((*labels[i])[l]) m.positive[l] += value;
            }
        }
    }

    std::map<std::string, double> scores;
    for (const auto& [feature, m] : masses) {
        double best = 0.0;
        if (m.total > 0.0) {
            for (std::size_t l = 0; l < kNumLabels; ++l) {
                double chi2 = 0.0;
                const double obs[2] = {m.positive[l], m.total - m.positive[l]};
                const double exp[2] = {pos_frac[l] * m.total, (1.0 - pos_frac[l]) * m.total};
                for (int c = 0; c < 2; ++c) {
                    if (exp[c] > 0.0) chi2 += (obs[c] - exp[c]) * (obs[c] - exp[c]) / exp[c];
                }
                best = std::max(best, chi2);
            }
        }
        scores[feature] = best;
    }
    return scores;
}

FeatureSelector select_features(const std::map<std::string, double>& scores, std::size_t k) {
    if (k > scores.size()) {
        throw ConfigError("cannot select " + std::to_string(k) + " features from " +
                          std::to_string(scores.size()) + " candidates");
    }
    std::vector<std::pair<std::string, double>> ranked(scores.begin(), scores.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    ranked.resize(k);

    FeatureSelector s;
    s.k = k;
    s.kept = std::move(ranked);
    for (std::size_t i = 0; i < s.kept.size(); ++i) s.columns.emplace(s.kept[i].first, i);
    return s;
}

EncodedStay Preprocessing::apply(const Stay& stay) const {
    EncodedStay e;
    e.stay_id = stay.stay_id;
    e.token_ids = encode_text(stay, vocabulary, truncation_length);
    for (const auto& [feature, value] : aggregate_structured(stay)) {
        auto it = selector.columns.find(feature);
        if (it != selector.columns.end()) e.structured.emplace(it->second, value);
    }
    e.labels = stay.labels;
    return e;
}

Preprocessing fit_preprocessing(const Dataset& dataset, const SplitAssignment& splits,
                                std::size_t min_count, double percentile, std::size_t k_features,
                                std::size_t configured_max_len) {
    std::vector<const Stay*> train;
    for (const Stay& s : dataset.stays) {
        if (splits.of(s.patient_id) == Split::kTrain) train.push_back(&s);
    }
    if (train.empty()) throw ConfigError("training split is empty");

    Preprocessing prep;
    prep.min_count = min_count;
    prep.percentile = percentile;
    prep.vocabulary = build_vocabulary(train, min_count);
    prep.truncation_length =
        configured_max_len > 0 ? configured_max_len : compute_truncation_length(train, percentile);

    std::vector<std::map<std::string, double>> aggregated;
    std::vector<const std::vector<int>*> labels;
    aggregated.reserve(train.size());
    labels.reserve(train.size());
    for (const Stay* s : train) {
        aggregated.push_back(aggregate_structured(*s));
        labels.push_back(&s->labels);
    }
    prep.selector = select_features(chi2_scores(aggregated, labels), k_features);
    return prep;
}

void write_preprocessing(const Preprocessing& prep, const std::string& path) {
    json j;
    j["version"] = 1;
    j["config"] = {{"min_count", prep.min_count}, {"percentile", prep.percentile},
                   {"k_features", prep.selector.k}};
    j["truncation_length"] = prep.truncation_length;
    j["vocabulary"] = prep.vocabulary.words;
    json kept = json::array();
    for (const auto& [feature, score] : prep.selector.kept) {
        kept.push_back(json::array({feature, score}));
    }
    j["selector"] = std::move(kept);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed for " + path);
}

Preprocessing read_preprocessing(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for reading");
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ParseError("malformed preprocessing file " + path);

    Preprocessing prep;
    try {
        if (j.at("version").get<int>() != 1) {
            throw ParseError("unsupported preprocessing version in " + path);
        }
        prep.min_count = j.at("config").at("min_count").get<std::size_t>();
        prep.percentile = j.at("config").at("percentile").get<double>();
        prep.truncation_length = j.at("truncation_length").get<std::size_t>();
        prep.vocabulary.min_count = prep.min_count;
        prep.vocabulary.words = j.at("vocabulary").get<std::vector<std::string>>();
        for (std::size_t i = 0; i < prep.vocabulary.words.size(); ++i) {
            prep.vocabulary.word_to_id.emplace(prep.vocabulary.words[i], static_cast<int>(i) + 2);
        }
        prep.selector.k = j.at("config").at("k_features").get<std::size_t>();
        for (const json& entry : j.at("selector")) {
            prep.selector.kept.emplace_back(entry[0].get<std::string>(), entry[1].get<double>());
        }
        for (std::size_t i = 0; i < prep.selector.kept.size(); ++i) {
            prep.selector.columns.emplace(prep.selector.kept[i].first, i);
        }
        if (prep.selector.kept.size() != prep.selector.k) {
            throw ParseError("selector entry count disagrees with k in " + path);
        }
    } catch (const json::exception& e) {
        throw ParseError("bad preprocessing file " + path + ": " + e.what());
    }
    return prep;
}

}  // namespace ehr
