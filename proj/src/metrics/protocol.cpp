#include "ehr/metrics/protocol.hpp"

#include "ehr/errors.hpp"

namespace ehr::metrics {
namespace {

std::vector<double> network_probabilities(const net::ModelParams& params,
                                          const net::ModelConfig& config,
                                          const EncodedStay& stay) {
    Rng unused(0);
    const net::TextForward tf =
        net::forward_text(params, config, stay.token_ids, num::Mode::kInfer, unused);
    const net::StructuredForward sf = net::forward_structured(
        params, config, net::scatter_structured(stay, config.n_structured), num::Mode::kInfer,
        unused);
    return net::combine_and_predict(tf.scores, sf.scores).values();
}

}  // namespace

ProtocolResult three_way_protocol(const Dataset& dataset, const SplitAssignment& splits,
                                  const Preprocessing& preprocessing,
                                  const net::ModelParams& params, const net::ModelConfig& config,
                                  const ForestConfig& forest_config) {
    config.validate();
    params.check_shapes(config);

    std::vector<std::vector<double>> fit_raw, test_raw;
    std::vector<std::vector<double>> fit_emb, test_emb;
    std::vector<std::vector<int>> fit_labels, test_labels;
    std::vector<std::vector<int>> deep_predictions;

    for (const Stay& stay : dataset.stays) {
        const Split split = splits.of(stay.patient_id);
        const EncodedStay encoded = preprocessing.apply(stay);
        const num::Tensor raw = net::scatter_structured(encoded, config.n_structured);
        const net::VisitEmbedding embedding = net::extract_embedding(params, config, encoded);
        if (split == Split::kTest) {
            test_raw.push_back(raw.values());
            test_emb.push_back(embedding.values);
            test_labels.push_back(encoded.labels);
            deep_predictions.push_back(binarize(network_probabilities(params, config, encoded)));
        } else {
            fit_raw.push_back(raw.values());
            fit_emb.push_back(embedding.values);
            fit_labels.push_back(encoded.labels);
        }
    }
    if (fit_labels.empty()) throw SplitError("no train/validation stays to fit forests on");
    if (test_labels.empty()) throw SplitError("no test stays to evaluate on");

    ProtocolResult result;
    {
        const Forest forest = forest_fit(fit_raw, fit_labels, forest_config);
        std::vector<std::vector<int>> predictions;
        predictions.reserve(test_raw.size());
        for (const auto& probs : forest_predict(forest, test_raw)) {
            predictions.push_back(binarize(probs));
        }
        result.rf = score(predictions, test_labels);
    }
    result.deep = score(deep_predictions, test_labels);
    {
        const Forest forest = forest_fit(fit_emb, fit_labels, forest_config);
        std::vector<std::vector<int>> predictions;
        predictions.reserve(test_emb.size());
        for (const auto& probs : forest_predict(forest, test_emb)) {
            predictions.push_back(binarize(probs));
        }
        result.emb_rf = score(predictions, test_labels);
    }
    return result;
}

}  // namespace ehr::metrics
