#pragma once

#include "ehr/corpus.hpp"
#include "ehr/featurize.hpp"
#include "ehr/metrics/forest.hpp"
#include "ehr/metrics/metrics.hpp"
#include "ehr/net/hybridnet.hpp"

namespace ehr::metrics {

// Three-way comparison on the test split:
//   rf      forest on the selected raw structured features
//   deep    the network's own sigmoid predictions
//   emb_rf  forest on the learned visit embeddings
// Both forests fit on train + validation stays and are evaluated on test;
// predictions binarize at 0.5.
struct ProtocolResult {
    MetricsReport rf;
    MetricsReport deep;
    MetricsReport emb_rf;
};

ProtocolResult three_way_protocol(const Dataset& dataset, const SplitAssignment& splits,
                                  const Preprocessing& preprocessing,
                                  const net::ModelParams& params, const net::ModelConfig& config,
                                  const ForestConfig& forest_config);

}  // namespace ehr::metrics
