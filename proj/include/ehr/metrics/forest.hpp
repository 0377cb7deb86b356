#pragma once

#include <cstdint>
#include <vector>

namespace ehr::metrics {

// Multi-output random forest over dense real features and binary label
// vectors. Hyperparameters are deliberately conventional and configurable;
// the comparison protocol, not specific numbers, is the contract.
struct ForestConfig {
    std::size_t n_trees = 100;
    std::size_t max_depth = 0;           // 0 = unlimited
    std::size_t min_samples_leaf = 1;
    std::size_t features_per_split = 0;  // 0 = ceil(sqrt(d))
    bool bootstrap = true;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TreeNode {
    std::int32_t left = -1;  // negative marks a leaf
    std::int32_t right = -1;
    std::size_t feature = 0;
    double threshold = 0.0;
    std::vector<double> fractions;  // leaf only: positive fraction per label

    bool is_leaf() const { return left < 0; }
};

struct Tree {
    std::vector<TreeNode> nodes;
};

struct Forest {
    ForestConfig config;
    std::size_t n_features = 0;
    std::size_t n_labels = 0;
    std::vector<Tree> trees;
};

// Per tree: a bootstrap resample (when enabled), then recursive best-Gini
// splits over a fresh random feature subset per node. Splits test
// x[feature] < threshold with midpoint thresholds; ties on impurity decrease
// keep the lexicographically smallest (feature, threshold). Deterministic
// given the seed; per-tree streams are derived from it.
Forest forest_fit(const std::vector<std::vector<double>>& features,
                  const std::vector<std::vector<int>>& labels, const ForestConfig& config);

// Mean over trees of the reached leaf's per-label positive fraction.
std::vector<double> forest_predict_one(const Forest& forest, const std::vector<double>& x);
std::vector<std::vector<double>> forest_predict(const Forest& forest,
                                                const std::vector<std::vector<double>>& features);

}  // namespace ehr::metrics
