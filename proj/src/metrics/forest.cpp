#include "ehr/metrics/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ehr/errors.hpp"
#include "ehr/rng.hpp"

namespace ehr::metrics {
namespace {

struct SplitChoice {
    bool found = false;
    std::size_t feature = 0;
    double threshold = 0.0;
    double decrease = 0.0;
};

// Sum over labels of the per-label binary Gini 2p(1-p), from positive counts.
double gini_sum(const std::vector<double>& positives, double n) {
    double g = 0.0;
    for (double pos : positives) {
        const double p = pos / n;
        g += 2.0 * p * (1.0 - p);
    }
    return g;
}

class TreeBuilder {
public:
    TreeBuilder(const std::vector<std::vector<double>>& features,
                const std::vector<std::vector<int>>& labels, const ForestConfig& config,
                std::size_t n_labels, Rng rng)
        : features_(features),
          labels_(labels),
          config_(config),
          n_features_(features[0].size()),
          n_labels_(n_labels),
          rng_(std::move(rng)),
          feature_pool_(n_features_) {
        std::iota(feature_pool_.begin(), feature_pool_.end(), std::size_t{0});
    }

    Tree build(std::vector<std::size_t> samples) {
        Tree tree;
        grow(tree, std::move(samples), 0);
        return tree;
    }

private:
    std::vector<double> positive_counts(const std::vector<std::size_t>& samples) const {
        std::vector<double> pos(n_labels_, 0.0);
        for (std::size_t i : samples) {
            for (std::size_t l = 0; l < n_labels_; ++l) pos[l] += labels_[i][l];
        }
        return pos;
    }

    std::vector<std::size_t> sample_features() {
        std::size_t m = config_.features_per_split;
        if (m == 0) {
            m = static_cast<std::size_t>(
                std::ceil(std::sqrt(static_cast<double>(n_features_))));
        }
        m = std::min(m, n_features_);
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t j = i + rng_.index(n_features_ - i);
            std::swap(feature_pool_[i], feature_pool_[j]);
        }
        std::vector<std::size_t> chosen(feature_pool_.begin(),
                                        feature_pool_.begin() + static_cast<std::ptrdiff_t>(m));
        std::sort(chosen.begin(), chosen.end());
        return chosen;
    }

    SplitChoice best_split(const std::vector<std::size_t>& samples,
                           const std::vector<double>& node_pos, double node_gini) {
        const double n = static_cast<double>(samples.size());
        SplitChoice best;
        std::vector<std::pair<double, std::size_t>> ordered(samples.size());
        std::vector<double> left_pos(n_labels_);

        for (std::size_t f : sample_features()) {
            for (std::size_t i = 0; i < samples.size(); ++i) {
                ordered[i] = {features_[samples[i]][f], samples[i]};
            }
            std::sort(ordered.begin(), ordered.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });
            if (ordered.front().first == ordered.back().first) continue;

            std::fill(left_pos.begin(), left_pos.end(), 0.0);
            std::size_t n_left = 0;
            for (std::size_t i = 0; i + 1 < ordered.size(); ++i) {
                for (std::size_t l = 0; l < n_labels_; ++l) {
                    left_pos[l] += labels_[ordered[i].second][l];
                }
                ++n_left;
                if (ordered[i].first == ordered[i + 1].first) continue;
                const std::size_t n_right = samples.size() - n_left;
                if (n_left < config_.min_samples_leaf || n_right < config_.min_samples_leaf) {
                    continue;
                }
                const double threshold = (ordered[i].first + ordered[i + 1].first) / 2.0;
                double right_gini = 0.0, left_gini = 0.0;
                for (std::size_t l = 0; l < n_labels_; ++l) {
                    const double pl = left_pos[l] / static_cast<double>(n_left);
                    const double pr =
                        (node_pos[l] - left_pos[l]) / static_cast<double>(n_right);
                    left_gini += 2.0 * pl * (1.0 - pl);
                    right_gini += 2.0 * pr * (1.0 - pr);
                }
                const double weighted = (static_cast<double>(n_left) * left_gini +
                                         static_cast<double>(n_right) * right_gini) /
                                        n;
                // Features ascend and thresholds ascend within a feature, so
                // keeping only strict improvements leaves ties with the
                // lexicographically smallest (feature, threshold).
                const double decrease = node_gini - weighted;
                if (decrease > 0.0 && decrease > best.decrease) {
                    best = {true, f, threshold, decrease};
                }
            }
        }
        return best;
    }

    std::int32_t grow(Tree& tree, std::vector<std::size_t> samples, std::size_t depth) {
        const auto index = static_cast<std::int32_t>(tree.nodes.size());
        tree.nodes.emplace_back();

        const double n = static_cast<double>(samples.size());
        const std::vector<double> pos = positive_counts(samples);
        const double node_gini = gini_sum(pos, n);

        const bool depth_capped = config_.max_depth != 0 && depth >= config_.max_depth;
        SplitChoice split;
        if (!depth_capped && node_gini > 0.0 &&
            samples.size() >= 2 * config_.min_samples_leaf) {
            split = best_split(samples, pos, node_gini);
        }

        if (!split.found) {
            TreeNode& leaf = tree.nodes[static_cast<std::size_t>(index)];
            leaf.fractions.resize(n_labels_);
            for (std::size_t l = 0; l < n_labels_; ++l) leaf.fractions[l] = pos[l] / n;
            return index;
        }

        std::vector<std::size_t> left, right;
        for (std::size_t i : samples) {
            (features_[i][split.feature] < split.threshold ? left : right).push_back(i);
        }
        samples.clear();
        samples.shrink_to_fit();

        const std::int32_t left_index = grow(tree, std::move(left), depth + 1);
        const std::int32_t right_index = grow(tree, std::move(right), depth + 1);
        TreeNode& node = tree.nodes[static_cast<std::size_t>(index)];
        node.feature = split.feature;
        node.threshold = split.threshold;
        node.left = left_index;
        node.right = right_index;
        return index;
    }

    const std::vector<std::vector<double>>& features_;
    const std::vector<std::vector<int>>& labels_;
    const ForestConfig& config_;
    std::size_t n_features_;
    std::size_t n_labels_;
    Rng rng_;
    std::vector<std::size_t> feature_pool_;
};

}  // namespace

void ForestConfig::validate() const {
    if (n_trees == 0) throw ConfigError("n_trees must be >= 1");
    if (min_samples_leaf == 0) throw ConfigError("min_samples_leaf must be >= 1");
}

Forest forest_fit(const std::vector<std::vector<double>>& features,
                  const std::vector<std::vector<int>>& labels, const ForestConfig& config) {
    config.validate();
    if (features.empty()) throw ConfigError("forest_fit needs at least one sample");
    if (features.size() != labels.size()) {
        throw ConfigError("feature/label counts differ: " + std::to_string(features.size()) +
                          " vs " + std::to_string(labels.size()));
    }
    const std::size_t d = features[0].size();
    const std::size_t n_labels = labels[0].size();
    if (d == 0) throw ConfigError("forest_fit needs at least one feature");
    if (n_labels == 0) throw ConfigError("forest_fit needs at least one label");
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (features[i].size() != d) {
            throw ConfigError("ragged feature vectors at sample " + std::to_string(i));
        }
        if (labels[i].size() != n_labels) {
            throw ConfigError("ragged label vectors at sample " + std::to_string(i));
        }
        for (int v : labels[i]) {
            if (v != 0 && v != 1) throw IntegrityError("forest labels must be 0 or 1");
        }
    }

    Forest forest;
    forest.config = config;
    forest.n_features = d;
    forest.n_labels = n_labels;
    forest.trees.resize(config.n_trees);

    const Rng root(config.seed);
    for (std::size_t t = 0; t < config.n_trees; ++t) {
        Rng tree_rng = root.derive("tree:" + std::to_string(t));
        std::vector<std::size_t> samples(features.size());
        if (config.bootstrap) {
            for (std::size_t& s : samples) s = tree_rng.index(features.size());
        } else {
            std::iota(samples.begin(), samples.end(), std::size_t{0});
        }
        TreeBuilder builder(features, labels, config, n_labels, std::move(tree_rng));
        forest.trees[t] = builder.build(std::move(samples));
    }
    return forest;
}

std::vector<double> forest_predict_one(const Forest& forest, const std::vector<double>& x) {
    if (x.size() != forest.n_features) {
        throw ShapeError("forest input has " + std::to_string(x.size()) + " features, expected " +
                         std::to_string(forest.n_features));
    }
    std::vector<double> probs(forest.n_labels, 0.0);
    for (const Tree& tree : forest.trees) {
        std::size_t node = 0;
        while (!tree.nodes[node].is_leaf()) {
            const TreeNode& cur = tree.nodes[node];
            node = static_cast<std::size_t>(x[cur.feature] < cur.threshold ? cur.left
                                                                           : cur.right);
        }
        for (std::size_t l = 0; l < forest.n_labels; ++l) {
            probs[l] += tree.nodes[node].fractions[l];
        }
    }
    for (double& p : probs) p /= static_cast<double>(forest.trees.size());
    return probs;
}

std::vector<std::vector<double>> forest_predict(const Forest& forest,
                                                const std::vector<std::vector<double>>& features) {
    std::vector<std::vector<double>> out;
    out.reserve(features.size());
    for (const auto& x : features) out.push_back(forest_predict_one(forest, x));
    return out;
}

}  // namespace ehr::metrics
