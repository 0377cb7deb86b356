#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace ehr::metrics {

struct LabelMetrics {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double presence = 0.0;  // fraction of evaluated stays with the label active
};

// Per-label counts and scores plus unweighted macro averages over all labels.
// Zero denominators score 0 by convention.
struct MetricsReport {
    std::vector<LabelMetrics> per_label;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    std::size_t n_samples = 0;
};

// p >= threshold predicts the label. Threshold must lie in (0, 1).
std::vector<int> binarize(const std::vector<double>& probabilities, double threshold = 0.5);

MetricsReport score(const std::vector<std::vector<int>>& predictions,
                    const std::vector<std::vector<int>>& labels);

// CSV rows label,precision,recall,f1,presence, one per label, then a final
// macro row (presence column holds the mean prevalence).
void write_metrics_csv(const MetricsReport& report, const std::string& path);
MetricsReport read_metrics_csv(const std::string& path);

// Aligned side-by-side table: one row per label, one P/R/F1 column group per
// named report, macro row last.
std::string format_comparison_table(const std::vector<std::string>& names,
                                    const std::vector<const MetricsReport*>& reports);

std::string label_name(std::size_t index);

}  // namespace ehr::metrics
