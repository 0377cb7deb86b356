#include "ehr/metrics/metrics.hpp"

#include <cstdio>
#include <fstream>

#include "ehr/errors.hpp"
#include "ehr/format.hpp"

namespace ehr::metrics {
namespace {

void check_binary(int v) {
    if (v != 0 && v != 1) {
        throw IntegrityError("label/prediction entries must be 0 or 1, got " + std::to_string(v));
    }
}

std::string fixed(double v, int width, int places) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%*.*f", width, places, v);
    return buf;
}

}  // namespace

std::string label_name(std::size_t index) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "chapter_%02zu", index + 1);
    return buf;
}

std::vector<int> binarize(const std::vector<double>& probabilities, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw ConfigError("binarize threshold must lie in (0, 1)");
    }
    std::vector<int> bits(probabilities.size());
    for (std::size_t i = 0; i < probabilities.size(); ++i) {
        bits[i] = probabilities[i] >= threshold ? 1 : 0;
    }
    return bits;
}

MetricsReport score(const std::vector<std::vector<int>>& predictions,
                    const std::vector<std::vector<int>>& labels) {
    if (predictions.size() != labels.size()) {
        throw ConfigError("prediction/label counts differ: " + std::to_string(predictions.size()) +
                          " vs " + std::to_string(labels.size()));
    }
    if (labels.empty()) throw ConfigError("empty evaluation set");
    const std::size_t width = labels[0].size();
    if (width == 0) throw ConfigError("empty label vectors");

    MetricsReport report;
    report.n_samples = labels.size();
    report.per_label.assign(width, LabelMetrics{});

    std::vector<std::size_t> positives(width, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i].size() != width || predictions[i].size() != width) {
            throw ConfigError("ragged prediction/label vectors at sample " + std::to_string(i));
        }
        for (std::size_t l = 0; l < width; ++l) {
            check_binary(labels[i][l]);
            check_binary(predictions[i][l]);
            positives[l] += static_cast<std::size_t>(labels[i][l]);
            if (predictions[i][l] == 1 && labels[i][l] == 1) ++report.per_label[l].tp;
            if (predictions[i][l] == 1 && labels[i][l] == 0) ++report.per_label[l].fp;
            if (predictions[i][l] == 0 && labels[i][l] == 1) ++report.per_label[l].fn;
        }
    }

    for (std::size_t l = 0; l < width; ++l) {
        LabelMetrics& m = report.per_label[l];
        const double tp = static_cast<double>(m.tp);
        m.precision = (m.tp + m.fp) == 0 ? 0.0 : tp / static_cast<double>(m.tp + m.fp);
        m.recall = (m.tp + m.fn) == 0 ? 0.0 : tp / static_cast<double>(m.tp + m.fn);
        m.f1 = (m.precision + m.recall) == 0.0
                   ? 0.0
                   : 2.0 * m.precision * m.recall / (m.precision + m.recall);
        m.presence = static_cast<double>(positives[l]) / static_cast<double>(labels.size());
        report.macro_precision += m.precision;
        report.macro_recall += m.recall;
        report.macro_f1 += m.f1;
    }
    report.macro_precision /= static_cast<double>(width);
    report.macro_recall /= static_cast<double>(width);
    report.macro_f1 /= static_cast<double>(width);
    return report;
}

void write_metrics_csv(const MetricsReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "label,precision,recall,f1,presence\n";
    double mean_presence = 0.0;
    for (std::size_t l = 0; l < report.per_label.size(); ++l) {
        const LabelMetrics& m = report.per_label[l];
        out << label_name(l) << "," << format_double(m.precision) << ","
            << format_double(m.recall) << "," << format_double(m.f1) << ","
            << format_double(m.presence) << "\n";
        mean_presence += m.presence;
    }
    mean_presence /= static_cast<double>(report.per_label.empty() ? 1 : report.per_label.size());
    out << "macro," << format_double(report.macro_precision) << ","
        << format_double(report.macro_recall) << "," << format_double(report.macro_f1) << ","
        << format_double(mean_presence) << "\n";
    if (!out) throw IoError("failed writing " + path);
}

MetricsReport read_metrics_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "label,precision,recall,f1,presence") {
        throw ParseError(path + ": bad metrics header");
    }
    MetricsReport report;
    bool saw_macro = false;
    std::size_t line_number = 1;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 5) {
            throw ParseError(path + " line " + std::to_string(line_number) + ": expected 5 fields");
        }
        const std::string context = path + " line " + std::to_string(line_number);
        if (fields[0] == "macro") {
            report.macro_precision = parse_double(fields[1], context);
            report.macro_recall = parse_double(fields[2], context);
            report.macro_f1 = parse_double(fields[3], context);
            saw_macro = true;
            continue;
        }
        if (saw_macro) throw ParseError(path + ": label rows after the macro row");
        LabelMetrics m;
        m.precision = parse_double(fields[1], context);
        m.recall = parse_double(fields[2], context);
        m.f1 = parse_double(fields[3], context);
        m.presence = parse_double(fields[4], context);
        report.per_label.push_back(m);
    }
    if (!saw_macro) throw ParseError(path + ": missing macro row");
    return report;
}

std::string format_comparison_table(const std::vector<std::string>& names,
                                    const std::vector<const MetricsReport*>& reports) {
    if (names.size() != reports.size() || reports.empty()) {
        throw ConfigError("comparison table needs one name per report");
    }
    const std::size_t width = reports[0]->per_label.size();
    for (const MetricsReport* r : reports) {
        if (r->per_label.size() != width) {
            throw ConfigError("comparison table reports disagree on label count");
        }
    }

    char buf[48];
    std::snprintf(buf, sizeof(buf), "%-12s %8s", "label", "presence");
    std::string out = buf;
    for (const std::string& name : names) {
        for (const char* column : {" P", " R", " F1"}) {
            std::snprintf(buf, sizeof(buf), " %9s", (name + column).c_str());
            out += buf;
        }
    }
    out += "\n";
    for (std::size_t l = 0; l < width; ++l) {
        std::snprintf(buf, sizeof(buf), "%-12s %8.3f", label_name(l).c_str(),
                      reports[0]->per_label[l].presence);
        out += buf;
        for (const MetricsReport* r : reports) {
            out += fixed(r->per_label[l].precision, 10, 3);
            out += fixed(r->per_label[l].recall, 10, 3);
            out += fixed(r->per_label[l].f1, 10, 3);
        }
        out += "\n";
    }
    std::snprintf(buf, sizeof(buf), "%-12s %8s", "macro", "-");
    out += buf;
    for (const MetricsReport* r : reports) {
        out += fixed(r->macro_precision, 10, 3);
        out += fixed(r->macro_recall, 10, 3);
        out += fixed(r->macro_f1, 10, 3);
    }
    out += "\n";
    return out;
}

}  // namespace ehr::metrics
