#include "ehr/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "ehr/rng.hpp"

namespace ehr {

using nlohmann::json;

void Stay::validate() const {
    if (stay_id.empty()) throw IntegrityError("stay with empty stay_id");
    if (patient_id.empty()) throw IntegrityError("stay " + stay_id + " has empty patient_id");
    if (labels.size() != kNumLabels) {
        throw IntegrityError("stay " + stay_id + " has " + std::to_string(labels.size()) +
                             " labels, expected " + std::to_string(kNumLabels));
    }
    for (int l : labels) {
        if (l != 0 && l != 1) {
            throw IntegrityError("stay " + stay_id + " has non-binary label value");
        }
    }
    for (const Event& e : events) {
        if (e.value < 0.0) {
            throw IntegrityError("stay " + stay_id + " has negative event value for feature " +
                                 e.feature);
        }
        if (e.time < 0.0) {
            throw IntegrityError("stay " + stay_id + " has negative event time for feature " +
                                 e.feature);
        }
    }
}

void Dataset::validate() const {
    std::unordered_set<std::string> seen;
    for (const Stay& s : stays) {
        s.validate();
        if (!seen.insert(s.stay_id).second) {
            throw IntegrityError("duplicate stay_id " + s.stay_id);
        }
    }
}

const char* split_name(Split s) {
    switch (s) {
        case Split::kTrain: return "train";
        case Split::kValidation: return "validation";
        case Split::kTest: return "test";
    }
    return "?";
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::kTrain;
    if (name == "validation") return Split::kValidation;
    if (name == "test") return Split::kTest;
    throw ParseError("unknown split name '" + name + "'");
}

Split SplitAssignment::of(const std::string& patient_id) const {
    auto it = by_patient.find(patient_id);
    if (it == by_patient.end()) {
        throw IntegrityError("patient " + patient_id + " missing from split assignment");
    }
    return it->second;
}

static json stay_to_json(const Stay& s) {
    json j;
    j["stay_id"] = s.stay_id;
    j["patient_id"] = s.patient_id;
    j["documents"] = s.documents;
    json events = json::array();
    for (const Event& e : s.events) {
        events.push_back(json::array({e.feature, e.value, e.time}));
    }
    j["events"] = std::move(events);
    j["labels"] = s.labels;
    j["tags"] = std::vector<std::string>(s.tags.begin(), s.tags.end());
    return j;
}

static Stay stay_from_json(const json& j, std::size_t line_no) {
    const auto fail = [&](const std::string& what) {
        throw ParseError("line " + std::to_string(line_no) + ": " + what);
    };
    Stay s;
    try {
        s.stay_id = j.at("stay_id").get<std::string>();
        s.patient_id = j.at("patient_id").get<std::string>();
        s.documents = j.at("documents").get<std::vector<std::vector<std::string>>>();
        for (const json& ev : j.at("events")) {
            if (!ev.is_array() || ev.size() != 3) fail("event is not a [feature, value, time] triple");
            s.events.push_back(Event{ev[0].get<std::string>(), ev[1].get<double>(),
                                     ev[2].get<double>()});
        }
        s.labels = j.at("labels").get<std::vector<int>>();
        for (const json& t : j.at("tags")) s.tags.insert(t.get<std::string>());
    } catch (const json::exception& e) {
        fail(e.what());
    }
    return s;
}

void write_dataset(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    for (const Stay& s : dataset.stays) {
        out << stay_to_json(s).dump() << '\n';
    }
    if (!out) throw IoError("write failed for " + path);
}

Dataset read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for reading");
    Dataset d;
    d.provenance = path;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw ParseError("line " + std::to_string(line_no) + ": malformed JSON record");
        }
        Stay s = stay_from_json(j, line_no);
        try {
            s.validate();
        } catch (const IntegrityError& e) {
            throw IntegrityError("line " + std::to_string(line_no) + ": " + e.what());
        }
        d.stays.push_back(std::move(s));
    }
    d.validate();
    return d;
}

void write_splits(const SplitAssignment& splits, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "patient_id,split\n";
    for (const auto& [patient, split] : splits.by_patient) {
        out << patient << ',' << split_name(split) << '\n';
    }
    if (!out) throw IoError("write failed for " + path);
}

SplitAssignment read_splits(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for reading");
    SplitAssignment a;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1) {
            if (line != "patient_id,split") {
                throw ParseError("line 1: expected header patient_id,split");
            }
            continue;
        }
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) {
            throw ParseError("line " + std::to_string(line_no) + ": missing comma");
        }
        const std::string patient = line.substr(0, comma);
        const Split split = split_from_name(line.substr(comma + 1));
        if (!a.by_patient.emplace(patient, split).second) {
            throw IntegrityError("line " + std::to_string(line_no) + ": duplicate patient " +
                                 patient);
        }
    }
    return a;
}

static std::size_t distinct_active_labels(const Stay& s) {
    std::size_t n = 0;
    for (int l : s.labels) n += l != 0;
    return n;
}

SplitAssignment split_patients(const Dataset& dataset, std::size_t n_val_patients,
                               std::size_t n_test_patients, std::size_t min_distinct_codes,
                               std::uint64_t seed) {
    // Patient order is sorted by id so that the draw depends on the seed only.
    std::map<std::string, bool> eligible_by_patient;
    for (const Stay& s : dataset.stays) {
        bool& e = eligible_by_patient[s.patient_id];
        e = e || distinct_active_labels(s) >= min_distinct_codes;
    }
    std::vector<std::string> eligible;
    for (const auto& [patient, is_eligible] : eligible_by_patient) {
        if (is_eligible) eligible.push_back(patient);
    }
    if (eligible.size() < n_val_patients + n_test_patients) {
        throw SplitError("need " + std::to_string(n_val_patients + n_test_patients) +
                         " eligible patients for validation+test but only " +
                         std::to_string(eligible.size()) + " of " +
                         std::to_string(eligible_by_patient.size()) + " qualify");
    }

    Rng rng(seed);
    rng.shuffle(eligible);

    SplitAssignment a;
    for (const auto& [patient, is_eligible] : eligible_by_patient) {
        a.by_patient[patient] = Split::kTrain;
    }
    std::size_t i = 0;
    for (; i < n_val_patients; ++i) a.by_patient[eligible[i]] = Split::kValidation;
    for (; i < n_val_patients + n_test_patients; ++i) a.by_patient[eligible[i]] = Split::kTest;
    return a;
}

}  // namespace ehr
