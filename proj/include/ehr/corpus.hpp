#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ehr/errors.hpp"

namespace ehr {

inline constexpr std::size_t kNumLabels = 19;

// One timestamped structured observation. Downstream aggregation sums values
// per feature and ignores the time; the timestamp exists so that summing over
// the stay is exercised on realistically shaped data.
struct Event {
    std::string feature;
    double value = 0.0;
    double time = 0.0;

    bool operator==(const Event&) const = default;
};

// One hospital visit: free-text documents, structured events, the 19-chapter
// label vector and free-form tags (used by the semantic probes).
struct Stay {
    std::string stay_id;
    std::string patient_id;
    std::vector<std::vector<std::string>> documents;
    std::vector<Event> events;
    std::vector<int> labels;  // length kNumLabels, entries in {0,1}
    std::set<std::string> tags;

    bool operator==(const Stay&) const = default;

    // Throws IntegrityError on a violated invariant.
    void validate() const;
};

struct Dataset {
    std::vector<Stay> stays;
    std::string provenance;  // generator config hash or source path

    void validate() const;  // duplicate stay ids, per-stay invariants
};

enum class Split { kTrain, kValidation, kTest };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct SplitAssignment {
    std::map<std::string, Split> by_patient;

    Split of(const std::string& patient_id) const;
};

// ---------------------------------------------------------------------------
// Dataset file I/O: UTF-8 line-delimited JSON, one stay per line with keys
// stay_id, patient_id, documents, events ([feature, value, time] triples),
// labels and tags. read(write(d)) reproduces d field for field.
// ---------------------------------------------------------------------------
void write_dataset(const Dataset& dataset, const std::string& path);
Dataset read_dataset(const std::string& path);

// Split file: two-column CSV patient_id,split.
void write_splits(const SplitAssignment& splits, const std::string& path);
SplitAssignment read_splits(const std::string& path);

// ---------------------------------------------------------------------------
// Patient-level split sampling. A patient is eligible for validation/test
// when at least one of their stays carries >= min_distinct_codes distinct
// active labels. Exactly n_val + n_test eligible patients are drawn without
// replacement (uniform, seeded); everyone else trains.
// ---------------------------------------------------------------------------
SplitAssignment split_patients(const Dataset& dataset, std::size_t n_val_patients,
                               std::size_t n_test_patients, std::size_t min_distinct_codes,
                               std::uint64_t seed);

}  // namespace ehr
