#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace ehr {

// Content hash of a file, rendered as "fnv1a64:<16 hex digits>".
std::string file_hash(const std::string& path);

// One per pipeline stage: hashes of every artifact read and written, the
// effective config echo (a serialized JSON object), the stage seed and wall
// time. Chaining manifests links every artifact back to the dataset.
struct Manifest {
    std::string stage;
    std::uint64_t seed = 0;
    double wall_seconds = 0.0;
    std::string config_echo = "{}";
    std::vector<std::pair<std::string, std::string>> inputs;   // path, hash
    std::vector<std::pair<std::string, std::string>> outputs;  // path, hash
};

void write_manifest(const Manifest& manifest, const std::string& path);
Manifest read_manifest(const std::string& path);

}  // namespace ehr
