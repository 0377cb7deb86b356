#include "ehr/manifest.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ehr/errors.hpp"

namespace ehr {

using nlohmann::json;

std::string file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for hashing");
    std::uint64_t h = 1469598103934665603ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
        if (in.eof()) break;
    }
    char hex[32];
    std::snprintf(hex, sizeof(hex), "fnv1a64:%016llx", static_cast<unsigned long long>(h));
    return hex;
}

void write_manifest(const Manifest& manifest, const std::string& path) {
    json j;
    j["stage"] = manifest.stage;
    j["seed"] = manifest.seed;
    j["wall_seconds"] = manifest.wall_seconds;
    try {
        j["config"] = json::parse(manifest.config_echo);
    } catch (const json::exception& e) {
        throw IntegrityError("manifest config echo is not valid JSON: " + std::string(e.what()));
    }
    json inputs = json::object();
    for (const auto& [p, h] : manifest.inputs) inputs[p] = h;
    json outputs = json::object();
    for (const auto& [p, h] : manifest.outputs) outputs[p] = h;
    j["inputs"] = inputs;
    j["outputs"] = outputs;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
    if (!out) throw IoError("failed writing " + path);
}

Manifest read_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    Manifest manifest;
    try {
        manifest.stage = j.at("stage").get<std::string>();
        manifest.seed = j.at("seed").get<std::uint64_t>();
        manifest.wall_seconds = j.at("wall_seconds").get<double>();
        manifest.config_echo = j.at("config").dump();
        for (const auto& [p, h] : j.at("inputs").items()) {
            manifest.inputs.emplace_back(p, h.get<std::string>());
        }
        for (const auto& [p, h] : j.at("outputs").items()) {
            manifest.outputs.emplace_back(p, h.get<std::string>());
        }
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    return manifest;
}

}  // namespace ehr
