#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ehr/manifest.hpp"

namespace fs = std::filesystem;

namespace {

struct RunOutput {
    int exit_code = -1;
    std::string output;
};

RunOutput run_cli(const std::string& args) {
    const char* bin = std::getenv("STAYEMBED_BIN");
    REQUIRE_MESSAGE(bin != nullptr, "STAYEMBED_BIN must point at the stayembed binary");
    const std::string cmd = std::string(bin) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    RunOutput r;
    char buf[4096];
    std::size_t n = 0;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

// Scratch area shared by the cases below; wiped when the binary exits.
const fs::path kScratch = fs::temp_directory_path() / "stayembed_cli_tests";

struct ScratchGuard {
    ScratchGuard() {
        fs::remove_all(kScratch);
        fs::create_directories(kScratch);
    }
    ~ScratchGuard() { fs::remove_all(kScratch); }
} scratch_guard;

std::string write_config(const std::string& name, const std::string& body) {
    const fs::path path = kScratch / name;
    std::ofstream out(path);
    out << body;
    return path.string();
}

const char* kSmallConfig = R"({
  "seed": 7,
  "generator": {
    "n_patients": 60,
    "vocab_size": 120,
    "docs_per_stay_mean": 1.5,
    "doc_length": 15,
    "n_structured_features": 40,
    "features_per_label": 1,
    "signal_strength": 2.0,
    "concepts": [
      {
        "name": "organism",
        "entities": ["alpha", "beta"],
        "assign_prob": 0.5,
        "modifier_words": 4,
        "modifier_features": 2,
        "modifier_event_rate": 1.5
      }
    ]
  },
  "split": {"n_val_patients": 6, "n_test_patients": 12},
  "featurize": {"min_count": 2, "k_features": 16},
  "model": {"word_dim": 12, "channels_per_width": 8, "mlp_hidden": 16},
  "train": {"batch_size": 16, "max_epochs": 2},
  "forest": {"n_trees": 10},
  "probe": {"min_group_size": 5, "baseline_samples": 2000}
})";

std::vector<std::string> artifact_names() {
    return {"dataset.jsonl",   "splits.csv",      "preprocessing.json",
            "model.ckpt",      "train_history.csv", "embeddings.csv",
            "metrics_rf.csv",  "metrics_deep.csv",  "metrics_emb_rf.csv",
            "comparison.txt",  "probe.csv",         "random_baseline.csv"};
}

std::vector<std::string> stage_names() {
    return {"generate", "split", "featurize", "train", "embed", "eval", "probe"};
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "missing file ", path.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("--help exits zero everywhere and lists the accepted flags") {
    RunOutput top = run_cli("--help");
    CHECK(top.exit_code == 0);
    for (const std::string& sub : stage_names()) {
        CHECK(top.output.find(sub) != std::string::npos);
    }
    CHECK(top.output.find("pipeline") != std::string::npos);

    const std::map<std::string, std::vector<std::string>> extra_flags = {
        {"generate", {}},
        {"split", {}},
        {"featurize", {"--k-features", "--max-len"}},
        {"train", {"--epochs", "--lr", "--batch-size"}},
        {"embed", {}},
        {"eval", {}},
        {"probe", {"--min-group-size"}},
        {"pipeline", {"--k-features", "--max-len", "--epochs", "--lr", "--batch-size",
                      "--min-group-size"}},
    };
    for (const auto& [sub, flags] : extra_flags) {
        RunOutput r = run_cli(sub + " --help");
        CHECK(r.exit_code == 0);
        for (const char* common : {"--config", "--seed", "--out", "--threads"}) {
            INFO(sub, " help missing ", common);
            CHECK(r.output.find(common) != std::string::npos);
        }
        for (const std::string& flag : flags) {
            INFO(sub, " help missing ", flag);
            CHECK(r.output.find(flag) != std::string::npos);
        }
    }
}

TEST_CASE("bad invocations exit 1 and I/O failures exit 2") {
    CHECK(run_cli("").exit_code == 1);
    CHECK(run_cli("frobnicate").exit_code == 1);
    CHECK(run_cli("generate --no-such-flag").exit_code == 1);

    RunOutput missing = run_cli("generate --config " + (kScratch / "absent.json").string() +
                                " --out " + (kScratch / "o0").string());
    CHECK(missing.exit_code == 2);

    const std::string bad_key =
        write_config("bad_key.json", R"({"seed": 1, "generator": {"n_patents": 5}})");
    RunOutput unknown = run_cli("generate --config " + bad_key + " --out " +
                                (kScratch / "o1").string());
    CHECK(unknown.exit_code == 1);
    CHECK(unknown.output.find("n_patents") != std::string::npos);

    const std::string malformed = write_config("malformed.json", "{not json");
    CHECK(run_cli("generate --config " + malformed + " --out " + (kScratch / "o2").string())
              .exit_code == 1);
}

TEST_CASE("stages refuse to run before their producers and say which to run") {
    const std::string cfg = write_config("chain.json", kSmallConfig);
    const std::string out = (kScratch / "chain").string();

    RunOutput no_dataset = run_cli("train --config " + cfg + " --out " + out);
    CHECK(no_dataset.exit_code == 1);
    CHECK(no_dataset.output.find("dataset") != std::string::npos);
    CHECK(no_dataset.output.find("stayembed generate") != std::string::npos);

    CHECK(run_cli("generate --config " + cfg + " --out " + out).exit_code == 0);
    CHECK(run_cli("split --config " + cfg + " --out " + out).exit_code == 0);

    RunOutput no_prep = run_cli("train --config " + cfg + " --out " + out);
    CHECK(no_prep.exit_code == 1);
    CHECK(no_prep.output.find("preprocessing") != std::string::npos);
    CHECK(no_prep.output.find("stayembed featurize") != std::string::npos);

    CHECK(run_cli("featurize --config " + cfg + " --out " + out).exit_code == 0);
    RunOutput no_ckpt = run_cli("embed --config " + cfg + " --out " + out);
    CHECK(no_ckpt.exit_code == 1);
    CHECK(no_ckpt.output.find("stayembed train") != std::string::npos);
}

TEST_CASE("pipeline produces every artifact deterministically") {
    const std::string cfg = write_config("pipe.json", kSmallConfig);
    const fs::path dir_a = kScratch / "run_a";
    const fs::path dir_b = kScratch / "run_b";

    RunOutput a = run_cli("pipeline --config " + cfg + " --out " + dir_a.string() +
                          " --threads 1");
    INFO(a.output);
    REQUIRE(a.exit_code == 0);
    RunOutput b = run_cli("pipeline --config " + cfg + " --out " + dir_b.string() +
                          " --threads 1");
    REQUIRE(b.exit_code == 0);

    for (const std::string& name : artifact_names()) {
        INFO("artifact ", name);
        CHECK(slurp(dir_a / name) == slurp(dir_b / name));
    }
    for (const std::string& stage : stage_names()) {
        CHECK(fs::exists(dir_a / (stage + ".manifest.json")));
    }

    // A different seed changes the data.
    const fs::path dir_c = kScratch / "run_seed";
    REQUIRE(run_cli("pipeline --config " + cfg + " --out " + dir_c.string() + " --seed 99")
                .exit_code == 0);
    CHECK(slurp(dir_a / "dataset.jsonl") != slurp(dir_c / "dataset.jsonl"));
}

TEST_CASE("stage-by-stage runs reproduce the one-shot pipeline bytes") {
    const std::string cfg = write_config("stagewise.json", kSmallConfig);
    const fs::path oneshot = kScratch / "oneshot";
    const fs::path stepped = kScratch / "stepped";
    REQUIRE(run_cli("pipeline --config " + cfg + " --out " + oneshot.string()).exit_code == 0);
    for (const std::string& stage : stage_names()) {
        RunOutput r = run_cli(stage + " --config " + cfg + " --out " + stepped.string());
        INFO(stage, ": ", r.output);
        REQUIRE(r.exit_code == 0);
    }
    for (const std::string& name : artifact_names()) {
        INFO("artifact ", name);
        CHECK(slurp(oneshot / name) == slurp(stepped / name));
    }
}

TEST_CASE("manifests hash every artifact and chain back to the dataset") {
    const std::string cfg = write_config("manifests.json", kSmallConfig);
    const fs::path dir = kScratch / "manifests";
    REQUIRE(run_cli("pipeline --config " + cfg + " --out " + dir.string()).exit_code == 0);

    std::map<std::string, ehr::Manifest> manifests;
    std::map<std::string, std::string> produced_by;  // artifact path -> stage
    for (const std::string& stage : stage_names()) {
        ehr::Manifest m = ehr::read_manifest((dir / (stage + ".manifest.json")).string());
        CHECK(m.stage == stage);
        CHECK(m.wall_seconds >= 0.0);
        for (const auto& [path, hash] : m.outputs) {
            CHECK(ehr::file_hash(path) == hash);
            produced_by[path] = stage;
        }
        manifests.emplace(stage, std::move(m));
    }

    // Every recorded input hash matches both the file on disk and the hash
    // recorded by the producing stage.
    for (const auto& [stage, m] : manifests) {
        for (const auto& [path, hash] : m.inputs) {
            INFO(stage, " input ", path);
            CHECK(ehr::file_hash(path) == hash);
            REQUIRE(produced_by.count(path) == 1);
            const ehr::Manifest& producer = manifests.at(produced_by.at(path));
            bool found = false;
            for (const auto& [opath, ohash] : producer.outputs) {
                if (opath == path) {
                    found = true;
                    CHECK(ohash == hash);
                }
            }
            CHECK(found);
        }
    }

    // Transitively expanding the probe stage's inputs reaches the dataset.
    std::set<std::string> reachable;
    std::vector<std::string> frontier = {"probe"};
    while (!frontier.empty()) {
        const std::string stage = frontier.back();
        frontier.pop_back();
        for (const auto& [path, hash] : manifests.at(stage).inputs) {
            if (!reachable.insert(path).second) continue;
            frontier.push_back(produced_by.at(path));
        }
    }
    CHECK(reachable.count((dir / "dataset.jsonl").string()) == 1);
}

TEST_CASE("flag overrides reach the stages") {
    const std::string cfg = write_config("overrides.json", kSmallConfig);
    const fs::path base = kScratch / "ov_base";
    const fs::path more = kScratch / "ov_epochs";
    REQUIRE(run_cli("pipeline --config " + cfg + " --out " + base.string()).exit_code == 0);
    REQUIRE(run_cli("pipeline --config " + cfg + " --out " + more.string() + " --epochs 3")
                .exit_code == 0);
    // One extra epoch shows up in the training history.
    const std::string base_history = slurp(base / "train_history.csv");
    const std::string more_history = slurp(more / "train_history.csv");
    CHECK(base_history != more_history);
    CHECK(more_history.find("\n3,") != std::string::npos);
    CHECK(base_history.find("\n3,") == std::string::npos);
}
