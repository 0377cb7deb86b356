#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "ehr/net/hybridnet.hpp"
#include "ehr/num/grad_check.hpp"
#include "ehr/rng.hpp"

using namespace ehr;
using namespace ehr::net;
using num::Mode;
using num::Tensor;

namespace {

ModelConfig toy_config(std::uint64_t seed = 3) {
    ModelConfig c;
    c.vocab_size = 20;
    c.word_dim = 5;
    c.conv_widths = {3, 4, 5};
    c.channels_per_width = 3;
    c.n_structured = 10;
    c.mlp_hidden = 7;
    c.dropout_rate = 0.5;
    c.seed = seed;
    return c;
}

std::vector<EncodedStay> toy_batch() {
    std::vector<EncodedStay> stays(3);
    stays[0] = {"s0", {2, 7, 4, 11, 3, 9, 5}, {{0, 1.5}, {4, 0.5}}, {}};
    stays[1] = {"s1", {1, 6}, {{2, 2.0}}, {}};  // shorter than the widest filter
    stays[2] = {"s2", {19, 18, 17, 16, 15}, {{9, 3.0}, {5, 1.0}, {1, 0.25}}, {}};
    for (auto& s : stays) {
        s.labels.assign(kNumLabels, 0);
    }
    stays[0].labels[0] = stays[0].labels[3] = 1;
    stays[1].labels[7] = 1;
    stays[2].labels[0] = stays[2].labels[18] = 1;
    return stays;
}

double batch_loss(const ModelParams& params, const ModelConfig& config,
                  const std::vector<const EncodedStay*>& batch) {
    Rng unused(0);
    return batch_loss_and_grads(params, config, batch, Mode::kInfer, unused, nullptr);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// A small corpus whose text and events both carry label signal, with one
// validation patient when requested.
struct TrainFixture {
    Dataset dataset;
    SplitAssignment splits;
    Preprocessing prep;
};

TrainFixture make_trainset(bool with_val) {
    TrainFixture f;
    const char* words[4] = {"cough", "fracture", "rash", "dizzy"};
    for (int i = 0; i < 12; ++i) {
        Stay s;
        s.stay_id = "s" + std::to_string(i);
        s.patient_id = "p" + std::to_string(i);
        const int group = i % 4;
        s.documents = {{words[group], "patient", words[group], "stable"},
                       {words[(group + 1) % 4], words[group]}};
        s.events = {{"lab:" + std::string(words[group]), 2.0, 0.5},
                    {"lab:base", 1.0, 1.0}};
        s.labels.assign(kNumLabels, 0);
        s.labels[static_cast<std::size_t>(group)] = 1;
        s.labels[4 + static_cast<std::size_t>(group)] = 1;
        f.dataset.stays.push_back(s);
        f.splits.by_patient[s.patient_id] =
            with_val && i >= 10 ? Split::kValidation : Split::kTrain;
    }
    f.prep = fit_preprocessing(f.dataset, f.splits, 1, 100.0, 5, 0);
    return f;
}

ModelConfig trainset_config(const TrainFixture& f, std::uint64_t seed) {
    ModelConfig c;
    c.vocab_size = f.prep.vocabulary.size();
    c.word_dim = 6;
    c.conv_widths = {2, 3};
    c.channels_per_width = 4;
    c.n_structured = f.prep.selector.columns.size();
    c.mlp_hidden = 8;
    c.dropout_rate = 0.2;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("model dimensions compose as 448 = 256 + 3*64 under the defaults") {
    ModelConfig c;
    c.vocab_size = 100;
    c.n_structured = 64;
    CHECK(c.word_dim == 50);
    CHECK(c.conv_widths == std::vector<std::size_t>{3, 4, 5});
    CHECK(c.channels_per_width == 64);
    CHECK(c.mlp_hidden == 256);
    CHECK(c.n_labels == 19);
    CHECK(c.pooled_width() == 192);
    CHECK(c.embedding_width() == 448);
    CHECK(c.max_conv_width() == 5);
    CHECK_NOTHROW(c.validate());

    ModelConfig bad = c;
    bad.vocab_size = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.conv_widths.clear();
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.dropout_rate = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("init_params is seed-deterministic with a frozen PAD row") {
    ModelConfig cfg = toy_config();
    ModelParams a = init_params(cfg);
    ModelParams b = init_params(cfg);
    CHECK(a.equal_values(b));
    CHECK_NOTHROW(a.check_shapes(cfg));

    ModelConfig other = toy_config(4);
    CHECK_FALSE(a.equal_values(init_params(other)));

    for (std::size_t j = 0; j < cfg.word_dim; ++j) {
        CHECK(a.word_embedding.at(static_cast<std::size_t>(kPadId), j) == 0.0);
    }
    // Word vectors live in [-0.05, 0.05]; at least one real row is non-zero.
    double max_abs = 0.0;
    for (std::size_t i = 0; i < a.word_embedding.size(); ++i) {
        max_abs = std::max(max_abs, std::fabs(a.word_embedding[i]));
    }
    CHECK(max_abs <= 0.05);
    CHECK(max_abs > 0.0);
    // Biases start at zero.
    for (std::size_t i = 0; i < a.mlp_b1.size(); ++i) CHECK(a.mlp_b1[i] == 0.0);
    for (std::size_t i = 0; i < a.cnn_b.size(); ++i) CHECK(a.cnn_b[i] == 0.0);
}

TEST_CASE("forward_text left-pads short sequences with PAD") {
    ModelConfig cfg = toy_config();
    ModelParams params = init_params(cfg);
    Rng unused(0);
    TextForward shortseq = forward_text(params, cfg, {7, 9}, Mode::kInfer, unused);
    TextForward padded =
        forward_text(params, cfg, {kPadId, kPadId, kPadId, 7, 9}, Mode::kInfer, unused);
    REQUIRE(shortseq.pooled.size() == padded.pooled.size());
    for (std::size_t i = 0; i < shortseq.pooled.size(); ++i) {
        CHECK(shortseq.pooled[i] == padded.pooled[i]);
    }
    for (std::size_t i = 0; i < shortseq.scores.size(); ++i) {
        CHECK(shortseq.scores[i] == padded.scores[i]);
    }
    CHECK(shortseq.padded_ids.size() == 5);

    CHECK_THROWS_AS(forward_text(params, cfg, {25}, Mode::kInfer, unused), IntegrityError);
}

TEST_CASE("a pure-PAD document pools to the rectified convolution biases") {
    ModelConfig cfg = toy_config();
    ModelParams params = ModelParams::zeros(cfg);
    const double biases[3] = {0.5, -0.7, 0.2};
    for (std::size_t w = 0; w < cfg.conv_widths.size(); ++w) {
        for (std::size_t j = 0; j < cfg.channels_per_width; ++j) {
            params.conv_biases[w][j] = biases[j];
        }
    }
    Rng unused(0);
    TextForward fwd = forward_text(params, cfg, {kPadId, kPadId}, Mode::kInfer, unused);
    REQUIRE(fwd.pooled.size() == cfg.pooled_width());
    for (std::size_t w = 0; w < cfg.conv_widths.size(); ++w) {
        for (std::size_t j = 0; j < cfg.channels_per_width; ++j) {
            const double expected = std::max(0.0, biases[j]);
            CHECK(fwd.pooled[w * cfg.channels_per_width + j] == expected);
        }
    }
}

TEST_CASE("combine_and_predict applies a sigmoid to summed branch scores") {
    Tensor text({3}, {0.0, 1.0, 2.0});
    Tensor structured({3}, {0.0, 1.0, -2.0});
    Tensor p = combine_and_predict(text, structured);
    CHECK(p[0] == 0.5);
    CHECK(p[1] == doctest::Approx(0.8807970779778823).epsilon(1e-12));
    CHECK(p[2] == 0.5);
    CHECK_THROWS_AS(combine_and_predict(text, Tensor({2})), ehr::ShapeError);
}

TEST_CASE("embedding is [MLP hidden || CNN pooled] in inference mode") {
    ModelConfig cfg = toy_config();
    ModelParams params = init_params(cfg);
    EncodedStay text_only = {"t", {2, 3, 4, 5, 6, 7}, {}, std::vector<int>(kNumLabels, 0)};
    EncodedStay other_text = {"o", {8, 9, 10, 11, 12, 13}, {}, std::vector<int>(kNumLabels, 0)};

    VisitEmbedding e1 = extract_embedding(params, cfg, text_only);
    VisitEmbedding e2 = extract_embedding(params, cfg, other_text);
    REQUIRE(e1.values.size() == cfg.embedding_width());

    // With no structured features the MLP half is ReLU(0) = 0.
    for (std::size_t i = 0; i < cfg.mlp_hidden; ++i) {
        CHECK(e1.values[i] == 0.0);
        CHECK(e2.values[i] == 0.0);
    }
    // Different text moves the CNN half.
    bool text_half_differs = false;
    for (std::size_t i = cfg.mlp_hidden; i < cfg.embedding_width(); ++i) {
        if (e1.values[i] != e2.values[i]) text_half_differs = true;
    }
    CHECK(text_half_differs);

    // Changing structured input with fixed text moves only the MLP half.
    EncodedStay with_struct = text_only;
    with_struct.structured = {{3, 2.5}};
    VisitEmbedding e3 = extract_embedding(params, cfg, with_struct);
    bool mlp_half_differs = false;
    for (std::size_t i = 0; i < cfg.mlp_hidden; ++i) {
        if (e3.values[i] != e1.values[i]) mlp_half_differs = true;
    }
    CHECK(mlp_half_differs);
    for (std::size_t i = cfg.mlp_hidden; i < cfg.embedding_width(); ++i) {
        CHECK(e3.values[i] == e1.values[i]);
    }

    // Dropout never perturbs embeddings: repeated extraction is identical.
    VisitEmbedding again = extract_embedding(params, cfg, with_struct);
    CHECK(again.values == e3.values);
}

TEST_CASE("full-model analytic gradients match central differences") {
    ModelConfig cfg = toy_config();
    ModelParams params = init_params(cfg);
    std::vector<EncodedStay> stays = toy_batch();
    std::vector<const EncodedStay*> batch;
    for (const auto& s : stays) batch.push_back(&s);

    ModelParams grads = ModelParams::zeros(cfg);
    Rng unused(0);
    batch_loss_and_grads(params, cfg, batch, Mode::kInfer, unused, &grads);

    auto inputs = params.named_tensors(cfg);
    std::vector<const Tensor*> analytic;
    for (auto& [name, tensor] : grads.named_tensors(cfg)) {
        (void)name;
        analytic.push_back(tensor);
    }
    auto eval = [&]() { return batch_loss(params, cfg, batch); };
    num::GradCheckReport rep = num::grad_check(eval, inputs, analytic, 1e-5, 1e-4);
    INFO("worst ", rep.worst, " err ", rep.max_rel_error);
    CHECK(rep.pass);
}

TEST_CASE("one Adam step descends on a fixed batch for nearly every init") {
    std::vector<EncodedStay> stays = toy_batch();
    std::vector<const EncodedStay*> batch;
    for (const auto& s : stays) batch.push_back(&s);

    int descended = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        ModelConfig cfg = toy_config(100 + seed);
        ModelParams params = init_params(cfg);
        ModelParams grads = ModelParams::zeros(cfg);
        Rng unused(0);
        const double before = batch_loss_and_grads(params, cfg, batch, Mode::kInfer, unused, &grads);

        auto named = params.named_tensors(cfg);
        auto named_g = grads.named_tensors(cfg);
        std::vector<Tensor*> ps;
        std::vector<const Tensor*> gs;
        for (auto& [n, t] : named) ps.push_back(t);
        for (auto& [n, t] : named_g) gs.push_back(t);
        num::AdamConfig ac;
        ac.lr = 1e-3;
        num::AdamState st = num::AdamState::init(gs, ac);
        num::adam_step(ps, gs, st);

        if (batch_loss(params, cfg, batch) < before) ++descended;
    }
    CHECK(descended >= 95);
}

TEST_CASE("training is deterministic, logs history and returns the best snapshot") {
    TrainFixture f = make_trainset(true);
    ModelConfig cfg = trainset_config(f, 21);
    TrainConfig tc;
    tc.lr = 2e-3;
    tc.batch_size = 4;
    tc.max_epochs = 4;
    tc.seed = 33;

    TrainResult a = train(f.dataset, f.splits, f.prep, cfg, tc);
    TrainResult b = train(f.dataset, f.splits, f.prep, cfg, tc);
    CHECK(a.params.equal_values(b.params));
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(a.history[i].val_loss == b.history[i].val_loss);
        CHECK(a.history[i].epoch == i + 1);
        CHECK(std::isfinite(a.history[i].val_loss));
    }

    TrainConfig other = tc;
    other.seed = 34;
    CHECK_FALSE(train(f.dataset, f.splits, f.prep, cfg, other).params.equal_values(a.params));

    // The PAD embedding row never moves.
    for (std::size_t j = 0; j < cfg.word_dim; ++j) {
        CHECK(a.params.word_embedding.at(static_cast<std::size_t>(kPadId), j) == 0.0);
    }
}

TEST_CASE("zero max_epochs returns the initial parameters and no history") {
    TrainFixture f = make_trainset(false);
    ModelConfig cfg = trainset_config(f, 5);
    TrainConfig tc;
    tc.max_epochs = 0;
    TrainResult r = train(f.dataset, f.splits, f.prep, cfg, tc);
    CHECK(r.history.empty());
    CHECK(r.params.equal_values(init_params(cfg)));
}

TEST_CASE("validation loss is NaN when the validation split is empty") {
    TrainFixture f = make_trainset(false);
    ModelConfig cfg = trainset_config(f, 5);
    TrainConfig tc;
    tc.max_epochs = 2;
    tc.batch_size = 6;
    TrainResult r = train(f.dataset, f.splits, f.prep, cfg, tc);
    REQUIRE(r.history.size() == 2);
    for (const EpochStats& e : r.history) {
        CHECK(std::isfinite(e.train_loss));
        CHECK(std::isnan(e.val_loss));
    }
}

TEST_CASE("early stopping fires after `patience` stale epochs") {
    TrainFixture f = make_trainset(false);
    ModelConfig cfg = trainset_config(f, 5);
    TrainConfig tc;
    tc.max_epochs = 30;
    tc.batch_size = 6;
    // An unreachable improvement bar means every epoch is stale.
    tc.min_rel_improvement = 1.0;
    tc.patience = 2;
    TrainResult r = train(f.dataset, f.splits, f.prep, cfg, tc);
    CHECK(r.history.size() == 2);
}

TEST_CASE("a 6-stay corpus is memorized to near-zero loss") {
    TrainFixture f;
    const char* words[6] = {"ae", "bee", "cee", "dee", "ee", "eff"};
    for (int i = 0; i < 6; ++i) {
        Stay s;
        s.stay_id = "s" + std::to_string(i);
        s.patient_id = "p" + std::to_string(i);
        std::vector<std::string> doc(6, words[i]);
        s.documents = {doc};
        s.events = {{"lab:" + std::string(words[i]), 3.0, 0.0}};
        s.labels.assign(kNumLabels, 0);
        s.labels[static_cast<std::size_t>(i)] = 1;
        s.labels[static_cast<std::size_t>(12 + i)] = 1;
        f.dataset.stays.push_back(s);
        f.splits.by_patient[s.patient_id] = Split::kTrain;
    }
    f.prep = fit_preprocessing(f.dataset, f.splits, 1, 100.0, 6, 0);

    ModelConfig cfg;
    cfg.vocab_size = f.prep.vocabulary.size();
    cfg.word_dim = 8;
    cfg.conv_widths = {2, 3};
    cfg.channels_per_width = 4;
    cfg.n_structured = 6;
    cfg.mlp_hidden = 12;
    cfg.dropout_rate = 0.0;
    cfg.seed = 9;

    TrainConfig tc;
    tc.lr = 5e-3;
    tc.batch_size = 6;
    tc.max_epochs = 300;
    tc.patience = 300;
    tc.min_rel_improvement = 0.0;
    tc.seed = 10;

    TrainResult r = train(f.dataset, f.splits, f.prep, cfg, tc);
    REQUIRE_FALSE(r.history.empty());
    double best = std::numeric_limits<double>::infinity();
    for (const EpochStats& e : r.history) best = std::min(best, e.train_loss);
    INFO("best train loss ", best, " after ", r.history.size(), " epochs");
    CHECK(best < 0.05);
}

TEST_CASE("a divergent optimizer run raises OptimError instead of looping") {
    TrainFixture f = make_trainset(false);
    ModelConfig cfg = trainset_config(f, 5);
    TrainConfig tc;
    tc.max_epochs = 3;
    tc.batch_size = 4;
    // A pathological learning rate blows the parameters up within one step;
    // the next batch then produces non-finite state.
    tc.lr = 1e308;
    CHECK_THROWS_AS(train(f.dataset, f.splits, f.prep, cfg, tc), OptimError);
}

TEST_CASE("checkpoints round-trip bit-exactly and are byte-deterministic") {
    ModelConfig cfg = toy_config();
    ModelParams params = init_params(cfg);
    // Values with awkward binary representations must survive unchanged.
    params.mlp_b1[0] = 0.1 + 0.2;
    params.mlp_b1[1] = -0.0;
    params.mlp_b1[2] = 1e-300;
    params.cnn_b[0] = -12345.6789e55;

    const std::string path = "hybridnet_test.ckpt";
    const std::string hash = "fnv1a64:00deadbeef00cafe";
    save_checkpoint(params, cfg, hash, path);
    Checkpoint back = load_checkpoint(path);
    CHECK(back.params.equal_values(params));
    CHECK(back.preprocessing_hash == hash);
    CHECK(back.config.vocab_size == cfg.vocab_size);
    CHECK(back.config.word_dim == cfg.word_dim);
    CHECK(back.config.conv_widths == cfg.conv_widths);
    CHECK(back.config.channels_per_width == cfg.channels_per_width);
    CHECK(back.config.n_structured == cfg.n_structured);
    CHECK(back.config.mlp_hidden == cfg.mlp_hidden);
    CHECK(back.config.dropout_rate == cfg.dropout_rate);
    CHECK(back.config.seed == cfg.seed);

    const std::string path2 = "hybridnet_test2.ckpt";
    save_checkpoint(params, cfg, hash, path2);
    CHECK(slurp(path) == slurp(path2));
    std::remove(path2.c_str());

    const std::string bytes = slurp(path);

    // Truncated payload.
    spit(path, bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_AS(load_checkpoint(path), IoError);

    // Foreign magic.
    std::string corrupt = bytes;
    corrupt[0] = 'X';
    spit(path, corrupt);
    CHECK_THROWS_AS(load_checkpoint(path), ParseError);

    // Unsupported version (little-endian u32 after the 8-byte magic).
    corrupt = bytes;
    corrupt[8] = 2;
    spit(path, corrupt);
    CHECK_THROWS_AS(load_checkpoint(path), ParseError);

    // Trailing garbage.
    spit(path, bytes + "zz");
    CHECK_THROWS_AS(load_checkpoint(path), ParseError);

    std::remove(path.c_str());
    CHECK_THROWS_AS(load_checkpoint("no_such.ckpt"), IoError);
}

TEST_CASE("embeddings CSV round-trips exact doubles") {
    std::vector<VisitEmbedding> embs = {
        {"s1", {0.1 + 0.2, -0.0, 1e-300}},
        {"s2", {1.0, -2.5, 3.141592653589793}},
    };
    const std::string path = "hybridnet_test_emb.csv";
    write_embeddings_csv(embs, 3, path);
    std::vector<VisitEmbedding> back = read_embeddings_csv(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].stay_id == "s1");
    CHECK(back[1].stay_id == "s2");
    for (std::size_t i = 0; i < 2; ++i) {
        REQUIRE(back[i].values.size() == 3);
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(back[i].values[j] == embs[i].values[j]);
            CHECK(std::signbit(back[i].values[j]) == std::signbit(embs[i].values[j]));
        }
    }
    std::remove(path.c_str());
}
