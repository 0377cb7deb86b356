#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ehr/corpus.hpp"
#include "ehr/featurize.hpp"
#include "ehr/num/adam.hpp"
#include "ehr/num/ops.hpp"
#include "ehr/num/tensor.hpp"
#include "ehr/rng.hpp"

namespace ehr::net {

// Architecture of the hybrid network: a text CNN (per-width 1-D filters with
// max-over-time pooling) and a structured-features MLP, fused at the score
// level into 19 sigmoid outputs. With the defaults the visit embedding is
// 256 (MLP hidden) + 3*64 (CNN pooled) = 448 wide.
struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t word_dim = 50;
    std::vector<std::size_t> conv_widths = {3, 4, 5};
    std::size_t channels_per_width = 64;
    std::size_t n_structured = 0;
    std::size_t mlp_hidden = 256;
    std::size_t n_labels = kNumLabels;
    double dropout_rate = 0.5;
    std::uint64_t seed = 0;

    std::size_t pooled_width() const { return conv_widths.size() * channels_per_width; }
    std::size_t embedding_width() const { return mlp_hidden + pooled_width(); }
    std::size_t max_conv_width() const;

    void validate() const;
};

// Every learnable tensor. The PAD row of the embedding table is all-zero and
// stays frozen: its gradient is zeroed before each optimizer step.
struct ModelParams {
    num::Tensor word_embedding;             // vocab_size x word_dim
    std::vector<num::Tensor> conv_kernels;  // per width: w x word_dim x channels
    std::vector<num::Tensor> conv_biases;   // per width: channels
    num::Tensor mlp_w1, mlp_b1;             // mlp_hidden x n_structured, mlp_hidden
    num::Tensor mlp_w2, mlp_b2;             // n_labels x mlp_hidden, n_labels
    num::Tensor cnn_w, cnn_b;               // n_labels x pooled_width, n_labels

    static ModelParams zeros(const ModelConfig& config);

    std::vector<std::pair<std::string, num::Tensor*>> named_tensors(const ModelConfig& config);
    std::vector<std::pair<std::string, const num::Tensor*>> named_tensors(
        const ModelConfig& config) const;

    void check_shapes(const ModelConfig& config) const;  // throws ShapeError
    bool equal_values(const ModelParams& other) const;
};

ModelParams init_params(const ModelConfig& config);

// ---------------------------------------------------------------------------
// Forward passes. The structs keep what backward needs.
// ---------------------------------------------------------------------------
struct TextForward {
    num::Tensor pooled;  // pooled_width, post max-over-time, pre-dropout
    num::Tensor scores;  // n_labels, pre-sigmoid

    std::vector<int> padded_ids;
    num::Tensor embedded;
    std::vector<num::Tensor> conv_out;
    std::vector<std::vector<std::size_t>> argmax;
    num::DropoutResult pooled_dropout;
};

struct StructuredForward {
    num::Tensor hidden;  // mlp_hidden, post-ReLU, pre-dropout
    num::Tensor scores;  // n_labels, pre-sigmoid

    num::Tensor input;
    num::Tensor pre_activation;
    num::DropoutResult hidden_dropout;
};

TextForward forward_text(const ModelParams& params, const ModelConfig& config,
                         const std::vector<int>& token_ids, num::Mode mode, Rng& rng);
StructuredForward forward_structured(const ModelParams& params, const ModelConfig& config,
                                     const num::Tensor& structured, num::Mode mode, Rng& rng);

// Score-level fusion: sigmoid(text + structured), one probability per label.
num::Tensor combine_and_predict(const num::Tensor& text_scores,
                                const num::Tensor& structured_scores);

// Accumulates gradients for one stay given d(loss)/d(scores) of each branch.
void backward_text(const ModelParams& params, const ModelConfig& config, const TextForward& fwd,
                   const num::Tensor& d_scores, ModelParams& grads);
void backward_structured(const ModelParams& params, const ModelConfig& config,
                         const StructuredForward& fwd, const num::Tensor& d_scores,
                         ModelParams& grads);

// Dense scatter of the selected sparse features, absent columns = 0.
num::Tensor scatter_structured(const EncodedStay& stay, std::size_t n_structured);

// Loss (mean over the batch of per-stay summed BCE) plus accumulated
// gradients over a batch of encoded stays. Used by the trainer and by the
// full-model gradient checks.
double batch_loss_and_grads(const ModelParams& params, const ModelConfig& config,
                            const std::vector<const EncodedStay*>& batch, num::Mode mode,
                            Rng& rng, ModelParams* grads);

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------
struct TrainConfig {
    double lr = 1e-3;
    std::size_t batch_size = 64;
    std::size_t max_epochs = 30;
    std::size_t patience = 3;
    double min_rel_improvement = 1e-4;
    std::uint64_t seed = 0;
};

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainResult {
    ModelParams params;  // snapshot from the best train-loss epoch
    std::vector<EpochStats> history;
};

// Encodes the train/validation splits with the fitted preprocessing and runs
// Adam with per-epoch shuffling. Early stop fires when the epoch-mean train
// loss fails to improve by min_rel_improvement (relative) for `patience`
// consecutive epochs. Validation loss is logged each epoch.
TrainResult train(const Dataset& dataset, const SplitAssignment& splits,
                  const Preprocessing& preprocessing, const ModelConfig& model_config,
                  const TrainConfig& train_config);

// ---------------------------------------------------------------------------
// Embeddings: inference-mode [MLP hidden || CNN pooled].
// ---------------------------------------------------------------------------
struct VisitEmbedding {
    std::string stay_id;
    std::vector<double> values;
};

VisitEmbedding extract_embedding(const ModelParams& params, const ModelConfig& config,
                                 const Preprocessing& preprocessing, const Stay& stay);
VisitEmbedding extract_embedding(const ModelParams& params, const ModelConfig& config,
                                 const EncodedStay& encoded);

void write_embeddings_csv(const std::vector<VisitEmbedding>& embeddings, std::size_t dim,
                          const std::string& path);
std::vector<VisitEmbedding> read_embeddings_csv(const std::string& path);

// ---------------------------------------------------------------------------
// Checkpoints: versioned binary container with a JSON header (config echo,
// embedding width, preprocessing file hash, tensor directory) followed by
// little-endian 64-bit tensor blocks. Written atomically via temp + rename.
// ---------------------------------------------------------------------------
struct Checkpoint {
    ModelConfig config;
    ModelParams params;
    std::string preprocessing_hash;
};

void save_checkpoint(const ModelParams& params, const ModelConfig& config,
                     const std::string& preprocessing_hash, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ehr::net
