#include "ehr/net/hybridnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "ehr/errors.hpp"
#include "ehr/format.hpp"

namespace ehr::net {
namespace {

using nlohmann::json;

void add_into(num::Tensor& dst, const num::Tensor& src) {
    if (!dst.same_shape(src)) {
        throw ShapeError("gradient accumulation shape mismatch: " + dst.shape_string() + " vs " +
                         src.shape_string());
    }
    double* d = dst.data();
    const double* s = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

void fill_uniform(num::Tensor& t, double lo, double hi, Rng& rng) {
    for (double& v : t.values()) v = rng.uniform(lo, hi);
}

}  // namespace

std::size_t ModelConfig::max_conv_width() const {
    return *std::max_element(conv_widths.begin(), conv_widths.end());
}

void ModelConfig::validate() const {
    if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2 (PAD and UNK)");
    if (word_dim == 0) throw ConfigError("word_dim must be positive");
    if (conv_widths.empty()) throw ConfigError("at least one convolution width is required");
    for (std::size_t w : conv_widths) {
        if (w == 0) throw ConfigError("convolution widths must be positive");
    }
    if (channels_per_width == 0) throw ConfigError("channels_per_width must be positive");
    if (n_structured == 0) throw ConfigError("n_structured must be positive");
    if (mlp_hidden == 0) throw ConfigError("mlp_hidden must be positive");
    if (n_labels == 0) throw ConfigError("n_labels must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw ConfigError("dropout_rate must be in [0, 1)");
    }
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
    ModelParams p;
    p.word_embedding = num::Tensor({config.vocab_size, config.word_dim});
    for (std::size_t w : config.conv_widths) {
        p.conv_kernels.push_back(num::Tensor({w, config.word_dim, config.channels_per_width}));
        p.conv_biases.push_back(num::Tensor({config.channels_per_width}));
    }
    p.mlp_w1 = num::Tensor({config.mlp_hidden, config.n_structured});
    p.mlp_b1 = num::Tensor({config.mlp_hidden});
    p.mlp_w2 = num::Tensor({config.n_labels, config.mlp_hidden});
    p.mlp_b2 = num::Tensor({config.n_labels});
    p.cnn_w = num::Tensor({config.n_labels, config.pooled_width()});
    p.cnn_b = num::Tensor({config.n_labels});
    return p;
}

std::vector<std::pair<std::string, num::Tensor*>> ModelParams::named_tensors(
    const ModelConfig& config) {
    std::vector<std::pair<std::string, num::Tensor*>> out;
    out.emplace_back("word_embedding", &word_embedding);
    for (std::size_t i = 0; i < config.conv_widths.size(); ++i) {
        const std::string w = std::to_string(config.conv_widths[i]);
        out.emplace_back("conv" + w + "_kernel", &conv_kernels[i]);
        out.emplace_back("conv" + w + "_bias", &conv_biases[i]);
    }
    out.emplace_back("mlp_w1", &mlp_w1);
    out.emplace_back("mlp_b1", &mlp_b1);
    out.emplace_back("mlp_w2", &mlp_w2);
    out.emplace_back("mlp_b2", &mlp_b2);
    out.emplace_back("cnn_w", &cnn_w);
    out.emplace_back("cnn_b", &cnn_b);
    return out;
}

std::vector<std::pair<std::string, const num::Tensor*>> ModelParams::named_tensors(
    const ModelConfig& config) const {
    auto mutable_view = const_cast<ModelParams*>(this)->named_tensors(config);
    std::vector<std::pair<std::string, const num::Tensor*>> out;
    out.reserve(mutable_view.size());
    for (auto& [name, tensor] : mutable_view) out.emplace_back(name, tensor);
    return out;
}

void ModelParams::check_shapes(const ModelConfig& config) const {
    const ModelParams expected = zeros(config);
    auto have = named_tensors(config);
    auto want = expected.named_tensors(config);
    if (conv_kernels.size() != config.conv_widths.size() ||
        conv_biases.size() != config.conv_widths.size()) {
        throw ShapeError("convolution tensor count does not match conv_widths");
    }
    for (std::size_t i = 0; i < have.size(); ++i) {
        if (!have[i].second->same_shape(*want[i].second)) {
            throw ShapeError("parameter " + have[i].first + " has shape " +
                             have[i].second->shape_string() + ", expected " +
                             want[i].second->shape_string());
        }
    }
}

bool ModelParams::equal_values(const ModelParams& other) const {
    if (conv_kernels.size() != other.conv_kernels.size()) return false;
    auto eq = [](const num::Tensor& a, const num::Tensor& b) {
        return a.dims() == b.dims() && a.values() == b.values();
    };
    if (!eq(word_embedding, other.word_embedding)) return false;
    for (std::size_t i = 0; i < conv_kernels.size(); ++i) {
        if (!eq(conv_kernels[i], other.conv_kernels[i])) return false;
        if (!eq(conv_biases[i], other.conv_biases[i])) return false;
    }
    return eq(mlp_w1, other.mlp_w1) && eq(mlp_b1, other.mlp_b1) && eq(mlp_w2, other.mlp_w2) &&
           eq(mlp_b2, other.mlp_b2) && eq(cnn_w, other.cnn_w) && eq(cnn_b, other.cnn_b);
}

ModelParams init_params(const ModelConfig& config) {
    config.validate();
    ModelParams p = ModelParams::zeros(config);
    const Rng root(config.seed);

    Rng emb_rng = root.derive("init:word_embedding");
    fill_uniform(p.word_embedding, -0.05, 0.05, emb_rng);
    for (std::size_t j = 0; j < config.word_dim; ++j) p.word_embedding.at(kPadId, j) = 0.0;

    for (std::size_t i = 0; i < config.conv_widths.size(); ++i) {
        const std::size_t w = config.conv_widths[i];
        Rng rng = root.derive("init:conv" + std::to_string(w));
        const double bound = xavier_bound(w * config.word_dim, config.channels_per_width);
        fill_uniform(p.conv_kernels[i], -bound, bound, rng);
    }
    {
        Rng rng = root.derive("init:mlp_w1");
        const double bound = xavier_bound(config.n_structured, config.mlp_hidden);
        fill_uniform(p.mlp_w1, -bound, bound, rng);
    }
    {
        Rng rng = root.derive("init:mlp_w2");
        const double bound = xavier_bound(config.mlp_hidden, config.n_labels);
        fill_uniform(p.mlp_w2, -bound, bound, rng);
    }
    {
        Rng rng = root.derive("init:cnn_w");
        const double bound = xavier_bound(config.pooled_width(), config.n_labels);
        fill_uniform(p.cnn_w, -bound, bound, rng);
    }
    return p;
}

TextForward forward_text(const ModelParams& params, const ModelConfig& config,
                         const std::vector<int>& token_ids, num::Mode mode, Rng& rng) {
    TextForward fwd;
    const std::size_t min_len = config.max_conv_width();
    const std::size_t length = std::max(token_ids.size(), min_len);
    fwd.padded_ids.assign(length, kPadId);
    std::copy(token_ids.begin(), token_ids.end(),
              fwd.padded_ids.begin() + static_cast<std::ptrdiff_t>(length - token_ids.size()));

    fwd.embedded = num::Tensor({length, config.word_dim});
    for (std::size_t t = 0; t < length; ++t) {
        const int id = fwd.padded_ids[t];
        if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
            throw IntegrityError("token id " + std::to_string(id) + " outside vocabulary of " +
                                 std::to_string(config.vocab_size));
        }
        for (std::size_t j = 0; j < config.word_dim; ++j) {
            fwd.embedded.at(t, j) = params.word_embedding.at(static_cast<std::size_t>(id), j);
        }
    }

    fwd.pooled = num::Tensor({config.pooled_width()});
    fwd.conv_out.reserve(config.conv_widths.size());
    fwd.argmax.reserve(config.conv_widths.size());
    for (std::size_t i = 0; i < config.conv_widths.size(); ++i) {
        num::Tensor pre =
            num::conv1d_valid(fwd.embedded, params.conv_kernels[i], params.conv_biases[i]);
        const num::MaxOverTime pooled = num::max_over_time(num::relu(pre));
        for (std::size_t c = 0; c < config.channels_per_width; ++c) {
            fwd.pooled[i * config.channels_per_width + c] = pooled.values[c];
        }
        fwd.conv_out.push_back(std::move(pre));
        fwd.argmax.push_back(pooled.argmax);
    }

    fwd.pooled_dropout = num::dropout(fwd.pooled, config.dropout_rate, rng, mode);
    fwd.scores = num::dense(fwd.pooled_dropout.output, params.cnn_w, params.cnn_b);
    return fwd;
}

StructuredForward forward_structured(const ModelParams& params, const ModelConfig& config,
                                     const num::Tensor& structured, num::Mode mode, Rng& rng) {
    if (structured.rank() != 1 || structured.dim(0) != config.n_structured) {
        throw ShapeError("structured input has shape " + structured.shape_string() +
                         ", expected [" + std::to_string(config.n_structured) + "]");
    }
    StructuredForward fwd;
    fwd.input = structured;
    fwd.pre_activation = num::dense(fwd.input, params.mlp_w1, params.mlp_b1);
    fwd.hidden = num::relu(fwd.pre_activation);
    fwd.hidden_dropout = num::dropout(fwd.hidden, config.dropout_rate, rng, mode);
    fwd.scores = num::dense(fwd.hidden_dropout.output, params.mlp_w2, params.mlp_b2);
    return fwd;
}

num::Tensor combine_and_predict(const num::Tensor& text_scores,
                                const num::Tensor& structured_scores) {
    if (!text_scores.same_shape(structured_scores)) {
        throw ShapeError("branch score shapes differ: " + text_scores.shape_string() + " vs " +
                         structured_scores.shape_string());
    }
    num::Tensor sum = text_scores;
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += structured_scores[i];
    return num::sigmoid(sum);
}

void backward_text(const ModelParams& params, const ModelConfig& config, const TextForward& fwd,
                   const num::Tensor& d_scores, ModelParams& grads) {
    num::DenseGrads head =
        num::dense_backward(fwd.pooled_dropout.output, params.cnn_w, d_scores);
    add_into(grads.cnn_w, head.d_weight);
    add_into(grads.cnn_b, head.d_bias);

    const num::Tensor d_pooled = num::dropout_backward(fwd.pooled_dropout.mask, head.d_input);
    num::Tensor d_embedded({fwd.embedded.dim(0), config.word_dim});
    for (std::size_t i = 0; i < config.conv_widths.size(); ++i) {
        num::Tensor d_segment({config.channels_per_width});
        for (std::size_t c = 0; c < config.channels_per_width; ++c) {
            d_segment[c] = d_pooled[i * config.channels_per_width + c];
        }
        const num::Tensor d_relu_out =
            num::max_over_time_backward(fwd.argmax[i], d_segment, fwd.conv_out[i].dim(0));
        const num::Tensor d_pre = num::relu_backward(fwd.conv_out[i], d_relu_out);
        num::Conv1dGrads cg = num::conv1d_backward(fwd.embedded, params.conv_kernels[i], d_pre);
        add_into(grads.conv_kernels[i], cg.d_kernel);
        add_into(grads.conv_biases[i], cg.d_bias);
        add_into(d_embedded, cg.d_input);
    }

    for (std::size_t t = 0; t < fwd.padded_ids.size(); ++t) {
        const auto row = static_cast<std::size_t>(fwd.padded_ids[t]);
        for (std::size_t j = 0; j < config.word_dim; ++j) {
            grads.word_embedding.at(row, j) += d_embedded.at(t, j);
        }
    }
}

void backward_structured(const ModelParams& params, const ModelConfig& config,
                         const StructuredForward& fwd, const num::Tensor& d_scores,
                         ModelParams& grads) {
    (void)config;
    num::DenseGrads head =
        num::dense_backward(fwd.hidden_dropout.output, params.mlp_w2, d_scores);
    add_into(grads.mlp_w2, head.d_weight);
    add_into(grads.mlp_b2, head.d_bias);

    const num::Tensor d_hidden = num::dropout_backward(fwd.hidden_dropout.mask, head.d_input);
    const num::Tensor d_pre = num::relu_backward(fwd.pre_activation, d_hidden);
    num::DenseGrads body = num::dense_backward(fwd.input, params.mlp_w1, d_pre);
    add_into(grads.mlp_w1, body.d_weight);
    add_into(grads.mlp_b1, body.d_bias);
}

num::Tensor scatter_structured(const EncodedStay& stay, std::size_t n_structured) {
    num::Tensor dense({n_structured});
    for (const auto& [column, value] : stay.structured) {
        if (column >= n_structured) {
            throw IntegrityError("structured column " + std::to_string(column) +
                                 " outside width " + std::to_string(n_structured));
        }
        dense[column] = value;
    }
    return dense;
}

double batch_loss_and_grads(const ModelParams& params, const ModelConfig& config,
                            const std::vector<const EncodedStay*>& batch, num::Mode mode,
                            Rng& rng, ModelParams* grads) {
    if (batch.empty()) throw ConfigError("empty batch");
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    double loss_sum = 0.0;
    for (const EncodedStay* stay : batch) {
        const TextForward tf = forward_text(params, config, stay->token_ids, mode, rng);
        const StructuredForward sf = forward_structured(
            params, config, scatter_structured(*stay, config.n_structured), mode, rng);
        const num::Tensor probs = combine_and_predict(tf.scores, sf.scores);
        loss_sum += num::bce_sum(probs, stay->labels);
        if (grads != nullptr) {
            const num::Tensor d_probs = num::bce_backward(probs, stay->labels);
            num::Tensor d_sum = num::sigmoid_backward(probs, d_probs);
            for (double& v : d_sum.values()) v *= inv_batch;
            backward_text(params, config, tf, d_sum, *grads);
            backward_structured(params, config, sf, d_sum, *grads);
        }
    }
    return loss_sum * inv_batch;
}

namespace {

std::vector<EncodedStay> encode_split(const Dataset& dataset, const SplitAssignment& splits,
                                      const Preprocessing& preprocessing, Split which) {
    std::vector<EncodedStay> encoded;
    for (const Stay& stay : dataset.stays) {
        if (splits.of(stay.patient_id) == which) encoded.push_back(preprocessing.apply(stay));
    }
    return encoded;
}

void zero_all(ModelParams& grads, const ModelConfig& config) {
    for (auto& [name, tensor] : grads.named_tensors(config)) {
        (void)name;
        tensor->fill(0.0);
    }
}

double mean_inference_loss(const ModelParams& params, const ModelConfig& config,
                           const std::vector<EncodedStay>& stays) {
    if (stays.empty()) return std::numeric_limits<double>::quiet_NaN();
    Rng unused(0);
    double sum = 0.0;
    for (const EncodedStay& stay : stays) {
        std::vector<const EncodedStay*> one{&stay};
        sum += batch_loss_and_grads(params, config, one, num::Mode::kInfer, unused, nullptr);
    }
    return sum / static_cast<double>(stays.size());
}

}  // namespace

TrainResult train(const Dataset& dataset, const SplitAssignment& splits,
                  const Preprocessing& preprocessing, const ModelConfig& model_config,
                  const TrainConfig& train_config) {
    model_config.validate();
    if (train_config.batch_size == 0) throw ConfigError("batch_size must be positive");
    if (train_config.lr <= 0.0) throw ConfigError("learning rate must be positive");

    const std::vector<EncodedStay> train_stays =
        encode_split(dataset, splits, preprocessing, Split::kTrain);
    const std::vector<EncodedStay> val_stays =
        encode_split(dataset, splits, preprocessing, Split::kValidation);
    if (train_stays.empty()) throw SplitError("no training stays after split assignment");

    TrainResult result{init_params(model_config), {}};
    if (train_config.max_epochs == 0) return result;

    ModelParams params = result.params;
    ModelParams grads = ModelParams::zeros(model_config);
    auto named = params.named_tensors(model_config);
    auto named_grads = grads.named_tensors(model_config);
    std::vector<num::Tensor*> param_ptrs;
    std::vector<const num::Tensor*> grad_ptrs;
    std::vector<std::string> names;
    for (auto& [name, tensor] : named) {
        names.push_back(name);
        param_ptrs.push_back(tensor);
    }
    for (auto& [name, tensor] : named_grads) {
        (void)name;
        grad_ptrs.push_back(tensor);
    }

    num::AdamConfig adam_config;
    adam_config.lr = train_config.lr;
    num::AdamState adam = num::AdamState::init(grad_ptrs, adam_config);

    const Rng root(train_config.seed);
    Rng shuffle_rng = root.derive("shuffle");
    Rng dropout_rng = root.derive("dropout");

    std::vector<std::size_t> order(train_stays.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    double best_loss = std::numeric_limits<double>::infinity();
    std::size_t stale_epochs = 0;

    for (std::size_t epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss_sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size();
             start += train_config.batch_size, ++batch_index) {
            const std::size_t end = std::min(order.size(), start + train_config.batch_size);
            std::vector<const EncodedStay*> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(&train_stays[order[i]]);

            zero_all(grads, model_config);
            const double batch_loss = batch_loss_and_grads(params, model_config, batch,
                                                           num::Mode::kTrain, dropout_rng, &grads);
            if (!std::isfinite(batch_loss)) {
                throw OptimError("non-finite training loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batch_index));
            }
            for (std::size_t j = 0; j < model_config.word_dim; ++j) {
                grads.word_embedding.at(static_cast<std::size_t>(kPadId), j) = 0.0;
            }
            num::adam_step(param_ptrs, grad_ptrs, adam, names);
            epoch_loss_sum += batch_loss * static_cast<double>(end - start);
        }

        const double train_loss = epoch_loss_sum / static_cast<double>(train_stays.size());
        const double val_loss = mean_inference_loss(params, model_config, val_stays);
        result.history.push_back({epoch, train_loss, val_loss});

        if (train_loss < best_loss * (1.0 - train_config.min_rel_improvement)) {
            best_loss = train_loss;
            result.params = params;
            stale_epochs = 0;
        } else {
            ++stale_epochs;
            if (stale_epochs >= train_config.patience) break;
        }
    }
    return result;
}

VisitEmbedding extract_embedding(const ModelParams& params, const ModelConfig& config,
                                 const EncodedStay& encoded) {
    Rng unused(0);
    const TextForward tf =
        forward_text(params, config, encoded.token_ids, num::Mode::kInfer, unused);
    const StructuredForward sf = forward_structured(
        params, config, scatter_structured(encoded, config.n_structured), num::Mode::kInfer,
        unused);

    VisitEmbedding embedding;
    embedding.stay_id = encoded.stay_id;
    embedding.values.reserve(config.embedding_width());
    embedding.values.insert(embedding.values.end(), sf.hidden.values().begin(),
                            sf.hidden.values().end());
    embedding.values.insert(embedding.values.end(), tf.pooled.values().begin(),
                            tf.pooled.values().end());
    return embedding;
}

VisitEmbedding extract_embedding(const ModelParams& params, const ModelConfig& config,
                                 const Preprocessing& preprocessing, const Stay& stay) {
    return extract_embedding(params, config, preprocessing.apply(stay));
}

// ---------------------------------------------------------------------------
// Embeddings CSV.
// ---------------------------------------------------------------------------
void write_embeddings_csv(const std::vector<VisitEmbedding>& embeddings, std::size_t dim,
                          const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "stay_id";
    for (std::size_t i = 0; i < dim; ++i) out << ",e" << i;
    out << "\n";
    for (const VisitEmbedding& row : embeddings) {
        if (row.values.size() != dim) {
            throw ShapeError("embedding for " + row.stay_id + " has width " +
                             std::to_string(row.values.size()) + ", expected " +
                             std::to_string(dim));
        }
        out << row.stay_id;
        for (double v : row.values) out << "," << format_double(v);
        out << "\n";
    }
    if (!out) throw IoError("failed writing " + path);
}

std::vector<VisitEmbedding> read_embeddings_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty embeddings file");
    const std::vector<std::string> header = split_csv_line(line);
    if (header.empty() || header[0] != "stay_id") {
        throw ParseError(path + ": expected header starting with stay_id");
    }
    const std::size_t dim = header.size() - 1;
    for (std::size_t i = 0; i < dim; ++i) {
        if (header[i + 1] != "e" + std::to_string(i)) {
            throw ParseError(path + ": unexpected header column '" + header[i + 1] + "'");
        }
    }

    std::vector<VisitEmbedding> rows;
    std::size_t line_number = 1;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        const std::vector<std::string> fields = split_csv_line(line);
        if (fields.size() != dim + 1) {
            throw ParseError(path + " line " + std::to_string(line_number) + ": expected " +
                             std::to_string(dim + 1) + " fields, got " +
                             std::to_string(fields.size()));
        }
        VisitEmbedding row;
        row.stay_id = fields[0];
        row.values.reserve(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            row.values.push_back(parse_double(
                fields[i + 1], path + " line " + std::to_string(line_number)));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Checkpoints.
// ---------------------------------------------------------------------------
namespace {

constexpr char kMagic[8] = {'E', 'H', 'R', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

json config_to_json(const ModelConfig& config) {
    return json{{"vocab_size", config.vocab_size},
                {"word_dim", config.word_dim},
                {"conv_widths", config.conv_widths},
                {"channels_per_width", config.channels_per_width},
                {"n_structured", config.n_structured},
                {"mlp_hidden", config.mlp_hidden},
                {"n_labels", config.n_labels},
                {"dropout_rate", config.dropout_rate},
                {"seed", config.seed}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig config;
    config.vocab_size = j.at("vocab_size").get<std::size_t>();
    config.word_dim = j.at("word_dim").get<std::size_t>();
    config.conv_widths = j.at("conv_widths").get<std::vector<std::size_t>>();
    config.channels_per_width = j.at("channels_per_width").get<std::size_t>();
    config.n_structured = j.at("n_structured").get<std::size_t>();
    config.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
    config.n_labels = j.at("n_labels").get<std::size_t>();
    config.dropout_rate = j.at("dropout_rate").get<double>();
    config.seed = j.at("seed").get<std::uint64_t>();
    return config;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const ModelConfig& config,
                     const std::string& preprocessing_hash, const std::string& path) {
    config.validate();
    params.check_shapes(config);

    const auto named = params.named_tensors(config);
    json header;
    header["config"] = config_to_json(config);
    header["embedding_width"] = config.embedding_width();
    header["preprocessing_hash"] = preprocessing_hash;
    json tensors = json::array();
    for (const auto& [name, tensor] : named) {
        tensors.push_back(json{{"name", name}, {"dims", tensor->dims()}});
    }
    header["tensors"] = tensors;
    const std::string header_text = header.dump();

    std::string blob;
    blob.append(kMagic, sizeof(kMagic));
    put_u32(blob, kCheckpointVersion);
    put_u64(blob, header_text.size());
    blob += header_text;
    for (const auto& [name, tensor] : named) {
        (void)name;
        for (double v : tensor->values()) {
            std::uint64_t bits = 0;
            std::memcpy(&bits, &v, sizeof(bits));
            put_u64(blob, bits);
        }
    }

    const std::filesystem::path target(path);
    const std::filesystem::path temp = target.string() + ".tmp";
    {
        std::ofstream out(temp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + temp.string() + " for writing");
        out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        if (!out) throw IoError("failed writing " + temp.string());
    }
    std::error_code ec;
    std::filesystem::rename(temp, target, ec);
    if (ec) throw IoError("cannot rename " + temp.string() + " to " + path + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(blob.data());

    if (blob.size() < sizeof(kMagic) + 12) throw IoError(path + ": checkpoint truncated");
    if (std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) {
        throw ParseError(path + ": not a checkpoint file (bad magic)");
    }
    const std::uint32_t version = get_u32(p + sizeof(kMagic));
    if (version != kCheckpointVersion) {
        throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint64_t header_len = get_u64(p + sizeof(kMagic) + 4);
    std::size_t offset = sizeof(kMagic) + 12;
    if (blob.size() < offset + header_len) throw IoError(path + ": checkpoint truncated");

    json header;
    try {
        header = json::parse(blob.substr(offset, header_len));
    } catch (const json::exception& e) {
        throw ParseError(path + ": bad checkpoint header: " + e.what());
    }
    offset += header_len;

    Checkpoint ckpt;
    try {
        ckpt.config = config_from_json(header.at("config"));
        ckpt.preprocessing_hash = header.at("preprocessing_hash").get<std::string>();
        if (header.at("embedding_width").get<std::size_t>() != ckpt.config.embedding_width()) {
            throw ParseError(path + ": header embedding_width disagrees with config");
        }
        ckpt.params = ModelParams::zeros(ckpt.config);
        auto named = ckpt.params.named_tensors(ckpt.config);
        const json& tensors = header.at("tensors");
        if (tensors.size() != named.size()) {
            throw ParseError(path + ": tensor directory has " + std::to_string(tensors.size()) +
                             " entries, expected " + std::to_string(named.size()));
        }
        for (std::size_t i = 0; i < named.size(); ++i) {
            const auto& entry = tensors.at(i);
            if (entry.at("name").get<std::string>() != named[i].first) {
                throw ParseError(path + ": unexpected tensor '" +
                                 entry.at("name").get<std::string>() + "' at position " +
                                 std::to_string(i));
            }
            if (entry.at("dims").get<std::vector<std::size_t>>() != named[i].second->dims()) {
                throw ParseError(path + ": tensor " + named[i].first + " has unexpected dims");
            }
        }
        for (auto& [name, tensor] : named) {
            (void)name;
            const std::size_t bytes = tensor->size() * 8;
            if (blob.size() < offset + bytes) throw IoError(path + ": checkpoint truncated");
            for (std::size_t k = 0; k < tensor->size(); ++k) {
                const std::uint64_t bits = get_u64(p + offset + 8 * k);
                double v = 0.0;
                std::memcpy(&v, &bits, sizeof(v));
                (*tensor)[k] = v;
            }
            offset += bytes;
        }
    } catch (const json::exception& e) {
        throw ParseError(path + ": bad checkpoint header: " + e.what());
    }
    if (offset != blob.size()) throw ParseError(path + ": trailing bytes after tensor data");
    ckpt.config.validate();
    ckpt.params.check_shapes(ckpt.config);
    return ckpt;
}

}  // namespace ehr::net
