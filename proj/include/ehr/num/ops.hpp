#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ehr/num/tensor.hpp"
#include "ehr/rng.hpp"

namespace ehr::num {

enum class Mode { kTrain, kInfer };

// -------------------------------------------------------------------------
// 1-D valid convolution over time.
//   input  T x d   (time, word dim)
//   kernel w x d x c
//   bias   c
//   output (T-w+1) x c, out[t,j] = bias[j] + sum_{i,k} kernel[i,k,j] * input[t+i,k]
// -------------------------------------------------------------------------
Tensor conv1d_valid(const Tensor& input, const Tensor& kernel, const Tensor& bias);

struct Conv1dGrads {
    Tensor d_input;
    Tensor d_kernel;
    Tensor d_bias;
};
Conv1dGrads conv1d_backward(const Tensor& input, const Tensor& kernel, const Tensor& d_out);

// -------------------------------------------------------------------------
// Max over the time dimension. Ties go to the smallest t; backward routes
// gradient only to the recorded argmax positions.
// -------------------------------------------------------------------------
struct MaxOverTime {
    Tensor values;                   // c
    std::vector<std::size_t> argmax; // c
};
MaxOverTime max_over_time(const Tensor& input);
Tensor max_over_time_backward(const std::vector<std::size_t>& argmax, const Tensor& d_out,
                              std::size_t time_steps);

// -------------------------------------------------------------------------
// Dense layer: W x + b, W is m x n.
// -------------------------------------------------------------------------
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);

struct DenseGrads {
    Tensor d_input;
    Tensor d_weight;
    Tensor d_bias;
};
DenseGrads dense_backward(const Tensor& input, const Tensor& weight, const Tensor& d_out);

// -------------------------------------------------------------------------
// Elementwise activations. relu backward uses subgradient 0 at x = 0;
// sigmoid backward takes the forward output, sigma'(x) = y (1 - y).
// -------------------------------------------------------------------------
Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& d_out);

Tensor sigmoid(const Tensor& input);
Tensor sigmoid_backward(const Tensor& output, const Tensor& d_out);

// -------------------------------------------------------------------------
// Inverted dropout: kept entries scaled by 1/(1-rate) at train time, so
// inference is the identity. The mask holds the applied scale per entry and
// is all that backward needs.
// -------------------------------------------------------------------------
struct DropoutResult {
    Tensor output;
    Tensor mask;
};
DropoutResult dropout(const Tensor& input, double rate, Rng& rng, Mode mode);
Tensor dropout_backward(const Tensor& mask, const Tensor& d_out);

// -------------------------------------------------------------------------
// Summed binary cross-entropy over one label vector. Probabilities are
// clamped to [eps, 1-eps] with eps = 1e-12 before the logs.
// -------------------------------------------------------------------------
inline constexpr double kBceEps = 1e-12;

double bce_sum(const Tensor& probs, const std::vector<int>& labels);
Tensor bce_backward(const Tensor& probs, const std::vector<int>& labels);

}  // namespace ehr::num
