#include "ehr/num/ops.hpp"

#include <algorithm>
#include <cmath>

namespace ehr::num {

Tensor conv1d_valid(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
    if (input.rank() != 2 || kernel.rank() != 3 || bias.rank() != 1) {
        throw ShapeError("conv1d_valid: input must be TxD, kernel WxDxC, bias C");
    }
    const std::size_t T = input.dim(0), d = input.dim(1);
    const std::size_t w = kernel.dim(0), c = kernel.dim(2);
    if (kernel.dim(1) != d) {
        throw ShapeError("conv1d_valid: kernel depth " + std::to_string(kernel.dim(1)) +
                         " != input width " + std::to_string(d));
    }
    if (bias.dim(0) != c) throw ShapeError("conv1d_valid: bias length != channels");
    if (T < w) {
        throw ShapeError("conv1d_valid: input length " + std::to_string(T) +
                         " shorter than kernel width " + std::to_string(w));
    }

    const std::size_t out_t = T - w + 1;
    Tensor out({out_t, c});
    for (std::size_t t = 0; t < out_t; ++t) {
        double* out_row = out.data() + t * c;
        for (std::size_t j = 0; j < c; ++j) out_row[j] = bias[j];
        for (std::size_t i = 0; i < w; ++i) {
            const double* in_row = input.data() + (t + i) * d;
            const double* k_row = kernel.data() + i * d * c;
            for (std::size_t k = 0; k < d; ++k) {
                const double x = in_row[k];
                if (x == 0.0) continue;  // PAD rows and sparse inputs skip the channel loop
                const double* k_vec = k_row + k * c;
                for (std::size_t j = 0; j < c; ++j) out_row[j] += k_vec[j] * x;
            }
        }
    }
    return out;
}

Conv1dGrads conv1d_backward(const Tensor& input, const Tensor& kernel, const Tensor& d_out) {
    const std::size_t T = input.dim(0), d = input.dim(1);
    const std::size_t w = kernel.dim(0), c = kernel.dim(2);
    if (d_out.rank() != 2 || d_out.dim(0) != T - w + 1 || d_out.dim(1) != c) {
        throw ShapeError("conv1d_backward: d_out shape mismatch");
    }

    Conv1dGrads g{Tensor({T, d}), Tensor({w, d, c}), Tensor({c})};
    const std::size_t out_t = T - w + 1;
    for (std::size_t t = 0; t < out_t; ++t) {
        const double* dout_row = d_out.data() + t * c;
        for (std::size_t j = 0; j < c; ++j) g.d_bias[j] += dout_row[j];
        for (std::size_t i = 0; i < w; ++i) {
            const double* in_row = input.data() + (t + i) * d;
            double* din_row = g.d_input.data() + (t + i) * d;
            const double* k_row = kernel.data() + i * d * c;
            double* dk_row = g.d_kernel.data() + i * d * c;
            for (std::size_t k = 0; k < d; ++k) {
                const double x = in_row[k];
                const double* k_vec = k_row + k * c;
                double* dk_vec = dk_row + k * c;
                double acc = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double go = dout_row[j];
                    dk_vec[j] += go * x;
                    acc += go * k_vec[j];
                }
                din_row[k] += acc;
            }
        }
    }
    return g;
}

MaxOverTime max_over_time(const Tensor& input) {
    if (input.rank() != 2 || input.dim(0) == 0) {
        throw ShapeError("max_over_time: input must be TxC with T >= 1");
    }
    const std::size_t T = input.dim(0), c = input.dim(1);
    MaxOverTime r{Tensor({c}), std::vector<std::size_t>(c, 0)};
    for (std::size_t j = 0; j < c; ++j) r.values[j] = input.at(0, j);
    for (std::size_t t = 1; t < T; ++t) {
        const double* row = input.data() + t * c;
        for (std::size_t j = 0; j < c; ++j) {
            if (row[j] > r.values[j]) {
                r.values[j] = row[j];
                r.argmax[j] = t;
            }
        }
    }
    return r;
}

Tensor max_over_time_backward(const std::vector<std::size_t>& argmax, const Tensor& d_out,
                              std::size_t time_steps) {
    const std::size_t c = argmax.size();
    if (d_out.rank() != 1 || d_out.dim(0) != c) {
        throw ShapeError("max_over_time_backward: d_out length != channels");
    }
    Tensor d_input({time_steps, c});
    for (std::size_t j = 0; j < c; ++j) d_input.at(argmax[j], j) = d_out[j];
    return d_input;
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (input.rank() != 1 || weight.rank() != 2 || bias.rank() != 1) {
        throw ShapeError("dense: input/bias must be vectors, weight a matrix");
    }
    const std::size_t m = weight.dim(0), n = weight.dim(1);
    if (input.dim(0) != n || bias.dim(0) != m) {
        throw ShapeError("dense: shapes disagree, weight " + weight.shape_string() +
                         " input " + input.shape_string());
    }
    Tensor out({m});
    for (std::size_t i = 0; i < m; ++i) {
        const double* w_row = weight.data() + i * n;
        double acc = bias[i];
        for (std::size_t j = 0; j < n; ++j) acc += w_row[j] * input[j];
        out[i] = acc;
    }
    return out;
}

DenseGrads dense_backward(const Tensor& input, const Tensor& weight, const Tensor& d_out) {
    const std::size_t m = weight.dim(0), n = weight.dim(1);
    if (d_out.rank() != 1 || d_out.dim(0) != m) {
        throw ShapeError("dense_backward: d_out length != output size");
    }
    DenseGrads g{Tensor({n}), Tensor({m, n}), Tensor({m})};
    for (std::size_t i = 0; i < m; ++i) {
        const double go = d_out[i];
        g.d_bias[i] = go;
        const double* w_row = weight.data() + i * n;
        double* dw_row = g.d_weight.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            dw_row[j] = go * input[j];
            g.d_input[j] += go * w_row[j];
        }
    }
    return g;
}

Tensor relu(const Tensor& input) {
    Tensor out(input.dims());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
    return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& d_out) {
    if (!input.same_shape(d_out)) throw ShapeError("relu_backward: shape mismatch");
    Tensor g(input.dims());
    for (std::size_t i = 0; i < input.size(); ++i) g[i] = input[i] > 0.0 ? d_out[i] : 0.0;
    return g;
}

Tensor sigmoid(const Tensor& input) {
    Tensor out(input.dims());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-input[i]));
    return out;
}

Tensor sigmoid_backward(const Tensor& output, const Tensor& d_out) {
    if (!output.same_shape(d_out)) throw ShapeError("sigmoid_backward: shape mismatch");
    Tensor g(output.dims());
    for (std::size_t i = 0; i < output.size(); ++i) {
        g[i] = d_out[i] * output[i] * (1.0 - output[i]);
    }
    return g;
}

DropoutResult dropout(const Tensor& input, double rate, Rng& rng, Mode mode) {
    if (rate < 0.0 || rate >= 1.0) {
        throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
    }
    DropoutResult r{Tensor(input.dims()), Tensor(input.dims())};
    if (mode == Mode::kInfer || rate == 0.0) {
        r.output = input;
        r.mask.fill(1.0);
        return r;
    }
    const double scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < input.size(); ++i) {
        const double keep = rng.uniform() >= rate ? scale : 0.0;
        r.mask[i] = keep;
        r.output[i] = input[i] * keep;
    }
    return r;
}

Tensor dropout_backward(const Tensor& mask, const Tensor& d_out) {
    if (!mask.same_shape(d_out)) throw ShapeError("dropout_backward: shape mismatch");
    Tensor g(mask.dims());
    for (std::size_t i = 0; i < mask.size(); ++i) g[i] = d_out[i] * mask[i];
    return g;
}

static double clamp_prob(double p) {
    return std::min(1.0 - kBceEps, std::max(kBceEps, p));
}

double bce_sum(const Tensor& probs, const std::vector<int>& labels) {
    if (probs.rank() != 1 || probs.dim(0) != labels.size()) {
        throw ShapeError("bce_sum: probs/labels length mismatch");
    }
    double loss = 0.0;
    for (std::size_t j = 0; j < labels.size(); ++j) {
        const double p = clamp_prob(probs[j]);
        loss -= labels[j] ? std::log(p) : std::log(1.0 - p);
    }
    return loss;
}

Tensor bce_backward(const Tensor& probs, const std::vector<int>& labels) {
    if (probs.rank() != 1 || probs.dim(0) != labels.size()) {
        throw ShapeError("bce_backward: probs/labels length mismatch");
    }
    Tensor g({labels.size()});
    for (std::size_t j = 0; j < labels.size(); ++j) {
        const double p = clamp_prob(probs[j]);
        const double y = labels[j] ? 1.0 : 0.0;
        g[j] = (p - y) / (p * (1.0 - p));
    }
    return g;
}

}  // namespace ehr::num
