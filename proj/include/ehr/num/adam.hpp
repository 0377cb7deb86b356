#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ehr/num/tensor.hpp"

namespace ehr::num {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First/second moment estimates per parameter plus the shared step counter.
struct AdamState {
    AdamConfig config;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::int64_t t = 0;

    static AdamState init(const std::vector<const Tensor*>& params, AdamConfig config);
};

// One bias-corrected Adam update, in place. `names` is used only for error
// reporting on non-finite gradients and may be empty.
void adam_step(std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state, const std::vector<std::string>& names = {});

}  // namespace ehr::num
