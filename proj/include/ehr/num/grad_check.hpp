#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ehr/num/tensor.hpp"

namespace ehr::num {

struct GradCheckReport {
    double max_rel_error = 0.0;
    bool pass = false;
    std::string worst;  // "name[i]" of the worst coordinate
};

// Compares analytic gradients against central finite differences of a
// scalar-valued computation. `eval` must read the tensors behind `inputs`
// (they are perturbed in place and restored). Relative error per coordinate
// is |a - n| / max(|a| + |n|, 1e-8), so near-zero pairs compare cleanly.
GradCheckReport grad_check(const std::function<double()>& eval,
                           const std::vector<std::pair<std::string, Tensor*>>& inputs,
                           const std::vector<const Tensor*>& analytic, double h, double tol);

}  // namespace ehr::num
