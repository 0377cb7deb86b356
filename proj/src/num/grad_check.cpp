#include "ehr/num/grad_check.hpp"

#include <cmath>

namespace ehr::num {

GradCheckReport grad_check(const std::function<double()>& eval,
                           const std::vector<std::pair<std::string, Tensor*>>& inputs,
                           const std::vector<const Tensor*>& analytic, double h, double tol) {
    if (inputs.size() != analytic.size()) {
        throw ShapeError("grad_check: inputs/analytic count mismatch");
    }
    GradCheckReport report;
    for (std::size_t p = 0; p < inputs.size(); ++p) {
        Tensor& x = *inputs[p].second;
        const Tensor& a = *analytic[p];
        if (!x.same_shape(a)) {
            throw ShapeError("grad_check: analytic gradient shape mismatch for " + inputs[p].first);
        }
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double saved = x[i];
            x[i] = saved + h;
            const double f_plus = eval();
            x[i] = saved - h;
            const double f_minus = eval();
            x[i] = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * h);
            const double err =
                std::fabs(a[i] - numeric) / std::max(std::fabs(a[i]) + std::fabs(numeric), 1e-8);
            if (err > report.max_rel_error) {
                report.max_rel_error = err;
                report.worst = inputs[p].first + "[" + std::to_string(i) + "]";
            }
        }
    }
    report.pass = report.max_rel_error < tol;
    return report;
}

}  // namespace ehr::num
