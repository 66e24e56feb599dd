#pragma once

#include <cmath>
#include <cstddef>
#include <functional>

#include "maskfuse/errors.hpp"
#include "maskfuse/linalg.hpp"

namespace maskfuse {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    bool pass = false;
};

/// Compares an analytic gradient against central finite differences
///   (f(p + h e_j) - f(p - h e_j)) / 2h
/// coordinate by coordinate. Relative error uses the denominator
/// max(|analytic|, |numeric|, 1e-8) so that near-zero gradients do not
/// explode the ratio.
inline GradCheckReport grad_check(const std::function<double(const Vector&)>& loss_fn,
                                  const Vector& params, const Vector& analytic_grad,
                                  double step, double tolerance) {
    if (params.size() != analytic_grad.size()) {
        throw ShapeError("grad_check: gradient length does not match parameter count");
    }
    if (!(step > 0.0)) {
        throw NumericError("grad_check: step must be positive");
    }
    GradCheckReport report;
    Vector probe = params;
    for (std::size_t j = 0; j < params.size(); ++j) {
        probe[j] = params[j] + step;
        const double up = loss_fn(probe);
        probe[j] = params[j] - step;
        const double down = loss_fn(probe);
        probe[j] = params[j];
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("grad_check: non-finite loss at probe point");
        }
        const double numeric = (up - down) / (2.0 * step);
        const double analytic = analytic_grad[j];
        const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
        const double rel = std::fabs(analytic - numeric) / denom;
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = j;
        }
    }
    report.pass = report.max_rel_error < tolerance;
    return report;
}

} // namespace maskfuse
