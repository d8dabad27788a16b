#pragma once

// Test-only oracles. The finite-difference checker perturbs raw values and
// re-runs an arbitrary scalar function, so it stays independent of the tape.

#include <cmath>
#include <functional>
#include <vector>

#include "sparselab/tensor.hpp"

namespace oracles {

// Central finite differences of f against the analytic gradient found in
// t.grad. Returns the worst relative error (floored denominator so near-zero
// gradients compare absolutely).
inline double fd_worst_rel_error(sparselab::Tensor& t,
                                 const std::function<double()>& f,
                                 const std::vector<double>& analytic,
                                 double step = 1e-5) {
    double worst = 0.0;
    for (std::size_t i = 0; i < t.values.size(); ++i) {
        const double saved = t.values[i];
        t.values[i] = saved + step;
        const double up = f();
        t.values[i] = saved - step;
        const double down = f();
        t.values[i] = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double denom = std::max({std::fabs(numeric), std::fabs(analytic[i]), 1e-3});
        worst = std::max(worst, std::fabs(numeric - analytic[i]) / denom);
    }
    return worst;
}

}  // namespace oracles
