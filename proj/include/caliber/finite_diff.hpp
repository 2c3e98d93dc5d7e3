#pragma once

#include <functional>
#include <vector>

#include "caliber/tape.hpp"

namespace caliber {

// Central-difference gradient oracle: (f(p+h) - f(p-h)) / 2h per scalar
// parameter. The loss callable must be deterministic (freeze every noise
// source) and read parameter values from the store at call time.
inline std::vector<Matrix> finite_diff_gradient(const std::function<double()>& loss_fn,
                                                ParamStore& params, double h) {
    if (!(h > 0.0)) throw DomainError("finite_diff_gradient: h must be positive");
    std::vector<Matrix> grads;
    grads.reserve(params.count());
    for (int p = 0; p < params.count(); ++p) {
        Matrix& value = params.value(p);
        Matrix g(value.rows, value.cols);
        for (int k = 0; k < value.size(); ++k) {
            const double saved = value.data[k];
            value.data[k] = saved + h;
            const double fp = loss_fn();
            value.data[k] = saved - h;
            const double fm = loss_fn();
            value.data[k] = saved;
            g.data[k] = (fp - fm) / (2.0 * h);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

// Relative error with a floored denominator; used by the gradient checks.
inline double gradcheck_rel_error(double analytic, double numeric, double floor = 1e-8) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor});
    return std::fabs(analytic - numeric) / denom;
}

}  // namespace caliber
