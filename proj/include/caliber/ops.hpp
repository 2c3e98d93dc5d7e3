#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "caliber/errors.hpp"

namespace caliber {

// Scalar and vector kernels shared by the tape primitives and the plain
// (non-recorded) evaluation paths.

// log(1 + exp(x)), overflow-safe on both tails.
inline double softplus(double x) {
    if (!std::isfinite(x)) throw DomainError("softplus: non-finite input");
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Stable softmax with max-subtraction.
inline std::vector<double> softmax_row(const std::vector<double>& v) {
    if (v.empty()) throw DomainError("softmax_row: empty input");
    double mx = v[0];
    for (double x : v) {
        if (!std::isfinite(x)) throw DomainError("softmax_row: non-finite input");
        mx = std::max(mx, x);
    }
    std::vector<double> out(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

inline double log_sum_exp(const std::vector<double>& v) {
    if (v.empty()) throw DomainError("log_sum_exp: empty input");
    double mx = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v) sum += std::exp(x - mx);
    return mx + std::log(sum);
}

// Shannon entropy of a probability vector, in nats.
inline double entropy(const std::vector<double>& p) {
    double h = 0.0;
    for (double x : p)
        if (x > 0.0) h -= x * std::log(x);
    return h;
}

}  // namespace caliber
