#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "maskfuse/errors.hpp"
#include "maskfuse/linalg.hpp"

namespace maskfuse {

/// Adam moment accumulators over a flat parameter vector.
struct AdamState {
    Vector m;
    Vector v;
    std::uint64_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double lr = 1e-3;

    static AdamState create(std::size_t n_params, double lr) {
        AdamState state;
        state.m.assign(n_params, 0.0);
        state.v.assign(n_params, 0.0);
        state.lr = lr;
        return state;
    }
};

/// One Adam update with bias correction:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,  t <- t+1,
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
inline void adam_step(Vector& params, const Vector& grads, AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size()) {
        throw ShapeError("adam_step: parameter, gradient and state sizes disagree");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!std::isfinite(grads[i])) {
            throw NumericError("adam_step: non-finite gradient at index " + std::to_string(i));
        }
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
}

} // namespace maskfuse
