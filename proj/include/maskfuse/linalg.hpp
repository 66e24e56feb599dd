#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "maskfuse/errors.hpp"

namespace maskfuse {

using Vector = std::vector<double>;

/// Dense row-major matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    static Matrix zeros(std::size_t r, std::size_t c) { return Matrix(r, c); }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

/// A channels x spatial map of real features, channel-major storage.
/// Holds one expression's d x S feature as well as the concatenated 6d x S
/// block fed to the attention stage.
struct ChannelMap {
    std::size_t channels = 0;
    std::size_t spatial = 0;
    std::vector<double> values;

    ChannelMap() = default;
    ChannelMap(std::size_t c, std::size_t s) : channels(c), spatial(s), values(c * s, 0.0) {}

    double& at(std::size_t c, std::size_t s) { return values[c * spatial + s]; }
    double at(std::size_t c, std::size_t s) const { return values[c * spatial + s]; }
};

using FeatureMap = ChannelMap;

inline void ensure_finite(std::span<const double> values, const std::string& context) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw NumericError("non-finite value in " + context);
        }
    }
}

// ---------------------------------------------------------------------------
// Affine map  y = W x + b
// ---------------------------------------------------------------------------

inline Vector affine(const Vector& x, const Matrix& W, const Vector& b) {
    if (W.cols != x.size() || W.rows != b.size()) {
        throw ShapeError("affine: W is " + std::to_string(W.rows) + "x" + std::to_string(W.cols) +
                         " but x has " + std::to_string(x.size()) + " entries and b has " +
                         std::to_string(b.size()));
    }
    Vector y(W.rows);
    for (std::size_t i = 0; i < W.rows; ++i) {
        double acc = b[i];
        const double* row = &W.data[i * W.cols];
        for (std::size_t j = 0; j < W.cols; ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
    return y;
}

struct AffineGrads {
    Vector dx;
    Matrix dW;
    Vector db;
};

/// Backward of y = W x + b given upstream dy:
///   dx = W^T dy, dW = dy x^T, db = dy.
inline AffineGrads affine_backward(const Vector& x, const Matrix& W, const Vector& dy) {
    if (W.cols != x.size() || W.rows != dy.size()) {
        throw ShapeError("affine_backward: shape mismatch");
    }
    AffineGrads g;
    g.dx.assign(x.size(), 0.0);
    g.dW = Matrix(W.rows, W.cols);
    g.db = dy;
    for (std::size_t i = 0; i < W.rows; ++i) {
        const double gi = dy[i];
        const double* row = &W.data[i * W.cols];
        double* grow = &g.dW.data[i * W.cols];
        for (std::size_t j = 0; j < W.cols; ++j) {
            g.dx[j] += row[j] * gi;
            grow[j] = gi * x[j];
        }
    }
    return g;
}

/// Accumulating variant used by the model backward pass: dW += dy x^T, db += dy.
inline void affine_param_grads(const Vector& x, const Vector& dy, Matrix& dW, Vector& db) {
    for (std::size_t i = 0; i < dy.size(); ++i) {
        db[i] += dy[i];
        double* grow = &dW.data[i * dW.cols];
        for (std::size_t j = 0; j < x.size(); ++j) grow[j] += dy[i] * x[j];
    }
}

inline Vector matT_vec(const Matrix& W, const Vector& dy) {
    Vector out(W.cols, 0.0);
    for (std::size_t i = 0; i < W.rows; ++i) {
        const double gi = dy[i];
        const double* row = &W.data[i * W.cols];
        for (std::size_t j = 0; j < W.cols; ++j) out[j] += row[j] * gi;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class Activation { Relu, Sigmoid };

/// Sigmoid clamped to the open unit interval, so downstream code can rely on
/// values strictly inside (0, 1) even for saturating inputs.
inline double sigmoid(double x) {
    double v;
    if (x >= 0.0) {
        v = 1.0 / (1.0 + std::exp(-x));
    } else {
        const double e = std::exp(x);
        v = e / (1.0 + e);
    }
    constexpr double lo = std::numeric_limits<double>::min();
    constexpr double hi = 1.0 - 0x1.0p-53;
    return std::clamp(v, lo, hi);
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

inline Vector activation(const Vector& x, Activation kind) {
    Vector y(x.size());
    if (kind == Activation::Relu) {
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = relu(x[i]);
    } else {
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
    }
    return y;
}

/// dL/dx given the pre-activation input x, the activation output y and
/// upstream dy. ReLU uses subgradient 0 at the kink.
inline Vector activation_backward(const Vector& x, const Vector& y, Activation kind,
                                  const Vector& dy) {
    if (x.size() != dy.size() || y.size() != dy.size()) {
        throw ShapeError("activation_backward: shape mismatch");
    }
    Vector dx(x.size());
    if (kind == Activation::Relu) {
        for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
    } else {
        for (std::size_t i = 0; i < x.size(); ++i) dx[i] = y[i] * (1.0 - y[i]) * dy[i];
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Spatial pooling over the S axis of a ChannelMap
// ---------------------------------------------------------------------------

enum class PoolMode { Avg, Max };

inline Vector spatial_pool(const ChannelMap& F, PoolMode mode) {
    if (F.channels == 0 || F.spatial == 0) {
        throw ShapeError("spatial_pool: empty map");
    }
    Vector out(F.channels);
    for (std::size_t c = 0; c < F.channels; ++c) {
        const double* row = &F.values[c * F.spatial];
        if (mode == PoolMode::Avg) {
            double acc = 0.0;
            for (std::size_t s = 0; s < F.spatial; ++s) acc += row[s];
            out[c] = acc / static_cast<double>(F.spatial);
        } else {
            double best = row[0];
            for (std::size_t s = 1; s < F.spatial; ++s) best = std::max(best, row[s]);
            out[c] = best;
        }
    }
    return out;
}

/// Backward of spatial_pool. Avg spreads dpooled[c]/S over the row; max routes
/// dpooled[c] to the first position attaining the row maximum.
inline ChannelMap spatial_pool_backward(const ChannelMap& F, PoolMode mode,
                                        const Vector& dpooled) {
    if (dpooled.size() != F.channels) {
        throw ShapeError("spatial_pool_backward: gradient has wrong channel count");
    }
    ChannelMap dF(F.channels, F.spatial);
    for (std::size_t c = 0; c < F.channels; ++c) {
        const double* row = &F.values[c * F.spatial];
        double* drow = &dF.values[c * F.spatial];
        if (mode == PoolMode::Avg) {
            const double share = dpooled[c] / static_cast<double>(F.spatial);
            for (std::size_t s = 0; s < F.spatial; ++s) drow[s] = share;
        } else {
            std::size_t arg = 0;
            for (std::size_t s = 1; s < F.spatial; ++s) {
                if (row[s] > row[arg]) arg = s;
            }
            drow[arg] = dpooled[c];
        }
    }
    return dF;
}

// ---------------------------------------------------------------------------
// Channel concatenation
// ---------------------------------------------------------------------------

inline ChannelMap concat_channels(std::span<const ChannelMap> maps) {
    if (maps.empty()) {
        throw ShapeError("concat_channels: no input maps");
    }
    const std::size_t d = maps[0].channels;
    const std::size_t S = maps[0].spatial;
    for (std::size_t k = 0; k < maps.size(); ++k) {
        if (maps[k].channels != d || maps[k].spatial != S) {
            throw ShapeError("concat_channels: map " + std::to_string(k) + " is " +
                             std::to_string(maps[k].channels) + "x" +
                             std::to_string(maps[k].spatial) + ", expected " +
                             std::to_string(d) + "x" + std::to_string(S));
        }
    }
    ChannelMap out(d * maps.size(), S);
    for (std::size_t k = 0; k < maps.size(); ++k) {
        std::copy(maps[k].values.begin(), maps[k].values.end(),
                  out.values.begin() + static_cast<std::ptrdiff_t>(k * d * S));
    }
    return out;
}

/// Inverse of concat_channels; also serves as its backward pass.
inline std::vector<ChannelMap> split_channels(const ChannelMap& F, std::size_t parts) {
    if (parts == 0 || F.channels % parts != 0) {
        throw ShapeError("split_channels: " + std::to_string(F.channels) +
                         " channels not divisible into " + std::to_string(parts) + " parts");
    }
    const std::size_t d = F.channels / parts;
    std::vector<ChannelMap> out;
    out.reserve(parts);
    for (std::size_t k = 0; k < parts; ++k) {
        ChannelMap m(d, F.spatial);
        std::copy(F.values.begin() + static_cast<std::ptrdiff_t>(k * d * F.spatial),
                  F.values.begin() + static_cast<std::ptrdiff_t>((k + 1) * d * F.spatial),
                  m.values.begin());
        out.push_back(std::move(m));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

/// Numerically stable softmax (max subtraction before exponentiation).
inline Vector softmax(const Vector& logits) {
    if (logits.empty()) {
        throw ShapeError("softmax: empty input");
    }
    const double peak = *std::max_element(logits.begin(), logits.end());
    Vector out(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - peak);
        total += out[i];
    }
    for (double& v : out) v /= total;
    return out;
}

/// dL/dlogits from probabilities p and upstream dL/dp:
///   dz_i = p_i (dp_i - sum_j dp_j p_j).
inline Vector softmax_backward(const Vector& probs, const Vector& dprobs) {
    if (probs.size() != dprobs.size()) {
        throw ShapeError("softmax_backward: shape mismatch");
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) dot += dprobs[i] * probs[i];
    Vector dz(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) dz[i] = probs[i] * (dprobs[i] - dot);
    return dz;
}

inline std::size_t argmax_lowest_tie(const Vector& values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

} // namespace maskfuse
