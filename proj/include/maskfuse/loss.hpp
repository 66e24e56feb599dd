#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "maskfuse/errors.hpp"
#include "maskfuse/labels.hpp"
#include "maskfuse/linalg.hpp"

namespace maskfuse {

/// Probabilities below this are clamped before taking logs. Each clamp is
/// counted so training can report how often it fired.
inline constexpr double kProbFloor = 1e-12;

struct ClassCounts {
    std::array<std::int64_t, kNumClasses> counts{0, 0, 0};
};

enum class LossMode { AdaptiveFocal, CrossEntropy };

struct LossConfig {
    double gamma = 2.0;
    std::array<double, kNumClasses> alpha{1.0, 1.0, 1.0};
    LossMode mode = LossMode::AdaptiveFocal;
};

/// Frequency-ratio class weights alpha_i = N_max / N_i. The most frequent
/// class gets exactly 1, rarer classes proportionally more.
inline std::array<double, kNumClasses> class_weights(const ClassCounts& counts) {
    std::int64_t n_max = 0;
    for (std::size_t i = 0; i < kNumClasses; ++i) {
        if (counts.counts[i] < 1) {
            throw DataError("class_weights: class " + std::string(label_name(static_cast<ClassLabel>(i))) +
                            " has no samples; cannot derive a weight");
        }
        n_max = std::max(n_max, counts.counts[i]);
    }
    std::array<double, kNumClasses> alpha{};
    for (std::size_t i = 0; i < kNumClasses; ++i) {
        alpha[i] = static_cast<double>(n_max) / static_cast<double>(counts.counts[i]);
    }
    return alpha;
}

namespace detail {

inline void check_probs(const Vector& probs) {
    if (probs.size() != kNumClasses) {
        throw ShapeError("loss: expected " + std::to_string(kNumClasses) +
                         " class probabilities, got " + std::to_string(probs.size()));
    }
    ensure_finite(probs, "class probabilities");
}

inline double clamped_pt(double pt, std::uint64_t* clamp_events) {
    if (pt < kProbFloor) {
        if (clamp_events != nullptr) ++(*clamp_events);
        return kProbFloor;
    }
    return pt;
}

/// Soft labels are rejected: y must contain exactly one 1 and zeros elsewhere.
inline ClassLabel decode_onehot(const Vector& y_onehot, const char* where) {
    if (y_onehot.size() != kNumClasses) {
        throw ShapeError(std::string(where) + ": one-hot label must have 3 entries");
    }
    int hot = -1;
    for (std::size_t i = 0; i < y_onehot.size(); ++i) {
        if (y_onehot[i] == 1.0) {
            if (hot >= 0) throw DataError(std::string(where) + ": label has more than one hot entry");
            hot = static_cast<int>(i);
        } else if (y_onehot[i] != 0.0) {
            throw DataError(std::string(where) + ": soft labels are not supported");
        }
    }
    if (hot < 0) throw DataError(std::string(where) + ": label has no hot entry");
    return static_cast<ClassLabel>(hot);
}

} // namespace detail

/// Loss for one sample with true class `label`.
/// Adaptive-focal mode: alpha_t (1 - p_t)^gamma (-log p_t).
/// Cross-entropy mode:  -log p_t (weights and modulating factor both off).
inline double focal_loss(const Vector& probs, ClassLabel label, const LossConfig& cfg,
                         std::uint64_t* clamp_events = nullptr) {
    detail::check_probs(probs);
    const double pt = detail::clamped_pt(probs[static_cast<std::size_t>(label)], clamp_events);
    if (cfg.mode == LossMode::CrossEntropy) {
        return -std::log(pt);
    }
    const double alpha_t = cfg.alpha[static_cast<std::size_t>(label)];
    return alpha_t * std::pow(1.0 - pt, cfg.gamma) * (-std::log(pt));
}

/// One-hot entry point.
inline double focal_loss(const Vector& probs, const Vector& y_onehot, const LossConfig& cfg,
                         std::uint64_t* clamp_events = nullptr) {
    return focal_loss(probs, detail::decode_onehot(y_onehot, "focal_loss"), cfg, clamp_events);
}

/// Exact gradient of focal_loss(softmax(logits), label, cfg) with respect to
/// the logits. With g(p) = alpha_t (1-p)^gamma (-log p) the chain rule gives
///   dL/dz_j = g'(p_t) p_t (delta_tj - p_j),
///   g'(p)   = alpha_t (gamma (1-p)^(gamma-1) log p - (1-p)^gamma / p),
/// which collapses to the classic (p - y) for gamma = 0, alpha = 1.
inline Vector focal_loss_grad(const Vector& logits, ClassLabel label, const LossConfig& cfg,
                              std::uint64_t* clamp_events = nullptr) {
    if (logits.size() != kNumClasses) {
        throw ShapeError("focal_loss_grad: expected 3 logits, got " + std::to_string(logits.size()));
    }
    ensure_finite(logits, "logits");
    const Vector probs = softmax(logits);
    const std::size_t t = static_cast<std::size_t>(label);
    const double pt = detail::clamped_pt(probs[t], clamp_events);

    double alpha_t = 1.0;
    double gamma = 0.0;
    if (cfg.mode == LossMode::AdaptiveFocal) {
        alpha_t = cfg.alpha[t];
        gamma = cfg.gamma;
    }

    const double one_minus = 1.0 - pt;
    // gamma (1-p)^(gamma-1) log p, with its p->1 limit of 0 taken explicitly
    // for gamma > 0 so that 0 * inf never surfaces.
    double focal_term = 0.0;
    if (gamma != 0.0 && one_minus > 0.0) {
        focal_term = gamma * std::pow(one_minus, gamma - 1.0) * std::log(pt);
    }
    const double dg_dp = alpha_t * (focal_term - std::pow(one_minus, gamma) / pt);

    Vector grad(kNumClasses);
    for (std::size_t j = 0; j < kNumClasses; ++j) {
        const double indicator = (j == t) ? 1.0 : 0.0;
        grad[j] = dg_dp * pt * (indicator - probs[j]);
    }
    return grad;
}

inline Vector focal_loss_grad(const Vector& logits, const Vector& y_onehot, const LossConfig& cfg,
                              std::uint64_t* clamp_events = nullptr) {
    return focal_loss_grad(logits, detail::decode_onehot(y_onehot, "focal_loss_grad"), cfg,
                           clamp_events);
}

/// Mean of per-sample losses over a batch.
inline double batch_loss(const std::vector<Vector>& probs_batch,
                         const std::vector<ClassLabel>& labels, const LossConfig& cfg,
                         std::uint64_t* clamp_events = nullptr) {
    if (probs_batch.empty()) {
        throw DataError("batch_loss: empty batch");
    }
    if (probs_batch.size() != labels.size()) {
        throw ShapeError("batch_loss: probabilities and labels differ in length");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < probs_batch.size(); ++i) {
        total += focal_loss(probs_batch[i], labels[i], cfg, clamp_events);
    }
    return total / static_cast<double>(probs_batch.size());
}

} // namespace maskfuse
