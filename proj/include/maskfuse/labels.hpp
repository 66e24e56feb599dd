#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

#include "maskfuse/errors.hpp"

namespace maskfuse {

/// Three-way severity outcome. The integer values are part of the on-disk
/// and JSON formats and must not be reordered.
enum class ClassLabel : int {
    NonPD = 0,
    EarlyPD = 1,
    MidLatePD = 2,
};

inline constexpr std::size_t kNumClasses = 3;

/// Canonical order of the six expression channels. Fixed so channel positions
/// mean the same thing in every dataset, checkpoint and manifest.
inline constexpr std::array<std::string_view, 6> kEmotionOrder = {
    "happiness", "sadness", "surprise", "fear", "anger", "disgust",
};

inline constexpr std::size_t kNumEmotions = kEmotionOrder.size();

inline ClassLabel label_from_int(int value) {
    if (value < 0 || value >= static_cast<int>(kNumClasses)) {
        throw DataError("unknown class label " + std::to_string(value) +
                        " (expected 0, 1 or 2)");
    }
    return static_cast<ClassLabel>(value);
}

inline constexpr int label_to_int(ClassLabel label) {
    return static_cast<int>(label);
}

inline constexpr std::string_view label_name(ClassLabel label) {
    switch (label) {
    case ClassLabel::NonPD: return "NonPD";
    case ClassLabel::EarlyPD: return "EarlyPD";
    case ClassLabel::MidLatePD: return "MidLatePD";
    }
    return "?";
}

} // namespace maskfuse
