#pragma once

#include <stdexcept>
#include <string>

namespace maskfuse {

/// Shape disagreement between tensors (wrong dimensions, mismatched maps, ...).
class ShapeError : public std::invalid_argument {
public:
    explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

/// Invalid data or file contents: bad magic, version mismatch, truncation,
/// duplicate ids, missing classes, malformed manifests.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Numeric failure: non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace maskfuse
