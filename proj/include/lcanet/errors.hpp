#pragma once

#include <stdexcept>
#include <string>

namespace lcanet {

/// Shape disagreement or structurally invalid dimensions.
struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

/// Non-finite values where finite ones are required (weights, gradients).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// A scalar outside its documented domain (e.g. transmission outside (0,1]).
struct ValueRangeError : std::domain_error {
  explicit ValueRangeError(const std::string& what) : std::domain_error(what) {}
};

/// Invalid run configuration (bad epoch count, empty manifest, ...).
struct ConfigError : std::invalid_argument {
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// Image decode/encode failures. Each failure class is distinguishable.
struct ImageError : std::runtime_error {
  enum class Kind { io, unsupported_format, malformed_header, truncated };
  Kind kind;
  ImageError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
};

/// Checkpoint file failures. Each failure class is distinguishable.
struct CheckpointError : std::runtime_error {
  enum class Kind { io, bad_magic, bad_version, bad_tensor_name, shape_mismatch, truncated };
  Kind kind;
  CheckpointError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
};

/// Training aborted (non-finite loss/gradients, unreadable sample, ...).
struct TrainError : std::runtime_error {
  explicit TrainError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace lcanet
