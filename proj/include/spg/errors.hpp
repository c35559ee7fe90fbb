#pragma once

#include <stdexcept>
#include <string>

namespace spg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape disagreement between operands. `layer` is -1 when not layer-specific.
class DimensionError : public Error {
 public:
  DimensionError(int layer, const std::string& what)
      : Error(layer >= 0 ? "layer " + std::to_string(layer) + ": " + what : what), layer_(layer) {}
  int layer() const noexcept { return layer_; }

 private:
  int layer_;
};

/// A caller violated an operation's precondition (bad argument value, missing head, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IdxError : public Error {
 public:
  enum class Kind { io, bad_magic, truncated, count_mismatch };
  IdxError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class CheckpointError : public Error {
 public:
  enum class Kind { io, corrupt, hash_mismatch };
  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace spg
