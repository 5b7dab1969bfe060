#pragma once

#include <stdexcept>
#include <string>

namespace hesspcl {

/// Shape or index disagreement between arguments.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical routine could not produce a result (singular system,
/// non-convergence, non-finite values).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A stage was asked for a rule it does not implement.
class UnsupportedPrimitive : public std::logic_error {
 public:
  explicit UnsupportedPrimitive(const std::string& kind)
      : std::logic_error("stage kind '" + kind + "' has no second-order rule"),
        kind_(kind) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

/// Invalid user configuration; `field` names the offending entry.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace hesspcl
