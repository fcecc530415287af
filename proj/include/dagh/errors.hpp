#pragma once

#include <stdexcept>
#include <string>

namespace dagh {

/// Precondition violated by a caller (bad shape, bad argument, empty set).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Missing, unreadable or malformed file.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid experiment configuration (unknown key, bad value).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A loss component became NaN/Inf during training.
class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(const std::string& stage, int epoch, const std::string& component)
      : std::runtime_error(stage + " diverged at epoch " + std::to_string(epoch) + ": " +
                           component + " is not finite"),
        epoch_(epoch),
        component_(component) {}

  int epoch() const { return epoch_; }
  const std::string& component() const { return component_; }

 private:
  int epoch_;
  std::string component_;
};

}  // namespace dagh
