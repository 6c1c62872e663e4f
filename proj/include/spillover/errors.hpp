#pragma once

#include <stdexcept>
#include <string>

namespace spillover {

struct InvalidParameter : std::runtime_error {
  explicit InvalidParameter(const std::string& msg) : std::runtime_error(msg) {}
};

struct UnsupportedConfiguration : std::runtime_error {
  explicit UnsupportedConfiguration(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

struct EstimationFailure : std::runtime_error {
  explicit EstimationFailure(const std::string& msg) : std::runtime_error(msg) {}
};

struct InsufficientData : std::runtime_error {
  explicit InsufficientData(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace spillover
