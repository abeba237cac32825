#pragma once

#include <stdexcept>
#include <string>

namespace lipread {

// Malformed or missing input data (files, manifests, out-of-vocabulary text).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required (diverged training etc.).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void log_warning(const std::string& message);
void log_info(const std::string& message);

}  // namespace lipread
