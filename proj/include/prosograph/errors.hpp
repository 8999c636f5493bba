#pragma once

#include <stdexcept>

namespace prosograph {

// Malformed or contract-violating input data (exit code 1 at the CLI).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace prosograph
