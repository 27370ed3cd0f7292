#pragma once

#include <stdexcept>
#include <string>

namespace aotmem {

// Bad caller input: malformed config, shape mismatch, out-of-range token.
// Surfaces as exit code 2 from the command line.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A well-formed request that could not be completed: rank deficiency after
// resampling, non-convergence, vacuous bound, divergent training.
class ComputationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define AOTMEM_REQUIRE(cond, msg)                         \
  do {                                                    \
    if (!(cond)) throw ::aotmem::InvalidArgument(msg);    \
  } while (0)

}  // namespace aotmem
