#pragma once

#include <stdexcept>
#include <string>

namespace fmridec {

/// Machine-checkable failure categories. Each distinct failure mode named by
/// an operation contract gets its own code so callers can branch on it.
enum class errc {
  insufficient_frames,
  alignment,
  configuration,
  degenerate_input,
  empty_output,
  bad_magic,
  truncated_payload,
  dtype_mismatch,
  unsupported_version,
  unknown_key,
  missing_key,
  io,
  solver_failure,
  divergence,
};

class Error : public std::runtime_error {
public:
  Error(errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  errc code() const { return code_; }

private:
  errc code_;
};

/// Violated preconditions, malformed inputs, bad configuration. The CLI maps
/// these to exit code 2.
class ValidationError : public Error {
public:
  using Error::Error;
};

/// Numerical failures: diverging optimization, singular solves. Exit code 3.
class NumericalError : public Error {
public:
  using Error::Error;
};

}  // namespace fmridec
