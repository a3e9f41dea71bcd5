#pragma once

#include <stdexcept>
#include <string>

namespace nsbg {

// Exception hierarchy. The CLI maps each family onto a stable exit code:
// UsageError -> 1, FormatError -> 2, NumericError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent data: WAV files, bitstreams, checkpoints, shapes.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public FormatError {
 public:
  using FormatError::FormatError;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

namespace detail {

[[noreturn]] inline void throw_usage(const std::string& msg) { throw UsageError(msg); }
[[noreturn]] inline void throw_shape(const std::string& msg) { throw ShapeError(msg); }

}  // namespace detail

#define NSBG_CHECK_ARG(cond, msg)                      \
  do {                                                 \
    if (!(cond)) ::nsbg::detail::throw_usage(msg);     \
  } while (0)

#define NSBG_CHECK_SHAPE(cond, msg)                    \
  do {                                                 \
    if (!(cond)) ::nsbg::detail::throw_shape(msg);     \
  } while (0)

}  // namespace nsbg
