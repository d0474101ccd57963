#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gridflow {

/// Bad argument to an operation (out-of-range index, dimension mismatch, ...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The grid geometry admits no legal corridor.
class InvalidLayout : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite value encountered inside an iterative numeric routine.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An input file could not be opened.
class FileNotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file contents. `offset()` is a byte offset for binary formats,
/// `line()` a 1-based line number for text formats (0 when not applicable).
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset = 0, std::size_t line = 0)
      : std::runtime_error(what), offset_(offset), line_(line) {}

  std::size_t offset() const noexcept { return offset_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t offset_;
  std::size_t line_;
};

}  // namespace gridflow
