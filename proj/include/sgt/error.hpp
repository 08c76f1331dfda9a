#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sgt {

inline constexpr const char* kVersion = "1.0.0";

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A parameter lies outside the mathematical domain of an operation
/// (alpha outside [0,1], non-positive clip threshold, ...).
class DomainError : public Error {
public:
  using Error::Error;
};

/// Malformed or inconsistent input: NaN entries, shape mismatches,
/// vectors that are not on the probability simplex.
class InputError : public Error {
public:
  using Error::Error;
};

/// Binary or textual file does not match its documented layout.
class FormatError : public Error {
public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

private:
  std::uint64_t offset_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
  DivergenceError(const std::string& what, std::size_t epoch, std::size_t step)
      : Error(what), epoch_(epoch), step_(step) {}

  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t step() const noexcept { return step_; }

private:
  std::size_t epoch_;
  std::size_t step_;
};

/// Configuration text or a command-line override could not be applied.
class ConfigError : public InputError {
public:
  using InputError::InputError;
};

/// File could not be opened, read or written.
class IoError : public Error {
public:
  using Error::Error;
};

}  // namespace sgt
