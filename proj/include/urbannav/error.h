#pragma once

#include <stdexcept>
#include <string>

namespace urbannav {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or configuration value.
class ParameterError : public Error {
 public:
  using Error::Error;
};

class InvalidPolyline : public Error {
 public:
  using Error::Error;
};

/// A trajectory failed the quality screen inside route lifting.
class LiftRejected : public Error {
 public:
  LiftRejected(const std::string& reason)
      : Error("lift rejected: " + reason), reason_(reason) {}
  const std::string& reason() const { return reason_; }

 private:
  std::string reason_;
};

class GenerationFailed : public Error {
 public:
  using Error::Error;
};

class InfeasibleScene : public Error {
 public:
  using Error::Error;
};

/// Malformed persisted data. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// Training produced a non-finite loss.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace urbannav
