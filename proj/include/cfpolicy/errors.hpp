#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cfpolicy {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file; `line` is 1-based, 0 when not tied to a line.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class EmptySubgroupError : public Error {
 public:
  using Error::Error;
};

class MissingFeatureError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class DegenerateBinningError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class DependencyError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss, gradient or advantage during optimization.
class TrainingDivergenceError : public Error {
 public:
  using Error::Error;
};

class RolloutBlowupError : public Error {
 public:
  RolloutBlowupError(const std::string& what, int step)
      : Error("rollout blew up at step " + std::to_string(step) + ": " + what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

}  // namespace cfpolicy
