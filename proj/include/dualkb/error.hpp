#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dualkb {

enum class ErrorKind {
  InvalidArgument,
  UnregisteredRelation,
  ChannelConflict,
  StaleWrite,
  InvalidBatch,
  InvalidUnit,
  IoError,
  ParseError,
  SchemaVersionMismatch,
  EmptyCorpus,
  RerankerError,
  UnknownDocId,
  NonFiniteLoss,
  TrainingDiverged,
  ReplayDivergence,
  InsufficientNegatives,
  BackendError,
  MalformedModelResponse,
  UnknownTask,
  UnparseableAction,
  DecisionModelError,
  EnvError,
  TransportError,
  CassetteMiss,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a kind so callers (and tests)
/// can branch on it without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// ParseError with the 1-based line number of the offending record.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : Error(ErrorKind::ParseError, "line " + std::to_string(line) + ": " + message), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace dualkb
