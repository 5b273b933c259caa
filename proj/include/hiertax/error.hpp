// Copyright 2026 The hiertax Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef HIERTAX_ERROR_HPP_
#define HIERTAX_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace hiertax {

enum class ErrorKind {
  kInconsistentPath,
  kEmptyInput,
  kOutOfRange,
  kLevelOrder,
  kDimensionMismatch,
  kParseError,
  kUnknownClass,
  kConfigError,
  kNonFiniteGradient,
  kArchitectureMismatch,
  kIndexMisalignment,
  kEmptyQueue,
  kMissingSplit,
  kEmptySplit,
  kIoError,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInconsistentPath: return "InconsistentPath";
    case ErrorKind::kEmptyInput: return "EmptyInput";
    case ErrorKind::kOutOfRange: return "OutOfRange";
    case ErrorKind::kLevelOrder: return "LevelOrder";
    case ErrorKind::kDimensionMismatch: return "DimensionMismatch";
    case ErrorKind::kParseError: return "ParseError";
    case ErrorKind::kUnknownClass: return "UnknownClass";
    case ErrorKind::kConfigError: return "ConfigError";
    case ErrorKind::kNonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::kArchitectureMismatch: return "ArchitectureMismatch";
    case ErrorKind::kIndexMisalignment: return "IndexMisalignment";
    case ErrorKind::kEmptyQueue: return "EmptyQueue";
    case ErrorKind::kMissingSplit: return "MissingSplit";
    case ErrorKind::kEmptySplit: return "EmptySplit";
    case ErrorKind::kIoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library. The kind drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Parse failures carry the 1-based line (or byte offset for binary input).
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : Error(ErrorKind::kParseError, "line " + std::to_string(line) + ": " + message),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace hiertax

#endif  // HIERTAX_ERROR_HPP_
