#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace voxfuse {

enum class ErrorKind {
  Shape,
  Bounds,
  Config,
  Syntax,
  UnknownLayerKind,
  MissingParam,
  Unsupported,
  Arity,
  DanglingReference,
  DuplicateTop,
  Cycle,
  Format,
  Truncated,
  DuplicateName,
  Sizing,
  Tiling,
  Io,
  Internal,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Bounds: return "bounds error";
    case ErrorKind::Config: return "configuration error";
    case ErrorKind::Syntax: return "syntax error";
    case ErrorKind::UnknownLayerKind: return "unknown layer kind";
    case ErrorKind::MissingParam: return "missing parameter";
    case ErrorKind::Unsupported: return "unsupported feature";
    case ErrorKind::Arity: return "wrong number of inputs";
    case ErrorKind::DanglingReference: return "dangling reference";
    case ErrorKind::DuplicateTop: return "duplicate top";
    case ErrorKind::Cycle: return "cycle detected";
    case ErrorKind::Format: return "format error";
    case ErrorKind::Truncated: return "truncated data";
    case ErrorKind::DuplicateName: return "duplicate name";
    case ErrorKind::Sizing: return "sizing error";
    case ErrorKind::Tiling: return "tiling error";
    case ErrorKind::Io: return "i/o error";
    case ErrorKind::Internal: return "internal error";
  }
  return "error";
}

// All library failures are reported with this exception. Parse errors carry
// a 1-based line/column; other kinds leave them at 0.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, int line = 0, int column = 0)
      : std::runtime_error(format(kind, message, line, column)),
        kind_(kind),
        line_(line),
        column_(column),
        detail_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  static std::string format(ErrorKind kind, const std::string& message, int line, int column) {
    std::string out;
    if (line > 0) out += std::to_string(line) + ":" + std::to_string(column) + ": ";
    out += std::string(to_string(kind)) + ": " + message;
    return out;
  }

  ErrorKind kind_;
  int line_;
  int column_;
  std::string detail_;
};

}  // namespace voxfuse
