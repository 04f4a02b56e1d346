#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace mixgraph {

/// Precondition violated by a caller-supplied argument.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Vector or matrix dimensions that do not agree.
class ShapeMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A non-source node of a digraph whose incoming weights sum to zero.
class DegenerateDegree : public std::runtime_error {
 public:
  explicit DegenerateDegree(std::size_t node)
      : std::runtime_error("node " + std::to_string(node) +
                           " has no incoming weight (degenerate in-degree)"),
        node_(node) {}
  std::size_t node() const { return node_; }

 private:
  std::size_t node_;
};

/// Iterative procedure produced a non-finite value or failed to converge.
/// `where` names the stage, `iteration` the step at which it happened.
class NumericFailure : public std::runtime_error {
 public:
  NumericFailure(std::string where, std::size_t iteration)
      : std::runtime_error(where + " failed at iteration " + std::to_string(iteration)),
        where_(std::move(where)),
        iteration_(iteration) {}
  const std::string& where() const { return where_; }
  std::size_t iteration() const { return iteration_; }

 private:
  std::string where_;
  std::size_t iteration_;
};

/// Malformed input file. Line and column are 1-based; 0 means "not applicable".
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& file, std::size_t line, std::size_t column, const std::string& what)
      : std::runtime_error(format(file, line, column, what)), line_(line), column_(column) {}
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  static std::string format(const std::string& file, std::size_t line, std::size_t column,
                            const std::string& what) {
    std::string msg = file;
    if (line > 0) msg += ":" + std::to_string(line);
    if (column > 0) msg += ":" + std::to_string(column);
    return msg + ": " + what;
  }
  std::size_t line_;
  std::size_t column_;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

inline void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeMismatch(std::string(what) + ": size " + std::to_string(a) + " vs " +
                        std::to_string(b));
  }
}

}  // namespace detail
}  // namespace mixgraph
