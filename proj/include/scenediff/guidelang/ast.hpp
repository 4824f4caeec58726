#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "scenediff/common.hpp"

namespace scenediff::gl {

// Position-annotated parse/check failure.
struct GlError : DataError {
  GlError(int line, int col, const std::string& msg)
      : DataError(std::to_string(line) + ":" + std::to_string(col) + ": " + msg),
        line(line),
        col(col) {}
  int line;
  int col;
};

struct Expr;
using ExprPtr = std::shared_ptr<Expr>;

// Dimension tags used by the shape checker. B/N/T track the trajectory axes;
// Lit is a concrete channel-like extent.
enum class DimTag { B, N, T, Lit };

struct Dim {
  DimTag tag = DimTag::Lit;
  std::int64_t size = 1;
  bool operator==(const Dim&) const = default;
};

struct Shape {
  std::vector<Dim> dims;          // empty = scalar
  bool is_tuple = false;          // transforms return (pos, yaw)
  std::vector<Shape> elements;

  bool operator==(const Shape&) const = default;
  std::string str() const;
};

struct Expr {
  enum class Kind { Number, Ident, Call, Unary, Binary, Compare };
  Kind kind = Kind::Number;
  double number = 0.0;
  std::string name;            // Ident name, Call callee
  std::string op;              // Binary: + - * / &; Compare: < > <= >=; Unary: -
  std::vector<ExprPtr> args;   // Call arguments or operand(s)
  int line = 0, col = 0;
  Shape shape;                 // filled by the shape checker
};

struct Binding {
  std::vector<std::string> names;  // tuple destructuring for transforms
  ExprPtr value;
  int line = 0, col = 0;
};

struct Param {
  std::string name;
  double value = 0.0;
};

// A straight-line loss program: params with defaults, let-bindings, one result.
struct Program {
  std::string name;
  std::vector<Param> params;
  std::vector<Binding> bindings;
  ExprPtr result;
  std::vector<std::string> annotations;  // '#!' note lines, preserved verbatim
};

// Names of every builtin, used in diagnostics.
const std::vector<std::string>& builtin_catalog();
bool is_builtin(const std::string& name);

}  // namespace scenediff::gl
