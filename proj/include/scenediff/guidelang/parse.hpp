#pragma once

#include <string>

#include "scenediff/guidelang/ast.hpp"

namespace scenediff::gl {

// Parses one program. Throws GlError with line/column on lexical or syntactic
// failures; unknown builtin references are reported by the shape checker.
Program parse(const std::string& text);

// Canonical text form; parse(pretty_print(p)) is structurally identical to p.
std::string pretty_print(const Program& program);

// Structural equality (positions ignored).
bool structurally_equal(const Program& a, const Program& b);

}  // namespace scenediff::gl
