#include "scenediff/guidelang/parse.hpp"

#include <cctype>
#include <charconv>
#include <sstream>

namespace scenediff::gl {

namespace {

struct Token {
  enum class Kind { Ident, Number, Punct, End };
  Kind kind = Kind::End;
  std::string text;
  double number = 0.0;
  int line = 1, col = 1;
};

class Lexer {
 public:
  Lexer(const std::string& text, std::vector<std::string>* annotations)
      : text_(text), annotations_(annotations) {
    advance();
  }

  const Token& peek() const { return tok_; }

  Token next() {
    Token t = tok_;
    advance();
    return t;
  }

 private:
  void advance() {
    skip_space_and_comments();
    tok_ = Token{};
    tok_.line = line_;
    tok_.col = col_;
    if (pos_ >= text_.size()) {
      tok_.kind = Token::Kind::End;
      return;
    }
    char c = text_[pos_];
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t start = pos_;
      while (pos_ < text_.size() &&
             (std::isalnum(static_cast<unsigned char>(text_[pos_])) ||
              text_[pos_] == '_')) {
        bump();
      }
      tok_.kind = Token::Kind::Ident;
      tok_.text = text_.substr(start, pos_ - start);
      return;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '.' && pos_ + 1 < text_.size() &&
         std::isdigit(static_cast<unsigned char>(text_[pos_ + 1])))) {
      std::size_t start = pos_;
      while (pos_ < text_.size() &&
             (std::isdigit(static_cast<unsigned char>(text_[pos_])) ||
              text_[pos_] == '.' || text_[pos_] == 'e' || text_[pos_] == 'E' ||
              ((text_[pos_] == '+' || text_[pos_] == '-') && pos_ > start &&
               (text_[pos_ - 1] == 'e' || text_[pos_ - 1] == 'E')))) {
        bump();
      }
      std::string s = text_.substr(start, pos_ - start);
      tok_.kind = Token::Kind::Number;
      double value = 0.0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
      if (ec != std::errc() || p != s.data() + s.size()) {
        throw GlError(tok_.line, tok_.col, "malformed number '" + s + "'");
      }
      tok_.number = value;
      tok_.text = s;
      return;
    }
    // two-char operators
    if ((c == '<' || c == '>') && pos_ + 1 < text_.size() &&
        text_[pos_ + 1] == '=') {
      tok_.kind = Token::Kind::Punct;
      tok_.text = std::string(1, c) + "=";
      bump();
      bump();
      return;
    }
    if (std::string("(){},;=<>+-*/&").find(c) != std::string::npos) {
      tok_.kind = Token::Kind::Punct;
      tok_.text = std::string(1, c);
      bump();
      return;
    }
    throw GlError(line_, col_, std::string("unexpected character '") + c + "'");
  }

  void skip_space_and_comments() {
    while (pos_ < text_.size()) {
      char c = text_[pos_];
      if (c == '\n') {
        ++line_;
        col_ = 1;
        ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        bump();
      } else if (c == '#') {
        std::size_t start = pos_;
        while (pos_ < text_.size() && text_[pos_] != '\n') bump();
        if (annotations_ && pos_ - start >= 2 && text_[start + 1] == '!') {
          std::string note = text_.substr(start + 2, pos_ - start - 2);
          while (!note.empty() && note.front() == ' ') note.erase(note.begin());
          annotations_->push_back(note);
        }
      } else {
        break;
      }
    }
  }

  void bump() {
    ++pos_;
    ++col_;
  }

  const std::string& text_;
  std::vector<std::string>* annotations_;
  std::size_t pos_ = 0;
  int line_ = 1, col_ = 1;
  Token tok_;
};

class Parser {
 public:
  explicit Parser(const std::string& text) : lex_(text, &annotations_) {}

  Program parse_program() {
    Program prog;
    expect_ident("program");
    prog.name = expect_any_ident("program name");
    expect_punct("(");
    if (!at_punct(")")) {
      for (;;) {
        Param p;
        p.name = expect_any_ident("parameter name");
        expect_punct("=");
        p.value = parse_signed_number();
        prog.params.push_back(std::move(p));
        if (at_punct(",")) {
          lex_.next();
          continue;
        }
        break;
      }
    }
    expect_punct(")");
    expect_punct("{");
    for (;;) {
      const Token& t = lex_.peek();
      if (t.kind == Token::Kind::Ident && t.text == "let") {
        prog.bindings.push_back(parse_binding());
      } else {
        break;
      }
    }
    expect_ident("return");
    prog.result = parse_expr();
    expect_punct(";");
    expect_punct("}");
    const Token& rest = lex_.peek();
    if (rest.kind != Token::Kind::End) {
      throw GlError(rest.line, rest.col, "trailing input after program");
    }
    prog.annotations = std::move(annotations_);
    return prog;
  }

 private:
  Binding parse_binding() {
    Binding b;
    Token let = lex_.next();  // 'let'
    b.line = let.line;
    b.col = let.col;
    b.names.push_back(expect_any_ident("binding name"));
    while (at_punct(",")) {
      lex_.next();
      b.names.push_back(expect_any_ident("binding name"));
    }
    expect_punct("=");
    b.value = parse_expr();
    expect_punct(";");
    return b;
  }

  ExprPtr parse_expr() { return parse_and(); }

  ExprPtr parse_and() {
    ExprPtr lhs = parse_compare();
    while (at_punct("&")) {
      Token t = lex_.next();
      ExprPtr rhs = parse_compare();
      lhs = make_binary("&", lhs, rhs, t);
    }
    return lhs;
  }

  ExprPtr parse_compare() {
    ExprPtr lhs = parse_sum();
    if (at_punct("<") || at_punct(">") || at_punct("<=") || at_punct(">=")) {
      Token t = lex_.next();
      ExprPtr rhs = parse_sum();
      auto e = std::make_shared<Expr>();
      e->kind = Expr::Kind::Compare;
      e->op = t.text;
      e->args = {lhs, rhs};
      e->line = t.line;
      e->col = t.col;
      return e;
    }
    return lhs;
  }

  ExprPtr parse_sum() {
    ExprPtr lhs = parse_term();
    while (at_punct("+") || at_punct("-")) {
      Token t = lex_.next();
      lhs = make_binary(t.text, lhs, parse_term(), t);
    }
    return lhs;
  }

  ExprPtr parse_term() {
    ExprPtr lhs = parse_factor();
    while (at_punct("*") || at_punct("/")) {
      Token t = lex_.next();
      lhs = make_binary(t.text, lhs, parse_factor(), t);
    }
    return lhs;
  }

  ExprPtr parse_factor() {
    if (at_punct("-")) {
      Token t = lex_.next();
      auto e = std::make_shared<Expr>();
      e->kind = Expr::Kind::Unary;
      e->op = "-";
      e->args = {parse_factor()};
      e->line = t.line;
      e->col = t.col;
      return e;
    }
    return parse_atom();
  }

  ExprPtr parse_atom() {
    const Token& t = lex_.peek();
    if (t.kind == Token::Kind::Number) {
      Token n = lex_.next();
      auto e = std::make_shared<Expr>();
      e->kind = Expr::Kind::Number;
      e->number = n.number;
      e->line = n.line;
      e->col = n.col;
      return e;
    }
    if (t.kind == Token::Kind::Ident) {
      Token id = lex_.next();
      if (at_punct("(")) {
        lex_.next();
        auto e = std::make_shared<Expr>();
        e->kind = Expr::Kind::Call;
        e->name = id.text;
        e->line = id.line;
        e->col = id.col;
        if (!at_punct(")")) {
          for (;;) {
            e->args.push_back(parse_expr());
            if (at_punct(",")) {
              lex_.next();
              continue;
            }
            break;
          }
        }
        expect_punct(")");
        return e;
      }
      auto e = std::make_shared<Expr>();
      e->kind = Expr::Kind::Ident;
      e->name = id.text;
      e->line = id.line;
      e->col = id.col;
      return e;
    }
    if (t.kind == Token::Kind::Punct && t.text == "(") {
      lex_.next();
      ExprPtr inner = parse_expr();
      expect_punct(")");
      return inner;
    }
    throw GlError(t.line, t.col, "expected expression, found '" + t.text + "'");
  }

  double parse_signed_number() {
    double sign = 1.0;
    if (at_punct("-")) {
      lex_.next();
      sign = -1.0;
    }
    const Token& t = lex_.peek();
    if (t.kind != Token::Kind::Number) {
      throw GlError(t.line, t.col, "expected number, found '" + t.text + "'");
    }
    return sign * lex_.next().number;
  }

  ExprPtr make_binary(const std::string& op, ExprPtr lhs, ExprPtr rhs,
                      const Token& t) {
    auto e = std::make_shared<Expr>();
    e->kind = Expr::Kind::Binary;
    e->op = op;
    e->args = {std::move(lhs), std::move(rhs)};
    e->line = t.line;
    e->col = t.col;
    return e;
  }

  bool at_punct(const std::string& p) const {
    return lex_.peek().kind == Token::Kind::Punct && lex_.peek().text == p;
  }

  void expect_punct(const std::string& p) {
    const Token& t = lex_.peek();
    if (t.kind != Token::Kind::Punct || t.text != p) {
      throw GlError(t.line, t.col, "expected '" + p + "', found '" + t.text + "'");
    }
    lex_.next();
  }

  void expect_ident(const std::string& word) {
    const Token& t = lex_.peek();
    if (t.kind != Token::Kind::Ident || t.text != word) {
      throw GlError(t.line, t.col,
                    "expected '" + word + "', found '" + t.text + "'");
    }
    lex_.next();
  }

  std::string expect_any_ident(const char* what) {
    const Token& t = lex_.peek();
    if (t.kind != Token::Kind::Ident) {
      throw GlError(t.line, t.col,
                    std::string("expected ") + what + ", found '" + t.text + "'");
    }
    return lex_.next().text;
  }

  std::vector<std::string> annotations_;
  Lexer lex_;
};

std::string format_number(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

int precedence(const Expr& e) {
  switch (e.kind) {
    case Expr::Kind::Binary:
      if (e.op == "&") return 1;
      if (e.op == "+" || e.op == "-") return 3;
      return 4;  // * /
    case Expr::Kind::Compare:
      return 2;
    case Expr::Kind::Unary:
      return 5;
    default:
      return 6;
  }
}

void print_expr(std::ostringstream& os, const Expr& e, int parent_prec) {
  const int prec = precedence(e);
  const bool parens = prec < parent_prec;
  if (parens) os << "(";
  switch (e.kind) {
    case Expr::Kind::Number:
      os << format_number(e.number);
      break;
    case Expr::Kind::Ident:
      os << e.name;
      break;
    case Expr::Kind::Call:
      os << e.name << "(";
      for (std::size_t i = 0; i < e.args.size(); ++i) {
        if (i) os << ", ";
        print_expr(os, *e.args[i], 0);
      }
      os << ")";
      break;
    case Expr::Kind::Unary:
      os << "-";
      print_expr(os, *e.args[0], prec + 1);
      break;
    case Expr::Kind::Binary:
    case Expr::Kind::Compare:
      print_expr(os, *e.args[0], prec);
      os << " " << e.op << " ";
      print_expr(os, *e.args[1], prec + 1);
      break;
  }
  if (parens) os << ")";
}

bool expr_equal(const Expr& a, const Expr& b) {
  if (a.kind != b.kind || a.name != b.name || a.op != b.op ||
      a.args.size() != b.args.size()) {
    return false;
  }
  if (a.kind == Expr::Kind::Number && a.number != b.number) return false;
  for (std::size_t i = 0; i < a.args.size(); ++i) {
    if (!expr_equal(*a.args[i], *b.args[i])) return false;
  }
  return true;
}

}  // namespace

Program parse(const std::string& text) { return Parser(text).parse_program(); }

std::string pretty_print(const Program& program) {
  std::ostringstream os;
  for (const std::string& note : program.annotations) {
    os << "#! " << note << "\n";
  }
  os << "program " << program.name << "(";
  for (std::size_t i = 0; i < program.params.size(); ++i) {
    if (i) os << ", ";
    os << program.params[i].name << " = " << format_number(program.params[i].value);
  }
  os << ") {\n";
  for (const Binding& b : program.bindings) {
    os << "  let ";
    for (std::size_t i = 0; i < b.names.size(); ++i) {
      if (i) os << ", ";
      os << b.names[i];
    }
    os << " = ";
    print_expr(os, *b.value, 0);
    os << ";\n";
  }
  os << "  return ";
  print_expr(os, *program.result, 0);
  os << ";\n}\n";
  return os.str();
}

bool structurally_equal(const Program& a, const Program& b) {
  if (a.name != b.name || a.params.size() != b.params.size() ||
      a.bindings.size() != b.bindings.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    if (a.params[i].name != b.params[i].name ||
        a.params[i].value != b.params[i].value) {
      return false;
    }
  }
  for (std::size_t i = 0; i < a.bindings.size(); ++i) {
    if (a.bindings[i].names != b.bindings[i].names ||
        !expr_equal(*a.bindings[i].value, *b.bindings[i].value)) {
      return false;
    }
  }
  return expr_equal(*a.result, *b.result);
}

}  // namespace scenediff::gl
