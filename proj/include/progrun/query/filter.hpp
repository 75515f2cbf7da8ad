// Copyright 2026 The progrun Authors
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

#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "progrun/table.hpp"

namespace progrun {

enum class CmpOp { lt, le, gt, ge, eq, ne };

inline std::string_view to_string(CmpOp op) {
  switch (op) {
    case CmpOp::lt: return "<";
    case CmpOp::le: return "<=";
    case CmpOp::gt: return ">";
    case CmpOp::ge: return ">=";
    case CmpOp::eq: return "==";
    case CmpOp::ne: return "!=";
  }
  return "?";
}

inline bool compare(double v, CmpOp op, double ref) {
  switch (op) {
    case CmpOp::lt: return v < ref;
    case CmpOp::le: return v <= ref;
    case CmpOp::gt: return v > ref;
    case CmpOp::ge: return v >= ref;
    case CmpOp::eq: return v == ref;
    case CmpOp::ne: return v != ref;
  }
  return false;
}

struct Comparison {
  std::string column;
  CmpOp op = CmpOp::lt;
  double value = 0;
  bool operator==(const Comparison&) const = default;
};

// Conjunction of comparisons; no clauses matches every row.
struct FilterExpr {
  std::vector<Comparison> clauses;
  bool match_all() const { return clauses.empty(); }
  bool operator==(const FilterExpr&) const = default;
};

class FilterSyntaxError : public std::runtime_error {
 public:
  FilterSyntaxError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " at offset " + std::to_string(position)), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

// Shortest decimal form that parses back to the same double.
inline std::string format_number(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace detail {

class FilterParser {
 public:
  explicit FilterParser(std::string_view s) : s_(s) {}

  FilterExpr parse() {
    FilterExpr e;
    skip_ws();
    if (at_end()) return e;
    clause(e);
    for (;;) {
      skip_ws();
      if (at_end()) break;
      if (peek() == '&') {
        ++i_;
      } else if (keyword("and")) {
        // consumed
      } else {
        fail("expected 'and' or '&'");
      }
      clause(e);
    }
    return e;
  }

 private:
  void clause(FilterExpr& e) {
    skip_ws();
    if (at_end()) fail("expected a comparison");
    if (starts_number()) {
      double lo = number();
      expect_lt();
      std::string col = ident();
      expect_lt();
      double hi = number();
      e.clauses.push_back({col, CmpOp::gt, lo});
      e.clauses.push_back({col, CmpOp::lt, hi});
      return;
    }
    std::string col = ident();
    CmpOp op = cmp();
    double v = number();
    e.clauses.push_back({col, op, v});
  }

  void expect_lt() {
    skip_ws();
    if (at_end() || peek() != '<' || (i_ + 1 < s_.size() && s_[i_ + 1] == '='))
      fail("expected '<'");
    ++i_;
  }

  CmpOp cmp() {
    skip_ws();
    auto two = [&](char a, char b) { return i_ + 1 < s_.size() && s_[i_] == a && s_[i_ + 1] == b; };
    if (two('<', '=')) { i_ += 2; return CmpOp::le; }
    if (two('>', '=')) { i_ += 2; return CmpOp::ge; }
    if (two('=', '=')) { i_ += 2; return CmpOp::eq; }
    if (two('!', '=')) { i_ += 2; return CmpOp::ne; }
    if (!at_end() && peek() == '<') { ++i_; return CmpOp::lt; }
    if (!at_end() && peek() == '>') { ++i_; return CmpOp::gt; }
    fail("expected a comparison operator");
  }

  std::string ident() {
    skip_ws();
    std::size_t start = i_;
    if (at_end() || !(std::isalpha(uc(peek())) || peek() == '_')) fail("expected a column name");
    while (!at_end() && (std::isalnum(uc(peek())) || peek() == '_')) ++i_;
    std::string name(s_.substr(start, i_ - start));
    if (name == "and") fail("expected a column name", start);
    return name;
  }

  bool starts_number() const {
    if (at_end()) return false;
    char c = peek();
    if (std::isdigit(uc(c)) || c == '.') return true;
    if ((c == '-' || c == '+') && i_ + 1 < s_.size()) {
      char d = s_[i_ + 1];
      return std::isdigit(uc(d)) || d == '.';
    }
    return false;
  }

  double number() {
    skip_ws();
    if (!starts_number()) fail("expected a number");
    std::size_t start = i_;
    if (peek() == '+') ++i_;
    double v = 0;
    auto r = std::from_chars(s_.data() + i_, s_.data() + s_.size(), v);
    if (r.ec != std::errc()) fail("malformed number", start);
    i_ = static_cast<std::size_t>(r.ptr - s_.data());
    if (!std::isfinite(v)) fail("number out of range", start);
    if (!at_end() && (std::isalpha(uc(peek())) || peek() == '_')) fail("malformed number", start);
    return v;
  }

  bool keyword(std::string_view kw) {
    if (s_.substr(i_, kw.size()) != kw) return false;
    std::size_t end = i_ + kw.size();
    if (end < s_.size() && (std::isalnum(uc(s_[end])) || s_[end] == '_')) return false;
    i_ = end;
    return true;
  }

  void skip_ws() {
    while (!at_end() && std::isspace(uc(peek()))) ++i_;
  }

  [[noreturn]] void fail(const std::string& msg) const { fail(msg, i_); }
  [[noreturn]] void fail(const std::string& msg, std::size_t pos) const { throw FilterSyntaxError(msg, pos); }

  static unsigned char uc(char c) { return static_cast<unsigned char>(c); }
  bool at_end() const { return i_ >= s_.size(); }
  char peek() const { return s_[i_]; }

  std::string_view s_;
  std::size_t i_ = 0;
};

}  // namespace detail

// Grammar:
//   expr   := clause (('and' | '&') clause)*
//   clause := number '<' ident '<' number | ident op number
//   op     := '<' | '<=' | '>' | '>=' | '==' | '!='
// Blank input parses to the match-all filter. `lo < c < hi` becomes
// (c > lo) and (c < hi).
inline FilterExpr parse_filter(std::string_view text) { return detail::FilterParser(text).parse(); }

inline std::string unparse(const FilterExpr& e) {
  std::string out;
  for (std::size_t i = 0; i < e.clauses.size(); ++i) {
    if (i) out += " and ";
    const Comparison& c = e.clauses[i];
    out += c.column;
    out += ' ';
    out += to_string(c.op);
    out += ' ';
    out += format_number(c.value);
  }
  return out;
}

// Filter resolved against a table schema.
class BoundFilter {
 public:
  // Throws TableError naming the first unknown or non-numeric column.
  BoundFilter(const FilterExpr& e, const DataTable& t) : expr_(e) {
    for (const auto& c : e.clauses) {
      auto idx = t.column_index(c.column);
      if (!idx) throw TableError("unknown column '" + c.column + "' in query");
      if (!is_numeric(t.column_type(*idx))) throw TableError("column '" + c.column + "' is not numeric");
      cols_.push_back(*idx);
    }
  }

  // NaN cells fail every comparison except !=.
  bool matches(const DataTable& t, std::size_t pos) const {
    for (std::size_t k = 0; k < cols_.size(); ++k) {
      const Comparison& c = expr_.clauses[k];
      if (!compare(t.numeric(cols_[k], pos), c.op, c.value)) return false;
    }
    return true;
  }

 private:
  FilterExpr expr_;
  std::vector<std::size_t> cols_;
};

}  // namespace progrun
