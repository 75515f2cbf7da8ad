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

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "progrun/module.hpp"
#include "progrun/query/filter.hpp"
#include "progrun/stats/extrema.hpp"

namespace progrun {

// Builds a query string from two variables holding per-column lower and
// upper bounds. A column contributes `lo < col < hi` only when both bounds
// are defined; with none defined the query is empty (match-all).
//
// When the data extremes are connected on `min`/`max`, the effective bounds
// (the variable value if defined, else the data extreme) are published on
// outputs `min`/`max`, so a histogram can zoom onto the selected range.
class RangeQuery : public Module {
 public:
  RangeQuery() : Module("range_query") {
    declare_input("min_value", true);
    declare_input("max_value", true);
    declare_input("min", false);
    declare_input("max", false);
    declare_output("query", std::make_shared<DataTable>(
                                std::vector<std::pair<std::string, ColumnType>>{{"query", ColumnType::utf8}}));
    declare_output("min");
    declare_output("max");
  }

  const std::string& query() const { return query_; }

  StepResult run_step(RunNumber run, std::int64_t, double) override {
    for (const char* s : {"min_value", "max_value", "min", "max"}) drain(input(s), run);

    const DataTable& lo_t = input("min_value").data();
    const DataTable& hi_t = input("max_value").data();

    std::vector<std::string> columns = lo_t.column_names();
    for (const auto& c : hi_t.column_names())
      if (!lo_t.has_column(c)) columns.push_back(c);

    FilterExpr expr;
    std::vector<std::string> inverted;
    for (const auto& c : columns) {
      auto lo = last_value(lo_t, c);
      auto hi = last_value(hi_t, c);
      if (!lo || !hi) continue;
      if (*lo > *hi) inverted.push_back(c);
      expr.clauses.push_back({c, CmpOp::gt, *lo});
      expr.clauses.push_back({c, CmpOp::lt, *hi});
    }
    for (const auto& c : inverted) warn("empty range for column '" + c + "'");

    std::string text = format_query(expr);
    DataTable& q = output_table("query");
    if (q.empty()) {
      q.append(NamedColumns{{"query", std::vector<std::string>{text}}}, run);
    } else if (text != query_) {
      RowId first[1] = {q.row_ids().front()};
      q.update_rows(first, NamedColumns{{"query", std::vector<std::string>{text}}}, run);
    }
    query_ = std::move(text);

    publish_effective("min", "min", lo_t, run);
    publish_effective("max", "max", hi_t, run);
    return {ModuleState::blocked, 0};
  }

  // `lo < col < hi` per bounded column, joined by " and ".
  static std::string format_query(const FilterExpr& e) {
    std::string out;
    for (std::size_t i = 0; i + 1 < e.clauses.size(); i += 2) {
      if (!out.empty()) out += " and ";
      out += format_number(e.clauses[i].value) + " < " + e.clauses[i].column + " < " +
             format_number(e.clauses[i + 1].value);
    }
    return out;
  }

 private:
  static void drain(InputSlot& s, RunNumber run) {
    if (!s.connected()) return;
    s.update(run);
    s.next_created(std::numeric_limits<std::int64_t>::max());
    s.tracker().take_updated();
    s.tracker().take_deleted();
  }

  void publish_effective(const char* data_slot, const char* out_slot, const DataTable& var, RunNumber run) {
    const InputSlot& in = input(data_slot);
    if (!in.connected()) return;
    const DataTable& data = in.data();
    DataTable& out = output_table(out_slot);
    NamedColumns row;
    bool changed = out.empty();
    for (const auto& name : data.column_names()) {
      if (!is_numeric(data.column_type(name))) continue;
      if (!out.has_column(name)) {
        out.add_column(name, ColumnType::float64, run);
        changed = true;
      }
      double v = std::numeric_limits<double>::quiet_NaN();
      if (auto u = last_value(var, name)) v = *u;
      else if (auto d = last_value(data, name)) v = *d;
      if (!out.empty()) {
        double cur = out.numeric(*out.column_index(name), 0);
        if (!(cur == v || (std::isnan(cur) && std::isnan(v)))) changed = true;
      }
      row.emplace_back(name, std::vector<double>{v});
    }
    if (!changed || row.size() != out.num_columns()) return;
    if (out.empty()) {
      out.append(row, run);
    } else {
      RowId first[1] = {out.row_ids().front()};
      out.update_rows(first, row, run);
    }
  }

  std::string query_;
};

}  // namespace progrun
