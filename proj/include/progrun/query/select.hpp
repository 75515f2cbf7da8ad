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

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "progrun/module.hpp"
#include "progrun/query/filter.hpp"

namespace progrun {

// Passes through the rows of `df` that satisfy the query read from the last
// row of the `query` input (column "query"). Row ids are preserved. A query
// change, or any update/deletion upstream, empties the output and filters
// again from the first row.
class Select : public Module {
 public:
  Select() : Module("select") {
    declare_input("df", true);
    declare_input("query", false);
    declare_output("df");
    params().set("query", std::string());
  }

  const FilterExpr& filter() const { return expr_; }

  StepResult run_step(RunNumber run, std::int64_t step_size, double) override {
    InputSlot& df = input("df");
    df.update(run);
    std::string text = current_query(run);
    bool restart = df.has_updated() || df.has_deleted();
    if (!parsed_ || text != text_) {
      try {
        expr_ = parse_filter(text);
      } catch (const FilterSyntaxError& e) {
        note(std::string("query: ") + e.what());
        return {ModuleState::blocked, 0};
      }
      restart |= parsed_;
      parsed_ = true;
      text_ = text;
    }

    const DataTable& in = df.data();
    DataTable& out = output_table("df");
    if (restart) {
      out.truncate(run);
      df.reset();
      df.update(run);
    }
    for (const auto& [name, type] : in.schema())
      if (!out.has_column(name)) out.add_column(name, type, run);

    std::optional<BoundFilter> bound;
    try {
      bound.emplace(expr_, in);
    } catch (const TableError& e) {
      note(e.what());
      return {ModuleState::blocked, 0};
    }
    last_note_.clear();

    std::vector<RowId> ids = df.next_created(step_size);
    std::vector<std::size_t> pos = positions_of(in, ids);
    std::vector<RowId> keep_ids;
    std::vector<std::size_t> keep_pos;
    for (std::size_t i = 0; i < pos.size(); ++i) {
      if (!bound->matches(in, pos[i])) continue;
      keep_ids.push_back(in.row_ids()[pos[i]]);
      keep_pos.push_back(pos[i]);
    }
    if (!keep_ids.empty()) {
      std::vector<Column> cols = gather(in, keep_pos);
      // Output columns may be a superset after a schema change upstream.
      out.append_with_ids(keep_ids, align_to(out, in, std::move(cols)), run);
    }
    return {df.next_state(), static_cast<std::int64_t>(ids.size())};
  }

 protected:
  void describe(nlohmann::json& j) const override {
    j["query"] = text_;
    j["filter"] = unparse(expr_);
  }

 private:
  std::string current_query(RunNumber run) {
    InputSlot& q = input("query");
    if (!q.connected()) return params().get_string("query");
    q.update(run);
    q.next_created(std::numeric_limits<std::int64_t>::max());
    q.tracker().take_updated();
    q.tracker().take_deleted();
    const DataTable& t = q.data();
    auto c = t.column_index("query");
    if (t.empty() || !c || t.column_type(*c) != ColumnType::utf8) return std::string();
    return std::get<std::string>(t.cell(*c, t.size() - 1));
  }

  static std::vector<Column> align_to(const DataTable& out, const DataTable& in, std::vector<Column> cols) {
    if (out.column_names() == in.column_names()) return cols;
    std::size_t n = cols.empty() ? 0 : column_size(cols[0]);
    std::vector<Column> aligned;
    for (const auto& [name, type] : out.schema()) {
      if (auto i = in.column_index(name)) {
        aligned.push_back(std::move(cols[*i]));
        continue;
      }
      Column c = make_column(type);
      std::visit(
          [n](auto& v) {
            using T = typename std::decay_t<decltype(v)>::value_type;
            if constexpr (std::is_same_v<T, double>) v.assign(n, std::numeric_limits<double>::quiet_NaN());
            else v.assign(n, T{});
          },
          c);
      aligned.push_back(std::move(c));
    }
    return aligned;
  }

  // Records a diagnostic once per distinct message.
  void note(const std::string& msg) {
    if (msg == last_note_) return;
    last_note_ = msg;
    warn(msg);
  }

  std::string text_;
  FilterExpr expr_;
  bool parsed_ = false;
  std::string last_note_;
};

}  // namespace progrun
