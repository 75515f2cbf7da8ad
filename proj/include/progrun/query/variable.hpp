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

namespace progrun {

// Single-row table meant to be edited interactively. With a `like` input the
// schema follows the like table's columns (numeric cells start as NaN,
// meaning "undefined"); without one, any key is accepted and becomes a
// column on first use.
class Variable : public Module {
 public:
  Variable() : Module("variable") {
    declare_input("like", false);
    declare_output("df");
  }

  bool is_input() const override { return true; }

  StepResult run_step(RunNumber run, std::int64_t, double) override {
    InputSlot& like = input("like");
    if (like.connected()) {
      like.update(run);
      like.next_created(std::numeric_limits<std::int64_t>::max());
      like.tracker().take_updated();
      like.tracker().take_deleted();
      follow_like(run);
    }
    return {ModuleState::blocked, 0};
  }

  // Current value of a column; nullopt when undefined.
  std::optional<Cell> value(std::string_view column) const {
    const DataTable& t = output("df");
    auto c = t.column_index(column);
    if (!c || t.empty()) return std::nullopt;
    Cell v = t.cell(*c, 0);
    if (auto* d = std::get_if<double>(&v); d && std::isnan(*d)) return std::nullopt;
    return v;
  }

 protected:
  void apply_input(const nlohmann::json& msg) override {
    if (msg.empty()) return;
    const DataTable& t = output("df");
    const bool constrained = input("like").connected();
    // Validate everything before mutating.
    for (const auto& [k, v] : msg.items()) {
      auto c = t.column_index(k);
      if (!c) {
        if (constrained && !like_has(k)) throw InputError("unknown key '" + k + "'");
        if (!(v.is_number() || v.is_string() || v.is_null()))
          throw InputError("value for '" + k + "' must be a number, string or null");
        continue;
      }
      ColumnType type = t.column_type(*c);
      if (type == ColumnType::utf8 ? !(v.is_string() || v.is_null()) : !(v.is_number() || v.is_null()))
        throw InputError("value for '" + k + "' does not match column type " + std::string(to_string(type)));
    }

    RunNumber run = touch();
    DataTable& out = output_table("df");
    if (constrained) follow_like(run);
    for (const auto& [k, v] : msg.items()) {
      if (out.has_column(k)) continue;
      out.add_column(k, v.is_string() ? ColumnType::utf8 : ColumnType::float64, run);
    }
    ensure_row(run);
    NamedColumns row;
    for (const auto& [k, v] : msg.items()) {
      ColumnType type = out.column_type(k);
      if (type == ColumnType::utf8) {
        row.emplace_back(k, std::vector<std::string>{v.is_null() ? std::string() : v.get<std::string>()});
      } else if (type == ColumnType::int64) {
        if (v.is_null()) throw InputError("column '" + k + "' cannot be undefined");
        row.emplace_back(k, std::vector<std::int64_t>{v.get<std::int64_t>()});
      } else {
        row.emplace_back(k, std::vector<double>{v.is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                             : v.get<double>()});
      }
    }
    RowId first[1] = {out.row_ids().front()};
    out.update_rows(first, row, run);
  }

 private:
  bool like_has(const std::string& k) const { return input("like").data().has_column(k); }

  void follow_like(RunNumber run) {
    const DataTable& like = input("like").data();
    DataTable& out = output_table("df");
    bool added = false;
    for (const auto& [name, type] : like.schema()) {
      if (out.has_column(name)) continue;
      out.add_column(name, is_numeric(type) ? ColumnType::float64 : ColumnType::utf8, run);
      added = true;
    }
    if (added) ensure_row(run);
  }

  void ensure_row(RunNumber run) {
    DataTable& out = output_table("df");
    if (!out.empty() || out.num_columns() == 0) return;
    std::vector<Cell> row;
    for (std::size_t c = 0; c < out.num_columns(); ++c) {
      switch (out.column_type(c)) {
        case ColumnType::float64: row.emplace_back(std::numeric_limits<double>::quiet_NaN()); break;
        case ColumnType::int64: row.emplace_back(std::int64_t{0}); break;
        case ColumnType::utf8: row.emplace_back(std::string()); break;
      }
    }
    out.append_row(row, run);
  }
};

}  // namespace progrun
