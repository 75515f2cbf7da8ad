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

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "progrun/module.hpp"

namespace progrun {

// Forwards created or updated rows of `df` only when they moved far enough:
// a row is emitted if it was never emitted, or if the L2 distance between
// its current numeric vector and the last emitted one is >= delta.
// Deletions always propagate. Output rows keep the source ids.
class SelectDelta : public Module {
 public:
  explicit SelectDelta(double delta = 0.0) : Module("select_delta") {
    declare_input("df", true);
    declare_output("df");
    params().set("delta", delta);
    check_delta();
  }

  std::int64_t emitted() const { return emitted_; }
  std::int64_t suppressed() const { return suppressed_; }

  StepResult run_step(RunNumber run, std::int64_t step_size, double) override {
    InputSlot& df = input("df");
    df.update(run);
    DataTable& out = output_table("df");
    const DataTable& in = df.data();

    if (df.tracker().truncated()) {
      out.truncate(run);
      last_.clear();
    }
    sync_columns(in, run);

    std::vector<RowId> dead;
    for (RowId id : df.tracker().take_deleted())
      if (last_.erase(id)) dead.push_back(id);
    out.delete_rows(dead, run);

    const double delta = params().get_double("delta");
    std::vector<RowId> changed = df.tracker().take_updated();
    std::vector<RowId> moved;
    std::vector<std::size_t> moved_pos;
    std::vector<std::size_t> pos = positions_of(in, changed);
    for (std::size_t p : pos) {
      RowId id = in.row_ids()[p];
      std::vector<double> v = vector_at(in, p);
      auto it = last_.find(id);
      if (it != last_.end() && distance(v, it->second) < delta) {
        ++suppressed_;
        continue;
      }
      last_[id] = std::move(v);
      moved.push_back(id);
      moved_pos.push_back(p);
    }
    if (!moved.empty()) {
      // Every delivered live row has been emitted once, so these all exist.
      std::vector<Column> cols = gather_numeric(in, moved_pos);
      NamedColumns named;
      const auto& out_names = out.column_names();
      for (std::size_t k = 0; k < out_names.size(); ++k) named.emplace_back(out_names[k], std::move(cols[k]));
      out.update_rows(moved, named, run);
      emitted_ += static_cast<std::int64_t>(moved.size());
    }

    std::vector<RowId> ids = df.next_created(step_size);
    std::vector<std::size_t> cpos = positions_of(in, ids);
    if (!cpos.empty()) {
      std::vector<RowId> fresh;
      for (std::size_t p : cpos) {
        RowId id = in.row_ids()[p];
        last_[id] = vector_at(in, p);
        fresh.push_back(id);
      }
      out.append_with_ids(fresh, gather_numeric(in, cpos), run);
      emitted_ += static_cast<std::int64_t>(fresh.size());
    }
    return {df.next_state(), static_cast<std::int64_t>(ids.size() + changed.size())};
  }

 protected:
  void validate_more(std::vector<std::string>& errors) const override {
    const InputSlot& in = input("df");
    if (!in.connected()) return;
    for (const auto& [name, type] : in.data().schema())
      if (!is_numeric(type)) errors.push_back("select_delta: column '" + name + "' is not numeric");
  }

  void on_params_changed() override { check_delta(); }

 private:
  void check_delta() const {
    double d = params().get_double("delta");
    if (!(d >= 0.0)) throw std::invalid_argument("select_delta: delta must be >= 0");
  }

  void sync_columns(const DataTable& in, RunNumber run) {
    DataTable& out = output_table("df");
    for (const auto& [name, type] : in.schema()) {
      if (out.has_column(name)) continue;
      if (!is_numeric(type)) {
        warn("select_delta: column '" + name + "' is not numeric, ignored");
        out.add_column(name, ColumnType::float64, run);  // placeholder so we warn once
        ignored_.push_back(name);
        continue;
      }
      out.add_column(name, type, run);
      names_.push_back(name);
      cols_.push_back(*in.column_index(name));
    }
  }

  std::vector<double> vector_at(const DataTable& in, std::size_t p) const {
    std::vector<double> v(cols_.size());
    for (std::size_t k = 0; k < cols_.size(); ++k) v[k] = in.numeric(cols_[k], p);
    return v;
  }

  // Output columns in output-schema order; ignored columns are NaN.
  std::vector<Column> gather_numeric(const DataTable& in, const std::vector<std::size_t>& pos) const {
    const DataTable& out = output("df");
    std::vector<Column> cols;
    for (const auto& [name, type] : out.schema()) {
      bool ignored = std::find(ignored_.begin(), ignored_.end(), name) != ignored_.end();
      if (ignored) {
        cols.push_back(std::vector<double>(pos.size(), std::numeric_limits<double>::quiet_NaN()));
        continue;
      }
      cols.push_back(std::visit(
          [&](const auto& src) -> Column {
            std::decay_t<decltype(src)> v;
            v.reserve(pos.size());
            for (std::size_t p : pos) v.push_back(src[p]);
            return v;
          },
          in.column(name)));
    }
    return cols;
  }

  static double distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      double d = a[i] - (i < b.size() ? b[i] : 0.0);
      s += d * d;
    }
    return std::sqrt(s);
  }

  std::vector<std::string> names_;
  std::vector<std::size_t> cols_;
  std::vector<std::string> ignored_;
  std::unordered_map<RowId, std::vector<double>> last_;
  std::int64_t emitted_ = 0;
  std::int64_t suppressed_ = 0;
};

}  // namespace progrun
