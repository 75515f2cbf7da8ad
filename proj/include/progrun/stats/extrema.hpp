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
#include <set>
#include <string>
#include <vector>

#include "progrun/module.hpp"

namespace progrun {

namespace detail {

struct MinFold {
  static constexpr const char* kClass = "min";
  static bool better(double v, double cur) { return v < cur; }
};

struct MaxFold {
  static constexpr const char* kClass = "max";
  static bool better(double v, double cur) { return v > cur; }
};

}  // namespace detail

// Running per-column extreme over the numeric columns of `df`. NaN cells are
// ignored; a column with no finite value so far reads NaN. Updates or
// deletions upstream restart the fold from scratch.
//
// Output `df` holds one row per activation; within one run the row is
// updated in place.
template <class Fold>
class Extrema : public Module {
 public:
  Extrema() : Module(Fold::kClass) {
    declare_input("df", true);
    declare_output("df");
  }

  const std::vector<std::string>& columns() const { return names_; }
  const std::vector<double>& current() const { return values_; }

  StepResult run_step(RunNumber run, std::int64_t step_size, double) override {
    InputSlot& in = input("df");
    in.update(run);
    bool dirty = false;
    if (in.has_updated() || in.has_deleted()) {
      in.reset();
      in.update(run);
      std::fill(values_.begin(), values_.end(), std::numeric_limits<double>::quiet_NaN());
      dirty = true;
    }
    const DataTable& t = in.data();
    dirty |= sync_columns(t, run);

    std::vector<RowId> ids = in.next_created(step_size);
    if (!ids.empty()) {
      std::vector<std::size_t> pos = positions_of(t, ids);
      for (std::size_t k = 0; k < names_.size(); ++k) {
        std::size_t c = *t.column_index(names_[k]);
        double cur = values_[k];
        for (std::size_t p : pos) {
          double v = t.numeric(c, p);
          if (std::isnan(v)) continue;
          if (std::isnan(cur) || Fold::better(v, cur)) cur = v;
        }
        values_[k] = cur;
      }
      dirty = true;
    }
    if (dirty) publish(run);
    return {in.next_state(), static_cast<std::int64_t>(ids.size())};
  }

 protected:
  void describe(nlohmann::json& j) const override {
    nlohmann::json v = nlohmann::json::object();
    for (std::size_t k = 0; k < names_.size(); ++k)
      v[names_[k]] = std::isfinite(values_[k]) ? nlohmann::json(values_[k]) : nlohmann::json(nullptr);
    j["values"] = std::move(v);
  }

 private:
  bool sync_columns(const DataTable& t, RunNumber run) {
    bool added = false;
    DataTable& out = output_table("df");
    for (std::size_t c = 0; c < t.num_columns(); ++c) {
      const std::string& name = t.column_names()[c];
      if (!is_numeric(t.column_type(c))) {
        if (skipped_.insert(name).second) warn("non-numeric column '" + name + "' ignored");
        continue;
      }
      if (out.has_column(name)) continue;
      out.add_column(name, ColumnType::float64, run);
      names_.push_back(name);
      values_.push_back(std::numeric_limits<double>::quiet_NaN());
      added = true;
    }
    return added;
  }

  void publish(RunNumber run) {
    DataTable& out = output_table("df");
    NamedColumns row;
    for (std::size_t k = 0; k < names_.size(); ++k) row.emplace_back(names_[k], std::vector<double>{values_[k]});
    if (!out.empty() && out.update_column().back() == run) {
      RowId last[1] = {out.row_ids().back()};
      out.update_rows(last, row, run);
    } else {
      out.append(row, run);
    }
  }

  std::vector<std::string> names_;
  std::vector<double> values_;
  std::set<std::string> skipped_;
};

class Min : public Extrema<detail::MinFold> {};
class Max : public Extrema<detail::MaxFold> {};

// Last row of an extrema-style table as (column -> value).
inline std::optional<double> last_value(const DataTable& t, std::string_view column) {
  if (t.empty()) return std::nullopt;
  auto c = t.column_index(column);
  if (!c) return std::nullopt;
  double v = t.numeric(*c, t.size() - 1);
  if (std::isnan(v)) return std::nullopt;
  return v;
}

}  // namespace progrun
