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

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "progrun/module.hpp"
#include "progrun/query/range_query.hpp"
#include "progrun/query/select.hpp"
#include "progrun/query/variable.hpp"
#include "progrun/scheduler.hpp"
#include "progrun/stats/extrema.hpp"
#include "progrun/stats/histogram2d.hpp"
#include "progrun/vis/heatmap.hpp"

namespace progrun {

// Uniform reservoir sample (Algorithm R) of (x, y) pairs. Output row i is
// reservoir slot i; replaced slots are updated in place.
class ScatterSample : public Module {
 public:
  static constexpr std::int64_t kDefaultSize = 500;

  ScatterSample(std::string x_column, std::string y_column, std::int64_t size = kDefaultSize,
                std::uint64_t seed = 0)
      : Module("scatter_sample"), rng_(seed) {
    declare_input("df", true);
    declare_output("df", std::make_shared<DataTable>(std::vector<std::pair<std::string, ColumnType>>{
                             {"x", ColumnType::float64}, {"y", ColumnType::float64}, {"source_id", ColumnType::int64}}));
    params().set("x_column", std::move(x_column));
    params().set("y_column", std::move(y_column));
    params().set("size", size);
    if (size < 1) throw std::invalid_argument("scatter_sample: size must be >= 1");
  }

  std::int64_t seen() const { return seen_; }

  StepResult run_step(RunNumber run, std::int64_t step_size, double) override {
    InputSlot& in = input("df");
    in.update(run);
    DataTable& out = output_table("df");
    if (in.has_updated() || in.has_deleted()) {
      in.reset();
      in.update(run);
      out.truncate(run);
      slots_.clear();
      seen_ = 0;
    }
    const DataTable& t = in.data();
    std::vector<RowId> ids = in.next_created(step_size);
    if (ids.empty()) return {in.next_state(), 0};
    auto xc = t.column_index(params().get_string("x_column"));
    auto yc = t.column_index(params().get_string("y_column"));
    if (!xc || !yc) throw std::runtime_error("scatter_sample: input lacks the configured columns");

    const std::size_t cap = static_cast<std::size_t>(params().get_int("size"));
    const std::size_t before = slots_.size();
    std::vector<char> dirty(before, 0);
    std::vector<std::size_t> pos = positions_of(t, ids);
    for (std::size_t p : pos) {
      Entry e{t.numeric(*xc, p), t.numeric(*yc, p), t.row_ids()[p]};
      ++seen_;
      if (slots_.size() < cap) {
        slots_.push_back(e);
        continue;
      }
      std::uniform_int_distribution<std::int64_t> pick(0, seen_ - 1);
      auto j = static_cast<std::size_t>(pick(rng_));
      if (j < cap) {
        slots_[j] = e;
        if (j < before) dirty[j] = 1;
      }
    }

    std::vector<RowId> upd;
    std::vector<double> ux, uy;
    std::vector<std::int64_t> us;
    for (std::size_t j = 0; j < before; ++j) {
      if (!dirty[j]) continue;
      upd.push_back(static_cast<RowId>(j));
      ux.push_back(slots_[j].x);
      uy.push_back(slots_[j].y);
      us.push_back(slots_[j].id);
    }
    if (!upd.empty())
      out.update_rows(upd, NamedColumns{{"x", ux}, {"y", uy}, {"source_id", us}}, run);
    if (slots_.size() > before) {
      std::vector<double> ax, ay;
      std::vector<std::int64_t> as;
      std::vector<RowId> aid;
      for (std::size_t j = before; j < slots_.size(); ++j) {
        aid.push_back(static_cast<RowId>(j));
        ax.push_back(slots_[j].x);
        ay.push_back(slots_[j].y);
        as.push_back(slots_[j].id);
      }
      std::vector<Column> cols{ax, ay, as};
      out.append_with_ids(aid, cols, run);
    }
    return {in.next_state(), static_cast<std::int64_t>(ids.size())};
  }

 private:
  struct Entry {
    double x, y;
    RowId id;
  };
  std::vector<Entry> slots_;
  std::int64_t seen_ = 0;
  std::mt19937_64 rng_;
};

class Scatterplot;

// Modules created around a scatterplot by create_dependent_modules().
struct ScatterplotParts {
  std::shared_ptr<Min> min;
  std::shared_ptr<Max> max;
  std::shared_ptr<Variable> min_value;
  std::shared_ptr<Variable> max_value;
  std::shared_ptr<RangeQuery> range_query;
  std::shared_ptr<Select> select;
  std::shared_ptr<Histogram2D> histogram2d;
  std::shared_ptr<Heatmap> heatmap;
  std::shared_ptr<ScatterSample> sample;

  std::vector<std::shared_ptr<Module>> all() const {
    return {min, max, min_value, max_value, range_query, select, histogram2d, heatmap, sample};
  }
};

// Density heatmap plus sampled points for two columns of a source table.
class Scatterplot : public Module {
 public:
  Scatterplot(std::string x_column, std::string y_column) : Module("scatter_plot") {
    declare_input("heatmap", true);
    declare_input("sample", false);
    declare_output("df", std::make_shared<DataTable>(std::vector<std::pair<std::string, ColumnType>>{
                             {"heatmap_stamp", ColumnType::int64}, {"sample_size", ColumnType::int64}}));
    params().set("x_column", std::move(x_column));
    params().set("y_column", std::move(y_column));
  }

  bool is_visualization() const override { return true; }

  const ScatterplotParts& parts() const { return parts_; }

  // Builds and wires the supporting graph: extrema of the source, bound
  // variables shaped like them, the range query, the selection, its
  // histogram and heatmap, and a point sample. The plot must already be
  // registered with a scheduler.
  ScatterplotParts create_dependent_modules(Module& source, std::string_view slot = "df") {
    Scheduler* s = scheduler();
    if (!s) throw GraphError("scatter_plot must be added to a scheduler first");
    source.output_slot(slot);  // fail early on a bad slot
    const std::string x = params().get_string("x_column");
    const std::string y = params().get_string("y_column");
    ScatterplotParts p;
    p.min = s->create<Min>();
    p.max = s->create<Max>();
    p.min_value = s->create<Variable>();
    p.max_value = s->create<Variable>();
    p.range_query = s->create<RangeQuery>();
    p.select = s->create<Select>();
    p.histogram2d = s->create<Histogram2D>(x, y);
    p.heatmap = s->create<Heatmap>();
    p.sample = s->create<ScatterSample>(x, y);

    s->connect(source, slot, *p.min, "df");
    s->connect(source, slot, *p.max, "df");
    s->connect(*p.min, "df", *p.min_value, "like");
    s->connect(*p.max, "df", *p.max_value, "like");
    s->connect(*p.min_value, "df", *p.range_query, "min_value");
    s->connect(*p.max_value, "df", *p.range_query, "max_value");
    s->connect(*p.min, "df", *p.range_query, "min");
    s->connect(*p.max, "df", *p.range_query, "max");
    s->connect(source, slot, *p.select, "df");
    s->connect(*p.range_query, "query", *p.select, "query");
    s->connect(*p.select, "df", *p.histogram2d, "df");
    s->connect(*p.range_query, "min", *p.histogram2d, "min");
    s->connect(*p.range_query, "max", *p.histogram2d, "max");
    s->connect(*p.histogram2d, "df", *p.heatmap, "array");
    s->connect(*p.select, "df", *p.sample, "df");
    s->connect(*p.heatmap, "df", *this, "heatmap");
    s->connect(*p.sample, "df", *this, "sample");
    parts_ = p;
    return p;
  }

  StepResult run_step(RunNumber run, std::int64_t, double) override {
    std::int64_t stamp = 0, n = 0;
    for (const char* name : {"heatmap", "sample"}) {
      InputSlot& in = input(name);
      if (!in.connected()) continue;
      in.update(run);
      in.next_created(std::numeric_limits<std::int64_t>::max());
      in.tracker().take_updated();
      in.tracker().take_deleted();
    }
    const DataTable& h = input("heatmap").data();
    if (auto c = h.column_index("stamp"); c && !h.empty()) stamp = static_cast<std::int64_t>(h.numeric(*c, h.size() - 1));
    if (input("sample").connected()) n = static_cast<std::int64_t>(input("sample").data().size());
    output_table("df").append_row({Cell(stamp), Cell(n)}, run);
    return {ModuleState::blocked, 1};
  }

 private:
  ScatterplotParts parts_;
};

}  // namespace progrun
