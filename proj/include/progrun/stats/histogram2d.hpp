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
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "progrun/module.hpp"
#include "progrun/stats/extrema.hpp"

namespace progrun {

struct Bounds2D {
  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
  bool operator==(const Bounds2D&) const = default;
};

// Immutable snapshot of a count grid. counts is row-major with y as the row:
// counts[y * xbins + x].
struct Grid2D {
  std::int64_t xbins = 0;
  std::int64_t ybins = 0;
  Bounds2D bounds;
  std::vector<std::int64_t> counts;
  std::int64_t total = 0;
  RunNumber stamp = 0;

  std::int64_t at(std::int64_t x, std::int64_t y) const { return counts[static_cast<std::size_t>(y * xbins + x)]; }
};

// Implemented by modules whose output slot stands for a grid too large to
// ship as table rows.
class GridSource {
 public:
  virtual ~GridSource() = default;
  virtual std::shared_ptr<const Grid2D> grid() const = 0;
};

// Bin index along one axis. Values outside [lo, hi] are clamped to the edge
// bins; a degenerate range puts everything in bin 0.
inline std::int64_t bin_index(double v, double lo, double hi, std::int64_t bins) {
  if (!(hi > lo)) return 0;
  double f = std::floor((v - lo) / (hi - lo) * static_cast<double>(bins));
  if (f < 0) return 0;
  if (f >= static_cast<double>(bins)) return bins - 1;
  return static_cast<std::int64_t>(f);
}

// 2-D count histogram of (x_column, y_column) over bounds read from the last
// rows of the `min` and `max` inputs.
//
// The grid is rebuilt from scratch when a bound moves by more than 1% of
// the range in use, when upstream rows are updated or deleted, and once the
// input is caught up while the bounds in use are stale. The summary row in
// output `df` carries the bounds, bin counts and total.
class Histogram2D : public Module, public GridSource {
 public:
  static constexpr std::int64_t kDefaultBins = 512;
  static constexpr double kRebinTolerance = 0.01;

  Histogram2D(std::string x_column, std::string y_column, std::int64_t xbins = kDefaultBins,
              std::int64_t ybins = kDefaultBins)
      : Module("histogram2d") {
    declare_input("df", true);
    declare_input("min", true);
    declare_input("max", true);
    declare_output("df", std::make_shared<DataTable>(std::vector<std::pair<std::string, ColumnType>>{
                             {"xmin", ColumnType::float64},
                             {"xmax", ColumnType::float64},
                             {"ymin", ColumnType::float64},
                             {"ymax", ColumnType::float64},
                             {"xbins", ColumnType::int64},
                             {"ybins", ColumnType::int64},
                             {"total", ColumnType::int64}}));
    params().set("x_column", std::move(x_column));
    params().set("y_column", std::move(y_column));
    params().set("xbins", xbins);
    params().set("ybins", ybins);
    check_bins();
  }

  std::shared_ptr<const Grid2D> grid() const override {
    std::lock_guard lock(snapshot_mutex_);
    return snapshot_;
  }

  std::optional<Bounds2D> bounds_in_use() const { return used_; }
  std::int64_t rebins() const { return rebins_; }

  StepResult run_step(RunNumber run, std::int64_t step_size, double) override {
    InputSlot& df = input("df");
    InputSlot& mn = input("min");
    InputSlot& mx = input("max");
    df.update(run);
    drain(mn, run);
    drain(mx, run);

    std::optional<Bounds2D> b = current_bounds();
    if (!b) return {ModuleState::blocked, 0};

    bool reset = df.has_updated() || df.has_deleted() || !used_ || moved(*used_, *b) ||
                 (*used_ != *b && df.tracker().pending_size() == 0);
    if (reset) {
      df.reset();
      df.update(run);
      start_over(*b);
    }

    std::vector<RowId> ids = df.next_created(step_size);
    if (!ids.empty()) accumulate(df.data(), ids);
    if (reset || !ids.empty()) publish(run);

    // Caught up with stale bounds: come back for one more pass.
    ModuleState next = df.tracker().pending_size() == 0 && *used_ != *b ? ModuleState::ready : df.next_state();
    return {next, static_cast<std::int64_t>(ids.size())};
  }

 protected:
  void on_params_changed() override {
    check_bins();
    used_.reset();  // forces a rebuild with the new geometry
  }

  void describe(nlohmann::json& j) const override {
    auto g = grid();
    if (!g) return;
    j["grid"] = {{"xbins", g->xbins}, {"ybins", g->ybins}, {"total", g->total}, {"stamp", g->stamp},
                 {"bounds", {g->bounds.xmin, g->bounds.xmax, g->bounds.ymin, g->bounds.ymax}}};
  }

 private:
  void check_bins() const {
    if (params().get_int("xbins") < 1 || params().get_int("ybins") < 1)
      throw std::invalid_argument("histogram2d: bin counts must be >= 1");
  }

  static void drain(InputSlot& s, RunNumber run) {
    s.update(run);
    s.next_created(std::numeric_limits<std::int64_t>::max());
    s.tracker().take_updated();
    s.tracker().take_deleted();
  }

  std::optional<Bounds2D> current_bounds() const {
    const std::string& xc = params().get_string("x_column");
    const std::string& yc = params().get_string("y_column");
    const DataTable& lo = input("min").data();
    const DataTable& hi = input("max").data();
    auto xmin = last_value(lo, xc), ymin = last_value(lo, yc);
    auto xmax = last_value(hi, xc), ymax = last_value(hi, yc);
    if (!xmin || !xmax || !ymin || !ymax) return std::nullopt;
    return Bounds2D{*xmin, *xmax, *ymin, *ymax};
  }

  static bool moved(const Bounds2D& used, const Bounds2D& b) {
    double xr = used.xmax - used.xmin, yr = used.ymax - used.ymin;
    auto off = [](double a, double c, double range) { return std::abs(a - c) > kRebinTolerance * range; };
    return off(used.xmin, b.xmin, xr) || off(used.xmax, b.xmax, xr) || off(used.ymin, b.ymin, yr) ||
           off(used.ymax, b.ymax, yr);
  }

  void start_over(const Bounds2D& b) {
    xbins_ = params().get_int("xbins");
    ybins_ = params().get_int("ybins");
    counts_.assign(static_cast<std::size_t>(xbins_ * ybins_), 0);
    total_ = 0;
    used_ = b;
    ++rebins_;
  }

  void accumulate(const DataTable& t, const std::vector<RowId>& ids) {
    auto xc = t.column_index(params().get_string("x_column"));
    auto yc = t.column_index(params().get_string("y_column"));
    if (!xc || !yc) throw std::runtime_error("histogram2d: input lacks the configured columns");
    const Bounds2D& b = *used_;
    for (std::size_t p : positions_of(t, ids)) {
      double x = t.numeric(*xc, p), y = t.numeric(*yc, p);
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      std::int64_t bx = bin_index(x, b.xmin, b.xmax, xbins_);
      std::int64_t by = bin_index(y, b.ymin, b.ymax, ybins_);
      ++counts_[static_cast<std::size_t>(by * xbins_ + bx)];
      ++total_;
    }
  }

  void publish(RunNumber run) {
    auto g = std::make_shared<Grid2D>();
    g->xbins = xbins_;
    g->ybins = ybins_;
    g->bounds = *used_;
    g->counts = counts_;
    g->total = total_;
    g->stamp = run;
    {
      std::lock_guard lock(snapshot_mutex_);
      snapshot_ = std::move(g);
    }
    DataTable& out = output_table("df");
    NamedColumns row{{"xmin", std::vector<double>{used_->xmin}}, {"xmax", std::vector<double>{used_->xmax}},
                     {"ymin", std::vector<double>{used_->ymin}}, {"ymax", std::vector<double>{used_->ymax}},
                     {"xbins", std::vector<std::int64_t>{xbins_}}, {"ybins", std::vector<std::int64_t>{ybins_}},
                     {"total", std::vector<std::int64_t>{total_}}};
    if (out.empty()) {
      out.append(row, run);
    } else {
      RowId first[1] = {out.row_ids().front()};
      out.update_rows(first, row, run);
    }
  }

  std::int64_t xbins_ = 0;
  std::int64_t ybins_ = 0;
  std::vector<std::int64_t> counts_;
  std::int64_t total_ = 0;
  std::optional<Bounds2D> used_;
  std::int64_t rebins_ = 0;
  mutable std::mutex snapshot_mutex_;
  std::shared_ptr<const Grid2D> snapshot_;
};

}  // namespace progrun
