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
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "progrun/module.hpp"
#include "progrun/stats/histogram2d.hpp"
#include "progrun/vis/png.hpp"

namespace progrun {

struct HeatmapFrame {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint8_t> rgba;  // top row first; north is up
  std::string colormap;
  std::string transform;
  Bounds2D bounds;
  RunNumber stamp = 0;  // run number of the grid it was rendered from
  std::int64_t max_count = 0;

  std::vector<std::uint8_t> png() const { return encode_png(rgba, width, height); }
};

// Separable box blur of radius r with edge clamping.
inline std::vector<double> box_blur(const std::vector<double>& v, std::int64_t w, std::int64_t h, std::int64_t r) {
  if (r <= 0) return v;
  auto pass = [&](const std::vector<double>& src, bool horizontal) {
    std::vector<double> dst(src.size());
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        double s = 0;
        for (std::int64_t d = -r; d <= r; ++d) {
          std::int64_t xx = horizontal ? std::clamp(x + d, std::int64_t{0}, w - 1) : x;
          std::int64_t yy = horizontal ? y : std::clamp(y + d, std::int64_t{0}, h - 1);
          s += src[static_cast<std::size_t>(yy * w + xx)];
        }
        dst[static_cast<std::size_t>(y * w + x)] = s / static_cast<double>(2 * r + 1);
      }
    return dst;
  };
  return pass(pass(v, true), false);
}

// Renders a count grid: optional blur, intensity transform (linear|log1p),
// normalisation by the maximum, colormap.
inline HeatmapFrame render_heatmap(const Grid2D& g, const std::string& cmap, const std::string& transform,
                                   std::int64_t blur = 0) {
  if (transform != "linear" && transform != "log1p")
    throw std::invalid_argument("unknown transform '" + transform + "'");
  HeatmapFrame f;
  f.width = static_cast<std::uint32_t>(g.xbins);
  f.height = static_cast<std::uint32_t>(g.ybins);
  f.colormap = cmap;
  f.transform = transform;
  f.bounds = g.bounds;
  f.stamp = g.stamp;
  f.max_count = g.counts.empty() ? 0 : *std::max_element(g.counts.begin(), g.counts.end());

  std::vector<double> v(g.counts.begin(), g.counts.end());
  v = box_blur(v, g.xbins, g.ybins, blur);
  if (transform == "log1p")
    for (double& x : v) x = std::log1p(x);
  double mx = v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());

  f.rgba.resize(static_cast<std::size_t>(f.width) * f.height * 4);
  for (std::int64_t y = 0; y < g.ybins; ++y) {
    std::int64_t row = g.ybins - 1 - y;
    for (std::int64_t x = 0; x < g.xbins; ++x) {
      double n = mx > 0 ? v[static_cast<std::size_t>(y * g.xbins + x)] / mx : 0.0;
      Rgba px = colormap(cmap, n);
      std::copy(px.begin(), px.end(), f.rgba.begin() + static_cast<std::ptrdiff_t>((row * g.xbins + x) * 4));
    }
  }
  return f;
}

// Turns the grid of an upstream histogram into colour frames, keeping the
// last `history` frames.
class Heatmap : public Module {
 public:
  static constexpr std::int64_t kDefaultHistory = 20;

  Heatmap() : Module("heatmap") {
    declare_input("array", true);
    declare_output("df", std::make_shared<DataTable>(std::vector<std::pair<std::string, ColumnType>>{
                             {"stamp", ColumnType::int64},
                             {"width", ColumnType::int64},
                             {"height", ColumnType::int64},
                             {"max_count", ColumnType::int64}}));
    params().set("colormap", std::string("viridis"));
    params().set("transform", std::string("log1p"));
    params().set("blur", std::int64_t{0});
    params().set("history", kDefaultHistory);
  }

  bool is_visualization() const override { return true; }

  std::shared_ptr<const HeatmapFrame> frame() const {
    std::lock_guard lock(frames_mutex_);
    return history_.empty() ? nullptr : history_.back();
  }

  std::vector<std::shared_ptr<const HeatmapFrame>> history() const {
    std::lock_guard lock(frames_mutex_);
    return {history_.begin(), history_.end()};
  }

  StepResult run_step(RunNumber run, std::int64_t, double) override {
    InputSlot& in = input("array");
    in.update(run);
    in.next_created(std::numeric_limits<std::int64_t>::max());
    in.tracker().take_updated();
    in.tracker().take_deleted();
    const auto* src = dynamic_cast<const GridSource*>(in.producer());
    if (!src) throw std::runtime_error("heatmap: producer does not provide a grid");
    auto g = src->grid();
    if (!g || (rendered_ && g->stamp == last_stamp_ && !restyle_)) return {ModuleState::blocked, 0};

    auto f = std::make_shared<const HeatmapFrame>(render_heatmap(*g, params().get_string("colormap"),
                                                                 params().get_string("transform"),
                                                                 params().get_int("blur")));
    {
      std::lock_guard lock(frames_mutex_);
      history_.push_back(f);
      while (static_cast<std::int64_t>(history_.size()) > params().get_int("history")) history_.pop_front();
    }
    last_stamp_ = g->stamp;
    rendered_ = true;
    restyle_ = false;
    output_table("df").append_row({Cell(f->stamp), Cell(std::int64_t{f->width}), Cell(std::int64_t{f->height}),
                                   Cell(f->max_count)},
                                  run);
    return {ModuleState::blocked, 1};
  }

 protected:
  void validate_more(std::vector<std::string>& errors) const override {
    const InputSlot& in = input("array");
    if (in.connected() && !dynamic_cast<const GridSource*>(in.producer()))
      errors.push_back("heatmap: input 'array' must come from a grid producer");
  }

  void on_params_changed() override {
    if (!is_colormap(params().get_string("colormap"))) throw std::invalid_argument("unknown colormap");
    if (params().get_int("history") < 1) throw std::invalid_argument("heatmap: history must be >= 1");
    restyle_ = true;
  }

  void describe(nlohmann::json& j) const override {
    auto f = frame();
    if (!f) return;
    j["frame"] = {{"width", f->width},       {"height", f->height},         {"stamp", f->stamp},
                  {"colormap", f->colormap}, {"transform", f->transform}, {"max_count", f->max_count},
                  {"bounds", {f->bounds.xmin, f->bounds.xmax, f->bounds.ymin, f->bounds.ymax}}};
    j["history_length"] = history().size();
  }

 private:
  mutable std::mutex frames_mutex_;
  std::deque<std::shared_ptr<const HeatmapFrame>> history_;
  RunNumber last_stamp_ = 0;
  bool rendered_ = false;
  bool restyle_ = false;
};

}  // namespace progrun
