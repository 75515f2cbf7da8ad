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

#include <catch_amalgamated.hpp>

#include <png.h>

#include <map>
#include <random>
#include <set>
#include <tuple>

#include "progrun/scheduler.hpp"
#include "progrun/vis/heatmap.hpp"
#include "progrun/vis/png.hpp"
#include "progrun/vis/scatterplot.hpp"
#include "support.hpp"

using namespace progrun;

namespace {

struct Decoded {
  std::uint32_t width = 0, height = 0;
  std::vector<std::uint8_t> rgba;
};

Decoded decode(const std::vector<std::uint8_t>& bytes) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  REQUIRE(png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()));
  img.format = PNG_FORMAT_RGBA;
  Decoded d{img.width, img.height, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(img))};
  REQUIRE(png_image_finish_read(&img, nullptr, d.rgba.data(), 0, nullptr));
  return d;
}

Rgba pixel(const HeatmapFrame& f, std::uint32_t col, std::uint32_t row) {
  std::size_t i = (static_cast<std::size_t>(row) * f.width + col) * 4;
  return {f.rgba[i], f.rgba[i + 1], f.rgba[i + 2], f.rgba[i + 3]};
}

Grid2D grid(std::int64_t w, std::int64_t h) {
  Grid2D g;
  g.xbins = w;
  g.ybins = h;
  g.bounds = {0, 1, 0, 1};
  g.counts.assign(static_cast<std::size_t>(w * h), 0);
  return g;
}

class Points : public Module {
 public:
  Points() : Module("points") {
    declare_output("df", std::make_shared<DataTable>(std::vector<std::pair<std::string, ColumnType>>{
                             {"x", ColumnType::float64}, {"y", ColumnType::float64}}));
  }
  StepResult run_step(RunNumber, std::int64_t, double) override { return {ModuleState::blocked, 0}; }
  DataTable& table() { return output_table("df"); }
};

}  // namespace

TEST_CASE("colormap anchors", "[vis]") {
  CHECK(colormap("viridis", 0.0) == Rgba{68, 1, 84, 255});
  CHECK(colormap("viridis", 1.0) == Rgba{253, 231, 37, 255});
  CHECK(colormap("viridis", 0.5) == Rgba{33, 144, 141, 255});
  CHECK(colormap("viridis", std::nan("")) == colormap("viridis", 0.0));
  CHECK(colormap("viridis", 7.0) == colormap("viridis", 1.0));
  CHECK(colormap("gray", 0.5) == Rgba{128, 128, 128, 255});
  CHECK_THROWS_AS(colormap("jet", 0.5), std::invalid_argument);
}

TEST_CASE("png encoding round-trips and is deterministic", "[vis]") {
  std::mt19937_64 rng(1);
  std::vector<std::uint8_t> px(37 * 11 * 4);
  for (auto& b : px) b = static_cast<std::uint8_t>(rng());
  auto a = encode_png(px, 37, 11);
  auto b = encode_png(px, 37, 11);
  CHECK(a == b);
  REQUIRE(a.size() > 8);
  CHECK(std::vector<std::uint8_t>(a.begin(), a.begin() + 8) ==
        std::vector<std::uint8_t>{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'});
  Decoded d = decode(a);
  CHECK(d.width == 37);
  CHECK(d.height == 11);
  CHECK(d.rgba == px);
  CHECK_THROWS_AS(encode_png(px, 36, 11), std::invalid_argument);
  CHECK_THROWS_AS(encode_png({}, 0, 0), std::invalid_argument);
}

TEST_CASE("an empty grid renders uniformly", "[vis]") {
  Grid2D g = grid(8, 4);
  for (const char* t : {"linear", "log1p"}) {
    HeatmapFrame f = render_heatmap(g, "viridis", t);
    CHECK(f.width == 8);
    CHECK(f.height == 4);
    CHECK(f.max_count == 0);
    for (std::uint32_t r = 0; r < 4; ++r)
      for (std::uint32_t c = 0; c < 8; ++c) CHECK(pixel(f, c, r) == colormap("viridis", 0));
  }
}

TEST_CASE("a single cell lights up with north at the top", "[vis]") {
  Grid2D g = grid(5, 3);
  g.counts[static_cast<std::size_t>(0 * 5 + 4)] = 7;  // x = 4, y = 0: bottom right
  HeatmapFrame f = render_heatmap(g, "viridis", "log1p");
  CHECK(pixel(f, 4, 2) == colormap("viridis", 1));
  CHECK(pixel(f, 4, 0) == colormap("viridis", 0));
  CHECK(pixel(f, 0, 2) == colormap("viridis", 0));
  CHECK(f.max_count == 7);
  Decoded d = decode(f.png());
  CHECK(d.rgba == f.rgba);
}

TEST_CASE("brightness is monotone in the count", "[vis][property]") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Grid2D g = grid(16, 16);
    for (auto& c : g.counts) c = static_cast<std::int64_t>(rng() % (trial % 2 ? 5 : 100000));
    for (const char* t : {"linear", "log1p"}) {
      HeatmapFrame f = render_heatmap(g, "gray", t);
      std::map<std::int64_t, int> level;
      for (std::int64_t y = 0; y < 16; ++y)
        for (std::int64_t x = 0; x < 16; ++x) {
          auto count = g.at(x, y);
          int gray = pixel(f, static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(15 - y))[0];
          auto [it, fresh] = level.emplace(count, gray);
          CHECK(it->second == gray);  // equal counts, equal colour
        }
      int prev = -1;
      for (const auto& [count, gray] : level) {
        CHECK(gray >= prev);
        prev = gray;
      }
    }
  }
}

TEST_CASE("rendering is a pure function of the grid", "[vis]") {
  std::mt19937_64 rng(3);
  Grid2D g = grid(32, 20);
  for (auto& c : g.counts) c = static_cast<std::int64_t>(rng() % 50);
  CHECK(render_heatmap(g, "viridis", "log1p").png() == render_heatmap(g, "viridis", "log1p").png());
  CHECK_THROWS_AS(render_heatmap(g, "viridis", "sqrt"), std::invalid_argument);
}

TEST_CASE("box blur spreads a spike evenly", "[vis]") {
  std::vector<double> v(49, 0.0);
  v[24] = 9.0;  // centre of 7x7
  auto b = box_blur(v, 7, 7, 1);
  double sum = 0;
  for (std::int64_t y = 0; y < 7; ++y)
    for (std::int64_t x = 0; x < 7; ++x) {
      double e = (std::abs(x - 3) <= 1 && std::abs(y - 3) <= 1) ? 1.0 : 0.0;
      CHECK(b[static_cast<std::size_t>(y * 7 + x)] == Catch::Approx(e));
      sum += b[static_cast<std::size_t>(y * 7 + x)];
    }
  CHECK(sum == Catch::Approx(9.0));
  std::vector<double> flat(12, 2.5);
  CHECK(box_blur(flat, 4, 3, 2) == flat);
  CHECK(box_blur(v, 7, 7, 0) == v);
}

TEST_CASE("reservoir keeps everything below capacity", "[vis]") {
  Scheduler s;
  auto src = s.create<Points>();
  auto smp = s.create<ScatterSample>("x", "y", 10, 1);
  s.connect(*src, "df", *smp, "df");
  src->table().append(std::vector<Column>{std::vector<double>{1, 2, 3}, std::vector<double>{4, 5, 6}}, 1);
  s.run_until_quiescent();
  const DataTable& out = smp->output("df");
  CHECK(out.size() == 3);
  CHECK(out.values<std::int64_t>("source_id")[2] == 2);
  CHECK(out.values<double>("y")[1] == 5.0);
}

TEST_CASE("reservoir holds a consistent sample at capacity", "[vis]") {
  std::mt19937_64 rng(4);
  Scheduler s;
  auto src = s.create<Points>();
  auto smp = s.create<ScatterSample>("x", "y", 50, 2);
  s.connect(*src, "df", *smp, "df");
  progrun::testing::script(*smp, progrun::testing::random_schedule(rng, 5, 1, 300));
  std::vector<double> xs(2000), ys(2000);
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = static_cast<double>(i), ys[i] = -static_cast<double>(i);
  src->table().append(std::vector<Column>{xs, ys}, 1);
  s.run_until_quiescent();
  const DataTable& out = smp->output("df");
  REQUIRE(out.size() == 50);
  CHECK(smp->seen() == 2000);
  auto ids = out.values<std::int64_t>("source_id");
  CHECK(std::set<std::int64_t>(ids.begin(), ids.end()).size() == 50);
  for (std::size_t j = 0; j < 50; ++j) {
    CHECK(out.values<double>("x")[j] == static_cast<double>(ids[j]));
    CHECK(out.values<double>("y")[j] == -static_cast<double>(ids[j]));
  }
}

TEST_CASE("reservoir inclusion is uniform", "[vis][property]") {
  // Each of n items should be kept with probability cap/n.
  const int n = 20, cap = 5, trials = 4000;
  std::vector<int> kept(n, 0);
  std::mt19937_64 rng(5);
  std::vector<double> xs(n);
  for (int i = 0; i < n; ++i) xs[static_cast<std::size_t>(i)] = i;
  for (int t = 0; t < trials; ++t) {
    Scheduler s;
    auto src = s.create<Points>();
    auto smp = s.create<ScatterSample>("x", "y", cap, static_cast<std::uint64_t>(t));
    s.connect(*src, "df", *smp, "df");
    progrun::testing::script(*smp, progrun::testing::random_schedule(rng, 3, 1, 8));
    src->table().append(std::vector<Column>{xs, xs}, 1);
    s.run_until_quiescent();
    for (auto id : smp->output("df").values<std::int64_t>("source_id")) ++kept[static_cast<std::size_t>(id)];
  }
  const double p = static_cast<double>(cap) / n;
  const double sd = std::sqrt(p * (1 - p) / trials);
  for (int i = 0; i < n; ++i) {
    INFO("item " << i);
    CHECK(std::abs(kept[static_cast<std::size_t>(i)] / static_cast<double>(trials) - p) < 4.5 * sd);
  }
}

TEST_CASE("reservoir restarts on upstream deletions", "[vis]") {
  Scheduler s;
  auto src = s.create<Points>();
  auto smp = s.create<ScatterSample>("x", "y", 3, 0);
  s.connect(*src, "df", *smp, "df");
  src->table().append(std::vector<Column>{std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 2, 3, 4}}, 1);
  s.run_until_quiescent();
  RowId gone[3] = {0, 1, 2};
  src->table().delete_rows(gone, s.run_number() + 1);
  s.run_until_quiescent();
  const DataTable& out = smp->output("df");
  REQUIRE(out.size() == 1);
  CHECK(out.values<std::int64_t>("source_id")[0] == 3);
  CHECK(smp->seen() == 1);
}

TEST_CASE("heatmap module renders each new grid once", "[vis]") {
  Scheduler s;
  auto src = s.create<Points>();
  auto mn = s.create<Min>();
  auto mx = s.create<Max>();
  auto h = s.create<Histogram2D>("x", "y", 8, 8);
  auto hm = s.create<Heatmap>();
  s.connect(*src, "df", *mn, "df");
  s.connect(*src, "df", *mx, "df");
  s.connect(*src, "df", *h, "df");
  s.connect(*mn, "df", *h, "min");
  s.connect(*mx, "df", *h, "max");
  s.connect(*h, "df", *hm, "array");
  CHECK(hm->validate().empty());
  hm->configure({{"history", 3}});
  for (int i = 0; i < 5; ++i) {
    src->table().append(std::vector<Column>{std::vector<double>{0, 1, 0.5}, std::vector<double>{0, 1, 0.25}},
                        s.run_number() + 1);
    s.run_until_quiescent();
    auto f = hm->frame();
    REQUIRE(f);
    CHECK(f->stamp == h->grid()->stamp);
    CHECK(f->transform == "log1p");
  }
  CHECK(hm->history().size() == 3);
  auto rows = hm->output("df").size();
  s.run_until_quiescent();
  CHECK(hm->output("df").size() == rows);

  hm->configure({{"colormap", "gray"}});
  hm->set_state(ModuleState::ready);
  s.run_until_quiescent();
  CHECK(hm->frame()->colormap == "gray");
  CHECK_THROWS(hm->configure({{"colormap", "rainbow"}}));
}

TEST_CASE("heatmap refuses producers without a grid", "[vis]") {
  Scheduler s;
  auto src = s.create<Points>();
  auto hm = s.create<Heatmap>();
  s.connect(*src, "df", *hm, "array");
  auto errors = hm->validate();
  REQUIRE(errors.size() == 1);
  CHECK(errors[0].find("grid") != std::string::npos);
}

TEST_CASE("scatterplot wires the expected graph", "[vis]") {
  Scheduler s;
  auto src = s.create<Points>();
  auto plot = s.create<Scatterplot>("x", "y");
  ScatterplotParts p = plot->create_dependent_modules(*src);

  std::map<std::string, std::string> role{{src->id(), "source"}, {plot->id(), "plot"}};
  const std::pair<const char*, std::shared_ptr<Module>> named[] = {
      {"min", p.min},       {"max", p.max},       {"min_value", p.min_value},   {"max_value", p.max_value},
      {"range", p.range_query}, {"select", p.select}, {"hist", p.histogram2d}, {"heatmap", p.heatmap},
      {"sample", p.sample}};
  for (const auto& [r, m] : named) role[m->id()] = r;
  REQUIRE(role.size() == 11);

  using Edge = std::tuple<std::string, std::string, std::string, std::string>;
  std::set<Edge> got;
  auto g = s.graph_json();
  CHECK(g["nodes"].size() == 11);
  for (const auto& e : g["edges"])
    got.emplace(role.at(e["source"].get<std::string>()), e["source_slot"].get<std::string>(),
                role.at(e["target"].get<std::string>()), e["target_slot"].get<std::string>());
  std::set<Edge> want{
      {"source", "df", "min", "df"},          {"source", "df", "max", "df"},
      {"min", "df", "min_value", "like"},     {"max", "df", "max_value", "like"},
      {"min_value", "df", "range", "min_value"}, {"max_value", "df", "range", "max_value"},
      {"min", "df", "range", "min"},          {"max", "df", "range", "max"},
      {"source", "df", "select", "df"},       {"range", "query", "select", "query"},
      {"select", "df", "hist", "df"},         {"range", "min", "hist", "min"},
      {"range", "max", "hist", "max"},        {"hist", "df", "heatmap", "array"},
      {"select", "df", "sample", "df"},       {"heatmap", "df", "plot", "heatmap"},
      {"sample", "df", "plot", "sample"}};
  CHECK(got == want);
  for (const auto& m : p.all()) CHECK(m->validate().empty());
  CHECK(plot->validate().empty());
}

TEST_CASE("two scatterplots get disjoint modules", "[vis]") {
  Scheduler s;
  auto src = s.create<Points>();
  auto a = s.create<Scatterplot>("x", "y");
  auto b = s.create<Scatterplot>("y", "x");
  auto pa = a->create_dependent_modules(*src);
  auto pb = b->create_dependent_modules(*src);
  std::set<std::string> ids;
  for (const auto& m : pa.all()) ids.insert(m->id());
  for (const auto& m : pb.all()) ids.insert(m->id());
  CHECK(ids.size() == 18);
  CHECK_THROWS_AS(a->create_dependent_modules(*src, "nope"), GraphError);
  Scatterplot loose("x", "y");
  CHECK_THROWS_AS(loose.create_dependent_modules(*src), GraphError);
}

TEST_CASE("scatterplot selection starts open and narrows on input", "[vis]") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 10);
  Scheduler s;
  auto src = s.create<Points>();
  auto plot = s.create<Scatterplot>("x", "y");
  auto p = plot->create_dependent_modules(*src);
  p.histogram2d->configure({{"xbins", 16}, {"ybins", 16}});
  std::vector<double> xs(3000), ys(3000);
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = u(rng), ys[i] = u(rng);
  src->table().append(std::vector<Column>{xs, ys}, 1);
  s.run_until_quiescent();
  CHECK(p.select->output("df").size() == 3000);
  CHECK(p.histogram2d->grid()->total == 3000);
  CHECK(p.sample->output("df").size() == ScatterSample::kDefaultSize);
  REQUIRE(p.heatmap->frame());
  CHECK(plot->output("df").values<std::int64_t>("heatmap_stamp").back() == p.heatmap->frame()->stamp);

  p.min_value->from_input({{"x", 2.0}});
  p.max_value->from_input({{"x", 4.0}});
  s.run_until_quiescent();
  std::size_t expect = 0;
  for (double x : xs) expect += (x > 2.0 && x < 4.0);
  CHECK(p.select->output("df").size() == expect);
  auto grid = p.histogram2d->grid();
  CHECK(grid->bounds.xmin == 2.0);
  CHECK(grid->bounds.xmax == 4.0);
  CHECK(grid->total == static_cast<std::int64_t>(expect));
  for (double x : p.sample->output("df").values<double>("x")) {
    CHECK(x > 2.0);
    CHECK(x < 4.0);
  }
}
