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
#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "progrun/vis/heatmap.hpp"
#include "support.hpp"

using progrun::testing::TempDir;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

Result progrun_cli(const std::string& args) {
  std::string cmd = std::string(PROGRUN_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe);
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe)) r.output += buf;
  int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::uint8_t> decode(const std::string& bytes, std::uint32_t& w, std::uint32_t& h) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  REQUIRE(png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()));
  img.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(img));
  REQUIRE(png_image_finish_read(&img, nullptr, px.data(), 0, nullptr));
  w = img.width;
  h = img.height;
  return px;
}

}  // namespace

TEST_CASE("headless demo heatmap equals the eager rendering", "[cli]") {
  TempDir dir;
  std::mt19937_64 rng(12);
  std::normal_distribution<double> x(5, 2), y(-1, 0.5);
  std::vector<double> xs(3000), ys(3000);
  std::ostringstream csv;
  csv.precision(17);
  csv << "x,y\n";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    xs[i] = x(rng), ys[i] = y(rng);
    csv << xs[i] << ',' << ys[i] << '\n';
  }
  auto file = dir.write("pts.csv", csv.str());
  auto r = progrun_cli("demo heatmap " + file + " --x x --y y --bins 40 --headless --out " + dir.file("out"));
  INFO(r.output);
  REQUIRE(r.code == 0);

  std::uint32_t w = 0, h = 0;
  auto px = decode(slurp(dir.file("out/heatmap_1.png")), w, h);
  CHECK(w == 40);
  CHECK(h == 40);

  progrun::Grid2D g;
  g.xbins = g.ybins = 40;
  g.counts = oracle::eager_grid(xs, ys, *std::min_element(xs.begin(), xs.end()), *std::max_element(xs.begin(), xs.end()),
                                *std::min_element(ys.begin(), ys.end()), *std::max_element(ys.begin(), ys.end()), 40, 40);
  for (auto c : g.counts) g.total += c;
  CHECK(px == progrun::render_heatmap(g, "viridis", "log1p").rgba);
}

TEST_CASE("headless demo kmeans writes centroids", "[cli]") {
  TempDir dir;
  std::ostringstream csv;
  csv << "a,b\n";
  for (int i = 0; i < 200; ++i) csv << (i % 2 ? 10 : 0) << ',' << (i % 2 ? 10 : 0) << '\n';
  auto file = dir.write("pts.csv", csv.str());
  auto r = progrun_cli("demo kmeans " + file + " --k 2 --headless --out " + dir.file("out"));
  INFO(r.output);
  REQUIRE(r.code == 0);
  std::string text = slurp(dir.file("out/mb_kmeans_1_centroids.csv"));
  std::istringstream in(text);
  std::string header;
  std::getline(in, header);
  CHECK(header == "a,b");
  std::vector<double> firsts;
  double a = 0, b = 0;
  char comma = 0;
  while (in >> a >> comma >> b) {
    CHECK(a == Catch::Approx(b));
    firsts.push_back(a);
  }
  std::sort(firsts.begin(), firsts.end());
  REQUIRE(firsts.size() == 2);
  CHECK(firsts[0] == Catch::Approx(0.0).margin(1e-12));
  CHECK(firsts[1] == Catch::Approx(10.0));
}

TEST_CASE("a malformed config exits 2 naming the connection", "[cli]") {
  TempDir dir;
  auto data = dir.write("t.csv", "a,b\n1,2\n");
  auto cfg = dir.write("bad.json", R"({"modules": [{"id": "csv", "type": "csv_loader", "params": {"filename": ")" +
                                       data + R"("}}, {"id": "min", "type": "min"}],
                        "connections": ["csv.df -> mni.df"]})");
  auto r = progrun_cli("run " + cfg + " --headless");
  CHECK(r.code == 2);
  CHECK(r.output.find("bad connection 'csv.df -> mni.df'") != std::string::npos);

  CHECK(progrun_cli("run " + dir.file("missing.json") + " --headless").code == 2);
  CHECK(progrun_cli("demo heatmap " + dir.file("none*.csv") + " --x a --y b --headless").code == 2);
  CHECK(progrun_cli("demo kmeans " + data + " --k 0").code == 2);
}

TEST_CASE("run with a good config goes headless", "[cli]") {
  TempDir dir;
  auto data = dir.write("t.csv", "a,b\n1,2\n3,4\n5,6\n");
  auto cfg = dir.write("ok.json", R"({"quantum": 0.5, "modules": [
      {"id": "csv", "type": "csv_loader", "params": {"filename": ")" + data + R"("}},
      {"id": "km", "type": "mb_kmeans", "params": {"k": 1}}],
    "connections": ["csv.df -> km.df"]})");
  auto r = progrun_cli("run " + cfg + " --headless --quantum 0.2 --out " + dir.file("o"));
  INFO(r.output);
  CHECK(r.code == 0);
  CHECK(slurp(dir.file("o/km_centroids.csv")) == "a,b\n3,4\n");
}
