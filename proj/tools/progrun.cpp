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

// progrun command line: build a pipeline from a config file or one of the
// demo graphs, then either serve it or run it to completion.

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "progrun/pipeline.hpp"
#include "progrun/query/filter.hpp"
#include "progrun/server/server.hpp"

namespace fs = std::filesystem;
using namespace progrun;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

struct RunOptions {
  unsigned short port = default_port();
  std::string host = "127.0.0.1";
  double quantum = 0.0;  // 0 keeps the configured value
  bool headless = false;
  std::string out = ".";
};

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << bytes;
}

void write_centroids(const fs::path& path, const MBKMeans& km) {
  std::string text;
  const auto& cols = km.columns();
  for (std::size_t j = 0; j < cols.size(); ++j) text += (j ? "," : "") + cols[j];
  text += '\n';
  const auto& c = km.centroids();
  for (std::size_t i = 0; i < c.size(); i += cols.size()) {
    for (std::size_t j = 0; j < cols.size(); ++j) text += (j ? "," : "") + format_number(c[i + j]);
    text += '\n';
  }
  write_file(path, text);
}

// Writes the final state of every heatmap and k-means module to `dir`.
int write_outputs(Scheduler& s, const fs::path& dir) {
  fs::create_directories(dir);
  int written = 0;
  for (const auto& m : s.modules()) {
    if (auto h = std::dynamic_pointer_cast<Heatmap>(m)) {
      auto f = h->frame();
      if (!f) {
        std::cerr << "progrun: heatmap " << h->id() << " has no frame\n";
        continue;
      }
      auto png = f->png();
      fs::path p = dir / (h->id() + ".png");
      write_file(p, std::string(png.begin(), png.end()));
      std::cout << "wrote " << p.string() << " (" << f->width << "x" << f->height << ")\n";
      ++written;
    } else if (auto k = std::dynamic_pointer_cast<MBKMeans>(m)) {
      if (!k->initialized()) {
        std::cerr << "progrun: " << k->id() << " saw too few rows to place its centroids\n";
        continue;
      }
      fs::path p = dir / (k->id() + "_centroids.csv");
      write_centroids(p, *k);
      std::cout << "wrote " << p.string() << " (" << k->consumed() << " rows)\n";
      ++written;
    }
  }
  return written;
}

// Zombies and warnings go to stderr; returns false if any module died.
bool report(const Scheduler& s) {
  bool ok = true;
  for (const auto& m : s.modules()) {
    for (const auto& d : m->diagnostics()) std::cerr << m->id() << ": " << d << '\n';
    if (m->state() == ModuleState::zombie) ok = false;
  }
  return ok;
}

int execute(Scheduler& s, const RunOptions& o) {
  if (o.quantum > 0)
    for (const auto& m : s.modules()) m->params().set_quantum(o.quantum);

  if (o.headless) {
    auto t0 = std::chrono::steady_clock::now();
    s.run_until_quiescent();
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "quiescent after " << s.run_number() << " runs in " << secs << " s\n";
    bool ok = report(s);
    write_outputs(s, o.out);
    return ok ? 0 : 1;
  }

  Server server(s, o.port, o.host);
  server.start();
  s.start();
  std::cout << "serving on http://" << o.host << ":" << server.port() << "/" << std::endl;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  s.stop();
  server.stop();
  report(s);
  return 0;
}

void add_run_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--port", o.port, "HTTP port (default $PROGRUN_PORT or 8080)");
  cmd->add_option("--host", o.host, "address to listen on");
  cmd->add_option("--quantum", o.quantum, "time quantum in seconds for every module")->check(CLI::PositiveNumber);
  cmd->add_flag("--headless", o.headless, "run to completion and write outputs instead of serving");
  cmd->add_option("--out", o.out, "output directory for --headless");
}

void require_matches(const std::string& pattern) {
  if (expand_glob(pattern).empty()) throw ConfigError("no file matches '" + pattern + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Progressive analytics pipelines"};
  app.require_subcommand(1);

  RunOptions opts;
  std::string config;
  auto* run = app.add_subcommand("run", "build a pipeline from a JSON config");
  run->add_option("config", config, "pipeline config (JSON)")->required();
  add_run_options(run, opts);

  auto* demo = app.add_subcommand("demo", "built-in example pipelines");
  demo->require_subcommand(1);

  std::string heat_glob, x_col, y_col;
  std::int64_t bins = 512;
  auto* heat = demo->add_subcommand("heatmap", "csv -> min, max -> histogram2d -> heatmap");
  heat->add_option("glob", heat_glob, "CSV file or glob")->required();
  heat->add_option("--x", x_col, "x column")->required();
  heat->add_option("--y", y_col, "y column")->required();
  heat->add_option("--bins", bins, "bins per axis")->check(CLI::PositiveNumber);
  add_run_options(heat, opts);

  std::string km_csv;
  std::int64_t k = 0;
  std::uint64_t seed = 0;
  auto* kmeans = demo->add_subcommand("kmeans", "csv -> mini-batch k-means");
  kmeans->add_option("csv", km_csv, "CSV file or glob")->required();
  kmeans->add_option("--k", k, "number of clusters")->required()->check(CLI::PositiveNumber);
  kmeans->add_option("--seed", seed, "seeding RNG seed");
  add_run_options(kmeans, opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    Scheduler s;
    if (*run) {
      load_pipeline(s, config);
    } else if (*heat) {
      require_matches(heat_glob);
      build_heatmap_pipeline(s, heat_glob, x_col, y_col, bins);
    } else {
      require_matches(km_csv);
      build_kmeans_pipeline(s, km_csv, k, seed);
    }
    return execute(s, opts);
  } catch (const ConfigError& e) {
    std::cerr << "progrun: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "progrun: " << e.what() << '\n';
    return 1;
  }
}
