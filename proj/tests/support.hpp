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

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "progrun/module.hpp"
#include "progrun/scheduler.hpp"

namespace progrun::testing {

// Hands out a fixed, cycling list of step sizes and ignores measurements.
class ScriptedPredictor : public TimePredictor {
 public:
  explicit ScriptedPredictor(std::vector<std::int64_t> sizes) : TimePredictor(0), sizes_(std::move(sizes)) {}

  std::int64_t predict(double) override { return sizes_[next_++ % sizes_.size()]; }
  void record(std::int64_t, double) override {}

 private:
  std::vector<std::int64_t> sizes_;
  std::size_t next_ = 0;
};

inline std::vector<std::int64_t> random_schedule(std::mt19937_64& rng, std::size_t len, std::int64_t lo,
                                                 std::int64_t hi) {
  std::uniform_int_distribution<std::int64_t> d(lo, hi);
  std::vector<std::int64_t> out(len);
  for (auto& x : out) x = d(rng);
  return out;
}

inline void script(Module& m, std::vector<std::int64_t> sizes) {
  m.set_predictor(std::make_unique<ScriptedPredictor>(std::move(sizes)));
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("progrun_test_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

  std::string write(const std::string& name, const std::string& content) const {
    std::string p = file(name);
    std::ofstream out(p, std::ios::binary);
    out << content;
    return p;
  }

 private:
  std::filesystem::path path_;
};

// Module whose cost per step is a busy wait; useful for timing tests.
class SpinModule : public Module {
 public:
  explicit SpinModule(double seconds_per_step, std::int64_t total = -1)
      : Module("spin"), per_step_(seconds_per_step), remaining_(total) {}

  StepResult run_step(RunNumber, std::int64_t step_size, double) override {
    std::int64_t n = remaining_ < 0 ? step_size : std::min(step_size, remaining_);
    auto until = std::chrono::steady_clock::now() +
                 std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                     std::chrono::duration<double>(per_step_ * static_cast<double>(n)));
    while (std::chrono::steady_clock::now() < until) {
    }
    if (remaining_ >= 0) remaining_ -= n;
    calls_++;
    return {remaining_ == 0 ? ModuleState::blocked : ModuleState::ready, n};
  }

  int calls() const { return calls_; }
  void set_cost(double s) { per_step_ = s; }

 private:
  double per_step_;
  std::int64_t remaining_;
  int calls_ = 0;
};

}  // namespace progrun::testing
