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
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <random>

namespace progrun {

// Maps a time budget to a number of internal steps for one module.
//
// Until three measurements exist the predictor hands out a jittered
// calibration size in [800, 1200]. Afterwards it fits a rate (steps per
// second) by least squares through the origin over the last W sub-steps,
// minimising sum w_i (t_i - s_i / rate)^2 with recency weights w_i = 0.5^age
// so that a change in per-step cost is tracked within a few records.
class TimePredictor {
 public:
  static constexpr std::size_t kWindow = 8;
  static constexpr std::size_t kCalibrationRecords = 3;
  static constexpr std::int64_t kCalibrationMin = 800;
  static constexpr std::int64_t kCalibrationMax = 1200;
  static constexpr double kRecencyDecay = 0.5;
  static constexpr std::int64_t kOvershootFactor = 10;

  struct Sample {
    std::int64_t steps;
    double seconds;
  };

  explicit TimePredictor(std::uint64_t seed = std::random_device{}()) : rng_(seed) {}
  virtual ~TimePredictor() = default;

  std::int64_t initial_steps() {
    std::uniform_int_distribution<std::int64_t> dist(kCalibrationMin, kCalibrationMax);
    return dist(rng_);
  }

  virtual void record(std::int64_t steps_run, double seconds) {
    if (steps_run <= 0) return;
    history_.push_back({steps_run, std::max(0.0, seconds)});
    if (history_.size() > kWindow) history_.pop_front();
    refit();
  }

  virtual std::int64_t predict(double budget_seconds) {
    if (!calibrated()) return initial_steps();
    std::int64_t cap = kOvershootFactor * max_steps();
    double want = rate_ * std::max(0.0, budget_seconds);
    std::int64_t steps = !std::isfinite(want) || want >= static_cast<double>(cap)
                             ? cap
                             : static_cast<std::int64_t>(std::floor(want));
    return std::max<std::int64_t>(steps, 1);
  }

  bool calibrated() const { return history_.size() >= kCalibrationRecords; }

  // Steps per second; +inf when every recorded duration was zero, 0 before
  // the first record.
  double rate() const { return rate_; }
  std::size_t history_size() const { return history_.size(); }
  const std::deque<Sample>& history() const { return history_; }

  void clear() {
    history_.clear();
    rate_ = 0.0;
  }

 private:
  void refit() {
    double st = 0.0, ss = 0.0, w = 1.0;
    for (auto it = history_.rbegin(); it != history_.rend(); ++it, w *= kRecencyDecay) {
      double s = static_cast<double>(it->steps);
      st += w * s * it->seconds;
      ss += w * s * s;
    }
    rate_ = st > 0.0 ? ss / st : std::numeric_limits<double>::infinity();
  }

  std::int64_t max_steps() const {
    std::int64_t m = 1;
    for (const auto& s : history_) m = std::max(m, s.steps);
    return m;
  }

  std::mt19937_64 rng_;
  std::deque<Sample> history_;
  double rate_ = 0.0;
};

}  // namespace progrun
