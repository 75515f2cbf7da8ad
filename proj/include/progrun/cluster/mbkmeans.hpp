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
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "progrun/module.hpp"

namespace progrun {

// Row-major point set: point i is data[i*dim .. i*dim+dim).
struct PointSet {
  std::size_t dim = 0;
  std::vector<double> data;

  std::size_t size() const { return dim ? data.size() / dim : 0; }
  const double* operator[](std::size_t i) const { return data.data() + i * dim; }
};

inline double squared_distance(const double* a, const double* b, std::size_t dim) {
  double s = 0;
  for (std::size_t j = 0; j < dim; ++j) {
    double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

// Index of the nearest centroid; the lowest index wins ties.
inline std::size_t nearest_centroid(const double* x, const std::vector<double>& centroids, std::size_t dim) {
  std::size_t k = centroids.size() / dim;
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    double d = squared_distance(x, centroids.data() + c * dim, dim);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

// k-means++ seeding over `points` (needs at least k points).
inline std::vector<double> kmeans_plus_plus(const PointSet& points, std::size_t k, std::mt19937_64& rng) {
  const std::size_t n = points.size(), dim = points.dim;
  if (n < k || k == 0) throw std::invalid_argument("kmeans++: need at least k points");
  std::vector<double> centers;
  centers.reserve(k * dim);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t first = pick(rng);
  centers.insert(centers.end(), points[first], points[first] + dim);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    const double* last = centers.data() + (c - 1) * dim;
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points[i], last, dim));
      sum += d2[i];
    }
    std::size_t chosen;
    if (sum > 0) {
      double r = std::uniform_real_distribution<double>(0.0, sum)(rng);
      chosen = n - 1;
      double acc = 0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (r < acc) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = pick(rng);
    }
    centers.insert(centers.end(), points[chosen], points[chosen] + dim);
  }
  return centers;
}

// One mini-batch update: every point is assigned with the centroids as they
// were at batch start, then each centroid moves toward its points with
// learning rate 1/count.
inline void minibatch_update(std::vector<double>& centroids, std::vector<std::int64_t>& counts,
                             const double* batch, std::size_t n, std::size_t dim) {
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = nearest_centroid(batch + i * dim, centroids, dim);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = labels[i];
    ++counts[c];
    double eta = 1.0 / static_cast<double>(counts[c]);
    double* cen = centroids.data() + c * dim;
    const double* x = batch + i * dim;
    for (std::size_t j = 0; j < dim; ++j) cen[j] = (1.0 - eta) * cen[j] + eta * x[j];
  }
}

// Steerable mini-batch k-means over the numeric columns of `df` (or the
// comma-separated `columns` parameter). Output `df` holds k centroid rows,
// ids 0..k-1.
//
// from_input({"<index>": [coords...]}) overwrites centroids, zeroes the
// counts and restarts from the first row with those centroids.
// Upstream updates and deletions are absorbed.
class MBKMeans : public Module {
 public:
  explicit MBKMeans(std::int64_t k, std::int64_t batch_size = 100, std::uint64_t seed = 0) : Module("mb_kmeans") {
    declare_input("df", true);
    declare_output("df");
    params().set("k", k);
    params().set("batch_size", batch_size);
    params().set("seed", static_cast<std::int64_t>(seed));
    params().set("columns", std::string());
    check_params();
  }

  bool is_input() const override { return true; }

  bool initialized() const { return !centroids_.empty(); }
  std::size_t dim() const { return columns_.size(); }
  const std::vector<std::string>& columns() const { return columns_; }
  const std::vector<double>& centroids() const { return centroids_; }
  const std::vector<std::int64_t>& counts() const { return counts_; }
  // Centroids the current pass started from.
  const std::vector<double>& initial_centroids() const { return initial_; }
  std::int64_t consumed() const { return consumed_; }

  std::vector<std::size_t> labels(const PointSet& rows) const {
    if (!initialized()) throw std::logic_error("mb_kmeans: centroids not initialized");
    if (rows.dim != dim()) throw std::invalid_argument("mb_kmeans: dimension mismatch");
    std::vector<std::size_t> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = nearest_centroid(rows[i], centroids_, dim());
    return out;
  }

  StepResult run_step(RunNumber run, std::int64_t step_size, double) override {
    InputSlot& df = input("df");
    df.update(run);
    df.tracker().take_updated();
    df.tracker().take_deleted();
    const DataTable& t = df.data();
    if (columns_.empty() && !resolve_columns(t)) return {ModuleState::blocked, 0};

    const std::size_t k = static_cast<std::size_t>(params().get_int("k"));
    std::vector<RowId> ids;
    if (!initialized()) {
      if (df.tracker().pending_size() < k) return {ModuleState::blocked, 0};
      ids = df.next_created(std::max<std::int64_t>(step_size, static_cast<std::int64_t>(k)));
      PointSet x = points(t, ids);
      std::mt19937_64 rng(static_cast<std::uint64_t>(params().get_int("seed")));
      centroids_ = kmeans_plus_plus(x, k, rng);
      counts_.assign(k, 0);
      initial_ = centroids_;
      fit(x);
    } else {
      ids = df.next_created(step_size);
      if (!ids.empty()) fit(points(t, ids));
    }
    consumed_ += static_cast<std::int64_t>(ids.size());
    if (!ids.empty() || !published_) publish(run);
    return {df.next_state(), static_cast<std::int64_t>(ids.size())};
  }

 protected:
  void apply_input(const nlohmann::json& msg) override {
    if (msg.empty()) return;
    const std::size_t k = static_cast<std::size_t>(params().get_int("k"));
    if (!initialized() && msg.size() != k) throw InputError("mb_kmeans: centroids not initialized");
    if (columns_.empty()) {
      if (!resolve_columns(input("df").data())) throw InputError("mb_kmeans: input schema unknown");
    }
    std::vector<std::pair<std::size_t, std::vector<double>>> edits;
    for (const auto& [key, v] : msg.items()) {
      std::size_t idx = 0;
      try {
        std::size_t used = 0;
        long long i = std::stoll(key, &used);
        if (used != key.size() || i < 0 || static_cast<std::size_t>(i) >= k) throw std::out_of_range(key);
        idx = static_cast<std::size_t>(i);
      } catch (const std::exception&) {
        throw InputError("mb_kmeans: bad centroid index '" + key + "'");
      }
      if (!v.is_array() || v.size() != dim()) throw InputError("mb_kmeans: centroid " + key + " has wrong dimension");
      std::vector<double> c;
      for (const auto& x : v) {
        if (!x.is_number()) throw InputError("mb_kmeans: centroid " + key + " has non-numeric coordinate");
        c.push_back(x.get<double>());
        if (!std::isfinite(c.back())) throw InputError("mb_kmeans: centroid " + key + " is not finite");
      }
      edits.emplace_back(idx, std::move(c));
    }
    if (!initialized()) centroids_.assign(k * dim(), 0.0);
    for (auto& [idx, c] : edits) std::copy(c.begin(), c.end(), centroids_.begin() + static_cast<std::ptrdiff_t>(idx * dim()));
    counts_.assign(k, 0);
    initial_ = centroids_;
    consumed_ = 0;
    input("df").reset();
    RunNumber run = touch();
    publish(run);
  }

  void describe(nlohmann::json& j) const override {
    j["columns"] = columns_;
    j["centroids"] = centroids_;
    j["counts"] = counts_;
    j["consumed"] = consumed_;
  }

  void on_params_changed() override { check_params(); }

 private:
  void check_params() const {
    if (params().get_int("k") < 1) throw std::invalid_argument("mb_kmeans: k must be >= 1");
    if (params().get_int("batch_size") < 1) throw std::invalid_argument("mb_kmeans: batch_size must be >= 1");
  }

  bool resolve_columns(const DataTable& t) {
    const std::string& spec = params().get_string("columns");
    std::vector<std::string> cols;
    if (spec.empty()) {
      for (const auto& [name, type] : t.schema())
        if (is_numeric(type)) cols.push_back(name);
    } else {
      std::stringstream ss(spec);
      std::string c;
      while (std::getline(ss, c, ','))
        if (!c.empty()) cols.push_back(c);
      for (const auto& c2 : cols)
        if (!t.has_column(c2)) return false;
    }
    if (cols.empty()) return false;
    columns_ = std::move(cols);
    return true;
  }

  PointSet points(const DataTable& t, const std::vector<RowId>& ids) const {
    PointSet x;
    x.dim = columns_.size();
    std::vector<std::size_t> cidx;
    for (const auto& c : columns_) cidx.push_back(*t.column_index(c));
    std::vector<std::size_t> pos = positions_of(t, ids);
    x.data.reserve(pos.size() * x.dim);
    for (std::size_t p : pos)
      for (std::size_t c : cidx) x.data.push_back(t.numeric(c, p));
    return x;
  }

  void fit(const PointSet& x) {
    const std::size_t b = static_cast<std::size_t>(params().get_int("batch_size"));
    for (std::size_t start = 0; start < x.size(); start += b) {
      std::size_t n = std::min(b, x.size() - start);
      minibatch_update(centroids_, counts_, x[start], n, x.dim);
    }
  }

  void publish(RunNumber run) {
    DataTable& out = output_table("df");
    const std::size_t k = centroids_.size() / dim();
    for (const auto& c : columns_)
      if (!out.has_column(c)) out.add_column(c, ColumnType::float64, run);
    NamedColumns cols;
    for (std::size_t j = 0; j < dim(); ++j) {
      std::vector<double> v(k);
      for (std::size_t c = 0; c < k; ++c) v[c] = centroids_[c * dim() + j];
      cols.emplace_back(columns_[j], std::move(v));
    }
    if (out.empty()) {
      out.append(cols, run);
    } else {
      std::vector<RowId> ids(out.row_ids().begin(), out.row_ids().end());
      out.update_rows(ids, cols, run);
    }
    published_ = true;
  }

  std::vector<std::string> columns_;
  std::vector<double> centroids_;
  std::vector<double> initial_;
  std::vector<std::int64_t> counts_;
  std::int64_t consumed_ = 0;
  bool published_ = false;
};

}  // namespace progrun
