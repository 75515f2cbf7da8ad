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
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace progrun {

using RunNumber = std::int64_t;
using RowId = std::int64_t;

inline constexpr std::string_view kUpdateColumn = "_update";

enum class ColumnType { float64, int64, utf8 };

inline std::string_view to_string(ColumnType t) {
  switch (t) {
    case ColumnType::float64: return "float64";
    case ColumnType::int64: return "int64";
    case ColumnType::utf8: return "utf8";
  }
  return "?";
}

// Alternative order matches ColumnType.
using Column = std::variant<std::vector<double>, std::vector<std::int64_t>,
                            std::vector<std::string>>;
using Cell = std::variant<double, std::int64_t, std::string>;
using NamedColumns = std::vector<std::pair<std::string, Column>>;

inline ColumnType type_of(const Column& c) { return static_cast<ColumnType>(c.index()); }
inline ColumnType type_of(const Cell& c) { return static_cast<ColumnType>(c.index()); }

inline std::size_t column_size(const Column& c) {
  return std::visit([](const auto& v) { return v.size(); }, c);
}

inline Column make_column(ColumnType t) {
  switch (t) {
    case ColumnType::float64: return std::vector<double>{};
    case ColumnType::int64: return std::vector<std::int64_t>{};
    case ColumnType::utf8: return std::vector<std::string>{};
  }
  return std::vector<double>{};
}

inline bool is_numeric(ColumnType t) { return t != ColumnType::utf8; }

class TableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DeletedRow {
  RowId id;
  RunNumber run;
  RunNumber created;  // run at which the row was appended
  bool operator==(const DeletedRow&) const = default;
};

// Rows touched in (low_run, high_run]. The three id lists are sorted and
// pairwise disjoint.
struct ChangeSet {
  std::vector<RowId> created;
  std::vector<RowId> updated;
  std::vector<RowId> deleted;
  RunNumber low_run = 0;
  RunNumber high_run = 0;

  bool empty() const { return created.empty() && updated.empty() && deleted.empty(); }
};

// Columnar table with run-number provenance. Row ids are handed out densely
// in ascending order and never reused within an epoch; truncate() starts a
// new epoch. Rows stay sorted by id, so positions follow creation order.
//
// Exactness of changes_between() assumes high_run >= last_run(), which is
// how slot trackers call it.
class DataTable {
 public:
  DataTable() = default;

  explicit DataTable(const std::vector<std::pair<std::string, ColumnType>>& schema) {
    for (const auto& [name, type] : schema) add_column_impl(name, type);
  }

  // Schema ---------------------------------------------------------------

  const std::vector<std::string>& column_names() const { return names_; }
  std::size_t num_columns() const { return names_.size(); }

  std::optional<std::size_t> column_index(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    return std::nullopt;
  }

  bool has_column(std::string_view name) const { return column_index(name).has_value(); }

  ColumnType column_type(std::size_t i) const { return type_of(columns_.at(i)); }
  ColumnType column_type(std::string_view name) const { return column_type(require_column(name)); }

  std::vector<std::pair<std::string, ColumnType>> schema() const {
    std::vector<std::pair<std::string, ColumnType>> out;
    for (std::size_t i = 0; i < names_.size(); ++i) out.emplace_back(names_[i], column_type(i));
    return out;
  }

  // Adds a column to a possibly non-empty table. Existing rows get NaN,
  // 0 or "" depending on the type. Does not touch `_update`.
  void add_column(const std::string& name, ColumnType type, RunNumber run) {
    check_run(run);
    add_column_impl(name, type);
    last_run_ = std::max(last_run_, run);
  }

  std::uint64_t schema_version() const { return schema_version_; }

  // Rows -----------------------------------------------------------------

  std::size_t size() const { return row_ids_.size(); }
  bool empty() const { return row_ids_.empty(); }

  std::span<const RowId> row_ids() const { return row_ids_; }
  std::span<const RunNumber> update_column() const { return update_; }
  const std::vector<DeletedRow>& deletion_log() const { return deletion_log_; }

  // Highest run number of any mutation so far.
  RunNumber last_run() const { return last_run_; }
  std::uint64_t epoch() const { return epoch_; }
  RowId next_id() const { return next_id_; }

  const Column& column(std::size_t i) const { return columns_.at(i); }
  const Column& column(std::string_view name) const { return columns_[require_column(name)]; }

  template <class T>
  std::span<const T> values(std::string_view name) const {
    const auto* v = std::get_if<std::vector<T>>(&columns_[require_column(name)]);
    if (!v) throw TableError("column '" + std::string(name) + "' has type " +
                             std::string(to_string(column_type(name))));
    return *v;
  }

  // Numeric view of a cell; utf8 cells read as NaN.
  double numeric(std::size_t col, std::size_t pos) const {
    const Column& c = columns_[col];
    if (auto* d = std::get_if<std::vector<double>>(&c)) return (*d)[pos];
    if (auto* i = std::get_if<std::vector<std::int64_t>>(&c)) return static_cast<double>((*i)[pos]);
    return std::numeric_limits<double>::quiet_NaN();
  }

  Cell cell(std::size_t col, std::size_t pos) const {
    return std::visit([pos](const auto& v) -> Cell { return v[pos]; }, columns_[col]);
  }

  std::optional<std::size_t> position_of(RowId id) const {
    auto it = std::lower_bound(row_ids_.begin(), row_ids_.end(), id);
    if (it == row_ids_.end() || *it != id) return std::nullopt;
    return static_cast<std::size_t>(it - row_ids_.begin());
  }

  bool contains(RowId id) const { return position_of(id).has_value(); }

  // Mutations ------------------------------------------------------------

  // `values` is aligned with column_names(). Returns the fresh row ids.
  std::vector<RowId> append(std::span<const Column> values, RunNumber run) {
    std::size_t n = check_batch(values);
    std::vector<RowId> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = next_id_ + static_cast<RowId>(i);
    append_impl(ids, values, run);
    return ids;
  }

  std::vector<RowId> append(const NamedColumns& values, RunNumber run) {
    return append(align(values), run);
  }

  // Appends rows under caller-chosen ids. Ids must be strictly increasing
  // and above every id issued in this epoch.
  std::vector<RowId> append_with_ids(std::span<const RowId> ids, std::span<const Column> values,
                                     RunNumber run) {
    std::size_t n = check_batch(values);
    if (ids.size() != n) throw TableError("append_with_ids: id count does not match row count");
    for (std::size_t i = 0; i < n; ++i) {
      RowId floor = i == 0 ? next_id_ : ids[i - 1] + 1;
      if (ids[i] < floor) throw TableError("append_with_ids: ids must be fresh and ascending");
    }
    std::vector<RowId> out(ids.begin(), ids.end());
    append_impl(out, values, run);
    return out;
  }

  std::vector<RowId> append_row(const std::vector<Cell>& row, RunNumber run) {
    if (row.size() != columns_.size()) throw TableError("append_row: arity mismatch");
    std::vector<Column> cols;
    cols.reserve(row.size());
    for (const Cell& c : row) {
      cols.push_back(std::visit(
          [](const auto& v) -> Column { return std::vector<std::decay_t<decltype(v)>>{v}; }, c));
    }
    return append(cols, run);
  }

  // Overwrites the named columns for `ids`; each Column in `values` holds one
  // entry per id. Rejected atomically on unknown ids or bad types.
  void update_rows(std::span<const RowId> ids, const NamedColumns& values, RunNumber run) {
    if (ids.empty()) return;
    check_run(run);
    std::vector<std::size_t> pos = positions_or_throw(ids, "update_rows");
    std::vector<std::size_t> cols;
    for (const auto& [name, col] : values) {
      std::size_t ci = require_column(name);
      if (type_of(col) != column_type(ci))
        throw TableError("update_rows: type mismatch for column '" + name + "'");
      if (column_size(col) != ids.size())
        throw TableError("update_rows: value count mismatch for column '" + name + "'");
      cols.push_back(ci);
    }
    for (std::size_t k = 0; k < cols.size(); ++k) {
      std::visit(
          [&](auto& dst) {
            using V = std::decay_t<decltype(dst)>;
            const V& src = std::get<V>(values[k].second);
            for (std::size_t i = 0; i < pos.size(); ++i) dst[pos[i]] = src[i];
          },
          columns_[cols[k]]);
    }
    mark_updated(ids, pos, run);
  }

  void update_cell(RowId id, std::string_view name, const Cell& value, RunNumber run) {
    Column c = std::visit(
        [](const auto& v) -> Column { return std::vector<std::decay_t<decltype(v)>>{v}; }, value);
    RowId ids[1] = {id};
    update_rows(ids, NamedColumns{{std::string(name), std::move(c)}}, run);
  }

  void delete_rows(std::span<const RowId> ids, RunNumber run) {
    if (ids.empty()) return;
    check_run(run);
    std::vector<std::size_t> pos = positions_or_throw(ids, "delete_rows");
    std::vector<char> doomed(row_ids_.size(), 0);
    for (std::size_t p : pos) doomed[p] = 1;
    std::vector<std::size_t> sorted_pos(pos);
    std::sort(sorted_pos.begin(), sorted_pos.end());
    sorted_pos.erase(std::unique(sorted_pos.begin(), sorted_pos.end()), sorted_pos.end());
    for (std::size_t p : sorted_pos) deletion_log_.push_back({row_ids_[p], run, created_[p]});
    auto compact = [&](auto& vec) {
      std::size_t w = 0;
      for (std::size_t r = 0; r < vec.size(); ++r)
        if (!doomed[r]) {
          if (w != r) vec[w] = std::move(vec[r]);
          ++w;
        }
      vec.resize(w);
    };
    compact(row_ids_);
    compact(update_);
    compact(created_);
    for (auto& c : columns_) std::visit(compact, c);
    last_run_ = std::max(last_run_, run);
  }

  // Drops every row and all history; ids may be reissued afterwards.
  // Consumers observe the epoch change and start over.
  void truncate(RunNumber run) {
    check_run(run);
    row_ids_.clear();
    update_.clear();
    created_.clear();
    for (auto& c : columns_) std::visit([](auto& v) { v.clear(); }, c);
    deletion_log_.clear();
    update_log_.clear();
    next_id_ = 0;
    ++epoch_;
    last_run_ = std::max(last_run_, run);
  }

  // Changes in (low, high]. A row created and deleted inside the window is
  // reported nowhere; deleted > created > updated on overlap.
  ChangeSet changes_between(RunNumber low, RunNumber high) const {
    ChangeSet cs;
    cs.low_run = low;
    cs.high_run = high;
    if (low >= high) return cs;

    // created_ is non-decreasing by position.
    auto cbeg = std::upper_bound(created_.begin(), created_.end(), low);
    auto cend = std::upper_bound(cbeg, created_.end(), high);
    for (auto it = cbeg; it != cend; ++it) cs.created.push_back(row_ids_[it - created_.begin()]);

    auto by_run = [](RunNumber r, const auto& e) { return r < e.run; };
    auto dbeg = std::upper_bound(deletion_log_.begin(), deletion_log_.end(), low, by_run);
    for (auto it = dbeg; it != deletion_log_.end() && it->run <= high; ++it)
      if (it->created <= low) cs.deleted.push_back(it->id);
    std::sort(cs.deleted.begin(), cs.deleted.end());

    auto ubeg = std::upper_bound(update_log_.begin(), update_log_.end(), low, by_run);
    for (auto it = ubeg; it != update_log_.end() && it->run <= high; ++it) {
      auto p = position_of(it->id);
      if (p && created_[*p] <= low) cs.updated.push_back(it->id);
    }
    std::sort(cs.updated.begin(), cs.updated.end());
    cs.updated.erase(std::unique(cs.updated.begin(), cs.updated.end()), cs.updated.end());
    return cs;
  }

  // Column-major JSON slice: {"columns": {name: [...]}, "row_ids": [...]}.
  nlohmann::json to_json(std::size_t offset = 0,
                         std::size_t limit = std::numeric_limits<std::size_t>::max()) const {
    std::size_t begin = std::min(offset, size());
    std::size_t end = size() - begin > limit ? begin + limit : size();
    nlohmann::json cols = nlohmann::json::object();
    for (std::size_t i = 0; i < names_.size(); ++i) {
      nlohmann::json arr = nlohmann::json::array();
      std::visit(
          [&](const auto& v) {
            for (std::size_t r = begin; r < end; ++r) {
              if constexpr (std::is_same_v<std::decay_t<decltype(v[r])>, double>) {
                if (std::isfinite(v[r])) arr.push_back(v[r]);
                else arr.push_back(nullptr);
              } else {
                arr.push_back(v[r]);
              }
            }
          },
          columns_[i]);
      cols[names_[i]] = std::move(arr);
    }
    cols[std::string(kUpdateColumn)] =
        std::vector<RunNumber>(update_.begin() + begin, update_.begin() + end);
    nlohmann::json schema = nlohmann::json::array();
    for (std::size_t i = 0; i < names_.size(); ++i)
      schema.push_back({{"name", names_[i]}, {"type", to_string(column_type(i))}});
    return {{"columns", std::move(cols)},
            {"row_ids", std::vector<RowId>(row_ids_.begin() + begin, row_ids_.begin() + end)},
            {"schema", std::move(schema)},
            {"offset", begin},
            {"total", size()}};
  }

 private:
  struct UpdateEntry {
    RowId id;
    RunNumber run;
  };

  std::size_t require_column(std::string_view name) const {
    auto i = column_index(name);
    if (!i) throw TableError("unknown column '" + std::string(name) + "'");
    return *i;
  }

  void add_column_impl(const std::string& name, ColumnType type) {
    if (name.empty() || name == kUpdateColumn)
      throw TableError("invalid column name '" + name + "'");
    if (has_column(name)) throw TableError("duplicate column '" + name + "'");
    Column c = make_column(type);
    std::size_t n = row_ids_.size();
    std::visit(
        [n](auto& v) {
          using T = typename std::decay_t<decltype(v)>::value_type;
          if constexpr (std::is_same_v<T, double>) v.assign(n, std::numeric_limits<double>::quiet_NaN());
          else v.assign(n, T{});
        },
        c);
    names_.push_back(name);
    columns_.push_back(std::move(c));
    ++schema_version_;
  }

  void check_run(RunNumber run) const {
    if (run < last_run_)
      throw TableError("run " + std::to_string(run) + " precedes table run " + std::to_string(last_run_));
  }

  std::size_t check_batch(std::span<const Column> values) const {
    if (values.size() != columns_.size())
      throw TableError("schema mismatch: expected " + std::to_string(columns_.size()) + " columns, got " +
                       std::to_string(values.size()));
    std::size_t n = values.empty() ? 0 : column_size(values[0]);
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (type_of(values[i]) != column_type(i))
        throw TableError("schema mismatch: column '" + names_[i] + "' expects " +
                         std::string(to_string(column_type(i))));
      if (column_size(values[i]) != n) throw TableError("schema mismatch: ragged columns");
    }
    return n;
  }

  std::vector<Column> align(const NamedColumns& values) const {
    if (values.size() != names_.size()) throw TableError("schema mismatch: column count");
    std::vector<Column> out(names_.size());
    std::vector<char> seen(names_.size(), 0);
    for (const auto& [name, col] : values) {
      std::size_t i = require_column(name);
      if (seen[i]) throw TableError("duplicate column '" + name + "' in batch");
      seen[i] = 1;
      out[i] = col;
    }
    return out;
  }

  void append_impl(const std::vector<RowId>& ids, std::span<const Column> values, RunNumber run) {
    if (ids.empty()) return;
    check_run(run);
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::visit(
          [&](auto& dst) {
            using V = std::decay_t<decltype(dst)>;
            const V& src = std::get<V>(values[i]);
            dst.insert(dst.end(), src.begin(), src.end());
          },
          columns_[i]);
    }
    row_ids_.insert(row_ids_.end(), ids.begin(), ids.end());
    update_.insert(update_.end(), ids.size(), run);
    created_.insert(created_.end(), ids.size(), run);
    next_id_ = ids.back() + 1;
    last_run_ = std::max(last_run_, run);
  }

  std::vector<std::size_t> positions_or_throw(std::span<const RowId> ids, const char* op) const {
    std::vector<std::size_t> pos;
    pos.reserve(ids.size());
    for (RowId id : ids) {
      auto p = position_of(id);
      if (!p) throw TableError(std::string(op) + ": unknown row id " + std::to_string(id));
      pos.push_back(*p);
    }
    return pos;
  }

  void mark_updated(std::span<const RowId> ids, const std::vector<std::size_t>& pos, RunNumber run) {
    for (std::size_t i = 0; i < pos.size(); ++i) {
      update_[pos[i]] = run;
      update_log_.push_back({ids[i], run});
    }
    last_run_ = std::max(last_run_, run);
  }

  std::vector<std::string> names_;
  std::vector<Column> columns_;
  std::vector<RowId> row_ids_;
  std::vector<RunNumber> update_;
  std::vector<RunNumber> created_;
  std::vector<DeletedRow> deletion_log_;
  std::vector<UpdateEntry> update_log_;
  RowId next_id_ = 0;
  RunNumber last_run_ = 0;
  std::uint64_t epoch_ = 0;
  std::uint64_t schema_version_ = 0;
};

// Positions of ascending ids; ids missing from the table are skipped.
inline std::vector<std::size_t> positions_of(const DataTable& t, std::span<const RowId> ids) {
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  auto all = t.row_ids();
  auto it = all.begin();
  for (RowId id : ids) {
    if (it == all.end() || *it > id) it = std::lower_bound(all.begin(), all.end(), id);
    else if (*it < id) it = std::lower_bound(it, all.end(), id);
    if (it != all.end() && *it == id) out.push_back(static_cast<std::size_t>(it - all.begin()));
  }
  return out;
}

// Copies the cells at `positions` from every column, aligned with the
// table's schema.
inline std::vector<Column> gather(const DataTable& t, std::span<const std::size_t> positions) {
  std::vector<Column> out;
  out.reserve(t.num_columns());
  for (std::size_t c = 0; c < t.num_columns(); ++c) {
    out.push_back(std::visit(
        [&](const auto& v) -> Column {
          std::decay_t<decltype(v)> dst;
          dst.reserve(positions.size());
          for (std::size_t p : positions) dst.push_back(v[p]);
          return dst;
        },
        t.column(c)));
  }
  return out;
}

}  // namespace progrun
