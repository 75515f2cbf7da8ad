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

#include <glob.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "progrun/io/byte_source.hpp"
#include "progrun/module.hpp"

namespace progrun {

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Sorted list of paths matching a shell pattern. A pattern without
// wildcards is returned as is, whether or not the file exists.
inline std::vector<std::string> expand_glob(const std::string& pattern) {
  if (pattern.find_first_of("*?[") == std::string::npos) return {pattern};
  int depth = 0;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    if (pattern[i] == '\\') {
      ++i;
    } else if (pattern[i] == '[') {
      ++depth;
    } else if (pattern[i] == ']' && depth > 0) {
      --depth;
    }
  }
  if (depth != 0) throw std::invalid_argument("invalid glob pattern '" + pattern + "': unmatched '['");
  glob_t g{};
  int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  std::vector<std::string> out;
  if (rc == 0)
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  globfree(&g);
  if (rc != 0 && rc != GLOB_NOMATCH) throw IoError("glob failed for '" + pattern + "'");
  std::sort(out.begin(), out.end());
  return out;
}

// Field parsing shared by inference and conversion. Surrounding spaces are
// ignored for numbers.
inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

inline std::optional<std::int64_t> parse_int64(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  std::int64_t v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// Empty fields read as NaN.
inline std::optional<double> parse_float64(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// int64 when every sample is integral, float64 when every sample is numeric
// (empty counts as missing), utf8 otherwise. No samples gives float64.
inline ColumnType infer_type(const std::vector<std::string_view>& samples) {
  bool all_int = true, all_num = true, any = false;
  for (std::string_view s : samples) {
    if (trim(s).empty()) {
      all_int = false;
      continue;
    }
    any = true;
    if (all_int && !parse_int64(s)) all_int = false;
    if (!all_int && !parse_float64(s)) {
      all_num = false;
      break;
    }
  }
  if (!all_num) return ColumnType::utf8;
  if (any && all_int) return ColumnType::int64;
  return ColumnType::float64;
}

// RFC 4180 record reader: quoted fields with doubled quotes, CRLF or LF.
// Blank lines are skipped.
class CsvReader {
 public:
  enum class Status { record, malformed, end };

  CsvReader(std::unique_ptr<ByteSource> src, char delimiter = ',')
      : src_(std::move(src)), delim_(delimiter), buf_(1 << 16) {}

  Status next(std::vector<std::string>& fields) {
    for (;;) {
      fields.clear();
      record_line_ = line_;
      Status s = read_record(fields);
      if (s == Status::record && fields.size() == 1 && fields[0].empty() && !quoted_) continue;
      return s;
    }
  }

  // 1-based line where the last record started.
  std::uint64_t line() const { return record_line_; }
  std::uint64_t offset() const { return src_->offset(); }

 private:
  int get() {
    if (pos_ == end_ && !fill()) return -1;
    return static_cast<unsigned char>(buf_[pos_++]);
  }
  int peek() {
    if (pos_ == end_ && !fill()) return -1;
    return static_cast<unsigned char>(buf_[pos_]);
  }
  bool fill() {
    if (eof_) return false;
    end_ = src_->read(buf_.data(), buf_.size());
    pos_ = 0;
    if (end_ == 0) eof_ = true;
    return end_ != 0;
  }

  Status read_record(std::vector<std::string>& fields) {
    std::string cur;
    bool in_quotes = false, after_quote = false, bad = false, started = false;
    quoted_ = false;
    for (;;) {
      int c = get();
      if (in_quotes) {
        if (c == -1) {
          fields.push_back(std::move(cur));
          return Status::malformed;  // unterminated quote
        }
        if (c == '"') {
          if (peek() == '"') {
            get();
            cur.push_back('"');
          } else {
            in_quotes = false;
            after_quote = true;
          }
        } else {
          if (c == '\n') ++line_;
          cur.push_back(static_cast<char>(c));
        }
        continue;
      }
      if (c == -1) {
        if (!started && fields.empty()) return Status::end;
        fields.push_back(std::move(cur));
        ++line_;
        return bad ? Status::malformed : Status::record;
      }
      started = true;
      if (c == delim_) {
        fields.push_back(std::move(cur));
        cur.clear();
        after_quote = false;
      } else if (c == '\n' || c == '\r') {
        if (c == '\r' && peek() == '\n') get();
        fields.push_back(std::move(cur));
        ++line_;
        return bad ? Status::malformed : Status::record;
      } else if (c == '"' && cur.empty() && !after_quote) {
        in_quotes = true;
        quoted_ = true;
      } else {
        if (after_quote) bad = true;  // text after a closing quote
        cur.push_back(static_cast<char>(c));
      }
    }
  }

  std::unique_ptr<ByteSource> src_;
  char delim_;
  std::vector<char> buf_;
  std::size_t pos_ = 0, end_ = 0;
  bool eof_ = false;
  bool quoted_ = false;
  std::uint64_t line_ = 1;
  std::uint64_t record_line_ = 1;
};

struct CsvOptions {
  char delimiter = ',';
  bool header = true;
  bool fail_on_malformed = false;
  std::size_t sniff_rows = 1024;
};

// Progressive CSV loader over one file or a glob of files, read in
// lexicographic order. Plain, .gz and .bz2 files are streamed.
//
// Column types are inferred once from the first `sniff_rows` records of the
// file that introduces the column. Rows that do not fit (wrong arity, cells
// not convertible) are skipped and counted, or fail the module.
class CsvLoader : public Module {
 public:
  explicit CsvLoader(std::string pattern, CsvOptions opts = {}) : Module("csv_loader"), opts_(opts) {
    declare_output("df");
    params().set("filename", std::move(pattern));
    params().set("header", opts.header);
    params().set("delimiter", std::string(1, opts.delimiter));
    params().set("malformed", std::string(opts.fail_on_malformed ? "fail" : "skip"));
    params().set("sniff_rows", static_cast<std::int64_t>(opts.sniff_rows));
    load_options();
  }

  const std::vector<std::string>& files() const { return files_; }
  std::size_t file_index() const { return file_index_; }
  std::int64_t skipped() const { return skipped_; }
  std::int64_t rows_loaded() const { return loaded_; }
  std::uint64_t byte_offset() const { return reader_ ? reader_->offset() : 0; }
  bool finished() const { return done_; }

  StepResult run_step(RunNumber run, std::int64_t step_size, double) override {
    if (files_.empty()) {
      files_ = expand_glob(params().get_string("filename"));
      if (files_.empty()) return {ModuleState::blocked, 0};
    }
    DataTable& out = output_table("df");
    Batch batch = new_batch(out);
    std::int64_t rows = 0;
    std::vector<std::string> rec;
    while (rows < step_size) {
      if (!reader_) {
        if (file_index_ >= files_.size()) {
          done_ = true;
          break;
        }
        flush(batch, out, run);
        open_file(out, run);
        batch = new_batch(out);
        continue;
      }
      CsvReader::Status st;
      if (!lookahead_.empty()) {
        st = lookahead_.front().first;
        rec = std::move(lookahead_.front().second);
        lookahead_.pop_front();
      } else {
        st = reader_->next(rec);
      }
      if (st == CsvReader::Status::end) {
        reader_.reset();
        ++file_index_;
        continue;
      }
      if (st == CsvReader::Status::malformed || !convert(rec, out, batch)) {
        malformed("malformed row near line " + std::to_string(reader_->line()));
        continue;
      }
      ++rows;
    }
    flush(batch, out, run);
    loaded_ += rows;
    if (done_) return {ModuleState::zombie, rows};
    return {ModuleState::ready, rows};
  }

 protected:
  bool poll_ready() const override { return files_.empty() && !expand_glob(params().get_string("filename")).empty(); }

  void on_params_changed() override { load_options(); }

  void describe(nlohmann::json& j) const override {
    j["files"] = files_;
    j["file_index"] = file_index_;
    j["byte_offset"] = byte_offset();
    j["skipped"] = skipped_;
    j["rows"] = loaded_;
  }

 private:
  using Batch = std::vector<Column>;

  void load_options() {
    const std::string& d = params().get_string("delimiter");
    if (d.size() != 1) throw std::invalid_argument("csv_loader: delimiter must be one character");
    opts_.delimiter = d[0];
    opts_.header = params().get_bool("header");
    const std::string& m = params().get_string("malformed");
    if (m != "skip" && m != "fail") throw std::invalid_argument("csv_loader: malformed must be skip or fail");
    opts_.fail_on_malformed = m == "fail";
    std::int64_t s = params().get_int("sniff_rows");
    if (s < 1) throw std::invalid_argument("csv_loader: sniff_rows must be >= 1");
    opts_.sniff_rows = static_cast<std::size_t>(s);
  }

  void malformed(const std::string& what) {
    std::string where = files_[file_index_] + ": " + what;
    if (opts_.fail_on_malformed) throw CsvError(where);
    ++skipped_;
  }

  void open_file(DataTable& out, RunNumber run) {
    const std::string& path = files_[file_index_];
    reader_ = std::make_unique<CsvReader>(open_source(path), opts_.delimiter);
    lookahead_.clear();

    std::vector<std::string> names;
    std::vector<std::string> rec;
    auto st = reader_->next(rec);
    if (st == CsvReader::Status::end) {
      if (!opts_.header || out.num_columns() > 0) {
        map_.clear();
        return;
      }
    } else if (opts_.header) {
      names = rec;
    } else {
      for (std::size_t i = 0; i < rec.size(); ++i) names.push_back("col" + std::to_string(i));
      lookahead_.emplace_back(st, rec);
    }
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i].empty()) names[i] = "col" + std::to_string(i);

    while (lookahead_.size() < opts_.sniff_rows) {
      std::vector<std::string> r;
      auto s = reader_->next(r);
      if (s == CsvReader::Status::end) break;
      lookahead_.emplace_back(s, std::move(r));
    }

    map_.assign(names.size(), 0);
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (auto c = out.column_index(names[i])) {
        map_[i] = *c;
        continue;
      }
      std::vector<std::string_view> samples;
      for (const auto& [s, r] : lookahead_)
        if (s == CsvReader::Status::record && r.size() == names.size()) samples.push_back(r[i]);
      ColumnType t = infer_type(samples);
      // Earlier rows need a missing-value marker.
      if (t == ColumnType::int64 && !out.empty()) t = ColumnType::float64;
      out.add_column(names[i], t, run);
      map_[i] = out.num_columns() - 1;
    }
  }

  static Batch new_batch(const DataTable& out) {
    Batch b;
    for (std::size_t c = 0; c < out.num_columns(); ++c) b.push_back(make_column(out.column_type(c)));
    return b;
  }

  // Converts one record into the batch; false leaves the batch untouched.
  bool convert(const std::vector<std::string>& rec, const DataTable& out, Batch& batch) {
    if (rec.size() != map_.size()) return false;
    cells_.assign(out.num_columns(), std::nullopt);
    for (std::size_t i = 0; i < rec.size(); ++i) {
      std::size_t c = map_[i];
      switch (out.column_type(c)) {
        case ColumnType::float64: {
          auto v = parse_float64(rec[i]);
          if (!v) return false;
          cells_[c] = *v;
          break;
        }
        case ColumnType::int64: {
          auto v = parse_int64(rec[i]);
          if (!v) return false;
          cells_[c] = *v;
          break;
        }
        case ColumnType::utf8: cells_[c] = rec[i]; break;
      }
    }
    for (std::size_t c = 0; c < batch.size(); ++c) {
      std::visit(
          [&](auto& v) {
            using T = typename std::decay_t<decltype(v)>::value_type;
            if (cells_[c]) {
              v.push_back(std::get<T>(std::move(*cells_[c])));
            } else if constexpr (std::is_same_v<T, double>) {
              v.push_back(std::numeric_limits<double>::quiet_NaN());
            } else {
              v.push_back(T{});
            }
          },
          batch[c]);
    }
    return true;
  }

  static void flush(Batch& batch, DataTable& out, RunNumber run) {
    if (batch.empty() || column_size(batch[0]) == 0) return;
    out.append(batch, run);
    for (auto& c : batch) std::visit([](auto& v) { v.clear(); }, c);
  }

  CsvOptions opts_;
  std::vector<std::string> files_;
  std::size_t file_index_ = 0;
  std::unique_ptr<CsvReader> reader_;
  std::deque<std::pair<CsvReader::Status, std::vector<std::string>>> lookahead_;
  std::vector<std::size_t> map_;
  std::vector<std::optional<Cell>> cells_;
  std::int64_t skipped_ = 0;
  std::int64_t loaded_ = 0;
  bool done_ = false;
};

}  // namespace progrun
