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

#include <algorithm>
#include <random>
#include <set>

#include "change_scripts.hpp"
#include "progrun/table.hpp"

using namespace progrun;

namespace {

DataTable xy() { return DataTable({{"x", ColumnType::float64}, {"n", ColumnType::int64}}); }

std::vector<Column> rows(std::vector<double> x, std::vector<std::int64_t> n) { return {x, n}; }

}  // namespace

TEST_CASE("append of zero rows leaves the table alone", "[table]") {
  DataTable t = xy();
  auto ids = t.append(rows({}, {}), 3);
  CHECK(ids.empty());
  CHECK(t.size() == 0);
  CHECK(t.last_run() == 0);
}

TEST_CASE("append hands out dense ascending ids", "[table]") {
  DataTable t = xy();
  auto ids = t.append(rows({1, 2, 3}, {1, 2, 3}), 7);
  CHECK(ids == std::vector<RowId>{0, 1, 2});
  for (RunNumber u : t.update_column()) CHECK(u == 7);

  DataTable u = xy();
  RowId counter = 0;
  for (std::size_t n : {5u, 2u}) {
    std::vector<double> x(n, 0.0);
    std::vector<std::int64_t> k(n, 0);
    auto got = u.append(rows(x, k), 1);
    std::vector<RowId> want(n);
    for (auto& w : want) w = counter++;
    CHECK(got == want);
  }
}

TEST_CASE("append rejects schema mismatches", "[table]") {
  DataTable t = xy();
  CHECK_THROWS_AS(t.append(std::vector<Column>{std::vector<double>{1.0}}, 1), TableError);
  CHECK_THROWS_AS(t.append(std::vector<Column>{std::vector<double>{1.0}, std::vector<double>{1.0}}, 1), TableError);
  CHECK_THROWS_AS(t.append(rows({1.0, 2.0}, {1}), 1), TableError);
  t.append(rows({1}, {1}), 5);
  CHECK_THROWS_AS(t.append(rows({1}, {1}), 4), TableError);  // run going backwards
}

TEST_CASE("update_rows stamps only the touched rows", "[table]") {
  DataTable t = xy();
  t.append(rows({1, 2, 3}, {1, 2, 3}), 1);
  t.update_rows(std::vector<RowId>{}, NamedColumns{}, 5);
  CHECK(t.last_run() == 1);
  t.update_rows(std::vector<RowId>{2}, NamedColumns{{"x", std::vector<double>{9.5}}}, 9);
  CHECK(t.update_column()[0] == 1);
  CHECK(t.update_column()[1] == 1);
  CHECK(t.update_column()[2] == 9);
  CHECK(t.values<double>("x")[2] == 9.5);
  CHECK(t.values<std::int64_t>("n")[2] == 3);

  CHECK_THROWS_AS(t.update_rows(std::vector<RowId>{7}, NamedColumns{{"x", std::vector<double>{1}}}, 10), TableError);
  CHECK_THROWS_AS(t.update_rows(std::vector<RowId>{0}, NamedColumns{{"x", std::vector<std::int64_t>{1}}}, 10),
                  TableError);
  CHECK(t.last_run() == 9);  // rejected atomically
}

TEST_CASE("delete_rows logs the deletion", "[table]") {
  DataTable t = xy();
  t.append(rows({1, 2, 3}, {1, 2, 3}), 1);
  t.delete_rows(std::vector<RowId>{}, 3);
  CHECK(t.size() == 3);
  t.delete_rows(std::vector<RowId>{1}, 4);
  CHECK(t.size() == 2);
  REQUIRE(t.deletion_log().size() == 1);
  CHECK(t.deletion_log()[0].id == 1);
  CHECK(t.deletion_log()[0].run == 4);
  CHECK(t.values<double>("x")[1] == 3.0);
  CHECK_THROWS_AS(t.delete_rows(std::vector<RowId>{1}, 5), TableError);
}

TEST_CASE("random deletions leave the set difference", "[table][property]") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    DataTable t = xy();
    std::size_t n = 1 + rng() % 60;
    t.append(rows(std::vector<double>(n, 1.0), std::vector<std::int64_t>(n, 1)), 1);
    std::set<RowId> expect;
    for (std::size_t i = 0; i < n; ++i) expect.insert(static_cast<RowId>(i));
    RunNumber run = 1;
    for (int round = 0; round < 5; ++round) {
      std::vector<RowId> doomed;
      for (RowId id : expect)
        if (rng() % 4 == 0) doomed.push_back(id);
      t.delete_rows(doomed, ++run);
      for (RowId id : doomed) expect.erase(id);
    }
    CHECK(std::vector<RowId>(t.row_ids().begin(), t.row_ids().end()) == std::vector<RowId>(expect.begin(), expect.end()));
  }
}

TEST_CASE("interleaved appends and updates replay to the same table", "[table][property]") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    DataTable t = xy();
    std::vector<std::pair<double, RunNumber>> model;  // index = id
    RunNumber run = 0;
    for (int op = 0; op < 40; ++op) {
      ++run;
      if (model.empty() || rng() % 2) {
        double v = static_cast<double>(rng() % 100);
        t.append(rows({v}, {0}), run);
        model.emplace_back(v, run);
      } else {
        RowId id = static_cast<RowId>(rng() % model.size());
        double v = static_cast<double>(rng() % 100);
        t.update_cell(id, "x", Cell(v), run);
        model[static_cast<std::size_t>(id)] = {v, run};
      }
    }
    REQUIRE(t.size() == model.size());
    for (std::size_t i = 0; i < model.size(); ++i) {
      CHECK(t.values<double>("x")[i] == model[i].first);
      CHECK(t.update_column()[i] == model[i].second);
    }
  }
}

TEST_CASE("changes_between basic windows", "[table]") {
  DataTable t = xy();
  CHECK(t.changes_between(3, 3).empty());
  t.append(rows({1, 2, 3}, {1, 2, 3}), 2);
  ChangeSet cs = t.changes_between(0, 2);
  CHECK(cs.created == std::vector<RowId>{0, 1, 2});
  CHECK(cs.updated.empty());
  CHECK(cs.deleted.empty());

  // created then deleted inside the window: reported nowhere
  t.append(rows({4}, {4}), 3);
  t.delete_rows(std::vector<RowId>{3}, 4);
  cs = t.changes_between(2, 4);
  CHECK(cs.empty());

  t.update_cell(0, "x", Cell(0.5), 5);
  t.delete_rows(std::vector<RowId>{0}, 6);
  cs = t.changes_between(4, 6);
  CHECK(cs.deleted == std::vector<RowId>{0});
  CHECK(cs.updated.empty());
}

TEST_CASE("truncate starts a new epoch", "[table]") {
  DataTable t = xy();
  t.append(rows({1, 2}, {1, 2}), 1);
  auto e = t.epoch();
  t.truncate(2);
  CHECK(t.size() == 0);
  CHECK(t.epoch() == e + 1);
  CHECK(t.append(rows({1}, {1}), 3) == std::vector<RowId>{0});
}

TEST_CASE("add_column fills existing rows", "[table]") {
  DataTable t = xy();
  t.append(rows({1}, {1}), 1);
  t.add_column("s", ColumnType::utf8, 2);
  t.add_column("f", ColumnType::float64, 2);
  CHECK(t.values<std::string>("s")[0].empty());
  CHECK(std::isnan(t.values<double>("f")[0]));
  CHECK_THROWS_AS(t.add_column("s", ColumnType::utf8, 2), TableError);
  CHECK_THROWS_AS(t.add_column("_update", ColumnType::int64, 2), TableError);
}

TEST_CASE("to_json slices and paginates", "[table]") {
  DataTable t = xy();
  t.append(rows({1, 2, 3, std::nan("")}, {1, 2, 3, 4}), 1);
  auto j = t.to_json(1, 2);
  CHECK(j["total"] == 4);
  CHECK(j["offset"] == 1);
  CHECK(j["row_ids"] == nlohmann::json::array({1, 2}));
  CHECK(j["columns"]["x"] == nlohmann::json::array({2.0, 3.0}));
  CHECK(j["columns"]["_update"] == nlohmann::json::array({1, 1}));
  CHECK(t.to_json(3)["columns"]["x"][0].is_null());
  CHECK(t.to_json(10)["row_ids"].empty());
}

TEST_CASE("changes_between matches snapshot diffs on random scripts", "[table][property]") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    INFO("seed " << seed);
    CHECK(progrun::testing::run_change_script(seed, false) == "");
  }
}
