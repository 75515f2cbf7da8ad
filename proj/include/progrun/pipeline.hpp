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

#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "progrun/cluster/mbkmeans.hpp"
#include "progrun/io/csv.hpp"
#include "progrun/query/range_query.hpp"
#include "progrun/query/select.hpp"
#include "progrun/query/select_delta.hpp"
#include "progrun/query/variable.hpp"
#include "progrun/scheduler.hpp"
#include "progrun/stats/extrema.hpp"
#include "progrun/stats/histogram2d.hpp"
#include "progrun/vis/heatmap.hpp"
#include "progrun/vis/scatterplot.hpp"

namespace progrun {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using ModuleFactory = std::function<std::shared_ptr<Module>(const nlohmann::json& params)>;

namespace detail {

inline std::string required_string(const nlohmann::json& p, const char* key, const char* type) {
  if (!p.contains(key) || !p[key].is_string())
    throw ConfigError(std::string(type) + ": parameter '" + key + "' (string) is required");
  return p[key].get<std::string>();
}

// Parameters not consumed by the constructor.
inline nlohmann::json without(nlohmann::json p, std::initializer_list<const char*> keys) {
  for (const char* k : keys) p.erase(k);
  return p;
}

}  // namespace detail

// Module types known to pipeline configs, by type name.
inline const std::map<std::string, ModuleFactory>& module_factories() {
  using nlohmann::json;
  static const std::map<std::string, ModuleFactory> registry = {
      {"csv_loader",
       [](const json& p) -> std::shared_ptr<Module> {
         CsvOptions o;
         o.header = p.value("header", true);
         std::string d = p.value("delimiter", std::string(","));
         if (d.size() != 1) throw ConfigError("csv_loader: delimiter must be one character");
         o.delimiter = d[0];
         std::string m = p.value("malformed", std::string("skip"));
         if (m != "skip" && m != "fail") throw ConfigError("csv_loader: malformed must be skip or fail");
         o.fail_on_malformed = m == "fail";
         o.sniff_rows = p.value("sniff_rows", std::size_t{1024});
         auto mod = std::make_shared<CsvLoader>(detail::required_string(p, "filename", "csv_loader"), o);
         mod->configure(detail::without(p, {"filename", "header", "delimiter", "malformed", "sniff_rows"}));
         return mod;
       }},
      {"min", [](const json& p) -> std::shared_ptr<Module> {
         auto m = std::make_shared<Min>();
         m->configure(p);
         return m;
       }},
      {"max", [](const json& p) -> std::shared_ptr<Module> {
         auto m = std::make_shared<Max>();
         m->configure(p);
         return m;
       }},
      {"histogram2d",
       [](const json& p) -> std::shared_ptr<Module> {
         auto m = std::make_shared<Histogram2D>(detail::required_string(p, "x_column", "histogram2d"),
                                                detail::required_string(p, "y_column", "histogram2d"),
                                                p.value("xbins", Histogram2D::kDefaultBins),
                                                p.value("ybins", Histogram2D::kDefaultBins));
         m->configure(detail::without(p, {"x_column", "y_column", "xbins", "ybins"}));
         return m;
       }},
      {"heatmap", [](const json& p) -> std::shared_ptr<Module> {
         auto m = std::make_shared<Heatmap>();
         m->configure(p);
         return m;
       }},
      {"variable", [](const json& p) -> std::shared_ptr<Module> {
         auto m = std::make_shared<Variable>();
         m->configure(p);
         return m;
       }},
      {"range_query", [](const json& p) -> std::shared_ptr<Module> {
         auto m = std::make_shared<RangeQuery>();
         m->configure(p);
         return m;
       }},
      {"select", [](const json& p) -> std::shared_ptr<Module> {
         auto m = std::make_shared<Select>();
         m->configure(p);
         return m;
       }},
      {"select_delta",
       [](const json& p) -> std::shared_ptr<Module> {
         auto m = std::make_shared<SelectDelta>(p.value("delta", 0.0));
         m->configure(detail::without(p, {"delta"}));
         return m;
       }},
      {"mb_kmeans",
       [](const json& p) -> std::shared_ptr<Module> {
         if (!p.contains("k") || !p["k"].is_number_integer()) throw ConfigError("mb_kmeans: parameter 'k' (integer) is required");
         auto m = std::make_shared<MBKMeans>(p["k"].get<std::int64_t>(), p.value("batch_size", std::int64_t{100}),
                                             p.value("seed", std::uint64_t{0}));
         m->configure(detail::without(p, {"k", "batch_size", "seed"}));
         return m;
       }},
      {"scatter_sample",
       [](const json& p) -> std::shared_ptr<Module> {
         auto m = std::make_shared<ScatterSample>(detail::required_string(p, "x_column", "scatter_sample"),
                                                  detail::required_string(p, "y_column", "scatter_sample"),
                                                  p.value("size", ScatterSample::kDefaultSize),
                                                  p.value("seed", std::uint64_t{0}));
         m->configure(detail::without(p, {"x_column", "y_column", "size", "seed"}));
         return m;
       }},
      {"scatter_plot",
       [](const json& p) -> std::shared_ptr<Module> {
         auto m = std::make_shared<Scatterplot>(detail::required_string(p, "x_column", "scatter_plot"),
                                                detail::required_string(p, "y_column", "scatter_plot"));
         m->configure(detail::without(p, {"x_column", "y_column", "source"}));
         return m;
       }},
  };
  return registry;
}

// "module.slot" -> {module, slot}
inline std::pair<std::string, std::string> split_endpoint(const std::string& s) {
  auto dot = s.rfind('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == s.size())
    throw ConfigError("endpoint '" + s + "' is not of the form module.slot");
  return {s.substr(0, dot), s.substr(dot + 1)};
}

struct Pipeline {
  std::vector<std::shared_ptr<Module>> modules;
  std::vector<std::pair<std::string, std::string>> connections;  // "a.out" -> "b.in"
};

// Builds a graph from a config of the form
//   {"quantum": 0.5,
//    "modules": [{"id": "csv", "type": "csv_loader", "params": {...}}, ...],
//    "connections": [{"from": "csv.df", "to": "min.df"}, "csv.df -> max.df", ...]}
// A scatter_plot with params.source = "mod.slot" also gets its dependent
// modules. Throws ConfigError; modules added before the error stay
// registered.
inline Pipeline build_pipeline(Scheduler& s, const nlohmann::json& cfg) {
  if (!cfg.is_object()) throw ConfigError("config must be a JSON object");
  if (!cfg.contains("modules") || !cfg["modules"].is_array()) throw ConfigError("config needs a 'modules' array");
  std::optional<double> quantum;
  if (cfg.contains("quantum")) {
    if (!cfg["quantum"].is_number() || !(cfg["quantum"].get<double>() > 0)) throw ConfigError("quantum must be > 0");
    quantum = cfg["quantum"].get<double>();
  }
  Pipeline out;
  std::vector<std::pair<std::shared_ptr<Scatterplot>, std::string>> plots;
  const auto& factories = module_factories();
  for (const auto& m : cfg["modules"]) {
    if (!m.is_object() || !m.contains("type") || !m["type"].is_string())
      throw ConfigError("each module needs a string 'type'");
    std::string type = m["type"];
    auto f = factories.find(type);
    if (f == factories.end()) throw ConfigError("unknown module type '" + type + "'");
    nlohmann::json params = m.value("params", nlohmann::json::object());
    if (!params.is_object()) throw ConfigError(type + ": params must be an object");
    std::shared_ptr<Module> mod;
    try {
      mod = f->second(params);
      if (quantum && !params.contains("quantum")) mod->params().set_quantum(*quantum);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(type + ": " + e.what());
    }
    std::string id = m.value("id", std::string());
    try {
      s.add(mod, id);
    } catch (const GraphError& e) {
      throw ConfigError(e.what());
    }
    out.modules.push_back(mod);
    if (auto plot = std::dynamic_pointer_cast<Scatterplot>(mod); plot && params.contains("source"))
      plots.emplace_back(plot, params["source"].get<std::string>());
  }

  if (cfg.contains("connections")) {
    if (!cfg["connections"].is_array()) throw ConfigError("'connections' must be an array");
    for (const auto& c : cfg["connections"]) {
      std::string from, to;
      if (c.is_string()) {
        std::string txt = c;
        auto arrow = txt.find("->");
        if (arrow == std::string::npos) throw ConfigError("connection '" + txt + "' lacks '->'");
        from = std::string(trim(std::string_view(txt).substr(0, arrow)));
        to = std::string(trim(std::string_view(txt).substr(arrow + 2)));
      } else if (c.is_object() && c.contains("from") && c.contains("to") && c["from"].is_string() &&
                 c["to"].is_string()) {
        from = c["from"];
        to = c["to"];
      } else {
        throw ConfigError("connection " + c.dump() + " must be \"a.slot -> b.slot\" or {from, to}");
      }
      std::string label = from + " -> " + to;
      try {
        auto [pm, ps] = split_endpoint(from);
        auto [cm, cs] = split_endpoint(to);
        s.connect(pm, ps, cm, cs);
      } catch (const std::exception& e) {
        throw ConfigError("bad connection '" + label + "': " + e.what());
      }
      out.connections.emplace_back(from, to);
    }
  }

  for (auto& [plot, source] : plots) {
    try {
      auto [sm, ss] = split_endpoint(source);
      auto src = s.find(sm);
      if (!src) throw ConfigError("no module '" + sm + "'");
      for (auto& m : plot->create_dependent_modules(*src, ss).all()) out.modules.push_back(m);
    } catch (const std::exception& e) {
      throw ConfigError("scatter_plot " + plot->id() + ": " + e.what());
    }
  }

  for (const auto& m : out.modules) {
    auto errors = m->validate();
    if (!errors.empty()) throw ConfigError(m->id() + ": " + errors.front());
  }
  return out;
}

inline Pipeline load_pipeline(Scheduler& s, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return build_pipeline(s, cfg);
}

// The heatmap graph: loader -> min, max -> histogram2d -> heatmap.
struct HeatmapPipeline {
  std::shared_ptr<CsvLoader> csv;
  std::shared_ptr<Min> min;
  std::shared_ptr<Max> max;
  std::shared_ptr<Histogram2D> histogram2d;
  std::shared_ptr<Heatmap> heatmap;
};

inline HeatmapPipeline build_heatmap_pipeline(Scheduler& s, const std::string& pattern, const std::string& x,
                                              const std::string& y, std::int64_t bins = Histogram2D::kDefaultBins,
                                              CsvOptions opts = {}) {
  HeatmapPipeline p;
  p.csv = s.create<CsvLoader>(pattern, opts);
  p.min = s.create<Min>();
  s.connect(*p.csv, "df", *p.min, "df");
  p.max = s.create<Max>();
  s.connect(*p.csv, "df", *p.max, "df");
  p.histogram2d = s.create<Histogram2D>(x, y, bins, bins);
  s.connect(*p.csv, "df", *p.histogram2d, "df");
  s.connect(*p.min, "df", *p.histogram2d, "min");
  s.connect(*p.max, "df", *p.histogram2d, "max");
  p.heatmap = s.create<Heatmap>();
  s.connect(*p.histogram2d, "df", *p.heatmap, "array");
  return p;
}

// The clustering graph: loader -> mb_kmeans.
struct KMeansPipeline {
  std::shared_ptr<CsvLoader> csv;
  std::shared_ptr<MBKMeans> kmeans;
};

inline KMeansPipeline build_kmeans_pipeline(Scheduler& s, const std::string& pattern, std::int64_t k,
                                            std::uint64_t seed = 0, CsvOptions opts = {}) {
  KMeansPipeline p;
  p.csv = s.create<CsvLoader>(pattern, opts);
  p.kmeans = s.create<MBKMeans>(k, 100, seed);
  s.connect(*p.csv, "df", *p.kmeans, "df");
  return p;
}

}  // namespace progrun
