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
#include <cstddef>
#include <vector>

namespace progrun {

// Plain adjacency view of a module graph for the reachability computation.
struct DagView {
  std::vector<std::vector<std::size_t>> successors;
  std::vector<bool> is_input;
  std::vector<bool> is_visualization;

  std::size_t size() const { return successors.size(); }
};

// For every node, the sorted set of nodes reachable through one or more
// edges. Breadth-first search per node; edge weights play no role.
inline std::vector<std::vector<std::size_t>> transitive_closure(const DagView& g) {
  std::size_t n = g.size();
  std::vector<std::vector<std::size_t>> closure(n);
  std::vector<std::size_t> frontier;
  std::vector<char> seen(n);
  for (std::size_t s = 0; s < n; ++s) {
    std::fill(seen.begin(), seen.end(), 0);
    frontier.assign(g.successors[s].begin(), g.successors[s].end());
    for (std::size_t f : frontier) seen[f] = 1;
    for (std::size_t i = 0; i < frontier.size(); ++i)
      for (std::size_t nxt : g.successors[frontier[i]])
        if (!seen[nxt]) {
          seen[nxt] = 1;
          frontier.push_back(nxt);
        }
    std::sort(frontier.begin(), frontier.end());
    closure[s] = frontier;
  }
  return closure;
}

// Modules worth running when an input module is touched:
//  1. closure of every node;
//  2. nodes that neither are a visualization nor reach one are dead ends;
//  3. an input's set is its closure minus the dead ends and their closures.
// Result is indexed by node; non-input nodes get an empty set.
inline std::vector<std::vector<std::size_t>> reachability_sets(const DagView& g) {
  std::size_t n = g.size();
  auto closure = transitive_closure(g);
  std::vector<char> dead(n, 0);
  for (std::size_t m = 0; m < n; ++m) {
    bool leads = g.is_visualization[m];
    for (std::size_t r : closure[m]) leads = leads || g.is_visualization[r];
    if (!leads) {
      dead[m] = 1;
      for (std::size_t r : closure[m]) dead[r] = 1;
    }
  }
  std::vector<std::vector<std::size_t>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!g.is_input[i]) continue;
    for (std::size_t r : closure[i])
      if (!dead[r]) out[i].push_back(r);
  }
  return out;
}

}  // namespace progrun
