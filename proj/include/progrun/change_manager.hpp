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
#include <deque>
#include <iterator>
#include <vector>

#include "progrun/module_state.hpp"
#include "progrun/table.hpp"

namespace progrun {

// Per-input-slot record of what the consumer has already seen of the
// producer's table: a run-number watermark, the created rows not yet handed
// out, and the updated/deleted ids observed since the last reset or take.
class SlotTracker {
 public:
  // Pulls changes in (last_run, run]. A second call with the same run is a
  // no-op. A truncated producer table counts as "everything deleted".
  void update(const DataTable& table, RunNumber run) {
    if (table.epoch() != epoch_) {
      if (last_run_ > 0 || !pending_.empty()) truncated_ = true;
      pending_.clear();
      updated_.clear();
      deleted_.clear();
      last_run_ = 0;
      epoch_ = table.epoch();
    } else if (run <= last_run_) {
      return;
    }
    ChangeSet cs = table.changes_between(last_run_, run);
    last_run_ = run;

    if (!cs.deleted.empty()) {
      erase_sorted(pending_, cs.deleted);
      erase_sorted(updated_, cs.deleted);
      merge_into(deleted_, cs.deleted);
    }
    if (!cs.updated.empty()) {
      // Undelivered rows will be read fresh; only delivered ones count.
      std::vector<RowId> seen;
      std::set_difference(cs.updated.begin(), cs.updated.end(), pending_.begin(), pending_.end(),
                          std::back_inserter(seen));
      merge_into(updated_, seen);
    }
    pending_.insert(pending_.end(), cs.created.begin(), cs.created.end());
  }

  // Removes and returns up to `step_size` created ids, in creation order.
  std::vector<RowId> next_created(std::size_t step_size) {
    std::size_t n = std::min(step_size, pending_.size());
    std::vector<RowId> out(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(n));
    pending_.erase(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(n));
    return out;
  }

  std::size_t pending_size() const { return pending_.size(); }
  const std::deque<RowId>& pending() const { return pending_; }

  bool has_created() const { return !pending_.empty(); }
  bool has_updated() const { return !updated_.empty(); }
  bool has_deleted() const { return !deleted_.empty() || truncated_; }
  // The producer truncated its table; previously delivered ids are void.
  bool truncated() const { return truncated_; }

  std::vector<RowId> take_updated() { return std::exchange(updated_, {}); }
  std::vector<RowId> take_deleted() {
    truncated_ = false;
    return std::exchange(deleted_, {});
  }

  // Forget everything: the next update() re-delivers every live row.
  void reset() {
    last_run_ = 0;
    pending_.clear();
    updated_.clear();
    deleted_.clear();
    truncated_ = false;
  }

  ModuleState next_state() const {
    return has_created() || has_updated() || has_deleted() ? ModuleState::ready : ModuleState::blocked;
  }

  // True when the table moved past what update() has seen. Buffered ids do
  // not count: a module that returned Blocked with rows pending waits for
  // new upstream activity.
  bool has_unseen_changes(const DataTable& table) const {
    return table.epoch() != epoch_ || table.last_run() > last_run_;
  }

  RunNumber last_run() const { return last_run_; }

 private:
  template <class Seq>
  static void erase_sorted(Seq& seq, const std::vector<RowId>& doomed) {
    Seq kept;
    std::set_difference(seq.begin(), seq.end(), doomed.begin(), doomed.end(), std::back_inserter(kept));
    seq = std::move(kept);
  }

  static void merge_into(std::vector<RowId>& dst, const std::vector<RowId>& src) {
    std::vector<RowId> merged;
    std::set_union(dst.begin(), dst.end(), src.begin(), src.end(), std::back_inserter(merged));
    dst = std::move(merged);
  }

  RunNumber last_run_ = 0;
  std::uint64_t epoch_ = 0;
  std::deque<RowId> pending_;
  std::vector<RowId> updated_;
  std::vector<RowId> deleted_;
  bool truncated_ = false;
};

}  // namespace progrun
