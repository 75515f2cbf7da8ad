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
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <shared_mutex>
#include <string>
#include <thread>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "progrun/module.hpp"
#include "progrun/reachability.hpp"

namespace progrun {

class CycleError : public GraphError {
 public:
  CycleError(const std::string& msg, std::vector<std::string> path)
      : GraphError(msg), path_(std::move(path)) {}
  const std::vector<std::string>& path() const { return path_; }

 private:
  std::vector<std::string> path_;
};

// Run number -> seconds since the scheduler was created.
struct TimeTable {
  std::vector<std::pair<RunNumber, double>> entries;
};

using ReachabilityIndex = std::map<std::string, std::set<std::string>>;

struct InteractionRound {
  std::vector<std::string> touched;
  std::vector<std::string> active;  // in execution order
  std::vector<std::string> ran;
  double quantum_each = 0.0;
  double elapsed = 0.0;
};

// Runs every module of a graph on one execution context, either the caller's
// (run_cycle(), run_until_quiescent()) or a background thread (start()).
//
// While the background thread runs, graph mutations and input messages from
// other threads go through dispatch(), which executes them on the scheduler
// thread between two activations and hands back the result.
class Scheduler {
 public:
  using Clock = std::chrono::steady_clock;
  using PublishListener = std::function<void(const std::string& module_id, RunNumber run)>;

  static constexpr double kInteractionBudget = 0.100;
  static constexpr std::chrono::milliseconds kIdlePoll{10};

  Scheduler() : epoch_(Clock::now()) {}
  Scheduler(const Scheduler&) = delete;
  Scheduler& operator=(const Scheduler&) = delete;
  ~Scheduler() {
    stop();
    std::unique_lock lock(registry_mutex_);
    for (auto& m : modules_) {
      m->scheduler_ = nullptr;
      m->input_hook_ = nullptr;
    }
  }

  // Graph ---------------------------------------------------------------------

  template <class M, class... Args>
  std::shared_ptr<M> create(Args&&... args) {
    auto m = std::make_shared<M>(std::forward<Args>(args)...);
    add(m);
    return m;
  }

  // Registers a module; an empty id becomes "<class>_<n>".
  std::string add(std::shared_ptr<Module> m, std::string id = {}) {
    return dispatch([&] {
      std::unique_lock lock(registry_mutex_);
      if (m->scheduler_) throw GraphError("module already belongs to a scheduler");
      if (!id.empty()) m->id_ = std::move(id);
      if (m->id_.empty()) {
        int& counter = id_counters_[m->class_name()];
        do m->id_ = m->class_name() + "_" + std::to_string(++counter);
        while (index_.count(m->id_));
      } else if (index_.count(m->id_)) {
        throw GraphError("duplicate module id '" + m->id_ + "'");
      }
      m->scheduler_ = this;
      m->input_hook_ = [this](Module& mod) { return for_input(mod); };
      index_[m->id_] = m;
      modules_.push_back(m);
      mark_stale();
      return m->id_;
    });
  }

  // Unregisters a module and severs its connections. Dependents lose their
  // inputs and fail validate() if those were required.
  void remove(const std::string& id) {
    dispatch([&] {
      std::unique_lock lock(registry_mutex_);
      auto it = index_.find(id);
      if (it == index_.end()) throw GraphError("no module '" + id + "'");
      std::shared_ptr<Module> m = it->second;
      for (auto& in : m->inputs_)
        if (in.producer_) detach_consumer(*in.producer_, in.producer_slot_, m.get(), in.name());
      for (auto& out : m->outputs_) {
        for (auto& c : out.consumers_) {
          InputSlot& in = c.module->input(c.slot);
          in.table_.reset();
          in.producer_ = nullptr;
          in.producer_slot_.clear();
          in.tracker_.reset();
        }
        out.consumers_.clear();
      }
      m->scheduler_ = nullptr;
      m->input_hook_ = nullptr;
      index_.erase(it);
      modules_.erase(std::find(modules_.begin(), modules_.end(), m));
      touched_.erase(id);
      mark_stale();
    });
  }

  void connect(Module& producer, std::string_view out_slot, Module& consumer, std::string_view in_slot) {
    dispatch([&] {
      std::unique_lock lock(registry_mutex_);
      if (producer.scheduler_ != this || consumer.scheduler_ != this)
        throw GraphError("both modules must be added to this scheduler before connecting");
      OutputSlot& out = producer.output_slot(out_slot);
      InputSlot& in = consumer.input(in_slot);
      if (in.connected())
        throw GraphError(consumer.id() + "." + std::string(in_slot) + " already has a producer (" +
                         in.producer_->id() + ")");
      std::vector<std::string> path;
      if (&producer == &consumer) {
        path = {producer.id()};
      } else {
        std::set<const Module*> visited;
        find_path(consumer, producer, visited, path);
      }
      if (!path.empty()) {
        std::string msg = "connect would create a cycle:";
        for (const auto& p : path) msg += " " + p + " ->";
        msg += " " + path.front();
        throw CycleError(msg, path);
      }
      in.table_ = out.table_;
      in.producer_ = &producer;
      in.producer_slot_ = std::string(out_slot);
      in.tracker_.reset();
      out.consumers_.push_back({&consumer, std::string(in_slot)});
      mark_stale();
    });
  }

  void connect(const std::string& producer, std::string_view out_slot, const std::string& consumer,
               std::string_view in_slot) {
    auto p = find(producer);
    auto c = find(consumer);
    if (!p) throw GraphError("no module '" + producer + "'");
    if (!c) throw GraphError("no module '" + consumer + "'");
    connect(*p, out_slot, *c, in_slot);
  }

  std::shared_ptr<Module> find(const std::string& id) const {
    std::shared_lock lock(registry_mutex_);
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : it->second;
  }

  std::vector<std::shared_ptr<Module>> modules() const {
    std::shared_lock lock(registry_mutex_);
    return modules_;
  }

  std::size_t size() const {
    std::shared_lock lock(registry_mutex_);
    return modules_.size();
  }

  // Ordering ------------------------------------------------------------------

  // Topological order of the dependency graph; ties keep insertion order.
  std::vector<std::string> rebuild_order() {
    std::shared_lock lock(registry_mutex_);
    rebuild_order_locked();
    std::vector<std::string> ids;
    for (Module* m : order_) ids.push_back(m->id());
    return ids;
  }

  // Round-robin queue (non-terminated modules in topological order).
  std::vector<std::string> queue() {
    std::shared_lock lock(registry_mutex_);
    if (stale_) rebuild_order_locked();
    std::vector<std::string> ids;
    for (Module* m : queue_) ids.push_back(m->id());
    return ids;
  }

  // Normal mode ---------------------------------------------------------------

  // Looks at the next queue entry and runs it if ready. Returns true when a
  // module was activated.
  bool step_normal() {
    std::shared_lock lock(registry_mutex_);
    if (stale_) rebuild_order_locked();
    if (queue_.empty()) return false;
    if (cursor_ >= queue_.size()) cursor_ = 0;
    Module* m = queue_[cursor_];
    ModuleState s = m->state();
    if (s == ModuleState::zombie || s == ModuleState::terminated) {
      if (s == ModuleState::zombie) m->set_state(ModuleState::terminated);
      queue_.erase(queue_.begin() + static_cast<std::ptrdiff_t>(cursor_));
      return false;
    }
    ++cursor_;
    if (s == ModuleState::created) {
      if (!m->validate().empty()) return false;
      m->set_state(ModuleState::ready);
    }
    if (!m->validate().empty() || !m->is_ready()) return false;
    activate(*m);
    return true;
  }

  // One pass over the queue. Returns the number of activations.
  std::size_t run_cycle() {
    std::size_t n = queue().size();
    std::size_t ran = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (step_normal()) ++ran;
      if (!touched_.empty()) {
        process_touched();
        ++ran;
      }
    }
    return ran;
  }

  // Caller-thread driver: cycles until nothing is ready. Returns the number of
  // cycles that ran something.
  std::size_t run_until_quiescent(std::size_t max_cycles = static_cast<std::size_t>(-1)) {
    std::size_t busy = 0;
    while (busy < max_cycles) {
      std::size_t ran;
      {
        std::lock_guard lock(exec_mutex_);
        ran = run_cycle();
      }
      if (ran == 0 && touched_.empty()) break;
      ++busy;
    }
    return busy;
  }

  // Interaction mode ----------------------------------------------------------

  ReachabilityIndex compute_reachability() {
    std::shared_lock lock(registry_mutex_);
    return reachability_locked();
  }

  // Runs the union of the touched modules' reachability sets once each, in
  // topological order, with quantum kInteractionBudget / n.
  InteractionRound enter_interaction(const std::set<std::string>& touched) {
    std::shared_lock lock(registry_mutex_);
    InteractionRound round;
    round.touched.assign(touched.begin(), touched.end());
    const ReachabilityIndex& reach = reachability_locked();
    std::set<std::string> active;
    for (const auto& id : touched) {
      auto it = index_.find(id);
      if (it == index_.end()) throw GraphError("no module '" + id + "'");
      if (!it->second->is_input()) throw InputError(id + " is not an input module");
      auto r = reach.find(id);
      if (r != reach.end()) active.insert(r->second.begin(), r->second.end());
    }
    if (stale_) rebuild_order_locked();
    if (active.empty()) {
      last_round_ = round;
      return round;
    }
    const auto start = Clock::now();
    interaction_.store(true);
    round.quantum_each = kInteractionBudget / static_cast<double>(active.size());
    for (Module* m : order_) {
      if (!active.count(m->id())) continue;
      round.active.push_back(m->id());
      active.erase(m->id());
      if (m->state() == ModuleState::created && m->validate().empty()) m->set_state(ModuleState::ready);
      if (!m->validate().empty() || !m->is_ready()) continue;
      m->set_quantum_override(round.quantum_each);
      activate(*m);
      m->set_quantum_override(std::nullopt);
      round.ran.push_back(m->id());
    }
    interaction_.store(false);
    round.elapsed = std::chrono::duration<double>(Clock::now() - start).count();
    last_round_ = round;
    return round;
  }

  bool is_interaction_mode() const { return interaction_.load(); }
  const InteractionRound& last_interaction() const { return last_round_; }

  // Fresh run number for an input module's change; marks it touched so the
  // next scheduling decision is an interaction round.
  RunNumber for_input(Module& m) {
    RunNumber r = next_run_number();
    touched_.insert(m.id());
    wake_.notify_all();
    return r;
  }

  // Routes a message to an input module on the scheduler context.
  void submit_input(const std::string& id, const nlohmann::json& msg) {
    auto m = find(id);
    if (!m) throw GraphError("no module '" + id + "'");
    if (!m->is_input()) throw InputError(id + " is not an input module");
    // the edit itself is a publication of the input module
    dispatch([&] {
      m->from_input(msg);
      notify(*m, run_number());
    });
  }

  // Virtual time ----------------------------------------------------------------

  RunNumber run_number() const { return run_number_.load(); }

  TimeTable time_table() const {
    std::lock_guard lock(time_mutex_);
    return time_table_;
  }

  // Background execution ------------------------------------------------------

  void start() {
    std::lock_guard lock(command_mutex_);
    if (running_) return;
    running_ = true;
    paused_ = false;
    thread_ = std::jthread([this](std::stop_token st) { loop(st); });
  }

  void stop() {
    {
      std::lock_guard lock(command_mutex_);
      if (!running_) return;
      thread_.request_stop();
    }
    wake_.notify_all();
    thread_.join();
    std::deque<std::function<void()>> leftovers;
    {
      std::lock_guard lock(command_mutex_);
      running_ = false;
      leftovers.swap(commands_);
    }
    std::lock_guard exec(exec_mutex_);
    for (auto& c : leftovers) c();
  }

  void pause() {
    paused_.store(true);
  }
  void resume() {
    paused_.store(false);
    wake_.notify_all();
  }
  bool paused() const { return paused_.load(); }

  bool running() const {
    std::lock_guard lock(command_mutex_);
    return running_;
  }

  // Runs one full cycle on the scheduler context.
  std::size_t step_once() {
    return dispatch([&] { return run_cycle(); });
  }

  // Blocks until the background loop completes a cycle that ran nothing.
  bool wait_idle(std::chrono::milliseconds timeout) {
    std::unique_lock lock(idle_mutex_);
    std::uint64_t seen = idle_generation_;
    return idle_cv_.wait_for(lock, timeout, [&] { return idle_generation_ != seen; });
  }

  // Executes f on the scheduler context and returns its result; exceptions
  // propagate to the caller.
  template <class F>
  auto dispatch(F&& f) -> std::invoke_result_t<F> {
    using R = std::invoke_result_t<F>;
    std::future<R> fut;
    {
      std::unique_lock lock(command_mutex_);
      if (!running_ || std::this_thread::get_id() == loop_thread_id_.load()) {
        lock.unlock();
        std::lock_guard exec(exec_mutex_);
        return f();
      }
      auto task = std::make_shared<std::packaged_task<R()>>(std::forward<F>(f));
      fut = task->get_future();
      commands_.push_back([task] { (*task)(); });
    }
    wake_.notify_all();
    return fut.get();
  }

  // Publication events ----------------------------------------------------------

  int add_listener(PublishListener f) {
    std::lock_guard lock(listener_mutex_);
    listeners_.emplace_back(++listener_counter_, std::move(f));
    return listener_counter_;
  }

  void remove_listener(int handle) {
    std::lock_guard lock(listener_mutex_);
    std::erase_if(listeners_, [&](const auto& p) { return p.first == handle; });
  }

  // Control-API views -------------------------------------------------------------

  nlohmann::json graph_json() const {
    std::shared_lock lock(registry_mutex_);
    nlohmann::json nodes = nlohmann::json::array();
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& m : modules_) {
      nodes.push_back({{"id", m->id()},
                       {"class", m->class_name()},
                       {"state", to_string(m->state())},
                       {"is_input", m->is_input()},
                       {"visualization", m->is_visualization()}});
      for (const auto& in : m->inputs())
        if (in.producer())
          edges.push_back({{"source", in.producer()->id()},
                           {"source_slot", in.producer_slot()},
                           {"target", m->id()},
                           {"target_slot", in.name()}});
    }
    return {{"nodes", std::move(nodes)}, {"edges", std::move(edges)}};
  }

  nlohmann::json modules_json() const {
    std::shared_lock lock(registry_mutex_);
    nlohmann::json out = nlohmann::json::array();
    for (const auto& m : modules_) out.push_back(m->to_json(true));
    return out;
  }

 private:
  void mark_stale() {
    stale_ = true;
    reach_stale_ = true;
  }

  RunNumber next_run_number() {
    RunNumber r = ++run_number_;
    std::lock_guard lock(time_mutex_);
    time_table_.entries.emplace_back(r, std::chrono::duration<double>(Clock::now() - epoch_).count());
    return r;
  }

  void activate(Module& m) {
    RunNumber r = next_run_number();
    m.run(r);
    notify(m, r);
  }

  void notify(const Module& m, RunNumber r) {
    std::vector<PublishListener> ls;
    {
      std::lock_guard lock(listener_mutex_);
      for (const auto& [h, f] : listeners_) ls.push_back(f);
    }
    for (const auto& f : ls) f(m.id(), r);
  }

  void process_touched() {
    std::set<std::string> touched;
    touched.swap(touched_);
    std::erase_if(touched, [&](const std::string& id) {
      auto it = index_.find(id);
      return it == index_.end() || !it->second->is_input();
    });
    if (!touched.empty()) enter_interaction(touched);
  }

  void drain_commands() {
    for (;;) {
      std::function<void()> cmd;
      {
        std::lock_guard lock(command_mutex_);
        if (commands_.empty()) return;
        cmd = std::move(commands_.front());
        commands_.pop_front();
      }
      cmd();
    }
  }

  void loop(std::stop_token st) {
    loop_thread_id_.store(std::this_thread::get_id());
    while (!st.stop_requested()) {
      drain_commands();
      if (!touched_.empty()) {
        process_touched();
        continue;
      }
      bool ran = false;
      if (!paused_.load()) {
        std::size_t n = queue().size();
        for (std::size_t i = 0; i < n && !st.stop_requested(); ++i) {
          ran = step_normal() || ran;
          drain_commands();
          if (!touched_.empty()) break;
        }
      }
      if (!ran && touched_.empty()) {
        {
          std::lock_guard lock(idle_mutex_);
          ++idle_generation_;
        }
        idle_cv_.notify_all();
        std::unique_lock lock(command_mutex_);
        wake_.wait_for(lock, kIdlePoll, [&] { return !commands_.empty() || st.stop_requested(); });
      }
    }
    drain_commands();
    loop_thread_id_.store(std::thread::id());
  }

  void rebuild_order_locked() {
    std::unordered_map<const Module*, std::size_t> rank;
    for (std::size_t i = 0; i < modules_.size(); ++i) rank[modules_[i].get()] = i;
    std::vector<std::size_t> indegree(modules_.size(), 0);
    for (std::size_t i = 0; i < modules_.size(); ++i)
      for (const auto& in : modules_[i]->inputs())
        if (in.producer()) ++indegree[i];
    std::set<std::size_t> ready;
    for (std::size_t i = 0; i < modules_.size(); ++i)
      if (indegree[i] == 0) ready.insert(i);
    order_.clear();
    while (!ready.empty()) {
      std::size_t i = *ready.begin();
      ready.erase(ready.begin());
      order_.push_back(modules_[i].get());
      for (const auto& out : modules_[i]->outputs())
        for (const auto& c : out.consumers()) {
          std::size_t j = rank.at(c.module);
          if (--indegree[j] == 0) ready.insert(j);
        }
    }
    queue_.clear();
    for (Module* m : order_)
      if (m->state() != ModuleState::terminated) queue_.push_back(m);
    cursor_ = 0;
    stale_ = false;
  }

  const ReachabilityIndex& reachability_locked() {
    if (!reach_stale_) return reach_;
    std::unordered_map<const Module*, std::size_t> idx;
    for (std::size_t i = 0; i < modules_.size(); ++i) idx[modules_[i].get()] = i;
    DagView g;
    g.successors.resize(modules_.size());
    for (std::size_t i = 0; i < modules_.size(); ++i) {
      g.is_input.push_back(modules_[i]->is_input());
      g.is_visualization.push_back(modules_[i]->is_visualization());
      for (const auto& out : modules_[i]->outputs())
        for (const auto& c : out.consumers()) g.successors[i].push_back(idx.at(c.module));
    }
    auto sets = reachability_sets(g);
    reach_.clear();
    for (std::size_t i = 0; i < modules_.size(); ++i) {
      if (!g.is_input[i]) continue;
      auto& s = reach_[modules_[i]->id()];
      for (std::size_t r : sets[i]) s.insert(modules_[r]->id());
    }
    reach_stale_ = false;
    return reach_;
  }

  bool find_path(const Module& from, const Module& to, std::set<const Module*>& visited,
                 std::vector<std::string>& path) const {
    if (!visited.insert(&from).second) return false;
    path.push_back(from.id());
    if (&from == &to) return true;
    for (const auto& out : from.outputs())
      for (const auto& c : out.consumers())
        if (find_path(*c.module, to, visited, path)) return true;
    path.pop_back();
    return false;
  }

  static void detach_consumer(Module& producer, const std::string& slot, Module* consumer,
                              const std::string& in_slot) {
    auto& cons = producer.output_slot(slot).consumers_;
    std::erase_if(cons, [&](const OutputSlot::Consumer& c) { return c.module == consumer && c.slot == in_slot; });
  }

  // Registry; written only on the scheduler context.
  mutable std::shared_mutex registry_mutex_;
  std::vector<std::shared_ptr<Module>> modules_;
  std::unordered_map<std::string, std::shared_ptr<Module>> index_;
  std::map<std::string, int> id_counters_;

  std::vector<Module*> order_;
  std::vector<Module*> queue_;
  std::size_t cursor_ = 0;
  bool stale_ = true;
  bool reach_stale_ = true;
  ReachabilityIndex reach_;

  std::set<std::string> touched_;
  std::atomic<bool> interaction_{false};
  InteractionRound last_round_;

  Clock::time_point epoch_;
  std::atomic<RunNumber> run_number_{0};
  mutable std::mutex time_mutex_;
  TimeTable time_table_;

  mutable std::mutex command_mutex_;
  std::condition_variable_any wake_;
  std::deque<std::function<void()>> commands_;
  bool running_ = false;
  std::atomic<bool> paused_{false};
  std::jthread thread_;
  std::atomic<std::thread::id> loop_thread_id_{};
  std::recursive_mutex exec_mutex_;

  std::mutex idle_mutex_;
  std::condition_variable idle_cv_;
  std::uint64_t idle_generation_ = 0;

  std::mutex listener_mutex_;
  std::vector<std::pair<int, PublishListener>> listeners_;
  int listener_counter_ = 0;
};

}  // namespace progrun
