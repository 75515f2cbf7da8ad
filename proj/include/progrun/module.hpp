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
#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <nlohmann/json.hpp>

#include "progrun/change_manager.hpp"
#include "progrun/module_state.hpp"
#include "progrun/table.hpp"
#include "progrun/time_predictor.hpp"

namespace progrun {

class Module;
class Scheduler;

// Malformed or misdirected from_input message.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Wiring errors: unknown slot, cycle, doubly-fed input.
class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SlotDirection { input, output };

struct SlotDescriptor {
  std::string name;
  bool required = false;
  SlotDirection direction = SlotDirection::input;
};

using ParamValue = std::variant<double, std::int64_t, bool, std::string>;

inline nlohmann::json to_json(const ParamValue& v) {
  return std::visit([](const auto& x) { return nlohmann::json(x); }, v);
}

class Parameters {
 public:
  static constexpr double kDefaultQuantum = 1.0;

  Parameters() { values_["quantum"] = kDefaultQuantum; }

  double quantum() const { return get_double("quantum"); }
  void set_quantum(double q) { set("quantum", q); }

  bool has(const std::string& name) const { return values_.count(name) != 0; }

  // Declares or overwrites. An existing parameter keeps its type: numbers are
  // converted between double and int64, other mismatches are rejected.
  void set(const std::string& name, ParamValue value) {
    auto it = values_.find(name);
    if (it != values_.end()) value = coerce(name, it->second, std::move(value));
    if (name == "quantum" && !(std::get<double>(value) > 0.0))
      throw std::invalid_argument("quantum must be > 0");
    values_[name] = std::move(value);
  }

  const ParamValue& get(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
  }

  double get_double(const std::string& name) const {
    const ParamValue& v = get(name);
    if (auto* d = std::get_if<double>(&v)) return *d;
    if (auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
    throw std::invalid_argument("parameter '" + name + "' is not numeric");
  }

  std::int64_t get_int(const std::string& name) const {
    const ParamValue& v = get(name);
    if (auto* i = std::get_if<std::int64_t>(&v)) return *i;
    if (auto* d = std::get_if<double>(&v)) return static_cast<std::int64_t>(*d);
    throw std::invalid_argument("parameter '" + name + "' is not numeric");
  }

  bool get_bool(const std::string& name) const { return std::get<bool>(get(name)); }
  const std::string& get_string(const std::string& name) const { return std::get<std::string>(get(name)); }

  // Applies a JSON object; unknown keys are declared with the JSON type.
  void update(const nlohmann::json& obj) {
    if (!obj.is_object()) throw std::invalid_argument("parameters must be a JSON object");
    for (const auto& [k, v] : obj.items()) {
      if (v.is_boolean()) set(k, v.get<bool>());
      else if (v.is_number_integer()) set(k, v.get<std::int64_t>());
      else if (v.is_number()) set(k, v.get<double>());
      else if (v.is_string()) set(k, v.get<std::string>());
      else throw std::invalid_argument("parameter '" + k + "' has unsupported JSON type");
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [k, v] : values_) out[k] = progrun::to_json(v);
    return out;
  }

  const std::map<std::string, ParamValue>& values() const { return values_; }

 private:
  static ParamValue coerce(const std::string& name, const ParamValue& current, ParamValue value) {
    if (current.index() == value.index()) return value;
    if (std::holds_alternative<double>(current)) {
      if (auto* i = std::get_if<std::int64_t>(&value)) return static_cast<double>(*i);
    }
    if (std::holds_alternative<std::int64_t>(current)) {
      if (auto* d = std::get_if<double>(&value)) return static_cast<std::int64_t>(*d);
    }
    throw std::invalid_argument("parameter '" + name + "' type mismatch");
  }

  std::map<std::string, ParamValue> values_;
};

struct StepResult {
  ModuleState next_state = ModuleState::blocked;
  std::int64_t steps_run = 0;
};

// One activation: t_i, steps and (when measurable) m_i.
struct RunRecord {
  std::string module_id;
  RunNumber run_number = 0;
  double duration = 0.0;
  std::int64_t steps_run = 0;
  std::int64_t sub_steps = 0;
  double quantum = 0.0;
  std::optional<std::int64_t> memory_delta;
};

inline nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json j = {{"module_id", r.module_id}, {"run_number", r.run_number}, {"duration", r.duration},
                      {"steps_run", r.steps_run}, {"sub_steps", r.sub_steps},  {"quantum", r.quantum}};
  j["memory_delta"] = r.memory_delta ? nlohmann::json(*r.memory_delta) : nlohmann::json(nullptr);
  return j;
}

class OutputSlot {
 public:
  OutputSlot(SlotDescriptor d, std::shared_ptr<DataTable> t) : desc_(std::move(d)), table_(std::move(t)) {}

  const SlotDescriptor& descriptor() const { return desc_; }
  const std::string& name() const { return desc_.name; }
  DataTable& data() { return *table_; }
  const DataTable& data() const { return *table_; }
  std::shared_ptr<DataTable> table() const { return table_; }

  struct Consumer {
    Module* module;
    std::string slot;
  };
  const std::vector<Consumer>& consumers() const { return consumers_; }

 private:
  friend class Scheduler;
  SlotDescriptor desc_;
  std::shared_ptr<DataTable> table_;
  std::vector<Consumer> consumers_;
};

class InputSlot {
 public:
  explicit InputSlot(SlotDescriptor d) : desc_(std::move(d)) {}

  const SlotDescriptor& descriptor() const { return desc_; }
  const std::string& name() const { return desc_.name; }
  bool connected() const { return table_ != nullptr; }

  const DataTable& data() const {
    if (!table_) throw GraphError("input slot '" + desc_.name + "' is not connected");
    return *table_;
  }

  Module* producer() const { return producer_; }
  const std::string& producer_slot() const { return producer_slot_; }

  SlotTracker& tracker() { return tracker_; }
  const SlotTracker& tracker() const { return tracker_; }

  // Shorthands over the tracker.
  void update(RunNumber run) {
    if (table_) tracker_.update(*table_, run);
  }
  std::vector<RowId> next_created(std::int64_t n) {
    return tracker_.next_created(static_cast<std::size_t>(std::max<std::int64_t>(n, 0)));
  }
  bool has_created() const { return tracker_.has_created(); }
  bool has_updated() const { return tracker_.has_updated(); }
  bool has_deleted() const { return tracker_.has_deleted(); }
  ModuleState next_state() const { return tracker_.next_state(); }
  void reset() { tracker_.reset(); }

  bool has_unseen_changes() const { return table_ && tracker_.has_unseen_changes(*table_); }

 private:
  friend class Scheduler;
  SlotDescriptor desc_;
  std::shared_ptr<const DataTable> table_;
  Module* producer_ = nullptr;
  std::string producer_slot_;
  SlotTracker tracker_;
};

// Base class of every progressive function. Subclasses declare their slots
// and parameters in the constructor and implement run_step(); the driver
// run() slices the quantum into sub-steps sized by the time predictor.
class Module {
 public:
  using Clock = std::chrono::steady_clock;
  using TransitionObserver = std::function<void(const Module&, ModuleState, ModuleState)>;

  static constexpr int kMinSubSteps = 4;
  static constexpr std::string_view kParamsSlot = "_params";
  static constexpr std::string_view kTraceSlot = "_trace";

  explicit Module(std::string class_name) : class_name_(std::move(class_name)) {
    declare_input(std::string(kParamsSlot), false);
    declare_output(std::string(kTraceSlot),
                   std::make_shared<DataTable>(std::vector<std::pair<std::string, ColumnType>>{
                       {"run_number", ColumnType::int64},
                       {"duration", ColumnType::float64},
                       {"steps_run", ColumnType::int64},
                       {"sub_steps", ColumnType::int64},
                       {"quantum", ColumnType::float64},
                       {"predictor_rate", ColumnType::float64},
                       {"predictor_history", ColumnType::int64}}));
  }

  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  virtual ~Module() = default;

  const std::string& id() const { return id_; }
  const std::string& class_name() const { return class_name_; }
  Scheduler* scheduler() const { return scheduler_; }

  Parameters& params() { return params_; }
  const Parameters& params() const { return params_; }

  // Applies a JSON object of parameters and lets the module re-check them.
  void configure(const nlohmann::json& p) {
    std::lock_guard lock(mutex_);
    params_.update(p);
    on_params_changed();
  }

  ModuleState state() const { return state_.load(); }

  // Throws std::logic_error on a transition outside the legal set.
  void set_state(ModuleState next) {
    ModuleState prev = state_.load();
    if (prev == next) return;
    if (!is_legal_transition(prev, next))
      throw std::logic_error("illegal transition " + std::string(to_string(prev)) + " -> " +
                             std::string(to_string(next)) + " for " + id_);
    state_.store(next);
    if (transition_observer_) transition_observer_(*this, prev, next);
  }

  void set_transition_observer(TransitionObserver f) { transition_observer_ = std::move(f); }

  // Slots -------------------------------------------------------------------

  bool has_input(std::string_view name) const { return find_input(name) != nullptr; }
  bool has_output(std::string_view name) const { return find_output(name) != nullptr; }

  InputSlot& input(std::string_view name) {
    if (auto* s = find_input(name)) return *s;
    throw GraphError(id_ + ": unknown input slot '" + std::string(name) + "'");
  }
  const InputSlot& input(std::string_view name) const { return const_cast<Module*>(this)->input(name); }

  OutputSlot& output_slot(std::string_view name) {
    if (auto* s = find_output(name)) return *s;
    throw GraphError(id_ + ": unknown output slot '" + std::string(name) + "'");
  }
  const OutputSlot& output_slot(std::string_view name) const {
    return const_cast<Module*>(this)->output_slot(name);
  }

  // Output table of a slot.
  const DataTable& output(std::string_view name) const { return output_slot(name).data(); }

  const std::deque<InputSlot>& inputs() const { return inputs_; }
  const std::deque<OutputSlot>& outputs() const { return outputs_; }

  // Roles ---------------------------------------------------------------------

  virtual bool is_input() const { return false; }
  virtual bool is_visualization() const { return false; }
  virtual std::string visualization() const { return is_visualization() ? class_name_ : std::string(); }

  // Entry point for interaction messages. Rejects non-input modules and lets
  // InputError from apply_input() propagate with the module unchanged.
  void from_input(const nlohmann::json& msg) {
    if (!is_input()) throw InputError(id_ + " is not an input module");
    if (!msg.is_object()) throw InputError("input message must be a JSON object");
    std::lock_guard lock(mutex_);
    apply_input(msg);
  }

  // Lifecycle -----------------------------------------------------------------

  std::vector<std::string> validate() const {
    std::vector<std::string> errors;
    for (const auto& in : inputs_)
      if (in.descriptor().required && !in.connected())
        errors.push_back("required input " + in.name() + " unconnected");
    validate_more(errors);
    return errors;
  }

  bool is_ready() const {
    ModuleState s = state();
    if (s == ModuleState::ready) return true;
    if (s != ModuleState::blocked) return false;
    for (const auto& in : inputs_)
      if (in.has_unseen_changes()) return true;
    return poll_ready();
  }

  // Runs one activation under the current quantum. Expects is_ready().
  void run(RunNumber run_number) {
    if (state() == ModuleState::blocked) set_state(ModuleState::ready);
    set_state(ModuleState::running);
    const double quantum = effective_quantum();
    const auto start = Clock::now();
    const auto mem_before = heap_in_use();
    StepResult last;
    std::int64_t total_steps = 0;
    int sub_steps = 0;
    try {
      apply_params_slot(run_number);
      for (;;) {
        double elapsed = seconds_since(start);
        std::int64_t step_size = std::max<std::int64_t>(1, predictor_->predict(quantum / kMinSubSteps));
        auto t0 = Clock::now();
        {
          std::lock_guard lock(mutex_);
          last = run_step(run_number, step_size, std::max(0.0, quantum - elapsed));
        }
        double dt = seconds_since(t0);
        predictor_->record(last.steps_run, dt);
        ++sub_steps;
        total_steps += last.steps_run;
        if (last.next_state != ModuleState::ready || last.steps_run == 0) break;
        elapsed = seconds_since(start);
        if (elapsed >= quantum) break;
        if (sub_steps >= kMinSubSteps) {
          double rate = predictor_->rate();
          double next = predictor_->calibrated() && rate > 0.0
                            ? static_cast<double>(predictor_->predict(quantum / kMinSubSteps)) / rate
                            : dt;
          if (elapsed + next > quantum) break;
        }
      }
    } catch (const std::exception& e) {
      warn(std::string("run_step failed: ") + e.what());
      last.next_state = ModuleState::zombie;
    }

    RunRecord rec;
    rec.module_id = id_;
    rec.run_number = run_number;
    rec.duration = seconds_since(start);
    rec.steps_run = total_steps;
    rec.sub_steps = sub_steps;
    rec.quantum = quantum;
    if (mem_before && heap_in_use()) rec.memory_delta = *heap_in_use() - *mem_before;
    record_run(rec);

    ModuleState next = last.next_state;
    if (next == ModuleState::terminated) next = ModuleState::zombie;
    if (next != ModuleState::ready && next != ModuleState::blocked && next != ModuleState::zombie)
      next = ModuleState::blocked;
    set_state(next);
  }

  // Performs at most ~step_size internal steps. Called with the module lock
  // held.
  virtual StepResult run_step(RunNumber run_number, std::int64_t step_size, double howlong) = 0;

  nlohmann::json to_json(bool short_form = false) const {
    std::lock_guard lock(mutex_);
    nlohmann::json j;
    j["id"] = id_;
    j["class"] = class_name_;
    j["state"] = to_string(state());
    j["parameters"] = params_.to_json();
    j["is_input"] = is_input();
    j["visualization"] = is_visualization();
    nlohmann::json ins = nlohmann::json::array();
    for (const auto& in : inputs_) {
      nlohmann::json s = {{"name", in.name()}, {"required", in.descriptor().required},
                          {"connected", in.connected()}};
      if (in.producer()) {
        s["producer"] = in.producer()->id();
        s["producer_slot"] = in.producer_slot();
      }
      ins.push_back(std::move(s));
    }
    j["input_slots"] = std::move(ins);
    nlohmann::json outs = nlohmann::json::array();
    for (const auto& out : outputs_) {
      nlohmann::json cons = nlohmann::json::array();
      for (const auto& c : out.consumers()) cons.push_back({{"module", c.module->id()}, {"slot", c.slot}});
      outs.push_back({{"name", out.name()}, {"consumers", std::move(cons)}, {"rows", out.data().size()}});
    }
    j["output_slots"] = std::move(outs);
    j["trace_length"] = trace_.size();
    j["last_run"] = trace_.empty() ? nlohmann::json(nullptr) : progrun::to_json(trace_.back());
    j["diagnostics"] = diagnostics_;
    j["predictor"] = {{"rate", std::isfinite(predictor_->rate()) ? predictor_->rate() : -1.0},
                      {"history", predictor_->history_size()},
                      {"calibrated", predictor_->calibrated()}};
    if (!short_form) {
      nlohmann::json trace = nlohmann::json::array();
      for (const auto& r : trace_) trace.push_back(progrun::to_json(r));
      j["trace"] = std::move(trace);
      describe(j);
    }
    return j;
  }

  const std::vector<RunRecord>& trace() const { return trace_; }

  TimePredictor& predictor() { return *predictor_; }
  void set_predictor(std::unique_ptr<TimePredictor> p) { predictor_ = std::move(p); }

  double effective_quantum() const { return quantum_override_.value_or(params_.quantum()); }
  void set_quantum_override(std::optional<double> q) { quantum_override_ = q; }

  // Serialises against run_step() and from_input(); hold it while reading
  // output tables from another thread.
  std::mutex& lock() const { return mutex_; }

  void warn(std::string msg) { diagnostics_.push_back(std::move(msg)); }
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

 protected:
  InputSlot& declare_input(std::string name, bool required) {
    if (find_input(name)) throw GraphError("duplicate input slot '" + name + "'");
    return inputs_.emplace_back(SlotDescriptor{std::move(name), required, SlotDirection::input});
  }

  OutputSlot& declare_output(std::string name, std::shared_ptr<DataTable> table = std::make_shared<DataTable>()) {
    if (find_output(name)) throw GraphError("duplicate output slot '" + name + "'");
    return outputs_.emplace_back(SlotDescriptor{std::move(name), false, SlotDirection::output}, std::move(table));
  }

  DataTable& output_table(std::string_view name) { return output_slot(name).data(); }

  virtual void apply_input(const nlohmann::json&) {}
  virtual void validate_more(std::vector<std::string>&) const {}
  // Readiness for modules without data inputs (e.g. a loader waiting for files).
  virtual bool poll_ready() const { return false; }
  virtual void on_params_changed() {}
  // Adds the data payload to the long form of to_json().
  virtual void describe(nlohmann::json&) const {}

  // Claims a fresh run number from the scheduler and marks this input module
  // as touched.
  RunNumber touch() {
    if (!input_hook_) throw InputError(id_ + " is not attached to a scheduler");
    return input_hook_(*this);
  }

 private:
  friend class Scheduler;

  InputSlot* find_input(std::string_view name) {
    for (auto& s : inputs_)
      if (s.name() == name) return &s;
    return nullptr;
  }
  const InputSlot* find_input(std::string_view name) const { return const_cast<Module*>(this)->find_input(name); }
  OutputSlot* find_output(std::string_view name) {
    for (auto& s : outputs_)
      if (s.name() == name) return &s;
    return nullptr;
  }
  const OutputSlot* find_output(std::string_view name) const {
    return const_cast<Module*>(this)->find_output(name);
  }

  static double seconds_since(Clock::time_point t) {
    return std::chrono::duration<double>(Clock::now() - t).count();
  }

  static std::optional<std::int64_t> heap_in_use() {
#if defined(__GLIBC__) && (__GLIBC__ > 2 || (__GLIBC__ == 2 && __GLIBC_MINOR__ >= 33))
    return static_cast<std::int64_t>(mallinfo2().uordblks);
#else
    return std::nullopt;
#endif
  }

  void apply_params_slot(RunNumber run_number) {
    InputSlot& ps = input(kParamsSlot);
    if (!ps.connected()) return;
    ps.update(run_number);
    if (ps.next_created(1 << 30).empty() && !ps.has_updated()) return;
    ps.tracker().take_updated();
    ps.tracker().take_deleted();
    const DataTable& t = ps.data();
    if (t.empty()) return;
    std::size_t last = t.size() - 1;
    bool changed = false;
    for (std::size_t c = 0; c < t.num_columns(); ++c) {
      const std::string& name = t.column_names()[c];
      if (!params_.has(name)) continue;
      std::visit([&](auto v) { params_.set(name, ParamValue(v)); }, t.cell(c, last));
      changed = true;
    }
    if (changed) on_params_changed();
  }

  void record_run(const RunRecord& rec) {
    std::lock_guard lock(mutex_);
    trace_.push_back(rec);
    DataTable& t = output_table(kTraceSlot);
    double rate = predictor_->rate();
    t.append_row({Cell(rec.run_number), Cell(rec.duration), Cell(rec.steps_run), Cell(rec.sub_steps),
                  Cell(rec.quantum), Cell(std::isfinite(rate) ? rate : -1.0),
                  Cell(static_cast<std::int64_t>(predictor_->history_size()))},
                 std::max(rec.run_number, t.last_run()));
  }

  std::string class_name_;
  std::string id_;
  Scheduler* scheduler_ = nullptr;
  std::function<RunNumber(Module&)> input_hook_;
  Parameters params_;
  std::atomic<ModuleState> state_{ModuleState::created};
  std::deque<InputSlot> inputs_;
  std::deque<OutputSlot> outputs_;
  std::unique_ptr<TimePredictor> predictor_ = std::make_unique<TimePredictor>();
  std::optional<double> quantum_override_;
  std::vector<RunRecord> trace_;
  std::vector<std::string> diagnostics_;
  TransitionObserver transition_observer_;
  mutable std::mutex mutex_;
};

}  // namespace progrun
