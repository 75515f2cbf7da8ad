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

#include <cstdint>
#include <string_view>

namespace progrun {

enum class ModuleState : std::uint8_t { created, blocked, ready, running, zombie, terminated };

inline std::string_view to_string(ModuleState s) {
  switch (s) {
    case ModuleState::created: return "created";
    case ModuleState::blocked: return "blocked";
    case ModuleState::ready: return "ready";
    case ModuleState::running: return "running";
    case ModuleState::zombie: return "zombie";
    case ModuleState::terminated: return "terminated";
  }
  return "?";
}

// Created -> {Blocked, Ready}; Blocked <-> Ready; Ready -> Running;
// Running -> {Ready, Blocked, Zombie}; Zombie -> Terminated.
constexpr bool is_legal_transition(ModuleState from, ModuleState to) {
  using S = ModuleState;
  switch (from) {
    case S::created: return to == S::blocked || to == S::ready;
    case S::blocked: return to == S::ready;
    case S::ready: return to == S::blocked || to == S::running;
    case S::running: return to == S::ready || to == S::blocked || to == S::zombie;
    case S::zombie: return to == S::terminated;
    case S::terminated: return false;
  }
  return false;
}

}  // namespace progrun
