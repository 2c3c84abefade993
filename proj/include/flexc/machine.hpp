// Copyright the flexc contributors.
// SPDX-License-Identifier: MIT
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flexc/config.hpp"
#include "flexc/transform.hpp"

namespace flexc::machine {

// Cycle charges per event. The gate figures put a full MPK crossing at 1.8x
// a light one and an EPT round trip at 7.6x; everything is overridable from
// a JSON file.
struct CostModel {
  int64_t plain_call = 5;
  int64_t wrpkru = 30;
  int64_t mpk_full_gate_extra = 52;
  int64_t ept_rpc_round_trip = 494;
  int64_t heap_alloc = 150;
  int64_t heap_free = 50;
  int64_t stack_alloc = 2;
  int64_t memory_access = 1;

  bool operator==(const CostModel&) const = default;

  // A light gate is two PKRU writes around a plain call; the full gate adds
  // the register save, clear and restore plus the stack switch.
  int64_t mpk_gate(bool light) const {
    return 2 * wrpkru + (light ? 0 : mpk_full_gate_extra) + plain_call;
  }
};

CostModel cost_model_from_json(const nlohmann::json& j);
nlohmann::json cost_model_to_json(const CostModel& cm);

enum class EventKind {
  Call,
  GateEnter,
  GateExit,
  RpcSend,
  RpcServe,
  Read,
  Write,
  Alloc,
  Free,
  Fault,
};

const char* to_string(EventKind k);

// One trace record. Memory events carry the qualified variable ("fn.x" for
// locals, "lib.g" for globals), the cell address and the region it fell in;
// control events carry callee and the compartments on both sides. The fault
// event reuses the memory fields for the offending access.
struct Event {
  EventKind kind = EventKind::Call;
  std::string fn;
  std::string var;
  uint64_t address = 0;
  long long value = 0;
  int from_comp = -1;
  int to_comp = -1;
  std::string region;
  int64_t cycles = 0;
  std::string note;

  bool operator==(const Event&) const = default;
};

struct Trace {
  std::vector<Event> events;
  int64_t total_cycles = 0;
  // Charge of each gate crossing (gate-enter and rpc-send events), in order.
  std::vector<int64_t> gate_latencies;
  std::optional<long long> final_return; // absent when faulted
  bool faulted = false;
  Event fault; // meaningful only when faulted

  std::string to_jsonl() const;
  std::string summary() const;
};

struct RunOptions {
  // Emulates a forged control transfer: execution starts at the entry
  // function while the permission set still holds the named compartment's
  // key, with no gate in between. The entry need not be in the default
  // compartment for such a run.
  std::optional<std::string> forge_entry_from;
  // Hard cap on interpreter nesting, to make runaway recursion fail-stop.
  int max_call_depth = 4096;
};

// Interprets an image from its entry function. Fail-stop: the first
// permission violation, illegal entry or bad indirect target records a
// fault event and ends the run. Throws BuildError("malformed-image") when
// the image still contains gate placeholders.
Trace run(const transform::Image& image, const CostModel& cm = {},
          const RunOptions& opts = {});

// Baseline: wraps the raw program in a single-compartment ungated image.
Trace run_program(const lang::Program& program, const CostModel& cm = {},
                  uint64_t stack_size = transform::kDefaultStackSize,
                  const std::string& entry = "main");

// Cycle count of one boundary crossing under `backend`, measured by running
// a two-library fixture (caller and callee in separate compartments, except
// for the plain-call baseline) and reading the gate charge off the trace.
int64_t measure_gate_latency(config::Mechanism backend, const CostModel& cm = {});

// Summed allocation and release charge for a callee holding `n_vars` shared
// stack variables under the given sharing strategy, measured off the trace
// of a two-compartment fixture.
int64_t measure_alloc_latency(config::Sharing strategy, int n_vars,
                              const CostModel& cm = {});

} // namespace flexc::machine
