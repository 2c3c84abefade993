// Copyright the flexc contributors.
// SPDX-License-Identifier: MIT
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flexc/config.hpp"
#include "flexc/violation.hpp"

namespace flexc::mspec {

// Coarse memory access privilege. U grants nothing, R/W grant read/write to
// component-owned memory, the starred forms extend the grant to all memory.
// The order is partial: U < R < R*, U < W < W*, and the R and W chains are
// incomparable with each other.
enum class Access { U, R, W, RStar, WStar };

// Coarse execution privilege, totally ordered: U (may not call) < X (may
// call component code) < X* (may call anything).
enum class Exec { U, X, XStar };

bool access_leq(Access a, Access b);
bool exec_leq(Exec a, Exec b);

const char* to_string(Access a);
const char* to_string(Exec e);

// Either a symbol name or a raw address; rules designate their subject this
// way and the execution-rule tag (SYMB/ADDR) must agree with the form.
struct Target {
  enum class Kind { Symbol, Address };
  Kind kind = Kind::Symbol;
  std::string symbol;
  uint64_t address = 0;

  static Target sym(std::string s) { return {Kind::Symbol, std::move(s), 0}; }
  static Target addr(uint64_t a) { return {Kind::Address, "", a}; }

  bool operator==(const Target&) const = default;
};

// Fine-grained memory grant: (target, basic access, size, memtype). The
// access here is basic R or W only; memtype distinguishes a raw address
// range from a named segment.
struct MemRule {
  enum class MemType { Address, Segment };

  Target target;
  Access access = Access::R;
  uint64_t size = 1;
  MemType memtype = MemType::Address;
  std::string segment; // set iff memtype == Segment

  bool operator==(const MemRule&) const = default;
};

// Fine-grained call grant or API entry: (target, SYMB|ADDR). The tag is
// implied by the target form.
struct ExecRule {
  Target target;

  bool operator==(const ExecRule&) const = default;
};

struct MemSection {
  Access coarse = Access::U;
  std::vector<MemRule> rules;

  bool operator==(const MemSection&) const = default;
};

struct CallSection {
  Exec coarse = Exec::U;
  std::vector<ExecRule> rules;

  bool operator==(const CallSection&) const = default;
};

// Memory-form [Requires] clause: co-located components may declare at most
// `coarse`, and their fine-grained memory rules must each be covered by one
// of `rules`. A section written without a modifier defaults to U (least
// privilege).
struct RequiresMem {
  Access coarse = Access::U;
  std::vector<MemRule> rules;

  bool operator==(const RequiresMem&) const = default;
};

// Call-form [Requires] clause. The modifier is genuinely optional: a clause
// without one only whitelists extra callable targets. A clause with neither
// modifier nor rules is invalid (it would not survive a serialization round
// trip and means nothing).
struct RequiresCall {
  std::optional<Exec> coarse;
  std::vector<ExecRule> rules;

  bool operator==(const RequiresCall&) const = default;
};

// Per-component safety contract. Absent memory/call sections mean coarse U
// with no rules; api lists the entry points other components may call;
// requires_* state preconditions on whatever shares a compartment with this
// component.
struct ComponentSpec {
  std::string name;
  std::optional<MemSection> memory;
  std::optional<CallSection> call;
  std::vector<ExecRule> api;
  std::optional<RequiresMem> requires_mem;
  std::vector<RequiresCall> requires_call;

  bool operator==(const ComponentSpec&) const = default;

  Access coarse_memory() const { return memory ? memory->coarse : Access::U; }
  Exec coarse_call() const { return call ? call->coarse : Exec::U; }
};

using SpecSet = std::vector<ComponentSpec>;

const ComponentSpec* find_spec(const SpecSet& specs, const std::string& name);

// Parses component blocks:
//
//   component lwip {
//     [Memory Access] R {
//       (netbuf, W, 4096, SEG:shbufs)
//     }
//     [API] {
//       (lwip_recv, SYMB)
//     }
//     [Requires] R { }
//   }
//
// Tuples are comma-separated inside braces; `#` starts a line comment.
// An ambiguous [Requires] section is classified by rule arity (memory rules
// are 4-tuples, call rules pairs); with no rules, `[Requires] U { }` is the
// call form ("co-located code may not call") and `[Requires] { }` the
// memory form with the least-privilege default.
SpecSet parse_mspec(const std::string& text);

// Canonical text form: sections in grammar order, rules one per line in
// input order. parse(serialize(s)) == s for any valid SpecSet.
std::string serialize_mspec(const SpecSet& specs);

// Checks every [Requires] clause of every component against the declared
// privileges of the components sharing its compartment under `cfg`.
// Libraries mapped without a spec produce a warning finding. The optional
// `symbol_owner` map (symbol -> owning component, derived from a program)
// enables the call-target check: a co-located component may only declare
// calls into symbols the owner exposes via [API] or its call-form
// requirements. Without ownership facts that check cannot attribute symbols
// and stays quiet.
std::vector<Violation>
check_requires(const SpecSet& specs, const config::ImageConfig& cfg,
               const std::map<std::string, std::string>* symbol_owner = nullptr);

// Verifies [API] entries against real definitions: a SYMB entry must name a
// symbol owned by the declaring component. Address entries cannot be
// attributed and are skipped.
std::vector<Violation>
check_api(const SpecSet& specs, const std::map<std::string, std::string>& symbol_owner);

// Smallest compartment count that separates all conflicting component pairs,
// as a partition of the spec'd components. A pair conflicts when co-locating
// the two would produce any requires finding, in either direction. Exact
// search up to 12 components (the oracle range), greedy first-fit beyond.
// Returns nothing when no conflict-free partition fits in max_compartments.
std::optional<config::Partition> suggest_partition(const SpecSet& specs,
                                                   int max_compartments);

} // namespace flexc::mspec
