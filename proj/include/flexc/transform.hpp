// Copyright the flexc contributors.
// SPDX-License-Identifier: MIT
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flexc/config.hpp"
#include "flexc/lang.hpp"
#include "flexc/mspec.hpp"

namespace flexc::transform {

inline constexpr uint64_t kDefaultStackSize = 32768;
inline constexpr uint64_t kRegionAlign = 4096;
inline constexpr uint64_t kLayoutBase = 0x10000;
inline constexpr uint64_t kHeapSize = 65536;
inline constexpr uint64_t kSharedHeapSize = 65536;
inline constexpr uint64_t kRpcAreaSize = 4096;
inline constexpr uint64_t kCellSize = 8; // every scalar occupies one cell

enum class RegionRole { Data, Heap, Stack, DssUpper, SharedHeap, RpcArea };

const char* to_string(RegionRole r);

// One contiguous piece of the address map. `owner` is a compartment name, or
// "shared" for the shared domain. `shared_with` lists compartments that may
// access the region without owning it (the shared-domain regions name all of
// them; a shared-stack build marks the stacks the same way).
struct Region {
  std::string name;
  RegionRole role = RegionRole::Data;
  uint64_t start = 0;
  uint64_t size = 0;
  std::string owner;
  std::vector<std::string> shared_with;

  bool operator==(const Region&) const = default;
  bool contains(uint64_t addr) const { return addr >= start && addr - start < size; }
};

struct MemoryLayout {
  std::vector<Region> regions; // ordered by start address
  std::map<std::string, uint64_t> global_addr;
  // First free byte of the shared heap after statically placed shared
  // globals; the machine's shared-heap allocator starts here.
  uint64_t shared_heap_alloc_base = 0;

  bool operator==(const MemoryLayout&) const = default;

  const Region* find(uint64_t addr) const;
  const Region* by_name(const std::string& name) const;
  const Region* by_role(RegionRole role, const std::string& owner) const;
};

// A fully lowered build: rewritten code, concrete layout, and the metadata
// the machine needs (function designators, EPT legal entry points). Contains
// no gate placeholders.
struct Image {
  config::ImageConfig cfg;
  uint64_t stack_size = kDefaultStackSize;
  std::string entry;
  lang::Program program;
  MemoryLayout layout;
  std::map<std::string, int> function_ids; // dense, 1-based
  std::map<std::string, std::vector<std::string>> legal_entries; // per compartment

  bool operator==(const Image&) const = default;

  std::optional<int> compartment_of_library(const std::string& lib) const;
  std::optional<int> compartment_of_function(const std::string& fn) const;
};

// Replaces every cross-library direct call with an abstract gate placeholder
// and rewrites indirect calls whose callable set spans libraries to dispatch
// cross-library targets through synthesized wrapper functions, each wrapping
// its target in a placeholder. Same-library calls and targets are untouched;
// a program without cross-library calls comes back structurally equal.
lang::Program insert_gate_placeholders(const lang::Program& program);

// Lowers an annotated program against a concrete compartment assignment:
// placeholders become plain calls (same compartment) or backend gates,
// indirect dispatch collapses wrappers whose boundary vanished, shared stack
// variables are rewritten per the sharing strategy, and the address map is
// packed. `specs`, when given, contributes declared API entries to the EPT
// legal-entry lists. Throws BuildError("config-invalid") for bad configs or
// stack sizes (power of two, at least 4096) and
// BuildError("unsupported-combination") for gate calls with more than
// lang::kMaxGateArgs arguments.
Image instantiate(const lang::Program& annotated, const config::ImageConfig& cfg,
                  uint64_t stack_size = kDefaultStackSize,
                  const std::string& entry = "main",
                  const mspec::SpecSet* specs = nullptr);

// Baseline image for a raw (untransformed) program: one compartment holding
// every library, plain calls, no rewrites. The reference point for the
// zero-overhead guarantee.
Image make_ungated_image(const lang::Program& program,
                         uint64_t stack_size = kDefaultStackSize,
                         const std::string& entry = "main");

// Deterministic text table of the address map, sorted by start address.
std::string layout_report(const Image& image);

nlohmann::json image_to_json(const Image& image);
Image image_from_json(const nlohmann::json& j);

} // namespace flexc::transform
