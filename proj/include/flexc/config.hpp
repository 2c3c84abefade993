// Copyright the flexc contributors.
// SPDX-License-Identifier: MIT
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flexc/violation.hpp"

namespace flexc::config {

// Isolation backend for a compartment boundary. Enum values double as the
// safety rank used by the exploration order: a plain function call isolates
// nothing, light MPK gates share stack and registers, full MPK gates switch
// both, EPT puts the compartment in its own address space.
enum class Mechanism {
  FuncCall = 0,
  MpkLight = 1,
  MpkDss = 2,
  Ept = 3,
};

// Closed set of supported hardening instrumentations.
enum class Hardening : unsigned {
  Cfi = 0,
  Asan,
  Ubsan,
  Kasan,
  StackProtector,
};

inline constexpr unsigned kHardeningCount = 5;

// How stack data crossing compartment boundaries is made reachable. Values
// double as the safety rank: a fully shared stack exposes everything, a data
// shadow stack exposes copies of shared slots, heap conversion moves only the
// annotated variables.
enum class Sharing {
  SharedStack = 0,
  Dss = 1,
  HeapConversion = 2,
};

// Small value-type set of Hardening flags.
class HardeningSet {
public:
  constexpr HardeningSet() = default;

  static HardeningSet all();

  void insert(Hardening h) { bits_ |= 1u << static_cast<unsigned>(h); }
  bool contains(Hardening h) const {
    return bits_ & (1u << static_cast<unsigned>(h));
  }
  bool contains_all(HardeningSet o) const { return (bits_ & o.bits_) == o.bits_; }
  HardeningSet united(HardeningSet o) const {
    HardeningSet r;
    r.bits_ = bits_ | o.bits_;
    return r;
  }
  bool empty() const { return bits_ == 0; }
  unsigned bits() const { return bits_; }

  // Names in enum order, for serialization.
  std::vector<std::string> names() const;

  bool operator==(const HardeningSet&) const = default;

private:
  unsigned bits_ = 0;
};

const char* to_string(Mechanism m);
const char* to_string(Hardening h);
const char* to_string(Sharing s);
std::optional<Mechanism> mechanism_from_name(const std::string& name);
std::optional<Hardening> hardening_from_name(const std::string& name);
std::optional<Sharing> sharing_from_name(const std::string& name);

inline int safety_rank(Mechanism m) { return static_cast<int>(m); }
inline int safety_rank(Sharing s) { return static_cast<int>(s); }

struct CompartmentDecl {
  std::string name;
  Mechanism mechanism = Mechanism::FuncCall;
  HardeningSet hardening;
  bool is_default = false;

  bool operator==(const CompartmentDecl&) const = default;
};

// A build-time image description: compartments, which library lands where,
// and the image-wide stack sharing strategy. `component_hardening` is the
// per-library view of hardening used when comparing configurations; parsing
// a file pushes each compartment's set down to its members, the space
// enumerator assigns per library and lifts the union back up.
struct ImageConfig {
  std::vector<CompartmentDecl> compartments;
  std::map<std::string, std::string> library_map;
  Sharing sharing = Sharing::Dss;
  std::map<std::string, HardeningSet> component_hardening;

  bool operator==(const ImageConfig&) const = default;

  const CompartmentDecl* find_compartment(const std::string& name) const;
  // Index into `compartments` for the domain a library is mapped to.
  std::optional<int> compartment_of(const std::string& library) const;
  std::optional<int> default_compartment() const;
  // Uniform mechanism of the image (validation rejects mixed ones).
  Mechanism mechanism() const;
  std::vector<std::string> libraries_of(const std::string& compartment) const;
  bool uses_mpk() const;
};

struct ValidationReport {
  std::vector<Violation> violations;
  // MPK images only: 15 - #compartments. One of the 16 protection keys is
  // reserved for the shared domain; the rest are free for extra domains.
  std::optional<int> spare_shared_keys;
};

// Number of MPK keys usable for compartments (one of 16 is the shared domain).
inline constexpr int kMpkCompartmentKeys = 15;

// Parses the two-level key-value config format:
//
//   compartments:
//     - comp1:
//       mechanism: intel-mpk
//       default: True
//     - comp2:
//       mechanism: intel-mpk
//       gate: light
//       hardening: [cfi, asan]
//   libraries:
//     - libfoo: comp1
//   sharing: dss
//
// `intel-mpk` selects full gates unless `gate: light` is present; `none` and
// `vm-ept` select plain calls and EPT. `sharing` is optional: the default is
// dss, or stack when any compartment uses light gates. Referential problems
// (unknown compartment under `libraries:`) are hard parse errors; semantic
// problems (key budget, default count) are validate_config findings.
ImageConfig parse_config(const std::string& text);

ValidationReport validate_config(const ImageConfig& cfg);

using Partition = std::vector<std::vector<std::string>>;

// Expands the cross product (partitions x per-component hardening on/off)
// into concrete configs. Every component toggled on receives the entire
// `universe` bundle; a compartment's set is the union over its members.
// Compartments are named comp1..compK in block order; the block holding
// `components.front()` is the default. Result order: partitions outer,
// toggle mask inner (bit i = components[i]), so the list is deterministic
// and free of duplicates.
std::vector<ImageConfig> enumerate_space(const std::vector<std::string>& components,
                                         const std::vector<Partition>& partitions,
                                         HardeningSet universe,
                                         Mechanism mechanism,
                                         Sharing sharing);

void to_json(nlohmann::json& j, const ImageConfig& cfg);
void from_json(const nlohmann::json& j, ImageConfig& cfg);

// Canonical serialization (sorted object keys, declaration-ordered arrays)
// and the identity hash derived from it. Two configs describing the same
// image byte-compare equal here regardless of how they were produced.
std::string canonical_json(const ImageConfig& cfg);
std::string config_id(const ImageConfig& cfg);

} // namespace flexc::config
