// Copyright the flexc contributors.
// SPDX-License-Identifier: MIT
#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "flexc/config.hpp"
#include "flexc/lang.hpp"
#include "flexc/machine.hpp"

namespace flexc::explore {

// The comparable safety summary of a configuration: how finely components
// are split, what hardening each component carries, and the ranks of the
// isolation mechanism and sharing strategy.
struct SafetyVector {
  std::vector<std::set<std::string>> partition; // canonical: sorted blocks
  std::map<std::string, config::HardeningSet> hardening;
  int mechanism_rank = 0;
  int sharing_rank = 0;

  bool operator==(const SafetyVector&) const = default;
};

SafetyVector safety_vector(const config::ImageConfig& cfg);

// Product order: a >= b when a's partition refines b's, every component
// carries at least b's hardening, and both ranks are at least b's. Throws
// BuildError("component-set-mismatch") when the two configurations do not
// describe the same component set.
bool dominates(const SafetyVector& a, const SafetyVector& b);
bool dominates(const config::ImageConfig& a, const config::ImageConfig& b);

struct PosetNode {
  std::string id; // config identity hash
  config::ImageConfig cfg;
  SafetyVector vec;
  std::vector<int> above; // Hasse edges to immediate dominators
};

struct ConfigPoset {
  std::vector<PosetNode> nodes;

  std::vector<int> minimal() const;
  std::vector<int> maximal() const;
  // Transitive closure of the Hasse edges from `from` upward.
  std::vector<bool> reachable_up(int from) const;
};

// Builds the Hasse diagram of the dominance order over the given configs.
// Structural duplicates and pairs with indistinguishable safety vectors are
// rejected with BuildError("duplicate-config"): they would break the
// antisymmetry the exploration relies on.
ConfigPoset build_poset(const std::vector<config::ImageConfig>& configs);

// Performance oracle for one configuration. Implementations throw
// BuildError("provider-failure") for nodes they cannot measure.
class MeasurementProvider {
public:
  virtual ~MeasurementProvider() = default;
  virtual double measure(const config::ImageConfig& cfg, const std::string& id) = 0;
  virtual bool thread_safe() const { return false; }
};

// Looks performance numbers up in a JSON object keyed by config identity.
class ResultsFileProvider : public MeasurementProvider {
public:
  explicit ResultsFileProvider(const nlohmann::json& results);
  double measure(const config::ImageConfig& cfg, const std::string& id) override;
  bool thread_safe() const override { return true; }

private:
  std::map<std::string, double> results_;
};

// Instantiates and runs the program under each configuration; performance is
// the reciprocal of total cycles, so fewer cycles rank higher.
class SimulatorProvider : public MeasurementProvider {
public:
  SimulatorProvider(lang::Program annotated, machine::CostModel cm = {},
                    uint64_t stack_size = transform::kDefaultStackSize,
                    std::string entry = "main");
  double measure(const config::ImageConfig& cfg, const std::string& id) override;
  bool thread_safe() const override { return true; }

private:
  lang::Program annotated_;
  machine::CostModel cm_;
  uint64_t stack_size_;
  std::string entry_;
};

enum class Mode { Exhaustive, Pruned };

struct ExplorationResult {
  double budget = 0;
  Mode mode = Mode::Exhaustive;
  std::vector<std::string> qualifying; // node order
  std::vector<std::string> maximal;    // qualifying nodes nothing safer qualifies above
  int evaluated = 0;
  int skipped = 0;
  std::map<std::string, double> measurements;
  // Set when a provider failure aborted the walk; the rest of the result
  // covers what was measured up to that point.
  std::optional<std::string> aborted_at;

  nlohmann::json report() const;
};

// Finds the configurations whose measured performance meets `budget`.
// Exhaustive mode measures every node (in parallel when jobs > 1 and the
// provider allows it). Pruned mode walks from the least safe nodes upward
// and skips everything dominating a node that already missed the budget,
// which is sound exactly when performance degrades monotonically with
// safety. Both modes return identical qualifying sets on monotone inputs.
ExplorationResult explore(const ConfigPoset& poset, MeasurementProvider& provider,
                          double budget, Mode mode, int jobs = 1);

// Grayscale Graphviz rendering: fill encodes measured performance (white is
// the minimum, black the maximum), maximal qualifying nodes get a star.
std::string export_dot(const ConfigPoset& poset,
                       const ExplorationResult* result = nullptr);

nlohmann::json poset_to_json(const ConfigPoset& poset);

} // namespace flexc::explore
