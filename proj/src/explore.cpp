// Copyright the flexc contributors.
// SPDX-License-Identifier: MIT
#include "flexc/explore.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <deque>
#include <mutex>
#include <thread>

#include "flexc/error.hpp"
#include "flexc/transform.hpp"

namespace flexc::explore {

SafetyVector safety_vector(const config::ImageConfig& cfg) {
  SafetyVector v;
  std::map<std::string, std::set<std::string>> blocks;
  for (const auto& [lib, comp] : cfg.library_map)
    blocks[comp].insert(lib);
  for (auto& [comp, members] : blocks)
    v.partition.push_back(members);
  std::sort(v.partition.begin(), v.partition.end());
  v.hardening = cfg.component_hardening;
  for (const auto& [lib, comp] : cfg.library_map)
    if (!v.hardening.count(lib))
      v.hardening[lib] = {};
  v.mechanism_rank = config::safety_rank(cfg.mechanism());
  v.sharing_rank = config::safety_rank(cfg.sharing);
  return v;
}

namespace {

std::set<std::string> component_set(const SafetyVector& v) {
  std::set<std::string> s;
  for (const auto& block : v.partition)
    s.insert(block.begin(), block.end());
  return s;
}

// a's partition refines b's: every a-block fits inside some b-block.
bool refines(const std::vector<std::set<std::string>>& a,
             const std::vector<std::set<std::string>>& b) {
  for (const auto& block : a) {
    bool fits = false;
    for (const auto& host : b) {
      if (std::includes(host.begin(), host.end(), block.begin(), block.end())) {
        fits = true;
        break;
      }
    }
    if (!fits)
      return false;
  }
  return true;
}

} // namespace

bool dominates(const SafetyVector& a, const SafetyVector& b) {
  if (component_set(a) != component_set(b))
    throw BuildError("component-set-mismatch",
                     "configurations cover different component sets");
  if (!refines(a.partition, b.partition))
    return false;
  for (const auto& [lib, wanted] : b.hardening) {
    auto it = a.hardening.find(lib);
    config::HardeningSet have = it != a.hardening.end() ? it->second : config::HardeningSet{};
    if (!have.contains_all(wanted))
      return false;
  }
  return a.mechanism_rank >= b.mechanism_rank && a.sharing_rank >= b.sharing_rank;
}

bool dominates(const config::ImageConfig& a, const config::ImageConfig& b) {
  return dominates(safety_vector(a), safety_vector(b));
}

std::vector<int> ConfigPoset::minimal() const {
  // Edges run tail -> head with the head dominating, so a minimal node is
  // one no edge points at.
  std::vector<bool> is_head(nodes.size(), false);
  for (const auto& n : nodes)
    for (int up : n.above)
      is_head[up] = true;
  std::vector<int> out;
  for (size_t i = 0; i < nodes.size(); ++i)
    if (!is_head[i])
      out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> ConfigPoset::maximal() const {
  std::vector<int> out;
  for (size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].above.empty())
      out.push_back(static_cast<int>(i));
  return out;
}

std::vector<bool> ConfigPoset::reachable_up(int from) const {
  std::vector<bool> seen(nodes.size(), false);
  std::deque<int> work{from};
  seen[from] = true;
  while (!work.empty()) {
    int n = work.front();
    work.pop_front();
    for (int up : nodes[n].above)
      if (!seen[up]) {
        seen[up] = true;
        work.push_back(up);
      }
  }
  return seen;
}

ConfigPoset build_poset(const std::vector<config::ImageConfig>& configs) {
  ConfigPoset poset;
  std::set<std::string> ids;
  for (const auto& cfg : configs) {
    PosetNode n;
    n.id = config::config_id(cfg);
    n.cfg = cfg;
    n.vec = safety_vector(cfg);
    if (!ids.insert(n.id).second)
      throw BuildError("duplicate-config", "configuration " + n.id + " appears twice");
    poset.nodes.push_back(std::move(n));
  }

  size_t n = poset.nodes.size();
  // gt[i][j]: j strictly dominates i. Vectors are pairwise distinct or the
  // order would lose antisymmetry, so equality is rejected outright.
  std::vector<std::vector<bool>> gt(n, std::vector<bool>(n, false));
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      if (poset.nodes[i].vec == poset.nodes[j].vec)
        throw BuildError("duplicate-config",
                         "configurations " + poset.nodes[i].id + " and " +
                             poset.nodes[j].id + " have indistinguishable safety");
      bool ij = dominates(poset.nodes[j].vec, poset.nodes[i].vec);
      bool ji = dominates(poset.nodes[i].vec, poset.nodes[j].vec);
      gt[i][j] = ij;
      gt[j][i] = ji;
    }
  }
  // Hasse edge i->j: j dominates i with nothing in between.
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < n; ++j) {
      if (!gt[i][j])
        continue;
      bool direct = true;
      for (size_t k = 0; k < n && direct; ++k)
        if (gt[i][k] && gt[k][j])
          direct = false;
      if (direct)
        poset.nodes[i].above.push_back(static_cast<int>(j));
    }
  }
  return poset;
}

ResultsFileProvider::ResultsFileProvider(const nlohmann::json& results) {
  for (auto it = results.begin(); it != results.end(); ++it)
    results_[it.key()] = it.value().get<double>();
}

double ResultsFileProvider::measure(const config::ImageConfig&, const std::string& id) {
  auto it = results_.find(id);
  if (it == results_.end())
    throw BuildError("provider-failure", "no measurement for configuration " + id);
  return it->second;
}

SimulatorProvider::SimulatorProvider(lang::Program annotated, machine::CostModel cm,
                                     uint64_t stack_size, std::string entry)
    : annotated_(std::move(annotated)), cm_(cm), stack_size_(stack_size),
      entry_(std::move(entry)) {}

double SimulatorProvider::measure(const config::ImageConfig& cfg, const std::string& id) {
  try {
    auto image = transform::instantiate(annotated_, cfg, stack_size_, entry_);
    machine::Trace t = machine::run(image, cm_);
    if (t.faulted)
      throw BuildError("provider-failure",
                       "configuration " + id + " faulted: " + t.fault.note);
    if (t.total_cycles <= 0)
      throw BuildError("provider-failure", "configuration " + id + " ran for free");
    return 1.0 / static_cast<double>(t.total_cycles);
  } catch (const BuildError& e) {
    if (std::string(e.kind()) == "provider-failure")
      throw;
    throw BuildError("provider-failure",
                     "configuration " + id + " failed to build: " + e.what());
  }
}

namespace {

std::vector<int> topo_from_minimal(const ConfigPoset& poset) {
  size_t n = poset.nodes.size();
  std::vector<int> indegree(n, 0);
  for (const auto& node : poset.nodes)
    for (int up : node.above)
      ++indegree[up];
  std::deque<int> ready;
  for (size_t i = 0; i < n; ++i)
    if (indegree[i] == 0)
      ready.push_back(static_cast<int>(i));
  std::vector<int> order;
  while (!ready.empty()) {
    int cur = ready.front();
    ready.pop_front();
    order.push_back(cur);
    for (int up : poset.nodes[cur].above)
      if (--indegree[up] == 0)
        ready.push_back(up);
  }
  return order;
}

} // namespace

ExplorationResult explore(const ConfigPoset& poset, MeasurementProvider& provider,
                          double budget, Mode mode, int jobs) {
  ExplorationResult res;
  res.budget = budget;
  res.mode = mode;

  size_t n = poset.nodes.size();
  std::vector<std::optional<double>> perf(n);

  if (mode == Mode::Exhaustive) {
    if (jobs > 1 && provider.thread_safe()) {
      std::atomic<size_t> next{0};
      std::mutex mu;
      std::exception_ptr first_error;
      auto worker = [&] {
        for (;;) {
          size_t i = next.fetch_add(1);
          if (i >= n)
            return;
          {
            std::lock_guard<std::mutex> lock(mu);
            if (first_error)
              return;
          }
          try {
            double p = provider.measure(poset.nodes[i].cfg, poset.nodes[i].id);
            std::lock_guard<std::mutex> lock(mu);
            perf[i] = p;
          } catch (...) {
            std::lock_guard<std::mutex> lock(mu);
            if (!first_error) {
              first_error = std::current_exception();
              res.aborted_at = poset.nodes[i].id;
            }
          }
        }
      };
      std::vector<std::thread> pool;
      for (int t = 0; t < jobs; ++t)
        pool.emplace_back(worker);
      for (auto& t : pool)
        t.join();
      if (first_error && !res.aborted_at)
        res.aborted_at = "?";
    } else {
      for (size_t i = 0; i < n; ++i) {
        try {
          perf[i] = provider.measure(poset.nodes[i].cfg, poset.nodes[i].id);
        } catch (const BuildError&) {
          res.aborted_at = poset.nodes[i].id;
          break;
        }
      }
    }
  } else {
    // Walk upward from the least safe configurations; a node under budget
    // condemns everything that dominates it.
    std::vector<bool> skip(n, false);
    for (int i : topo_from_minimal(poset)) {
      if (skip[i]) {
        ++res.skipped;
        continue;
      }
      double p;
      try {
        p = provider.measure(poset.nodes[i].cfg, poset.nodes[i].id);
      } catch (const BuildError&) {
        res.aborted_at = poset.nodes[i].id;
        break;
      }
      perf[i] = p;
      if (p < budget) {
        auto doomed = poset.reachable_up(i);
        for (size_t k = 0; k < n; ++k)
          if (doomed[k] && k != static_cast<size_t>(i))
            skip[k] = true;
      }
    }
  }

  for (size_t i = 0; i < n; ++i) {
    if (!perf[i])
      continue;
    ++res.evaluated;
    res.measurements[poset.nodes[i].id] = *perf[i];
  }

  std::vector<bool> qualifies(n, false);
  for (size_t i = 0; i < n; ++i)
    qualifies[i] = perf[i] && *perf[i] >= budget;
  for (size_t i = 0; i < n; ++i)
    if (qualifies[i])
      res.qualifying.push_back(poset.nodes[i].id);

  // Maximal: qualifying nodes no strictly safer qualifying node reaches.
  for (size_t i = 0; i < n; ++i) {
    if (!qualifies[i])
      continue;
    auto up = poset.reachable_up(static_cast<int>(i));
    bool topped = false;
    for (size_t k = 0; k < n && !topped; ++k)
      if (k != i && up[k] && qualifies[k])
        topped = true;
    if (!topped)
      res.maximal.push_back(poset.nodes[i].id);
  }
  return res;
}

nlohmann::json ExplorationResult::report() const {
  nlohmann::json j{{"budget", budget},
                   {"mode", mode == Mode::Exhaustive ? "exhaustive" : "pruned"},
                   {"evaluated", evaluated},
                   {"skipped", skipped},
                   {"qualifying", qualifying},
                   {"maximal", maximal},
                   {"measurements", measurements}};
  if (mode == Mode::Pruned)
    j["assumption"] = "performance degrades monotonically with safety";
  if (aborted_at)
    j["aborted_at"] = *aborted_at;
  return j;
}

std::string export_dot(const ConfigPoset& poset, const ExplorationResult* result) {
  double lo = 0, hi = 0;
  bool have_perf = false;
  if (result) {
    for (const auto& [id, p] : result->measurements) {
      if (!have_perf) {
        lo = hi = p;
        have_perf = true;
      } else {
        lo = std::min(lo, p);
        hi = std::max(hi, p);
      }
    }
  }
  std::set<std::string> starred;
  if (result)
    starred.insert(result->maximal.begin(), result->maximal.end());

  std::ostringstream out;
  out << "digraph poset {\n";
  out << "  rankdir=BT;\n";
  out << "  node [shape=box, style=filled, fillcolor=white];\n";
  for (const auto& node : poset.nodes) {
    std::string label = node.id.substr(0, 8);
    std::string fill = "white";
    std::string font = "black";
    if (result) {
      auto it = result->measurements.find(node.id);
      if (it != result->measurements.end()) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3g", it->second);
        label += "\\n" + std::string(buf);
        double norm = hi > lo ? (it->second - lo) / (hi - lo) : 0.0;
        int gray = static_cast<int>(100.5 - norm * 100.0); // gray100 white, gray0 black
        fill = "gray" + std::to_string(std::clamp(gray, 0, 100));
        if (norm > 0.5)
          font = "white";
      }
    }
    if (starred.count(node.id))
      label += " *";
    out << "  \"" << node.id << "\" [label=\"" << label << "\", fillcolor=" << fill
        << ", fontcolor=" << font << "];\n";
  }
  for (const auto& node : poset.nodes)
    for (int up : node.above)
      out << "  \"" << node.id << "\" -> \"" << poset.nodes[up].id << "\";\n";
  out << "}\n";
  return out.str();
}

nlohmann::json poset_to_json(const ConfigPoset& poset) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& node : poset.nodes) {
    nlohmann::json cfg;
    config::to_json(cfg, node.cfg);
    nlohmann::json above = nlohmann::json::array();
    for (int up : node.above)
      above.push_back(poset.nodes[up].id);
    nodes.push_back({{"id", node.id}, {"config", cfg}, {"above", above}});
  }
  return nlohmann::json{{"nodes", nodes}};
}

} // namespace flexc::explore
