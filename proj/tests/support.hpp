// Copyright the flexc contributors.
// SPDX-License-Identifier: MIT
//
// Shared fixtures and independent oracles for the test binaries. The oracles
// deliberately re-derive results from first principles (quantifier-style
// refinement, unpruned partition enumeration) so the library implementations
// are checked against something they do not share code with.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "flexc/config.hpp"
#include "flexc/lang.hpp"
#include "flexc/machine.hpp"
#include "flexc/mspec.hpp"
#include "flexc/transform.hpp"

namespace testsupport {

// ---------------------------------------------------------------------------
// Partition enumeration (restricted-growth order, no pruning).

inline std::vector<flexc::config::Partition>
all_partitions(const std::vector<std::string>& items) {
  std::vector<flexc::config::Partition> out;
  if (items.empty())
    return out;
  std::vector<int> assign(items.size(), 0);
  auto rec = [&](auto&& self, size_t i, int nblocks) -> void {
    if (i == items.size()) {
      flexc::config::Partition p(nblocks);
      for (size_t k = 0; k < items.size(); ++k)
        p[assign[k]].push_back(items[k]);
      out.push_back(std::move(p));
      return;
    }
    for (int b = 0; b <= nblocks; ++b) {
      assign[i] = b;
      self(self, i + 1, std::max(nblocks, b + 1));
    }
  };
  rec(rec, 0, 0);
  return out;
}

// ---------------------------------------------------------------------------
// Dominance oracle: the definition written as quantifiers over library
// pairs, not as block inclusion.

inline bool dominates_oracle(const flexc::config::ImageConfig& a,
                             const flexc::config::ImageConfig& b) {
  std::vector<std::string> libs;
  for (const auto& [lib, comp] : a.library_map)
    libs.push_back(lib);
  // partition refinement: together in a implies together in b
  for (const auto& x : libs) {
    for (const auto& y : libs) {
      bool same_a = a.library_map.at(x) == a.library_map.at(y);
      bool same_b = b.library_map.at(x) == b.library_map.at(y);
      if (same_a && !same_b)
        return false;
    }
  }
  for (const auto& lib : libs) {
    auto get = [&](const flexc::config::ImageConfig& c) {
      auto it = c.component_hardening.find(lib);
      return it == c.component_hardening.end() ? flexc::config::HardeningSet{} : it->second;
    };
    unsigned have = get(a).bits(), want = get(b).bits();
    if ((have & want) != want)
      return false;
  }
  if (static_cast<int>(a.mechanism()) < static_cast<int>(b.mechanism()))
    return false;
  return static_cast<int>(a.sharing) >= static_cast<int>(b.sharing);
}

// ---------------------------------------------------------------------------
// Config construction helpers.

inline flexc::config::ImageConfig
make_config(const flexc::config::Partition& partition, flexc::config::Mechanism mech,
            flexc::config::Sharing sharing,
            const std::map<std::string, flexc::config::HardeningSet>& hardening = {}) {
  flexc::config::ImageConfig cfg;
  cfg.sharing = sharing;
  int idx = 1;
  for (const auto& block : partition) {
    flexc::config::CompartmentDecl d;
    d.name = "comp" + std::to_string(idx++);
    d.mechanism = mech;
    d.is_default = &block == &partition.front();
    for (const auto& lib : block) {
      cfg.library_map[lib] = d.name;
      auto it = hardening.find(lib);
      cfg.component_hardening[lib] = it == hardening.end() ? flexc::config::HardeningSet{} : it->second;
      d.hardening = d.hardening.united(cfg.component_hardening[lib]);
    }
    cfg.compartments.push_back(d);
  }
  return cfg;
}

// Single compartment named like the baseline image so traces compare
// byte-for-byte against make_ungated_image output.
inline flexc::config::ImageConfig
single_compartment(const std::vector<std::string>& libs,
                   flexc::config::Mechanism mech = flexc::config::Mechanism::FuncCall,
                   const std::string& name = "all") {
  flexc::config::ImageConfig cfg;
  flexc::config::CompartmentDecl d;
  d.name = name;
  d.mechanism = mech;
  d.is_default = true;
  cfg.compartments.push_back(d);
  cfg.sharing = flexc::config::Sharing::Dss;
  for (const auto& lib : libs) {
    cfg.library_map[lib] = name;
    cfg.component_hardening[lib] = {};
  }
  return cfg;
}

inline std::vector<std::string> library_names(const flexc::lang::Program& p) {
  std::vector<std::string> names;
  for (const auto& lib : p.libraries)
    names.push_back(lib.name);
  return names;
}

// ---------------------------------------------------------------------------
// The four-component, five-partition space used by the structural checks:
// an application, its libc, the network stack and the scheduler, split the
// five ways a small system realistically gets cut.

inline const std::vector<std::string>& standard_components() {
  static const std::vector<std::string> c{"app", "libc", "net", "sched"};
  return c;
}

inline const std::vector<flexc::config::Partition>& standard_partitions() {
  static const std::vector<flexc::config::Partition> p{
      {{"app", "libc", "net", "sched"}},
      {{"sched"}, {"app", "libc", "net"}},
      {{"net"}, {"app", "libc", "sched"}},
      {{"app", "libc"}, {"net", "sched"}},
      {{"app", "libc"}, {"net"}, {"sched"}},
  };
  return p;
}

inline flexc::config::HardeningSet standard_hardening_universe() {
  flexc::config::HardeningSet u;
  u.insert(flexc::config::Hardening::StackProtector);
  u.insert(flexc::config::Hardening::Ubsan);
  u.insert(flexc::config::Hardening::Kasan);
  return u;
}

inline std::vector<flexc::config::ImageConfig> standard_space() {
  return flexc::config::enumerate_space(standard_components(), standard_partitions(),
                                        standard_hardening_universe(),
                                        flexc::config::Mechanism::MpkDss,
                                        flexc::config::Sharing::Dss);
}

// ---------------------------------------------------------------------------
// Fixture corpus for the zero-overhead comparison: small programs covering
// plain calls, call results, globals, heap and shared variables, indirect
// calls, register probes and bounded recursion.

inline const std::vector<const char*>& overhead_corpus() {
  static const std::vector<const char*> corpus{
      // one library, straight-line arithmetic
      R"(library solo {
  fn main() {
    var a: int
    a = 40 + 2
    return a
  }
})",
      // two libraries, direct call with result
      R"(library front {
  fn main() {
    var x: int
    x = call double_it(21)
    return x
  }
}
library back {
  fn double_it(v: int) {
    return v + v
  }
})",
      // call without result binding
      R"(library front {
  var count: int
  fn main() {
    call bump()
    call bump()
    return count
  }
}
library back {
  fn bump() {
    return 0
  }
})",
      // globals across libraries
      R"(library a {
  var total: int
  fn main() {
    total = 5
    call add3()
    return total
  }
}
library b {
  fn add3() {
    total = total + 3
    return total
  }
})",
      // heap storage with frees at exit
      R"(library h {
  fn main() {
    var box: int storage=heap
    var out: int
    box = 11
    out = call echo(box)
    return out
  }
  fn echo(v: int) {
    var tmp: int storage=heap
    tmp = v + 1
    return tmp
  }
})",
      // shared annotation (single compartment: must stay untouched)
      R"(library s1 {
  fn main() {
    var buf: int shared(s2)
    buf = 9
    call peek()
    return buf
  }
}
library s2 {
  fn peek() {
    return 1
  }
})",
      // indirect call with same-library targets
      R"(library ic {
  var choice: int
  fn pick_a() { return 10 }
  fn pick_b() { return 20 }
  fn main() {
    var r: int
    choice = pick_b
    r = icall choice() targets(pick_a, pick_b)
    return r
  }
})",
      // indirect call across libraries
      R"(library icx {
  var fp: int
  fn main() {
    var r: int
    fp = remote
    r = icall fp(4) targets(local, remote)
    return r
  }
  fn local(v: int) { return v }
}
library icy {
  fn remote(v: int) {
    return v + 100
  }
})",
      // explicit memory move
      R"(library mv {
  var src: int
  fn main() {
    var dst: int
    src = 77
    read dst <- src
    return dst
  }
})",
      // register probe after an argument-passing call
      R"(library rp {
  fn id(v: int) { return v }
  fn main() {
    var r: int
    call id(33)
    r = reg(0)
    return r
  }
})",
      // bounded recursion
      R"(library rec {
  fn down(n: int) {
    var next: int
    next = n + -1
    return next
  }
  fn main() {
    var v: int
    v = call down(3)
    v = call down(v)
    v = call down(v)
    return v
  }
})",
      // function-level static
      R"(library st {
  fn tick() {
    var hits: int storage=global
    hits = hits + 1
    return hits
  }
  fn main() {
    var a: int
    call tick()
    a = call tick()
    return a
  }
})",
  };
  return corpus;
}

// ---------------------------------------------------------------------------
// Random generators. Everything is seeded by the caller so failures replay.

struct IsolationCase {
  std::string source;
  flexc::config::ImageConfig cfg;
  bool expect_fault = false;
  long long expected = 0;
};

// Two libraries in two compartments. The private flavor has the default
// compartment touch the other side's private global directly; the shared
// flavor routes a value through a gate into a shared global and reads it
// back across the boundary.
inline IsolationCase make_isolation_case(std::mt19937_64& rng,
                                         flexc::config::Mechanism mech,
                                         bool shared_path) {
  long long v = static_cast<long long>(rng() % 2001) - 1000;
  int noise = static_cast<int>(rng() % 3);
  bool read_stmt = rng() % 2 == 0;

  std::string main_body;
  main_body += "    var out: int\n";
  for (int i = 0; i < noise; ++i)
    main_body += "    var n" + std::to_string(i) + ": int\n";
  if (shared_path) {
    main_body += "    call put_secret(" + std::to_string(v) + ")\n";
    if (read_stmt)
      main_body += "    read out <- g_shared\n";
    else
      main_body += "    out = g_shared + 0\n";
  } else {
    if (read_stmt)
      main_body += "    read out <- g_hidden\n";
    else
      main_body += "    out = g_hidden + 0\n";
  }
  main_body += "    return out\n";

  IsolationCase c;
  c.source = "library trusted {\n  fn main() {\n" + main_body + "  }\n}\n";
  c.source += R"(library vault {
  var g_hidden: int
  var g_shared: int shared(trusted)
  fn put_secret(v: int) {
    g_shared = v
    return 0
  }
}
)";
  c.cfg = make_config({{"trusted"}, {"vault"}}, mech,
                      mech == flexc::config::Mechanism::MpkLight
                          ? flexc::config::Sharing::SharedStack
                          : flexc::config::Sharing::Dss);
  c.expect_fault = !shared_path;
  c.expected = v;
  return c;
}

// Random program whose functions declare DSS-eligible shared stack slots and
// write to every one of them, spread over two or three compartments.
struct DssCase {
  std::string source;
  flexc::config::ImageConfig cfg;
  uint64_t stack_size = 0;
};

inline DssCase make_dss_case(std::mt19937_64& rng) {
  int nlibs = 2 + static_cast<int>(rng() % 2);
  std::vector<std::string> libs;
  for (int i = 0; i < nlibs; ++i)
    libs.push_back("lib" + std::to_string(i));

  std::string src;
  // main calls one worker per other library; each worker fills its shared
  // slots with distinct values.
  src += "library lib0 {\n  fn main() {\n";
  for (int i = 1; i < nlibs; ++i)
    src += "    call work" + std::to_string(i) + "()\n";
  int own = static_cast<int>(rng() % 3);
  for (int k = 0; k < own; ++k) {
    std::string other = libs[1 + rng() % (nlibs - 1)];
    src += "    var m" + std::to_string(k) + ": int shared(" + other + ")\n";
    src += "    m" + std::to_string(k) + " = " + std::to_string(k + 5) + "\n";
  }
  src += "    return 0\n  }\n}\n";
  for (int i = 1; i < nlibs; ++i) {
    src += "library lib" + std::to_string(i) + " {\n";
    src += "  fn work" + std::to_string(i) + "() {\n";
    int nvars = 1 + static_cast<int>(rng() % 3);
    for (int k = 0; k < nvars; ++k) {
      std::string target = libs[(i + 1 + rng() % (nlibs - 1)) % nlibs];
      src += "    var s" + std::to_string(i) + std::to_string(k) + ": int shared(" +
             target + ")\n";
      src += "    s" + std::to_string(i) + std::to_string(k) + " = " +
             std::to_string(static_cast<int>(rng() % 90) + 10) + "\n";
    }
    src += "    return 0\n  }\n}\n";
  }

  flexc::config::Partition part;
  for (const auto& lib : libs)
    part.push_back({lib});

  DssCase c;
  c.source = src;
  c.cfg = make_config(part, flexc::config::Mechanism::MpkDss, flexc::config::Sharing::Dss);
  static const uint64_t sizes[] = {4096, 8192, 32768, 65536};
  c.stack_size = sizes[rng() % 4];
  return c;
}

// ---------------------------------------------------------------------------
// Random spec documents sampling the whole grammar.

inline flexc::mspec::SpecSet random_spec_set(std::mt19937_64& rng) {
  using namespace flexc::mspec;
  auto name = [&](const char* stem, int i) { return std::string(stem) + std::to_string(i); };
  auto rand_target = [&]() {
    if (rng() % 2)
      return Target::sym("sym" + std::to_string(rng() % 40));
    return Target::addr((rng() % 0xffff) + 1);
  };
  auto rand_mem_rule = [&]() {
    MemRule r;
    r.target = rand_target();
    r.access = rng() % 2 ? Access::R : Access::W;
    r.size = (rng() % 8192) + 1;
    if (rng() % 2) {
      r.memtype = MemRule::MemType::Segment;
      r.segment = "seg" + std::to_string(rng() % 8);
    } else {
      r.memtype = MemRule::MemType::Address;
    }
    return r;
  };
  static const Access kAccess[] = {Access::U, Access::R, Access::W, Access::RStar,
                                   Access::WStar};
  static const Exec kExec[] = {Exec::U, Exec::X, Exec::XStar};

  SpecSet specs;
  int ncomp = 1 + static_cast<int>(rng() % 4);
  for (int i = 0; i < ncomp; ++i) {
    ComponentSpec s;
    s.name = name("comp", i);
    if (rng() % 10 < 8) {
      MemSection m;
      m.coarse = kAccess[rng() % 5];
      int n = static_cast<int>(rng() % 4);
      for (int k = 0; k < n; ++k)
        m.rules.push_back(rand_mem_rule());
      s.memory = m;
    }
    if (rng() % 10 < 7) {
      CallSection c;
      c.coarse = kExec[rng() % 3];
      int n = static_cast<int>(rng() % 4);
      for (int k = 0; k < n; ++k)
        c.rules.push_back({rand_target()});
      s.call = c;
    }
    int napi = static_cast<int>(rng() % 4);
    for (int k = 0; k < napi; ++k)
      s.api.push_back({rand_target()});
    if (rng() % 2) {
      RequiresMem rm;
      rm.coarse = kAccess[rng() % 5];
      int n = static_cast<int>(rng() % 3);
      for (int k = 0; k < n; ++k)
        rm.rules.push_back(rand_mem_rule());
      s.requires_mem = rm;
    }
    int nrc = static_cast<int>(rng() % 3);
    for (int k = 0; k < nrc; ++k) {
      RequiresCall rc;
      if (rng() % 2)
        rc.coarse = kExec[rng() % 3];
      int n = static_cast<int>(rng() % 3);
      for (int j = 0; j < n; ++j)
        rc.rules.push_back({rand_target()});
      if (!rc.coarse && rc.rules.empty())
        rc.coarse = Exec::X; // the empty unmarked clause is invalid by design
      s.requires_call.push_back(std::move(rc));
    }
    specs.push_back(std::move(s));
  }
  return specs;
}

// ---------------------------------------------------------------------------
// Spec sets with an arbitrary prescribed conflict graph: every component
// declares one token write, and component i's requirements whitelist exactly
// the tokens of the peers it can live with.

inline flexc::mspec::SpecSet
spec_set_with_conflicts(int n, const std::vector<std::vector<bool>>& conflict) {
  using namespace flexc::mspec;
  SpecSet specs;
  for (int i = 0; i < n; ++i) {
    ComponentSpec s;
    s.name = "c" + std::to_string(i);
    MemSection m;
    m.coarse = Access::W; // under everyone's W* requirement, never conflicts
    MemRule token;
    token.target = Target::sym("tok" + std::to_string(i));
    token.access = Access::W;
    token.size = 8;
    m.rules.push_back(token);
    s.memory = m;
    RequiresMem rm;
    rm.coarse = Access::WStar; // coarse never conflicts, rules decide
    for (int j = 0; j < n; ++j) {
      if (j == i || conflict[i][j])
        continue;
      MemRule ok;
      ok.target = Target::sym("tok" + std::to_string(j));
      ok.access = Access::W;
      ok.size = 8;
      rm.rules.push_back(ok);
    }
    s.requires_mem = rm;
    specs.push_back(std::move(s));
  }
  return specs;
}

// Unpruned minimal conflict-free partition: first one in restricted-growth
// order with the fewest blocks, or nothing within max_blocks.
inline std::optional<flexc::config::Partition>
minimal_partition_oracle(const flexc::mspec::SpecSet& specs,
                         const std::vector<std::vector<bool>>& conflict, int max_blocks) {
  int n = static_cast<int>(specs.size());
  if (n == 0)
    return flexc::config::Partition{};
  std::vector<std::string> names;
  for (const auto& s : specs)
    names.push_back(s.name);
  std::optional<flexc::config::Partition> best;
  size_t best_count = static_cast<size_t>(max_blocks) + 1;
  for (const auto& part : all_partitions(names)) {
    if (part.size() >= best_count)
      continue;
    bool ok = true;
    for (const auto& block : part) {
      for (size_t x = 0; x < block.size() && ok; ++x)
        for (size_t y = 0; y < block.size() && ok; ++y) {
          if (x == y)
            continue;
          int i = std::stoi(block[x].substr(1));
          int j = std::stoi(block[y].substr(1));
          if (conflict[i][j])
            ok = false;
        }
      if (!ok)
        break;
    }
    if (ok) {
      best = part;
      best_count = part.size();
    }
  }
  return best;
}

} // namespace testsupport
