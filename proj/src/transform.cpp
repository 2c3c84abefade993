// Copyright the flexc contributors.
// SPDX-License-Identifier: MIT
#include "flexc/transform.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "flexc/error.hpp"

namespace flexc::transform {

using lang::CallStmt;
using lang::FunctionDef;
using lang::GatePlaceholder;
using lang::IndirectCall;
using lang::LibraryUnit;
using lang::Program;
using lang::Stmt;
using lang::VarDecl;

const char* to_string(RegionRole r) {
  switch (r) {
  case RegionRole::Data: return "data";
  case RegionRole::Heap: return "heap";
  case RegionRole::Stack: return "stack";
  case RegionRole::DssUpper: return "dss-upper";
  case RegionRole::SharedHeap: return "shared-heap";
  case RegionRole::RpcArea: return "rpc-area";
  }
  return "?";
}

const Region* MemoryLayout::find(uint64_t addr) const {
  for (const auto& r : regions)
    if (r.contains(addr))
      return &r;
  return nullptr;
}

const Region* MemoryLayout::by_name(const std::string& name) const {
  for (const auto& r : regions)
    if (r.name == name)
      return &r;
  return nullptr;
}

const Region* MemoryLayout::by_role(RegionRole role, const std::string& owner) const {
  for (const auto& r : regions)
    if (r.role == role && r.owner == owner)
      return &r;
  return nullptr;
}

std::optional<int> Image::compartment_of_library(const std::string& lib) const {
  return cfg.compartment_of(lib);
}

std::optional<int> Image::compartment_of_function(const std::string& fn) const {
  const auto* lib = program.library_of_function(fn);
  if (!lib)
    return std::nullopt;
  return cfg.compartment_of(lib->name);
}

namespace {

std::string lib_of_function(const Program& p, const std::string& fn) {
  const auto* lib = p.library_of_function(fn);
  return lib ? lib->name : std::string();
}

std::set<std::string> function_names(const Program& p) {
  std::set<std::string> names;
  for (const auto& lib : p.libraries)
    for (const auto& fn : lib.functions)
      names.insert(fn.name);
  return names;
}

std::string fresh_wrapper_name(const std::string& target, const std::string& caller_lib,
                               std::set<std::string>& taken) {
  std::string name = "__gate_" + target + "__" + caller_lib;
  while (taken.count(name))
    name += "_";
  taken.insert(name);
  return name;
}

// Wrapper body: declare a slot, gate through to the target, hand the result
// back. Params mirror the target's arity.
FunctionDef make_wrapper(const std::string& name, const std::string& target,
                         const FunctionDef& target_def, const std::string& caller_lib,
                         const std::string& callee_lib) {
  FunctionDef w;
  w.name = name;
  w.synthetic = true;
  for (size_t i = 0; i < target_def.params.size(); ++i)
    w.params.push_back("a" + std::to_string(i));

  GatePlaceholder gate;
  gate.callee = target;
  for (const auto& p : w.params)
    gate.args.push_back(lang::Expr::var(p));
  gate.dest = "__r";
  gate.caller_lib = caller_lib;
  gate.callee_lib = callee_lib;

  VarDecl slot;
  slot.name = "__r";
  slot.storage = lang::Storage::Stack;

  w.body.emplace_back(std::move(slot));
  w.body.emplace_back(std::move(gate));
  w.body.emplace_back(lang::ReturnStmt{lang::Expr::var("__r")});
  return w;
}

} // namespace

lang::Program insert_gate_placeholders(const Program& program) {
  Program out = program;
  std::set<std::string> taken = function_names(out);

  for (auto& lib : out.libraries) {
    // Wrappers synthesized for this library, keyed by target.
    std::map<std::string, std::string> wrappers;
    std::vector<FunctionDef> new_fns;

    for (auto& fn : lib.functions) {
      for (auto& stmt : fn.body) {
        if (auto* c = std::get_if<CallStmt>(&stmt)) {
          std::string callee_lib = lib_of_function(program, c->callee);
          if (callee_lib == lib.name)
            continue;
          GatePlaceholder g;
          g.callee = c->callee;
          g.args = c->args;
          g.dest = c->dest;
          g.caller_lib = lib.name;
          g.callee_lib = callee_lib;
          stmt = std::move(g);
        } else if (auto* ic = std::get_if<IndirectCall>(&stmt)) {
          for (const auto& target : ic->callable_set) {
            std::string callee_lib = lib_of_function(program, target);
            if (callee_lib == lib.name)
              continue; // direct dispatch, no entry
            auto it = wrappers.find(target);
            if (it == wrappers.end()) {
              std::string wname = fresh_wrapper_name(target, lib.name, taken);
              new_fns.push_back(make_wrapper(wname, target,
                                             *program.find_function(target),
                                             lib.name, callee_lib));
              it = wrappers.emplace(target, wname).first;
            }
            ic->dispatch[target] = it->second;
          }
        }
      }
    }
    for (auto& w : new_fns)
      lib.functions.push_back(std::move(w));
  }
  return out;
}

namespace {

bool is_power_of_two(uint64_t v) { return v && (v & (v - 1)) == 0; }

uint64_t align_up(uint64_t v, uint64_t a) { return (v + a - 1) / a * a; }

struct Lowerer {
  const config::ImageConfig& cfg;

  int comp_of_lib(const std::string& lib) const {
    auto c = cfg.compartment_of(lib);
    if (!c)
      throw BuildError("config-invalid", "library '" + lib + "' is not mapped to a compartment");
    return *c;
  }

  // True when the whitelist of `v`, declared inside `owner_lib`, names a
  // library living in a different compartment.
  bool crosses(const VarDecl& v, const std::string& owner_lib) const {
    if (v.shared_with.empty())
      return false;
    int home = comp_of_lib(owner_lib);
    for (const auto& target : v.shared_with)
      if (comp_of_lib(target) != home)
        return true;
    return false;
  }

  CallStmt::Gate gate_flavor() const {
    switch (cfg.mechanism()) {
    case config::Mechanism::FuncCall: return CallStmt::Gate::Plain;
    case config::Mechanism::MpkLight: return CallStmt::Gate::MpkLight;
    case config::Mechanism::MpkDss: return CallStmt::Gate::MpkFull;
    case config::Mechanism::Ept: return CallStmt::Gate::EptRpc;
    }
    return CallStmt::Gate::Plain;
  }

  void rewrite_var(VarDecl& v, const std::string& owner_lib) const {
    v.placement = VarDecl::Placement::Default;
    if (!crosses(v, owner_lib))
      return;
    switch (v.storage) {
    case lang::Storage::Stack:
      if (cfg.sharing == config::Sharing::Dss)
        v.placement = VarDecl::Placement::DssShadow;
      else if (cfg.sharing == config::Sharing::HeapConversion)
        v.placement = VarDecl::Placement::SharedHeap;
      // SharedStack: the stack regions themselves are shared, nothing moves.
      break;
    case lang::Storage::Heap:
    case lang::Storage::Global:
      // Heap and global data has no stack to stay on; a crossing whitelist
      // always lands it in the shared heap.
      v.placement = VarDecl::Placement::SharedHeap;
      break;
    }
  }

  void lower_function(LibraryUnit& lib, FunctionDef& fn) const {
    int home = comp_of_lib(lib.name);
    for (auto& stmt : fn.body) {
      if (auto* g = std::get_if<GatePlaceholder>(&stmt)) {
        int callee_comp = comp_of_lib(g->callee_lib);
        CallStmt c;
        c.callee = g->callee;
        c.args = g->args;
        c.dest = g->dest;
        if (callee_comp == home) {
          c.gate = CallStmt::Gate::Plain;
        } else {
          if (c.args.size() > static_cast<size_t>(lang::kMaxGateArgs))
            throw BuildError("unsupported-combination",
                             "gate call to '" + c.callee + "' passes " +
                                 std::to_string(c.args.size()) +
                                 " arguments, gates carry at most " +
                                 std::to_string(lang::kMaxGateArgs));
          c.gate = gate_flavor();
        }
        stmt = std::move(c);
      } else if (auto* v = std::get_if<VarDecl>(&stmt)) {
        rewrite_var(*v, lib.name);
      }
    }
  }
};

} // namespace

Image instantiate(const Program& annotated, const config::ImageConfig& cfg,
                  uint64_t stack_size, const std::string& entry,
                  const mspec::SpecSet* specs) {
  if (!is_power_of_two(stack_size) || stack_size < kRegionAlign)
    throw BuildError("config-invalid",
                     "stack size must be a power of two of at least " +
                         std::to_string(kRegionAlign) + " bytes");

  auto report = config::validate_config(cfg);
  for (const auto& v : report.violations)
    if (v.severity == Severity::Error)
      throw BuildError("config-invalid", v.kind + ": " + v.message);

  Image img;
  img.cfg = cfg;
  img.stack_size = stack_size;
  img.entry = entry;
  img.program = annotated;

  Lowerer lower{cfg};
  for (const auto& lib : img.program.libraries)
    lower.comp_of_lib(lib.name); // every library must be mapped

  const auto* entry_fn = img.program.find_function(entry);
  if (!entry_fn)
    throw BuildError("config-invalid", "entry function '" + entry + "' is not defined");
  if (img.compartment_of_function(entry) != cfg.default_compartment())
    throw BuildError("config-invalid",
                     "entry function '" + entry + "' must live in the default compartment");

  // Rebuild indirect dispatch against the compartment map: targets that land
  // in the caller's compartment dispatch directly, the rest keep their
  // wrapper. Wrappers no longer reachable are dropped before layout.
  std::set<std::string> used_wrappers;
  for (auto& lib : img.program.libraries) {
    int home = lower.comp_of_lib(lib.name);
    for (auto& fn : lib.functions) {
      for (auto& stmt : fn.body) {
        auto* ic = std::get_if<IndirectCall>(&stmt);
        if (!ic)
          continue;
        auto old = std::move(ic->dispatch);
        ic->dispatch.clear();
        for (const auto& target : ic->callable_set) {
          if (lower.comp_of_lib(lib_of_function(annotated, target)) == home)
            continue; // same compartment: call the target itself
          auto it = old.find(target);
          if (it == old.end())
            throw BuildError("config-invalid",
                             "indirect call in '" + fn.name + "' crosses into '" +
                                 target + "' but the program was never annotated");
          ic->dispatch[target] = it->second;
          used_wrappers.insert(it->second);
        }
      }
    }
  }
  for (auto& lib : img.program.libraries) {
    auto& fns = lib.functions;
    fns.erase(std::remove_if(fns.begin(), fns.end(),
                             [&](const FunctionDef& f) {
                               return f.synthetic && !used_wrappers.count(f.name);
                             }),
              fns.end());
  }

  for (auto& lib : img.program.libraries) {
    for (auto& g : lib.globals)
      lower.rewrite_var(g, lib.name);
    for (auto& fn : lib.functions)
      lower.lower_function(lib, fn);
  }

  // Address map. Regions pack upward from kLayoutBase in compartment order;
  // a compartment's shadow region sits immediately above its stack so the
  // shadow of a slot is always slot + stack_size.
  bool multi = cfg.compartments.size() > 1;
  bool dss = multi && cfg.sharing == config::Sharing::Dss;
  bool shared_stacks = multi && cfg.sharing == config::Sharing::SharedStack;
  bool ept = cfg.mechanism() == config::Mechanism::Ept;

  std::vector<std::string> all_comps;
  for (const auto& c : cfg.compartments)
    all_comps.push_back(c.name);

  // Globals per compartment, private versus shared-heap placed, in a fixed
  // order: compartment order, then library name, then declaration order.
  // Function-level statics follow the library's own globals.
  std::map<std::string, std::vector<const VarDecl*>> private_globals;
  std::vector<const VarDecl*> shared_globals;
  for (const auto& comp : cfg.compartments) {
    for (const auto& lib_name : cfg.libraries_of(comp.name)) {
      const LibraryUnit* lib = nullptr;
      for (const auto& l : img.program.libraries)
        if (l.name == lib_name)
          lib = &l;
      if (!lib)
        continue; // config may map libraries the program does not define
      auto place = [&](const VarDecl& v) {
        if (v.placement == VarDecl::Placement::SharedHeap)
          shared_globals.push_back(&v);
        else
          private_globals[comp.name].push_back(&v);
      };
      for (const auto& g : lib->globals)
        place(g);
      for (const auto& fn : lib->functions)
        for (const auto& s : fn.body)
          if (const auto* v = std::get_if<VarDecl>(&s))
            if (v->storage == lang::Storage::Global)
              place(*v);
    }
  }

  uint64_t cursor = kLayoutBase;
  auto push_region = [&](const std::string& name, RegionRole role, uint64_t size,
                         const std::string& owner, std::vector<std::string> shared_with) {
    img.layout.regions.push_back({name, role, cursor, size, owner, std::move(shared_with)});
    cursor += size;
    return &img.layout.regions.back();
  };

  for (const auto& comp : cfg.compartments) {
    uint64_t n = private_globals[comp.name].size();
    uint64_t data_size = std::max<uint64_t>(kRegionAlign, align_up(n * kCellSize, kRegionAlign));
    const Region* data =
        push_region(comp.name + ".data", RegionRole::Data, data_size, comp.name, {});
    uint64_t off = 0;
    for (const auto* g : private_globals[comp.name]) {
      img.layout.global_addr[g->name] = data->start + off;
      off += kCellSize;
    }
    push_region(comp.name + ".heap", RegionRole::Heap, kHeapSize, comp.name, {});
    push_region(comp.name + ".stack", RegionRole::Stack, stack_size, comp.name,
                shared_stacks ? all_comps : std::vector<std::string>{});
    if (dss)
      push_region(comp.name + ".dss", RegionRole::DssUpper, stack_size, comp.name, all_comps);
    if (ept)
      push_region(comp.name + ".rpc", RegionRole::RpcArea, kRpcAreaSize, comp.name, all_comps);
  }
  if (multi) {
    const Region* sh =
        push_region("shared.heap", RegionRole::SharedHeap, kSharedHeapSize, "shared", all_comps);
    uint64_t off = 0;
    for (const auto* g : shared_globals) {
      img.layout.global_addr[g->name] = sh->start + off;
      off += kCellSize;
    }
    img.layout.shared_heap_alloc_base = sh->start + off;
  }

  // Dense designator ids, in program order after pruning.
  int next_id = 1;
  for (const auto& lib : img.program.libraries)
    for (const auto& fn : lib.functions)
      img.function_ids[fn.name] = next_id++;

  // EPT builds carry the legal entry set per compartment: every gate target
  // plus, when specs are supplied, every declared API symbol.
  if (ept) {
    std::map<std::string, std::set<std::string>> entries;
    for (const auto& c : cfg.compartments)
      entries[c.name];
    for (const auto& lib : img.program.libraries)
      for (const auto& fn : lib.functions)
        for (const auto& stmt : fn.body)
          if (const auto* c = std::get_if<CallStmt>(&stmt))
            if (c->gate == CallStmt::Gate::EptRpc) {
              int comp = *img.compartment_of_function(c->callee);
              entries[cfg.compartments[comp].name].insert(c->callee);
            }
    if (specs) {
      for (const auto& spec : *specs)
        for (const auto& rule : spec.api) {
          if (rule.target.kind != mspec::Target::Kind::Symbol)
            continue;
          auto comp = img.compartment_of_function(rule.target.symbol);
          if (comp)
            entries[cfg.compartments[*comp].name].insert(rule.target.symbol);
        }
    }
    for (auto& [comp, set] : entries)
      img.legal_entries[comp] = {set.begin(), set.end()};
  }

  return img;
}

Image make_ungated_image(const Program& program, uint64_t stack_size,
                         const std::string& entry) {
  config::ImageConfig cfg;
  config::CompartmentDecl all;
  all.name = "all";
  all.mechanism = config::Mechanism::FuncCall;
  all.is_default = true;
  cfg.compartments.push_back(all);
  cfg.sharing = config::Sharing::Dss;
  for (const auto& lib : program.libraries) {
    cfg.library_map[lib.name] = "all";
    cfg.component_hardening[lib.name] = {};
  }
  return instantiate(program, cfg, stack_size, entry, nullptr);
}

std::string layout_report(const Image& img) {
  auto regions = img.layout.regions;
  std::sort(regions.begin(), regions.end(),
            [](const Region& a, const Region& b) { return a.start < b.start; });
  std::ostringstream out;
  out << "layout stack_size=" << img.stack_size << "\n";
  char line[256];
  for (const auto& r : regions) {
    std::string shared = "-";
    if (!r.shared_with.empty()) {
      shared.clear();
      for (const auto& s : r.shared_with)
        shared += (shared.empty() ? "" : ",") + s;
    }
    std::snprintf(line, sizeof line,
                  "0x%08llx 0x%08llx %-18s %-11s owner=%-8s shared=%s\n",
                  static_cast<unsigned long long>(r.start),
                  static_cast<unsigned long long>(r.start + r.size),
                  r.name.c_str(), to_string(r.role), r.owner.c_str(), shared.c_str());
    out << line;
  }
  return out.str();
}

namespace {

RegionRole role_from(const std::string& s) {
  for (RegionRole r : {RegionRole::Data, RegionRole::Heap, RegionRole::Stack,
                       RegionRole::DssUpper, RegionRole::SharedHeap, RegionRole::RpcArea})
    if (s == to_string(r))
      return r;
  throw BuildError("malformed-image", "unknown region role '" + s + "'");
}

} // namespace

nlohmann::json image_to_json(const Image& img) {
  nlohmann::json regions = nlohmann::json::array();
  for (const auto& r : img.layout.regions)
    regions.push_back({{"name", r.name},
                       {"role", to_string(r.role)},
                       {"start", r.start},
                       {"size", r.size},
                       {"owner", r.owner},
                       {"shared_with", r.shared_with}});
  nlohmann::json cfg;
  config::to_json(cfg, img.cfg);
  nlohmann::json prog;
  lang::to_json(prog, img.program);
  return nlohmann::json{{"config", cfg},
                        {"stack_size", img.stack_size},
                        {"entry", img.entry},
                        {"program", prog},
                        {"layout",
                         {{"regions", regions},
                          {"global_addr", img.layout.global_addr},
                          {"shared_heap_alloc_base", img.layout.shared_heap_alloc_base}}},
                        {"function_ids", img.function_ids},
                        {"legal_entries", img.legal_entries}};
}

Image image_from_json(const nlohmann::json& j) {
  Image img;
  try {
    config::from_json(j.at("config"), img.cfg);
    img.stack_size = j.at("stack_size").get<uint64_t>();
    img.entry = j.at("entry").get<std::string>();
    lang::from_json(j.at("program"), img.program);
    const auto& layout = j.at("layout");
    for (const auto& rj : layout.at("regions")) {
      Region r;
      r.name = rj.at("name").get<std::string>();
      r.role = role_from(rj.at("role").get<std::string>());
      r.start = rj.at("start").get<uint64_t>();
      r.size = rj.at("size").get<uint64_t>();
      r.owner = rj.at("owner").get<std::string>();
      r.shared_with = rj.at("shared_with").get<std::vector<std::string>>();
      img.layout.regions.push_back(std::move(r));
    }
    img.layout.global_addr =
        layout.at("global_addr").get<std::map<std::string, uint64_t>>();
    img.layout.shared_heap_alloc_base = layout.at("shared_heap_alloc_base").get<uint64_t>();
    img.function_ids = j.at("function_ids").get<std::map<std::string, int>>();
    img.legal_entries =
        j.at("legal_entries").get<std::map<std::string, std::vector<std::string>>>();
  } catch (const nlohmann::json::exception& e) {
    throw BuildError("malformed-image", e.what());
  }
  return img;
}

} // namespace flexc::transform
