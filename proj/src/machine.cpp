// Copyright the flexc contributors.
// SPDX-License-Identifier: MIT
#include "flexc/machine.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <variant>

#include "flexc/error.hpp"
#include "flexc/lang.hpp"

namespace flexc::machine {

using lang::CallStmt;
using lang::Expr;
using lang::FunctionDef;
using lang::IndirectCall;
using lang::LibraryUnit;
using lang::VarDecl;
using transform::Image;
using transform::Region;
using transform::RegionRole;

CostModel cost_model_from_json(const nlohmann::json& j) {
  CostModel cm;
  auto get = [&](const char* key, int64_t& field) {
    if (j.contains(key))
      field = j.at(key).get<int64_t>();
  };
  get("plain_call", cm.plain_call);
  get("wrpkru", cm.wrpkru);
  get("mpk_full_gate_extra", cm.mpk_full_gate_extra);
  get("ept_rpc_round_trip", cm.ept_rpc_round_trip);
  get("heap_alloc", cm.heap_alloc);
  get("heap_free", cm.heap_free);
  get("stack_alloc", cm.stack_alloc);
  get("memory_access", cm.memory_access);
  return cm;
}

nlohmann::json cost_model_to_json(const CostModel& cm) {
  return nlohmann::json{{"plain_call", cm.plain_call},
                        {"wrpkru", cm.wrpkru},
                        {"mpk_full_gate_extra", cm.mpk_full_gate_extra},
                        {"ept_rpc_round_trip", cm.ept_rpc_round_trip},
                        {"heap_alloc", cm.heap_alloc},
                        {"heap_free", cm.heap_free},
                        {"stack_alloc", cm.stack_alloc},
                        {"memory_access", cm.memory_access}};
}

const char* to_string(EventKind k) {
  switch (k) {
  case EventKind::Call: return "call";
  case EventKind::GateEnter: return "gate-enter";
  case EventKind::GateExit: return "gate-exit";
  case EventKind::RpcSend: return "rpc-send";
  case EventKind::RpcServe: return "rpc-serve";
  case EventKind::Read: return "read";
  case EventKind::Write: return "write";
  case EventKind::Alloc: return "alloc";
  case EventKind::Free: return "free";
  case EventKind::Fault: return "fault";
  }
  return "?";
}

std::string Trace::to_jsonl() const {
  std::ostringstream out;
  for (const auto& e : events) {
    nlohmann::json j{{"event", to_string(e.kind)}, {"cycles", e.cycles}};
    if (!e.fn.empty())
      j["fn"] = e.fn;
    if (!e.var.empty())
      j["var"] = e.var;
    if (e.kind == EventKind::Read || e.kind == EventKind::Write ||
        e.kind == EventKind::Alloc || e.kind == EventKind::Free ||
        e.kind == EventKind::Fault) {
      j["addr"] = e.address;
      if (!e.region.empty())
        j["region"] = e.region;
    }
    if (e.kind == EventKind::Read || e.kind == EventKind::Write)
      j["value"] = e.value;
    if (e.from_comp >= 0)
      j["from"] = e.from_comp;
    if (e.to_comp >= 0)
      j["to"] = e.to_comp;
    if (!e.note.empty())
      j["note"] = e.note;
    out << j.dump() << "\n";
  }
  return out.str();
}

std::string Trace::summary() const {
  std::ostringstream out;
  out << "events: " << events.size() << "\n";
  out << "cycles: " << total_cycles << "\n";
  out << "gates: " << gate_latencies.size();
  if (!gate_latencies.empty()) {
    out << " (";
    for (size_t i = 0; i < gate_latencies.size(); ++i)
      out << (i ? ", " : "") << gate_latencies[i];
    out << ")";
  }
  out << "\n";
  if (faulted)
    out << "fault: " << fault.note << "\n";
  else
    out << "return: " << (final_return ? *final_return : 0) << "\n";
  return out.str();
}

namespace {

// Fail-stop signal: the fault event is already recorded when this is thrown.
struct FaultSignal {};

struct Slot {
  uint64_t base = 0;   // allocation address
  uint64_t access = 0; // load/store address (shadow for DSS slots)
  bool on_heap = false;
  bool on_shared_heap = false;
};

struct FnInfo {
  const FunctionDef* def = nullptr;
  const LibraryUnit* lib = nullptr;
  int comp = 0;
};

struct Interp {
  const Image& img;
  const CostModel& cm;
  const RunOptions& opts;
  Trace trace;

  std::unordered_map<uint64_t, long long> mem;
  std::vector<std::vector<long long>> reg_files; // one, or one per compartment (EPT)
  bool per_comp_regs = false;
  int cur_comp = 0;
  std::set<int> perms;

  std::vector<uint64_t> stack_ptr;
  std::vector<uint64_t> heap_ptr;
  uint64_t shared_heap_ptr = 0;
  int depth = 0;

  std::map<std::string, FnInfo> fns;
  std::map<std::string, std::string> global_owner;
  std::map<int, std::string> id_to_fn;

  struct Frame {
    const FunctionDef* fn = nullptr;
    int comp = 0;
    int stack_comp = 0;
    uint64_t stack_mark = 0;
    std::map<std::string, Slot> locals;
    std::vector<std::pair<std::string, Slot>> owned; // heap cells, freed LIFO
  };

  Interp(const Image& image, const CostModel& model, const RunOptions& options)
      : img(image), cm(model), opts(options) {}

  int ncomps() const { return static_cast<int>(img.cfg.compartments.size()); }
  const std::string& comp_name(int i) const { return img.cfg.compartments[i].name; }

  int comp_index(const std::string& name) const {
    for (int i = 0; i < ncomps(); ++i)
      if (comp_name(i) == name)
        return i;
    return -1;
  }

  std::vector<long long>& regs() {
    return per_comp_regs ? reg_files[cur_comp] : reg_files[0];
  }

  Event& emit(Event e) {
    trace.total_cycles += e.cycles;
    trace.events.push_back(std::move(e));
    return trace.events.back();
  }

  [[noreturn]] void fault(Event e, const std::string& note) {
    e.kind = EventKind::Fault;
    e.note = note;
    e.cycles = 0;
    trace.fault = e;
    trace.faulted = true;
    emit(std::move(e));
    throw FaultSignal{};
  }

  const Region& region_at(uint64_t addr, const std::string& var) {
    const Region* r = img.layout.find(addr);
    if (!r) {
      Event e;
      e.var = var;
      e.address = addr;
      e.from_comp = cur_comp;
      fault(e, "access to unmapped address");
    }
    return *r;
  }

  // A domain may touch a region when it is in the shared domain, when the
  // current permission set holds the owner's key, or when the region is
  // explicitly shared with a held key.
  bool allowed(const Region& r) const {
    if (r.owner == "shared")
      return true;
    int owner = comp_index(r.owner);
    if (owner >= 0) {
      // No isolation backend, no key guarding the pages.
      if (img.cfg.compartments[owner].mechanism == config::Mechanism::FuncCall)
        return true;
      if (perms.count(owner))
        return true;
    }
    for (int held : perms)
      for (const auto& s : r.shared_with)
        if (s == comp_name(held))
          return true;
    return false;
  }

  const Region& check_access(uint64_t addr, const std::string& var) {
    const Region& r = region_at(addr, var);
    if (!allowed(r)) {
      Event e;
      e.var = var;
      e.address = addr;
      e.from_comp = cur_comp;
      e.region = r.name;
      fault(e, "access to " + r.name + " (owner " + r.owner + ") denied");
    }
    return r;
  }

  long long load(const Slot& s, const std::string& var) {
    const Region& r = check_access(s.access, var);
    long long v = 0;
    auto it = mem.find(s.access);
    if (it != mem.end())
      v = it->second;
    Event e;
    e.kind = EventKind::Read;
    e.var = var;
    e.address = s.access;
    e.value = v;
    e.region = r.name;
    e.from_comp = cur_comp;
    e.cycles = cm.memory_access;
    emit(std::move(e));
    return v;
  }

  void store(const Slot& s, const std::string& var, long long v) {
    const Region& r = check_access(s.access, var);
    mem[s.access] = v;
    Event e;
    e.kind = EventKind::Write;
    e.var = var;
    e.address = s.access;
    e.value = v;
    e.region = r.name;
    e.from_comp = cur_comp;
    e.cycles = cm.memory_access;
    emit(std::move(e));
  }

  Slot alloc_slot(Frame& f, const VarDecl& v, const std::string& qual) {
    Slot s;
    int64_t charge = 0;
    if (v.placement == VarDecl::Placement::SharedHeap) {
      const Region* sh = img.layout.by_role(RegionRole::SharedHeap, "shared");
      if (!sh || shared_heap_ptr + transform::kCellSize > sh->start + sh->size) {
        Event e;
        e.var = qual;
        e.from_comp = cur_comp;
        fault(e, "shared heap exhausted");
      }
      s.base = s.access = shared_heap_ptr;
      shared_heap_ptr += transform::kCellSize;
      s.on_heap = s.on_shared_heap = true;
      charge = cm.heap_alloc;
    } else if (v.storage == lang::Storage::Heap) {
      const Region* h = img.layout.by_role(RegionRole::Heap, comp_name(f.comp));
      if (heap_ptr[f.comp] + transform::kCellSize > h->start + h->size) {
        Event e;
        e.var = qual;
        e.from_comp = cur_comp;
        fault(e, "heap exhausted in " + comp_name(f.comp));
      }
      s.base = s.access = heap_ptr[f.comp];
      heap_ptr[f.comp] += transform::kCellSize;
      s.on_heap = true;
      charge = cm.heap_alloc;
    } else {
      const Region* st = img.layout.by_role(RegionRole::Stack, comp_name(f.stack_comp));
      if (stack_ptr[f.stack_comp] + transform::kCellSize > st->start + st->size) {
        Event e;
        e.var = qual;
        e.from_comp = cur_comp;
        fault(e, "stack exhausted in " + comp_name(f.stack_comp));
      }
      s.base = stack_ptr[f.stack_comp];
      stack_ptr[f.stack_comp] += transform::kCellSize;
      s.access = s.base;
      if (v.placement == VarDecl::Placement::DssShadow)
        s.access = s.base + img.stack_size; // the shadow slot
      charge = cm.stack_alloc;
    }
    const Region& alloc_region = check_access(s.base, qual);
    mem[s.access] = 0;
    Event e;
    e.kind = EventKind::Alloc;
    e.var = qual;
    e.address = s.base;
    e.region = alloc_region.name;
    e.from_comp = cur_comp;
    e.cycles = charge;
    emit(std::move(e));
    if (s.on_heap)
      f.owned.emplace_back(qual, s);
    return s;
  }

  void release_frame(Frame& f) {
    for (auto it = f.owned.rbegin(); it != f.owned.rend(); ++it) {
      const auto& [qual, s] = *it;
      if (s.on_shared_heap)
        shared_heap_ptr -= transform::kCellSize;
      else
        heap_ptr[f.comp] -= transform::kCellSize;
      Event e;
      e.kind = EventKind::Free;
      e.var = qual;
      e.address = s.base;
      const Region* r = img.layout.find(s.base);
      e.region = r ? r->name : "";
      e.from_comp = cur_comp;
      e.cycles = cm.heap_free;
      emit(std::move(e));
    }
    stack_ptr[f.stack_comp] = f.stack_mark;
  }

  // Variable lookup: locals shadow globals; the qualified name feeds the
  // trace so write sequences stay comparable across builds.
  Slot find_slot(Frame& f, const std::string& name, std::string& qual) {
    auto it = f.locals.find(name);
    if (it != f.locals.end()) {
      qual = f.fn->name + "." + name;
      return it->second;
    }
    auto g = img.layout.global_addr.find(name);
    if (g != img.layout.global_addr.end()) {
      auto owner = global_owner.find(name);
      qual = (owner != global_owner.end() ? owner->second : "?") + "." + name;
      Slot s;
      s.base = s.access = g->second;
      return s;
    }
    Event e;
    e.var = name;
    e.from_comp = cur_comp;
    fault(e, "variable '" + name + "' has no storage");
  }

  long long eval(Frame& f, const Expr& e) {
    switch (e.kind) {
    case Expr::Kind::Lit:
      return e.lit;
    case Expr::Kind::Reg:
      return regs()[e.reg];
    case Expr::Kind::FnRef: {
      auto it = img.function_ids.find(e.name);
      if (it != img.function_ids.end())
        return it->second;
      Event ev;
      ev.fn = e.name;
      ev.from_comp = cur_comp;
      fault(ev, "function '" + e.name + "' has no designator");
    }
    case Expr::Kind::Var: {
      std::string qual;
      Slot s = find_slot(f, e.name, qual);
      return load(s, qual);
    }
    case Expr::Kind::Add: {
      long long sum = 0;
      for (const auto& kid : e.kids)
        sum += eval(f, kid);
      return sum;
    }
    }
    return 0;
  }

  const FnInfo& fn_info(const std::string& name) {
    auto it = fns.find(name);
    if (it == fns.end()) {
      Event e;
      e.fn = name;
      e.from_comp = cur_comp;
      fault(e, "function '" + name + "' is not defined");
    }
    return it->second;
  }

  long long do_call(const std::string& callee, const std::vector<long long>& args,
                    CallStmt::Gate gate) {
    const FnInfo& info = fn_info(callee);
    switch (gate) {
    case CallStmt::Gate::Plain: {
      Event e;
      e.kind = EventKind::Call;
      e.fn = callee;
      e.from_comp = cur_comp;
      e.to_comp = info.comp;
      e.cycles = cm.plain_call;
      emit(std::move(e));
      auto& file = regs();
      for (size_t i = 0; i < args.size(); ++i)
        file[i] = args[i];
      return exec_function(info, args);
    }
    case CallStmt::Gate::MpkLight:
    case CallStmt::Gate::MpkFull: {
      bool light = gate == CallStmt::Gate::MpkLight;
      int64_t charge = cm.mpk_gate(light);
      Event e;
      e.kind = EventKind::GateEnter;
      e.fn = callee;
      e.from_comp = cur_comp;
      e.to_comp = info.comp;
      e.cycles = charge;
      emit(std::move(e));
      trace.gate_latencies.push_back(charge);

      int caller_comp = cur_comp;
      auto saved_perms = perms;
      std::vector<long long> saved_regs;
      auto& file = regs();
      if (!light) {
        // Full gate: park the caller's register file and hand the callee a
        // cleared one with only the arguments loaded.
        saved_regs = file;
        std::fill(file.begin(), file.end(), 0);
      }
      for (size_t i = 0; i < args.size(); ++i)
        file[i] = args[i];
      perms = {info.comp};
      cur_comp = info.comp;
      long long result = exec_function(info, args);
      cur_comp = caller_comp;
      perms = saved_perms;
      if (!light)
        regs() = saved_regs;

      Event x;
      x.kind = EventKind::GateExit;
      x.fn = callee;
      x.from_comp = info.comp;
      x.to_comp = caller_comp;
      x.cycles = 0;
      emit(std::move(x));
      return result;
    }
    case CallStmt::Gate::EptRpc: {
      auto legal = img.legal_entries.find(comp_name(info.comp));
      bool ok = legal != img.legal_entries.end() &&
                std::find(legal->second.begin(), legal->second.end(), callee) !=
                    legal->second.end();
      if (!ok) {
        Event e;
        e.fn = callee;
        e.from_comp = cur_comp;
        e.to_comp = info.comp;
        fault(e, "rpc into '" + callee + "' is not a legal entry of " +
                     comp_name(info.comp));
      }
      Event e;
      e.kind = EventKind::RpcSend;
      e.fn = callee;
      e.from_comp = cur_comp;
      e.to_comp = info.comp;
      e.cycles = cm.ept_rpc_round_trip;
      emit(std::move(e));
      trace.gate_latencies.push_back(cm.ept_rpc_round_trip);

      int caller_comp = cur_comp;
      auto saved_perms = perms;
      cur_comp = info.comp;
      perms = {info.comp};
      Event sv;
      sv.kind = EventKind::RpcServe;
      sv.fn = callee;
      sv.from_comp = caller_comp;
      sv.to_comp = info.comp;
      sv.cycles = 0;
      emit(std::move(sv));
      // The callee's own register file receives the arguments; the rest of
      // it keeps whatever its compartment last held (zeros at boot).
      auto& file = regs();
      for (size_t i = 0; i < args.size(); ++i)
        file[i] = args[i];
      long long result = exec_function(info, args);
      cur_comp = caller_comp;
      perms = saved_perms;

      Event x;
      x.kind = EventKind::GateExit;
      x.fn = callee;
      x.from_comp = info.comp;
      x.to_comp = caller_comp;
      x.cycles = 0;
      emit(std::move(x));
      return result;
    }
    }
    return 0;
  }

  long long exec_function(const FnInfo& info, const std::vector<long long>& args) {
    if (++depth > opts.max_call_depth) {
      Event e;
      e.fn = info.def->name;
      e.from_comp = cur_comp;
      fault(e, "call depth exceeded");
    }
    Frame f;
    f.fn = info.def;
    f.comp = info.comp;
    // Shared-stack builds run everything on the default compartment's stack;
    // otherwise each compartment uses its own.
    f.stack_comp = img.cfg.sharing == config::Sharing::SharedStack && ncomps() > 1
                       ? *img.cfg.default_compartment()
                       : info.comp;
    f.stack_mark = stack_ptr[f.stack_comp];

    for (size_t i = 0; i < info.def->params.size(); ++i) {
      VarDecl p;
      p.name = info.def->params[i];
      p.storage = lang::Storage::Stack;
      std::string qual = info.def->name + "." + p.name;
      Slot s = alloc_slot(f, p, qual);
      mem[s.access] = args[i]; // binding, not a program store
      f.locals[p.name] = s;
    }

    long long result = 0;
    for (const auto& stmt : f.fn->body) {
      if (const auto* v = std::get_if<VarDecl>(&stmt)) {
        if (v->storage == lang::Storage::Global)
          continue; // placed at build time
        std::string qual = f.fn->name + "." + v->name;
        f.locals[v->name] = alloc_slot(f, *v, qual);
      } else if (const auto* a = std::get_if<lang::Assign>(&stmt)) {
        long long value = eval(f, a->value);
        std::string qual;
        Slot s = find_slot(f, a->dest, qual);
        store(s, qual, value);
      } else if (const auto* r = std::get_if<lang::Read>(&stmt)) {
        std::string src_qual;
        Slot src = find_slot(f, r->src, src_qual);
        long long value = load(src, src_qual);
        std::string dst_qual;
        Slot dst = find_slot(f, r->dest, dst_qual);
        store(dst, dst_qual, value);
      } else if (const auto* c = std::get_if<CallStmt>(&stmt)) {
        std::vector<long long> vals;
        for (const auto& arg : c->args)
          vals.push_back(eval(f, arg));
        long long value = do_call(c->callee, vals, c->gate);
        if (c->dest) {
          std::string qual;
          Slot s = find_slot(f, *c->dest, qual);
          store(s, qual, value);
        }
      } else if (const auto* ic = std::get_if<IndirectCall>(&stmt)) {
        std::string fp_qual;
        Slot fp = find_slot(f, ic->fn_var, fp_qual);
        long long id = load(fp, fp_qual);
        std::vector<long long> vals;
        for (const auto& arg : ic->args)
          vals.push_back(eval(f, arg));
        auto named = id_to_fn.find(static_cast<int>(id));
        bool in_set = named != id_to_fn.end() &&
                      std::find(ic->callable_set.begin(), ic->callable_set.end(),
                                named->second) != ic->callable_set.end();
        if (!in_set) {
          Event e;
          e.var = fp_qual;
          e.value = id;
          e.from_comp = cur_comp;
          fault(e, "indirect target " + std::to_string(id) +
                       " is outside the callable set");
        }
        auto d = ic->dispatch.find(named->second);
        const std::string& actual = d != ic->dispatch.end() ? d->second : named->second;
        long long value = do_call(actual, vals, CallStmt::Gate::Plain);
        if (ic->dest) {
          std::string qual;
          Slot s = find_slot(f, *ic->dest, qual);
          store(s, qual, value);
        }
      } else if (const auto* ret = std::get_if<lang::ReturnStmt>(&stmt)) {
        result = eval(f, ret->value);
        break;
      } else {
        Event e;
        e.fn = f.fn->name;
        e.from_comp = cur_comp;
        fault(e, "gate placeholder reached the machine");
      }
    }
    release_frame(f);
    --depth;
    return result;
  }
};

void reject_placeholders(const lang::Program& p) {
  for (const auto& lib : p.libraries)
    for (const auto& fn : lib.functions)
      for (const auto& stmt : fn.body)
        if (std::holds_alternative<lang::GatePlaceholder>(stmt))
          throw BuildError("malformed-image",
                           "image still contains a gate placeholder in '" + fn.name + "'");
}

} // namespace

Trace run(const Image& img, const CostModel& cm, const RunOptions& opts) {
  reject_placeholders(img.program);

  Interp in(img, cm, opts);

  const FunctionDef* entry = img.program.find_function(img.entry);
  if (!entry)
    throw BuildError("config-invalid", "entry function '" + img.entry + "' is not defined");
  if (!entry->params.empty())
    throw BuildError("config-invalid", "entry function '" + img.entry + "' takes parameters");

  auto entry_comp = img.compartment_of_function(img.entry);
  auto default_comp = img.cfg.default_compartment();
  if (!entry_comp || !default_comp)
    throw BuildError("config-invalid", "image has no usable entry compartment");

  in.per_comp_regs = img.cfg.mechanism() == config::Mechanism::Ept;
  in.reg_files.assign(in.per_comp_regs ? in.ncomps() : 1,
                      std::vector<long long>(lang::kNumRegisters, 0));
  in.stack_ptr.assign(in.ncomps(), 0);
  in.heap_ptr.assign(in.ncomps(), 0);
  for (int i = 0; i < in.ncomps(); ++i) {
    const Region* st = img.layout.by_role(RegionRole::Stack, in.comp_name(i));
    const Region* hp = img.layout.by_role(RegionRole::Heap, in.comp_name(i));
    if (!st || !hp)
      throw BuildError("malformed-image",
                       "compartment " + in.comp_name(i) + " lacks stack or heap");
    in.stack_ptr[i] = st->start;
    in.heap_ptr[i] = hp->start;
  }
  in.shared_heap_ptr = img.layout.shared_heap_alloc_base;

  if (opts.forge_entry_from) {
    int forger = in.comp_index(*opts.forge_entry_from);
    if (forger < 0)
      throw BuildError("config-invalid",
                       "no compartment named '" + *opts.forge_entry_from + "'");
    // The attack emulation: attacker's key stays loaded while the victim's
    // code runs, exactly what a gate would have prevented.
    in.cur_comp = *entry_comp;
    in.perms = {forger};
  } else {
    if (*entry_comp != *default_comp)
      throw BuildError("config-invalid",
                       "entry function '" + img.entry + "' must live in the default compartment");
    in.cur_comp = *default_comp;
    in.perms = {*default_comp};
  }

  for (const auto& [name, id] : img.function_ids) {
    in.id_to_fn[id] = name;
    const LibraryUnit* lib = img.program.library_of_function(name);
    auto comp = img.cfg.compartment_of(lib->name);
    in.fns[name] = {img.program.find_function(name), lib, *comp};
  }
  for (const auto& lib : img.program.libraries) {
    for (const auto& g : lib.globals)
      in.global_owner[g.name] = lib.name;
    for (const auto& fn : lib.functions)
      for (const auto& stmt : fn.body)
        if (const auto* v = std::get_if<VarDecl>(&stmt))
          if (v->storage == lang::Storage::Global)
            in.global_owner[v->name] = lib.name;
  }

  try {
    long long result = in.exec_function(in.fn_info(img.entry), {});
    in.trace.final_return = result;
  } catch (FaultSignal&) {
    // fault event already recorded
  }
  return std::move(in.trace);
}

Trace run_program(const lang::Program& program, const CostModel& cm,
                  uint64_t stack_size, const std::string& entry) {
  return run(transform::make_ungated_image(program, stack_size, entry), cm);
}

namespace {

transform::Image gate_fixture(config::Mechanism backend) {
  static const char* kSource = R"(
library mg_a {
  fn main() {
    var x: int
    x = call mg_callee()
    return x
  }
}
library mg_b {
  fn mg_callee() {
    return 7
  }
}
)";
  lang::Program p = lang::parse_program(kSource);
  config::ImageConfig cfg;
  if (backend == config::Mechanism::FuncCall) {
    config::CompartmentDecl all;
    all.name = "comp1";
    all.mechanism = backend;
    all.is_default = true;
    cfg.compartments.push_back(all);
    cfg.library_map = {{"mg_a", "comp1"}, {"mg_b", "comp1"}};
  } else {
    config::CompartmentDecl c1, c2;
    c1.name = "comp1";
    c1.mechanism = backend;
    c1.is_default = true;
    c2.name = "comp2";
    c2.mechanism = backend;
    cfg.compartments = {c1, c2};
    cfg.library_map = {{"mg_a", "comp1"}, {"mg_b", "comp2"}};
  }
  cfg.sharing = backend == config::Mechanism::MpkLight ? config::Sharing::SharedStack
                                                       : config::Sharing::Dss;
  for (const auto& [lib, comp] : cfg.library_map)
    cfg.component_hardening[lib] = {};
  return transform::instantiate(transform::insert_gate_placeholders(p), cfg);
}

} // namespace

int64_t measure_gate_latency(config::Mechanism backend, const CostModel& cm) {
  Trace t = run(gate_fixture(backend), cm);
  for (const auto& e : t.events) {
    if (e.kind == EventKind::GateEnter || e.kind == EventKind::RpcSend)
      return e.cycles;
    if (e.kind == EventKind::Call && e.fn == "mg_callee")
      return e.cycles;
  }
  throw BuildError("config-invalid", "gate fixture produced no crossing");
}

int64_t measure_alloc_latency(config::Sharing strategy, int n_vars, const CostModel& cm) {
  std::ostringstream src;
  src << "library ma_a {\n  fn main() {\n    call ma_f()\n    return 0\n  }\n}\n";
  src << "library ma_b {\n  fn ma_f() {\n";
  for (int i = 0; i < n_vars; ++i)
    src << "    var s" << i << ": int shared(ma_a)\n";
  src << "    return 0\n  }\n}\n";

  lang::Program p = lang::parse_program(src.str());
  config::ImageConfig cfg;
  config::CompartmentDecl c1, c2;
  c1.name = "comp1";
  c1.mechanism = config::Mechanism::MpkDss;
  c1.is_default = true;
  c2.name = "comp2";
  c2.mechanism = config::Mechanism::MpkDss;
  cfg.compartments = {c1, c2};
  cfg.library_map = {{"ma_a", "comp1"}, {"ma_b", "comp2"}};
  cfg.sharing = strategy;
  for (const auto& [lib, comp] : cfg.library_map)
    cfg.component_hardening[lib] = {};

  Trace t = run(transform::instantiate(transform::insert_gate_placeholders(p), cfg), cm);
  int64_t total = 0;
  for (const auto& e : t.events)
    if (e.kind == EventKind::Alloc || e.kind == EventKind::Free)
      total += e.cycles;
  return total;
}

} // namespace flexc::machine
