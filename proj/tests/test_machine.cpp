// Copyright the flexc contributors.
// SPDX-License-Identifier: MIT
#include <doctest.h>

#include <sstream>

#include "flexc/error.hpp"
#include "flexc/machine.hpp"
#include "support.hpp"

using namespace flexc;
using namespace flexc::lang;
using namespace flexc::machine;
using flexc::transform::Image;
using flexc::transform::RegionRole;

namespace {

Image build(const char* src, const config::ImageConfig& cfg,
            uint64_t stack_size = transform::kDefaultStackSize) {
  Program p = parse_program(src);
  return transform::instantiate(transform::insert_gate_placeholders(p), cfg, stack_size);
}

std::vector<EventKind> kinds_of(const Trace& t) {
  std::vector<EventKind> ks;
  for (const auto& e : t.events)
    ks.push_back(e.kind);
  return ks;
}

int64_t sum_cycles(const Trace& t) {
  int64_t total = 0;
  for (const auto& e : t.events)
    total += e.cycles;
  return total;
}

} // namespace

TEST_CASE("cost model json") {
  CostModel cm;
  CHECK(cost_model_from_json(cost_model_to_json(cm)) == cm);
  // partial documents override only what they mention
  CostModel tweaked = cost_model_from_json(nlohmann::json{{"wrpkru", 11}});
  CHECK(tweaked.wrpkru == 11);
  CHECK(tweaked.plain_call == cm.plain_call);
  CHECK(tweaked.ept_rpc_round_trip == cm.ept_rpc_round_trip);
  // gate charges compose from the knobs
  CHECK(cm.mpk_gate(true) == 2 * cm.wrpkru + cm.plain_call);
  CHECK(cm.mpk_gate(false) == 2 * cm.wrpkru + cm.mpk_full_gate_extra + cm.plain_call);
}

TEST_CASE("straight-line execution") {
  Trace t = run_program(parse_program(R"(library m {
  fn main() {
    var a: int
    a = 40 + 2
    return a + -2 + 4
  }
}
)"));
  CHECK_FALSE(t.faulted);
  CHECK(t.final_return == 44);
  // alloc, write, read for the return expression
  CHECK(kinds_of(t) == std::vector<EventKind>{EventKind::Alloc, EventKind::Write,
                                              EventKind::Read});
  CHECK(t.total_cycles == 2 + 1 + 1);
  CHECK(t.gate_latencies.empty());
}

TEST_CASE("event sequence of a call") {
  Trace t = run_program(parse_program(R"(library m {
  fn add_one(v: int) { return v + 1 }
  fn main() {
    var r: int
    r = call add_one(5)
    return r
  }
}
)"));
  REQUIRE_FALSE(t.faulted);
  CHECK(t.final_return == 6);
  // entry runs without a call event; the inner call allocates its parameter
  std::vector<EventKind> want{
      EventKind::Alloc, // main.r
      EventKind::Call,  // add_one
      EventKind::Alloc, // add_one.v (binding writes silently)
      EventKind::Read,  // v in the return expression
      EventKind::Write, // main.r = result
      EventKind::Read,  // main.r for the return
  };
  CHECK(kinds_of(t) == want);
  const Event& call = t.events[1];
  CHECK(call.fn == "add_one");
  CHECK(call.from_comp == 0);
  CHECK(call.to_comp == 0);
  CHECK(call.cycles == CostModel{}.plain_call);
  // qualified names distinguish frames
  CHECK(t.events[2].var == "add_one.v");
  CHECK(t.events[4].var == "main.r");
}

TEST_CASE("total cycles equal the event sum") {
  for (const char* src : testsupport::overhead_corpus()) {
    Trace t = run_program(parse_program(src));
    REQUIRE_FALSE(t.faulted);
    CHECK(t.total_cycles == sum_cycles(t));
  }
  // and with gates in play
  std::mt19937_64 rng(77);
  for (auto mech : {config::Mechanism::MpkDss, config::Mechanism::Ept}) {
    auto c = testsupport::make_isolation_case(rng, mech, true);
    Trace t = run(build(c.source.c_str(), c.cfg));
    REQUIRE_FALSE(t.faulted);
    CHECK(t.total_cycles == sum_cycles(t));
    int64_t gates = 0;
    for (const auto& e : t.events)
      if (e.kind == EventKind::GateEnter || e.kind == EventKind::RpcSend)
        gates += e.cycles;
    int64_t recorded = 0;
    for (int64_t g : t.gate_latencies)
      recorded += g;
    CHECK(gates == recorded);
  }
}

TEST_CASE("reads trace the moved value") {
  Trace t = run_program(parse_program(R"(library m {
  var g: int
  fn main() {
    var d: int
    g = 9
    read d <- g
    return d
  }
}
)"));
  REQUIRE_FALSE(t.faulted);
  // the move is a read of the source followed by a write of the destination
  REQUIRE(t.events.size() == 5);
  CHECK(t.events[2].kind == EventKind::Read);
  CHECK(t.events[2].var == "m.g");
  CHECK(t.events[2].value == 9);
  CHECK(t.events[3].kind == EventKind::Write);
  CHECK(t.events[3].var == "main.d");
  CHECK(t.events[3].value == 9);
}

TEST_CASE("uninitialized storage reads zero") {
  Trace t = run_program(parse_program(R"(library m {
  var never_set: int
  fn main() {
    var local: int
    return never_set + local
  }
}
)"));
  CHECK(t.final_return == 0);
}

TEST_CASE("function statics persist across calls") {
  Trace t = run_program(parse_program(R"(library m {
  fn tick() {
    var hits: int storage=global
    hits = hits + 1
    return hits
  }
  fn main() {
    var a: int
    call tick()
    call tick()
    a = call tick()
    return a
  }
}
)"));
  CHECK(t.final_return == 3);
}

TEST_CASE("heap slots free in reverse order and addresses recycle") {
  Trace t = run_program(parse_program(R"(library m {
  fn work() {
    var h1: int storage=heap
    var h2: int storage=heap
    h1 = 1
    h2 = 2
    return h1 + h2
  }
  fn main() {
    var r: int
    r = call work()
    r = call work()
    return r
  }
}
)"));
  REQUIRE_FALSE(t.faulted);
  CHECK(t.final_return == 3);
  std::vector<const Event*> allocs, frees;
  for (const auto& e : t.events) {
    if (e.kind == EventKind::Alloc && e.region.find("heap") != std::string::npos)
      allocs.push_back(&e);
    if (e.kind == EventKind::Free)
      frees.push_back(&e);
  }
  REQUIRE(allocs.size() == 4);
  REQUIRE(frees.size() == 4);
  // LIFO within the frame: h2 releases before h1
  CHECK(frees[0]->var == "work.h2");
  CHECK(frees[1]->var == "work.h1");
  // the second call reuses the same bump-allocated cells
  CHECK(allocs[2]->address == allocs[0]->address);
  CHECK(allocs[3]->address == allocs[1]->address);
  // charges are the model's alloc/free pair
  CostModel cm;
  CHECK(allocs[0]->cycles == cm.heap_alloc);
  CHECK(frees[0]->cycles == cm.heap_free);
}

TEST_CASE("stack exhaustion is a fault, not a crash") {
  Program p = parse_program(R"(library m {
  fn f(n: int) {
    var a: int
    a = call f(n)
    return a
  }
  fn main() {
    var r: int
    r = call f(1)
    return r
  }
}
)");
  Trace t = run(transform::make_ungated_image(p, 4096));
  REQUIRE(t.faulted);
  CHECK(t.fault.note.find("stack exhausted") != std::string::npos);
  CHECK_FALSE(t.final_return.has_value());
}

TEST_CASE("runaway recursion hits the depth cap") {
  // no params, no locals: the stack never grows, the nesting cap fires
  Program p = parse_program(R"(library m {
  fn f() {
    call f()
    return 0
  }
  fn main() {
    call f()
    return 0
  }
}
)");
  Trace t = run_program(p);
  REQUIRE(t.faulted);
  CHECK(t.fault.note.find("call depth exceeded") != std::string::npos);

  RunOptions opts;
  opts.max_call_depth = 10;
  Trace shallow = run(transform::make_ungated_image(p), {}, opts);
  REQUIRE(shallow.faulted);
  // the entry frame plus nine callees fill the cap; the tenth call is
  // announced and then refused a frame
  int calls = 0;
  for (const auto& e : shallow.events)
    calls += e.kind == EventKind::Call ? 1 : 0;
  CHECK(calls == 10);
}

TEST_CASE("indirect calls dispatch by designator") {
  Trace t = run_program(parse_program(R"(library m {
  var fp: int
  fn pick_a() { return 10 }
  fn pick_b() { return 20 }
  fn main() {
    var r: int
    var s: int
    fp = pick_b
    r = icall fp() targets(pick_a, pick_b)
    fp = pick_a
    s = icall fp() targets(pick_a, pick_b)
    return r + s
  }
}
)"));
  REQUIRE_FALSE(t.faulted);
  CHECK(t.final_return == 30);
}

TEST_CASE("indirect call faults") {
  SUBCASE("literal outside any designator") {
    Trace t = run_program(parse_program(R"(library m {
  var fp: int
  fn cb() { return 1 }
  fn main() {
    fp = 99
    icall fp() targets(cb)
    return 0
  }
}
)"));
    REQUIRE(t.faulted);
    CHECK(t.fault.note.find("outside the callable set") != std::string::npos);
    CHECK(t.fault.value == 99);
  }
  SUBCASE("designator of a function not in the set") {
    Trace t = run_program(parse_program(R"(library m {
  var fp: int
  fn cb() { return 1 }
  fn other() { return 2 }
  fn main() {
    fp = other
    icall fp() targets(cb)
    return 0
  }
}
)"));
    REQUIRE(t.faulted);
    CHECK(t.fault.note.find("outside the callable set") != std::string::npos);
  }
  SUBCASE("uninitialized pointer") {
    Trace t = run_program(parse_program(R"(library m {
  var fp: int
  fn cb() { return 1 }
  fn main() {
    icall fp() targets(cb)
    return 0
  }
}
)"));
    REQUIRE(t.faulted); // designator 0 names nothing
  }
}

TEST_CASE("private memory faults under every isolating backend") {
  std::mt19937_64 rng(20260814);
  for (auto mech : {config::Mechanism::MpkLight, config::Mechanism::MpkDss,
                    config::Mechanism::Ept}) {
    auto c = testsupport::make_isolation_case(rng, mech, false);
    CAPTURE(c.source);
    Trace t = run(build(c.source.c_str(), c.cfg));
    REQUIRE(t.faulted);
    CHECK(t.fault.var == "vault.g_hidden");
    CHECK(t.fault.note.find("denied") != std::string::npos);
    CHECK_FALSE(t.final_return.has_value());
    // the same probe succeeds when nothing is isolated
    auto open_cfg = testsupport::make_config({{"trusted", "vault"}},
                                             config::Mechanism::FuncCall,
                                             config::Sharing::Dss);
    Trace open = run(build(c.source.c_str(), open_cfg));
    CHECK_FALSE(open.faulted);
  }
}

TEST_CASE("gated sharing returns the written value") {
  std::mt19937_64 rng(4242);
  for (auto mech : {config::Mechanism::MpkLight, config::Mechanism::MpkDss,
                    config::Mechanism::Ept}) {
    auto c = testsupport::make_isolation_case(rng, mech, true);
    CAPTURE(c.source);
    Trace t = run(build(c.source.c_str(), c.cfg));
    REQUIRE_FALSE(t.faulted);
    CHECK(t.final_return == c.expected);
    CHECK(t.gate_latencies.size() == 1);
  }
}

TEST_CASE("write sequences agree across backends") {
  const char* src = R"(library a {
  fn main() {
    var out: int
    call put(21)
    call put(34)
    read out <- box
    return out
  }
}
library b {
  var box: int shared(a)
  fn put(v: int) {
    box = box + v
    return box
  }
}
)";
  std::vector<std::pair<std::string, long long>> reference;
  for (auto mech : {config::Mechanism::FuncCall, config::Mechanism::MpkLight,
                    config::Mechanism::MpkDss, config::Mechanism::Ept}) {
    auto cfg = testsupport::make_config({{"a"}, {"b"}}, mech,
                                        mech == config::Mechanism::MpkLight
                                            ? config::Sharing::SharedStack
                                            : config::Sharing::Dss);
    Trace t = run(build(src, cfg));
    REQUIRE_FALSE(t.faulted);
    CHECK(t.final_return == 55);
    std::vector<std::pair<std::string, long long>> writes;
    for (const auto& e : t.events)
      if (e.kind == EventKind::Write)
        writes.emplace_back(e.var, e.value);
    if (reference.empty())
      reference = writes;
    else
      CHECK(writes == reference);
  }
}

TEST_CASE("full gates clear the callee's register view") {
  const char* src = R"(library caller {
  fn taint(x: int) { return x }
  fn main() {
    var r: int
    call taint(41)
    r = call probe()
    return r
  }
}
library victim {
  fn probe() {
    var seen: int
    seen = reg(0)
    return seen
  }
}
)";
  auto two = [&](config::Mechanism mech, config::Sharing sharing) {
    return run(build(src, testsupport::make_config({{"caller"}, {"victim"}}, mech, sharing)));
  };
  // same compartment: the stale argument register is visible
  Trace same = run(build(src, testsupport::make_config({{"caller", "victim"}},
                                                       config::Mechanism::MpkDss,
                                                       config::Sharing::Dss)));
  CHECK(same.final_return == 41);
  // full MPK and EPT hand the callee a clean file
  CHECK(two(config::Mechanism::MpkDss, config::Sharing::Dss).final_return == 0);
  CHECK(two(config::Mechanism::Ept, config::Sharing::Dss).final_return == 0);
  // light gates skip the scrub; the leak is the price of the faster crossing
  CHECK(two(config::Mechanism::MpkLight, config::Sharing::SharedStack).final_return == 41);
}

TEST_CASE("full gates restore the caller's registers") {
  const char* src = R"(library caller {
  fn taint(x: int) { return x }
  fn main() {
    var r: int
    call taint(41)
    call clobber(7)
    r = reg(0)
    return r
  }
}
library victim {
  fn clobber(v: int) { return v }
}
)";
  Trace t = run(build(src, testsupport::make_config({{"caller"}, {"victim"}},
                                                    config::Mechanism::MpkDss,
                                                    config::Sharing::Dss)));
  REQUIRE_FALSE(t.faulted);
  // the gate parked r0=41, loaded 7 for the callee, then restored
  CHECK(t.final_return == 41);
}

TEST_CASE("ept compartments keep separate register files") {
  const char* src = R"(library a {
  fn main() {
    var r: int
    var s: int
    r = call remember(5)
    s = call recall()
    return s
  }
}
library b {
  fn remember(v: int) { return v }
  fn recall() { return reg(0) }
}
)";
  auto cfg = testsupport::make_config({{"a"}, {"b"}}, config::Mechanism::Ept,
                                      config::Sharing::Dss);
  Trace t = run(build(src, cfg));
  REQUIRE_FALSE(t.faulted);
  // the first rpc loaded 5 into b's file and nothing cleared it since
  CHECK(t.final_return == 5);
  // serve events recorded for both crossings
  int serves = 0;
  for (const auto& e : t.events)
    serves += e.kind == EventKind::RpcServe ? 1 : 0;
  CHECK(serves == 2);
}

TEST_CASE("rpc entry control") {
  const char* src = R"(library a {
  fn main() {
    var r: int
    r = call serve(3)
    return r
  }
}
library b {
  fn serve(v: int) { return v }
}
)";
  auto cfg = testsupport::make_config({{"a"}, {"b"}}, config::Mechanism::Ept,
                                      config::Sharing::Dss);
  Image img = build(src, cfg);
  CHECK_FALSE(run(img).faulted);

  // strip the entry list: the same rpc is now refused at the boundary
  Image stripped = img;
  stripped.legal_entries["comp2"].clear();
  Trace t = run(stripped);
  REQUIRE(t.faulted);
  CHECK(t.fault.note.find("not a legal entry") != std::string::npos);
  CHECK(t.fault.fn == "serve");
}

TEST_CASE("forged entry transfers skip the gate and get caught") {
  const char* src = R"(library app {
  fn main() {
    var r: int
    r = call read_secret()
    return r
  }
}
library vault {
  var secret: int
  fn read_secret() {
    return secret
  }
}
)";
  auto cfg = testsupport::make_config({{"app"}, {"vault"}}, config::Mechanism::MpkDss,
                                      config::Sharing::Dss);
  Image img = build(src, cfg);
  // aim execution straight at the guarded function, bypassing the build-time
  // rule that entries live in the default compartment
  img.entry = "read_secret";
  // an ordinary run refuses such an image; only a forged run may start there
  CHECK_THROWS_AS(run(img), BuildError);
  RunOptions opts;
  opts.forge_entry_from = "comp1";
  Trace t = run(img, {}, opts);
  REQUIRE(t.faulted);
  CHECK(t.fault.var == "vault.secret");
  CHECK(t.fault.region == "comp2.data");

  // forging from the victim's own compartment is a plain run and succeeds
  RunOptions self;
  self.forge_entry_from = "comp2";
  CHECK_FALSE(run(img, {}, self).faulted);

  RunOptions bad;
  bad.forge_entry_from = "fort_knox";
  CHECK_THROWS_AS(run(img, {}, bad), BuildError);
}

TEST_CASE("run rejects malformed images") {
  Program p = parse_program(R"(library a {
  fn main() {
    call helper()
    return 0
  }
}
library b {
  fn helper() { return 0 }
}
)");
  Image img = transform::make_ungated_image(p);
  // smuggle an unlowered placeholder back in
  img.program = transform::insert_gate_placeholders(p);
  try {
    run(img);
    FAIL("expected BuildError");
  } catch (const BuildError& e) {
    CHECK(e.kind() == "malformed-image");
  }

  Image no_entry = transform::make_ungated_image(p);
  no_entry.entry = "ghost";
  CHECK_THROWS_AS(run(no_entry), BuildError);

  // entry functions take no parameters
  Program withp = parse_program(R"(library a {
  fn main(v: int) { return v }
}
)");
  CHECK_THROWS_AS(run(transform::make_ungated_image(withp)), BuildError);
}

TEST_CASE("trace serialization") {
  Trace t = run_program(parse_program(R"(library m {
  var g: int
  fn main() {
    g = 3
    return g
  }
}
)"));
  std::string jsonl = t.to_jsonl();
  std::istringstream in(jsonl);
  std::string line;
  size_t lines = 0;
  while (std::getline(in, line)) {
    nlohmann::json j = nlohmann::json::parse(line);
    CHECK(j.contains("event"));
    CHECK(j.contains("cycles"));
    ++lines;
  }
  CHECK(lines == t.events.size());

  std::string s = t.summary();
  CHECK(s.find("cycles: ") != std::string::npos);
  CHECK(s.find("return: 3") != std::string::npos);

  Trace f = run_program(parse_program(R"(library m {
  var fp: int
  fn main() {
    icall fp() targets(main)
    return 0
  }
}
)"));
  REQUIRE(f.faulted);
  CHECK(f.summary().find("fault: ") != std::string::npos);
}

TEST_CASE("gate crossing charges") {
  CostModel cm;
  CHECK(measure_gate_latency(config::Mechanism::FuncCall) == cm.plain_call);
  CHECK(measure_gate_latency(config::Mechanism::MpkLight) == 65);
  CHECK(measure_gate_latency(config::Mechanism::MpkDss) == 117);
  CHECK(measure_gate_latency(config::Mechanism::Ept) == 494);

  // the knobs steer the measurement
  CostModel fast;
  fast.wrpkru = 10;
  fast.plain_call = 1;
  CHECK(measure_gate_latency(config::Mechanism::MpkLight, fast) == 21);
  CHECK(measure_gate_latency(config::Mechanism::MpkDss, fast) ==
        21 + fast.mpk_full_gate_extra);
  fast.ept_rpc_round_trip = 1000;
  CHECK(measure_gate_latency(config::Mechanism::Ept, fast) == 1000);
}

TEST_CASE("shared slot allocation charges") {
  CostModel cm;
  for (int n = 0; n <= 3; ++n) {
    CAPTURE(n);
    CHECK(measure_alloc_latency(config::Sharing::Dss, n) == cm.stack_alloc * n);
    CHECK(measure_alloc_latency(config::Sharing::SharedStack, n) == cm.stack_alloc * n);
    CHECK(measure_alloc_latency(config::Sharing::HeapConversion, n) ==
          (cm.heap_alloc + cm.heap_free) * n);
  }
}

TEST_CASE("dss slots write through their shadow") {
  std::mt19937_64 rng(99);
  for (int iter = 0; iter < 10; ++iter) {
    auto c = testsupport::make_dss_case(rng);
    Program p = parse_program(c.source);
    Image img = transform::instantiate(transform::insert_gate_placeholders(p), c.cfg,
                                       c.stack_size);
    Trace t = run(img);
    REQUIRE_FALSE(t.faulted);
    // for every shadowed slot: alloc at the base, writes at base + stack size
    for (const auto& lib : img.program.libraries) {
      for (const auto& fn : lib.functions) {
        for (const auto& stmt : fn.body) {
          const auto* v = std::get_if<VarDecl>(&stmt);
          if (!v || v->placement != VarDecl::Placement::DssShadow)
            continue;
          std::string qual = fn.name + "." + v->name;
          const Event* alloc = nullptr;
          const Event* write = nullptr;
          for (const auto& e : t.events) {
            if (e.var != qual)
              continue;
            if (e.kind == EventKind::Alloc && !alloc)
              alloc = &e;
            if (e.kind == EventKind::Write && !write)
              write = &e;
          }
          REQUIRE(alloc != nullptr);
          REQUIRE(write != nullptr);
          CHECK(write->address == alloc->address + c.stack_size);
          // base stays in the private stack, the shadow in the shared upper
          const auto* base_region = img.layout.find(alloc->address);
          const auto* shadow_region = img.layout.find(write->address);
          REQUIRE(base_region);
          REQUIRE(shadow_region);
          CHECK(base_region->role == RegionRole::Stack);
          CHECK(base_region->shared_with.empty());
          CHECK(shadow_region->role == RegionRole::DssUpper);
          CHECK_FALSE(shadow_region->shared_with.empty());
        }
      }
    }
  }
}
