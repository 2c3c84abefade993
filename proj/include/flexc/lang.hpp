// Copyright the flexc contributors.
// SPDX-License-Identifier: MIT
#pragma once

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace flexc::lang {

// Abstract machine register file size; calls pass arguments in r0..r5, so
// gate calls accept at most kMaxGateArgs scalars.
inline constexpr int kNumRegisters = 8;
inline constexpr int kMaxGateArgs = 6;

enum class Storage { Stack, Heap, Global };

// Expressions are tiny: integer literals, variable reads, register probes,
// function designators (for indirect-call sites) and addition.
struct Expr {
  enum class Kind { Lit, Var, Reg, FnRef, Add };

  Kind kind = Kind::Lit;
  long long lit = 0;
  std::string name; // Var and FnRef
  int reg = 0;
  std::vector<Expr> kids; // Add: exactly two

  static Expr literal(long long v);
  static Expr var(std::string name);
  static Expr regref(int reg);
  static Expr fnref(std::string name);
  static Expr add(Expr a, Expr b);

  bool operator==(const Expr&) const = default;
};

// `var x: int shared(libA, libB) storage=stack`. Placement is written by the
// sharing rewrite at instantiation time: DssShadow accesses the slot through
// its shadow at +stack_size, SharedHeap allocates the slot from the shared
// heap instead of the stack.
struct VarDecl {
  enum class Placement { Default, DssShadow, SharedHeap };

  std::string name;
  Storage storage = Storage::Stack;
  std::vector<std::string> shared_with;
  Placement placement = Placement::Default;

  bool operator==(const VarDecl&) const = default;
};

struct Assign {
  std::string dest;
  Expr value;

  bool operator==(const Assign&) const = default;
};

// Explicit memory-to-memory move, `read dest <- src`.
struct Read {
  std::string dest;
  std::string src;

  bool operator==(const Read&) const = default;
};

// Direct call, optionally binding the return value. `gate` is Plain until
// instantiation lowers cross-compartment sites to a concrete gate flavor.
struct CallStmt {
  enum class Gate { Plain, MpkLight, MpkFull, EptRpc };

  std::string callee;
  std::vector<Expr> args;
  std::optional<std::string> dest;
  Gate gate = Gate::Plain;

  bool operator==(const CallStmt&) const = default;
};

// `icall fp(a) targets(f, g)`. The callable set is a mandatory annotation;
// dispatch maps each target to the function actually invoked for it (the
// target itself, or a synthesized gate wrapper) once the transform ran.
struct IndirectCall {
  std::string fn_var;
  std::vector<Expr> args;
  std::vector<std::string> callable_set;
  std::optional<std::string> dest;
  std::map<std::string, std::string> dispatch;

  bool operator==(const IndirectCall&) const = default;
};

// Abstract cross-library call gate, present only between the annotation pass
// and instantiation. Records both sides so instantiation can decide whether
// the boundary is real under a given compartment assignment.
struct GatePlaceholder {
  std::string callee;
  std::vector<Expr> args;
  std::optional<std::string> dest;
  std::string caller_lib;
  std::string callee_lib;

  bool operator==(const GatePlaceholder&) const = default;
};

struct ReturnStmt {
  Expr value;

  bool operator==(const ReturnStmt&) const = default;
};

using Stmt = std::variant<VarDecl, Assign, Read, CallStmt, IndirectCall,
                          GatePlaceholder, ReturnStmt>;

struct FunctionDef {
  std::string name;
  std::vector<std::string> params;
  std::vector<Stmt> body;
  bool synthetic = false; // gate wrappers produced by the transform

  bool operator==(const FunctionDef&) const = default;
};

struct LibraryUnit {
  std::string name;
  std::vector<VarDecl> globals;
  std::vector<FunctionDef> functions;

  bool operator==(const LibraryUnit&) const = default;
};

struct Program {
  std::vector<LibraryUnit> libraries;

  bool operator==(const Program&) const = default;

  const FunctionDef* find_function(const std::string& name) const;
  const LibraryUnit* library_of_function(const std::string& name) const;
  // Function and global symbols mapped to their defining library.
  std::map<std::string, std::string> symbol_owners() const;
};

// Parses and resolves a source file:
//
//   library app {
//     var hits: int
//     fn main() {
//       var x: int shared(net) storage=stack
//       x = 1 + 2
//       call net_send(x)
//       return x
//     }
//   }
//
// Resolution enforces: globally unique function and global names, all call
// targets defined with matching arity, non-empty callable sets on icall,
// variables declared before use, shared() naming known libraries, register
// probes within r0..r7. Failures raise ParseError with a stable kind
// ("undefined-variable", "undefined-function", "arity-mismatch", ...).
Program parse_program(const std::string& text);

struct CallEdge {
  std::string caller;
  std::string callee;
  bool cross_library = false;

  bool operator==(const CallEdge&) const = default;
};

// One edge per direct call site plus one per callable-set member of every
// indirect site, in program order.
std::vector<CallEdge> call_graph(const Program& program);

nlohmann::json call_graph_json(const Program& program);

void to_json(nlohmann::json& j, const Expr& e);
void from_json(const nlohmann::json& j, Expr& e);
void to_json(nlohmann::json& j, const VarDecl& v);
void from_json(const nlohmann::json& j, VarDecl& v);
void to_json(nlohmann::json& j, const Stmt& s);
void from_json(const nlohmann::json& j, Stmt& s);
void to_json(nlohmann::json& j, const FunctionDef& f);
void from_json(const nlohmann::json& j, FunctionDef& f);
void to_json(nlohmann::json& j, const LibraryUnit& l);
void from_json(const nlohmann::json& j, LibraryUnit& l);
void to_json(nlohmann::json& j, const Program& p);
void from_json(const nlohmann::json& j, Program& p);

} // namespace flexc::lang
