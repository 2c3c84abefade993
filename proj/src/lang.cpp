// Copyright the flexc contributors.
// SPDX-License-Identifier: MIT

#include "flexc/lang.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "flexc/error.hpp"

namespace flexc::lang {

Expr Expr::literal(long long v) {
  Expr e;
  e.kind = Kind::Lit;
  e.lit = v;
  return e;
}

Expr Expr::var(std::string name) {
  Expr e;
  e.kind = Kind::Var;
  e.name = std::move(name);
  return e;
}

Expr Expr::regref(int reg) {
  Expr e;
  e.kind = Kind::Reg;
  e.reg = reg;
  return e;
}

Expr Expr::fnref(std::string name) {
  Expr e;
  e.kind = Kind::FnRef;
  e.name = std::move(name);
  return e;
}

Expr Expr::add(Expr a, Expr b) {
  Expr e;
  e.kind = Kind::Add;
  e.kids.push_back(std::move(a));
  e.kids.push_back(std::move(b));
  return e;
}

const FunctionDef* Program::find_function(const std::string& name) const {
  for (const auto& lib : libraries)
    for (const auto& fn : lib.functions)
      if (fn.name == name)
        return &fn;
  return nullptr;
}

const LibraryUnit* Program::library_of_function(const std::string& name) const {
  for (const auto& lib : libraries)
    for (const auto& fn : lib.functions)
      if (fn.name == name)
        return &lib;
  return nullptr;
}

std::map<std::string, std::string> Program::symbol_owners() const {
  std::map<std::string, std::string> owners;
  for (const auto& lib : libraries) {
    for (const auto& fn : lib.functions) {
      owners[fn.name] = lib.name;
      // function-level statics are hoisted to program scope
      for (const auto& s : fn.body)
        if (const auto* v = std::get_if<VarDecl>(&s))
          if (v->storage == Storage::Global)
            owners[v->name] = lib.name;
    }
    for (const auto& g : lib.globals)
      owners[g.name] = lib.name;
  }
  return owners;
}

namespace {

const std::set<std::string> kKeywords = {
    "library", "fn", "var", "call", "icall", "targets", "return", "read",
    "reg", "shared", "storage", "int", "stack", "heap", "global"};

struct Token {
  enum class Kind {
    LBrace, RBrace, LParen, RParen, Comma, Colon, Equals, Plus, Minus, Arrow,
    Ident, Int, End
  };
  Kind kind = Kind::End;
  std::string text;
  long long value = 0;
  int line = 1;
  int col = 1;
};

std::vector<Token> lex(const std::string& src) {
  std::vector<Token> toks;
  int line = 1, col = 1;
  size_t i = 0;
  auto push = [&](Token::Kind k, int width) {
    Token t;
    t.kind = k;
    t.line = line;
    t.col = col;
    toks.push_back(t);
    col += width;
    i += width;
  };
  while (i < src.size()) {
    char c = src[i];
    if (c == '\n') {
      ++line;
      col = 1;
      ++i;
      continue;
    }
    if (c == ' ' || c == '\t' || c == '\r') {
      ++col;
      ++i;
      continue;
    }
    if (c == '#') {
      while (i < src.size() && src[i] != '\n')
        ++i;
      continue;
    }
    switch (c) {
    case '{': push(Token::Kind::LBrace, 1); continue;
    case '}': push(Token::Kind::RBrace, 1); continue;
    case '(': push(Token::Kind::LParen, 1); continue;
    case ')': push(Token::Kind::RParen, 1); continue;
    case ',': push(Token::Kind::Comma, 1); continue;
    case ':': push(Token::Kind::Colon, 1); continue;
    case '=': push(Token::Kind::Equals, 1); continue;
    case '+': push(Token::Kind::Plus, 1); continue;
    default: break;
    }
    if (c == '<' && i + 1 < src.size() && src[i + 1] == '-') {
      push(Token::Kind::Arrow, 2);
      continue;
    }
    if (c == '-') {
      push(Token::Kind::Minus, 1);
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      Token t;
      t.kind = Token::Kind::Int;
      t.line = line;
      t.col = col;
      size_t start = i;
      int base = 10;
      if (c == '0' && i + 1 < src.size() && (src[i + 1] == 'x' || src[i + 1] == 'X')) {
        base = 16;
        i += 2;
      }
      size_t digits = i;
      while (i < src.size() &&
             (base == 16 ? std::isxdigit(static_cast<unsigned char>(src[i]))
                         : std::isdigit(static_cast<unsigned char>(src[i]))))
        ++i;
      if (i == digits)
        throw ParseError("syntax", line, col, "malformed number");
      t.value = static_cast<long long>(std::stoull(src.substr(digits, i - digits), nullptr, base));
      col += static_cast<int>(i - start);
      toks.push_back(t);
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      Token t;
      t.kind = Token::Kind::Ident;
      t.line = line;
      t.col = col;
      size_t start = i;
      while (i < src.size() &&
             (std::isalnum(static_cast<unsigned char>(src[i])) || src[i] == '_'))
        ++i;
      t.text = src.substr(start, i - start);
      col += static_cast<int>(i - start);
      toks.push_back(t);
      continue;
    }
    throw ParseError("syntax", line, col, std::string("unexpected character '") + c + "'");
  }
  Token end;
  end.kind = Token::Kind::End;
  end.line = line;
  end.col = col;
  toks.push_back(end);
  return toks;
}

struct Parser {
  std::vector<Token> toks;
  size_t pos = 0;

  explicit Parser(const std::string& src) : toks(lex(src)) {}

  const Token& tok() const { return toks[pos]; }
  void advance() {
    if (pos + 1 < toks.size())
      ++pos;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError("syntax", tok().line, tok().col, msg);
  }

  Token expect(Token::Kind k, const char* what) {
    if (tok().kind != k)
      fail(std::string("expected ") + what);
    Token t = tok();
    advance();
    return t;
  }

  bool at_ident(const char* text) const {
    return tok().kind == Token::Kind::Ident && tok().text == text;
  }

  Token keyword(const char* text) {
    if (!at_ident(text))
      fail(std::string("expected '") + text + "'");
    Token t = tok();
    advance();
    return t;
  }

  std::string name(const char* what) {
    Token t = expect(Token::Kind::Ident, what);
    if (kKeywords.count(t.text))
      throw ParseError("syntax", t.line, t.col, "'" + t.text + "' is a keyword");
    return t.text;
  }

  Expr atom() {
    if (tok().kind == Token::Kind::Int) {
      Expr e = Expr::literal(tok().value);
      advance();
      return e;
    }
    if (tok().kind == Token::Kind::Minus) {
      advance();
      Token t = expect(Token::Kind::Int, "a number after '-'");
      return Expr::literal(-t.value);
    }
    if (at_ident("reg")) {
      Token kw = tok();
      advance();
      expect(Token::Kind::LParen, "'(' after reg");
      Token idx = expect(Token::Kind::Int, "a register index");
      if (idx.value < 0 || idx.value >= kNumRegisters)
        throw ParseError("syntax", idx.line, idx.col,
                         "register index must be 0.." + std::to_string(kNumRegisters - 1));
      expect(Token::Kind::RParen, "')'");
      return Expr::regref(static_cast<int>(idx.value));
    }
    if (tok().kind == Token::Kind::Ident) {
      // Resolution later decides whether this names a variable or a function.
      return Expr::var(name("a variable"));
    }
    fail("expected an expression");
  }

  Expr expr() {
    Expr e = atom();
    while (tok().kind == Token::Kind::Plus) {
      advance();
      e = Expr::add(std::move(e), atom());
    }
    return e;
  }

  std::vector<Expr> arg_list() {
    expect(Token::Kind::LParen, "'('");
    std::vector<Expr> args;
    if (tok().kind != Token::Kind::RParen) {
      args.push_back(expr());
      while (tok().kind == Token::Kind::Comma) {
        advance();
        args.push_back(expr());
      }
    }
    expect(Token::Kind::RParen, "')'");
    return args;
  }

  CallStmt call_stmt(std::optional<std::string> dest) {
    keyword("call");
    CallStmt s;
    s.callee = name("a function name");
    s.args = arg_list();
    s.dest = std::move(dest);
    return s;
  }

  IndirectCall icall_stmt(std::optional<std::string> dest) {
    keyword("icall");
    IndirectCall s;
    s.fn_var = name("a function variable");
    s.args = arg_list();
    keyword("targets");
    expect(Token::Kind::LParen, "'('");
    s.callable_set.push_back(name("a target function"));
    while (tok().kind == Token::Kind::Comma) {
      advance();
      s.callable_set.push_back(name("a target function"));
    }
    expect(Token::Kind::RParen, "')'");
    s.dest = std::move(dest);
    return s;
  }

  VarDecl var_decl(bool library_scope) {
    keyword("var");
    VarDecl v;
    v.name = name("a variable name");
    expect(Token::Kind::Colon, "':'");
    keyword("int");
    if (at_ident("shared")) {
      advance();
      expect(Token::Kind::LParen, "'('");
      v.shared_with.push_back(name("a library name"));
      while (tok().kind == Token::Kind::Comma) {
        advance();
        v.shared_with.push_back(name("a library name"));
      }
      expect(Token::Kind::RParen, "')'");
    }
    if (at_ident("storage")) {
      Token kw = tok();
      advance();
      expect(Token::Kind::Equals, "'='");
      Token what = expect(Token::Kind::Ident, "stack, heap or global");
      if (what.text == "stack")
        v.storage = Storage::Stack;
      else if (what.text == "heap")
        v.storage = Storage::Heap;
      else if (what.text == "global")
        v.storage = Storage::Global;
      else
        throw ParseError("syntax", what.line, what.col,
                         "storage must be stack, heap or global");
      if (library_scope && v.storage != Storage::Global)
        throw ParseError("syntax", kw.line, kw.col,
                         "library-level variables are always global");
    } else if (library_scope) {
      v.storage = Storage::Global;
    }
    return v;
  }

  Stmt stmt() {
    if (at_ident("var"))
      return var_decl(false);
    if (at_ident("read")) {
      advance();
      Read r;
      r.dest = name("a destination variable");
      expect(Token::Kind::Arrow, "'<-'");
      r.src = name("a source variable");
      return r;
    }
    if (at_ident("call"))
      return call_stmt(std::nullopt);
    if (at_ident("icall"))
      return icall_stmt(std::nullopt);
    if (at_ident("return")) {
      advance();
      ReturnStmt r;
      r.value = expr();
      return r;
    }
    // Assignment: plain expression, or a call/icall binding its result.
    std::string dest = name("a statement");
    expect(Token::Kind::Equals, "'='");
    if (at_ident("call"))
      return call_stmt(dest);
    if (at_ident("icall"))
      return icall_stmt(dest);
    Assign a;
    a.dest = std::move(dest);
    a.value = expr();
    return a;
  }

  FunctionDef function() {
    keyword("fn");
    FunctionDef fn;
    fn.name = name("a function name");
    expect(Token::Kind::LParen, "'('");
    if (tok().kind != Token::Kind::RParen) {
      fn.params.push_back(name("a parameter name"));
      expect(Token::Kind::Colon, "':'");
      keyword("int");
      while (tok().kind == Token::Kind::Comma) {
        advance();
        fn.params.push_back(name("a parameter name"));
        expect(Token::Kind::Colon, "':'");
        keyword("int");
      }
    }
    expect(Token::Kind::RParen, "')'");
    expect(Token::Kind::LBrace, "'{'");
    while (tok().kind != Token::Kind::RBrace)
      fn.body.push_back(stmt());
    expect(Token::Kind::RBrace, "'}'");
    return fn;
  }

  LibraryUnit library() {
    keyword("library");
    LibraryUnit lib;
    lib.name = name("a library name");
    expect(Token::Kind::LBrace, "'{'");
    while (tok().kind != Token::Kind::RBrace) {
      if (at_ident("fn"))
        lib.functions.push_back(function());
      else if (at_ident("var"))
        lib.globals.push_back(var_decl(true));
      else
        fail("expected 'fn' or 'var'");
    }
    expect(Token::Kind::RBrace, "'}'");
    return lib;
  }

  Program program() {
    Program p;
    while (tok().kind != Token::Kind::End)
      p.libraries.push_back(library());
    return p;
  }
};

// Name resolution and static checks. The AST carries no source locations, so
// findings name the enclosing function instead.
struct Resolver {
  Program& p;
  std::set<std::string> libs;
  std::map<std::string, const FunctionDef*> fns;
  std::set<std::string> globals;

  explicit Resolver(Program& program) : p(program) {}

  [[noreturn]] static void fail(const std::string& kind, const std::string& msg) {
    throw ParseError(kind, 0, 0, msg);
  }

  void run() {
    for (const auto& lib : p.libraries)
      if (!libs.insert(lib.name).second)
        fail("duplicate-library", "library '" + lib.name + "' declared twice");

    for (const auto& lib : p.libraries) {
      for (const auto& fn : lib.functions)
        if (!fns.emplace(fn.name, &fn).second)
          fail("duplicate-function", "function '" + fn.name + "' defined twice");
      for (const auto& g : lib.globals)
        declare_global(lib, g);
    }
    // Function-level globals are statics: visible program-wide, so collect
    // them before walking bodies.
    for (const auto& lib : p.libraries)
      for (const auto& fn : lib.functions)
        for (const auto& s : fn.body)
          if (const auto* v = std::get_if<VarDecl>(&s))
            if (v->storage == Storage::Global)
              declare_global(lib, *v);

    for (auto& lib : p.libraries)
      for (auto& fn : lib.functions)
        check_function(lib, fn);
  }

  void declare_global(const LibraryUnit& lib, const VarDecl& g) {
    if (!globals.insert(g.name).second)
      fail("duplicate-global", "global '" + g.name + "' declared twice");
    check_shared(g, lib.name);
  }

  void check_shared(const VarDecl& v, const std::string& context) {
    for (const auto& target : v.shared_with)
      if (!libs.count(target))
        fail("unknown-library", "'" + v.name + "' in '" + context +
                                    "' is shared with unknown library '" + target + "'");
  }

  void resolve_expr(Expr& e, const std::set<std::string>& scope, const std::string& fn) {
    switch (e.kind) {
    case Expr::Kind::Lit:
    case Expr::Kind::Reg:
    case Expr::Kind::FnRef:
      return;
    case Expr::Kind::Var:
      if (scope.count(e.name) || globals.count(e.name))
        return;
      if (fns.count(e.name)) {
        e.kind = Expr::Kind::FnRef;
        return;
      }
      fail("undefined-variable", "'" + e.name + "' in '" + fn + "' is not declared");
    case Expr::Kind::Add:
      for (auto& kid : e.kids)
        resolve_expr(kid, scope, fn);
      return;
    }
  }

  void check_var(const std::string& name, const std::set<std::string>& scope,
                 const std::string& fn) {
    if (!scope.count(name) && !globals.count(name))
      fail("undefined-variable", "'" + name + "' in '" + fn + "' is not declared");
  }

  void check_callee(const std::string& callee, size_t nargs, const std::string& fn) {
    auto it = fns.find(callee);
    if (it == fns.end())
      fail("undefined-function", "'" + callee + "' called from '" + fn + "' is not defined");
    if (it->second->params.size() != nargs)
      fail("arity-mismatch", "'" + callee + "' takes " +
                                 std::to_string(it->second->params.size()) +
                                 " arguments, got " + std::to_string(nargs) +
                                 " in '" + fn + "'");
  }

  void check_function(const LibraryUnit& lib, FunctionDef& fn) {
    if (fn.params.size() > static_cast<size_t>(kNumRegisters))
      fail("too-many-params", "'" + fn.name + "' takes " +
                                  std::to_string(fn.params.size()) +
                                  " parameters, arguments pass in r0..r" +
                                  std::to_string(kNumRegisters - 1));
    std::set<std::string> scope(fn.params.begin(), fn.params.end());
    if (scope.size() != fn.params.size())
      fail("duplicate-variable", "duplicate parameter in '" + fn.name + "'");
    for (auto& s : fn.body) {
      if (auto* v = std::get_if<VarDecl>(&s)) {
        if (!scope.insert(v->name).second)
          fail("duplicate-variable",
               "'" + v->name + "' declared twice in '" + fn.name + "'");
        check_shared(*v, fn.name);
      } else if (auto* a = std::get_if<Assign>(&s)) {
        check_var(a->dest, scope, fn.name);
        resolve_expr(a->value, scope, fn.name);
      } else if (auto* r = std::get_if<Read>(&s)) {
        check_var(r->dest, scope, fn.name);
        check_var(r->src, scope, fn.name);
      } else if (auto* c = std::get_if<CallStmt>(&s)) {
        for (auto& arg : c->args)
          resolve_expr(arg, scope, fn.name);
        check_callee(c->callee, c->args.size(), fn.name);
        if (c->dest)
          check_var(*c->dest, scope, fn.name);
      } else if (auto* ic = std::get_if<IndirectCall>(&s)) {
        check_var(ic->fn_var, scope, fn.name);
        for (auto& arg : ic->args)
          resolve_expr(arg, scope, fn.name);
        for (const auto& target : ic->callable_set)
          check_callee(target, ic->args.size(), fn.name);
        if (ic->dest)
          check_var(*ic->dest, scope, fn.name);
      } else if (auto* ret = std::get_if<ReturnStmt>(&s)) {
        resolve_expr(ret->value, scope, fn.name);
      } else {
        fail("syntax", "gate placeholder in source program of '" + lib.name + "'");
      }
    }
  }
};

} // namespace

Program parse_program(const std::string& text) {
  Parser parser(text);
  Program p = parser.program();
  Resolver(p).run();
  return p;
}

std::vector<CallEdge> call_graph(const Program& program) {
  std::vector<CallEdge> edges;
  auto lib_of = [&](const std::string& fn) {
    const auto* lib = program.library_of_function(fn);
    return lib ? lib->name : std::string();
  };
  for (const auto& lib : program.libraries) {
    for (const auto& fn : lib.functions) {
      for (const auto& s : fn.body) {
        if (const auto* c = std::get_if<CallStmt>(&s)) {
          edges.push_back({fn.name, c->callee, lib_of(c->callee) != lib.name});
        } else if (const auto* g = std::get_if<GatePlaceholder>(&s)) {
          edges.push_back({fn.name, g->callee, g->callee_lib != lib.name});
        } else if (const auto* ic = std::get_if<IndirectCall>(&s)) {
          for (const auto& target : ic->callable_set)
            edges.push_back({fn.name, target, lib_of(target) != lib.name});
        }
      }
    }
  }
  return edges;
}

nlohmann::json call_graph_json(const Program& program) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : call_graph(program))
    arr.push_back({{"caller", e.caller}, {"callee", e.callee}, {"cross", e.cross_library}});
  return nlohmann::json{{"edges", arr}};
}

namespace {

const char* storage_name(Storage s) {
  switch (s) {
  case Storage::Stack: return "stack";
  case Storage::Heap: return "heap";
  case Storage::Global: return "global";
  }
  return "?";
}

Storage storage_from(const std::string& s) {
  if (s == "stack") return Storage::Stack;
  if (s == "heap") return Storage::Heap;
  if (s == "global") return Storage::Global;
  throw Error("unknown storage '" + s + "'");
}

const char* placement_name(VarDecl::Placement p) {
  switch (p) {
  case VarDecl::Placement::Default: return "default";
  case VarDecl::Placement::DssShadow: return "dss";
  case VarDecl::Placement::SharedHeap: return "sheap";
  }
  return "?";
}

VarDecl::Placement placement_from(const std::string& s) {
  if (s == "default") return VarDecl::Placement::Default;
  if (s == "dss") return VarDecl::Placement::DssShadow;
  if (s == "sheap") return VarDecl::Placement::SharedHeap;
  throw Error("unknown placement '" + s + "'");
}

const char* gate_name(CallStmt::Gate g) {
  switch (g) {
  case CallStmt::Gate::Plain: return "plain";
  case CallStmt::Gate::MpkLight: return "mpk-light";
  case CallStmt::Gate::MpkFull: return "mpk-full";
  case CallStmt::Gate::EptRpc: return "ept-rpc";
  }
  return "?";
}

CallStmt::Gate gate_from(const std::string& s) {
  if (s == "plain") return CallStmt::Gate::Plain;
  if (s == "mpk-light") return CallStmt::Gate::MpkLight;
  if (s == "mpk-full") return CallStmt::Gate::MpkFull;
  if (s == "ept-rpc") return CallStmt::Gate::EptRpc;
  throw Error("unknown gate kind '" + s + "'");
}

nlohmann::json opt_str(const std::optional<std::string>& s) {
  return s ? nlohmann::json(*s) : nlohmann::json(nullptr);
}

std::optional<std::string> opt_from(const nlohmann::json& j) {
  if (j.is_null())
    return std::nullopt;
  return j.get<std::string>();
}

} // namespace

void to_json(nlohmann::json& j, const Expr& e) {
  switch (e.kind) {
  case Expr::Kind::Lit:
    j = {{"k", "lit"}, {"v", e.lit}};
    return;
  case Expr::Kind::Var:
    j = {{"k", "var"}, {"n", e.name}};
    return;
  case Expr::Kind::Reg:
    j = {{"k", "reg"}, {"i", e.reg}};
    return;
  case Expr::Kind::FnRef:
    j = {{"k", "fn"}, {"n", e.name}};
    return;
  case Expr::Kind::Add:
    j = {{"k", "add"}, {"a", e.kids[0]}, {"b", e.kids[1]}};
    return;
  }
}

void from_json(const nlohmann::json& j, Expr& e) {
  std::string k = j.at("k").get<std::string>();
  if (k == "lit") {
    e = Expr::literal(j.at("v").get<long long>());
  } else if (k == "var") {
    e = Expr::var(j.at("n").get<std::string>());
  } else if (k == "reg") {
    e = Expr::regref(j.at("i").get<int>());
  } else if (k == "fn") {
    e = Expr::fnref(j.at("n").get<std::string>());
  } else if (k == "add") {
    e = Expr::add(j.at("a").get<Expr>(), j.at("b").get<Expr>());
  } else {
    throw Error("unknown expression kind '" + k + "'");
  }
}

void to_json(nlohmann::json& j, const VarDecl& v) {
  j = {{"op", "var"},
       {"name", v.name},
       {"storage", storage_name(v.storage)},
       {"shared", v.shared_with},
       {"placement", placement_name(v.placement)}};
}

void from_json(const nlohmann::json& j, VarDecl& v) {
  v = VarDecl{};
  v.name = j.at("name").get<std::string>();
  v.storage = storage_from(j.at("storage").get<std::string>());
  v.shared_with = j.at("shared").get<std::vector<std::string>>();
  v.placement = placement_from(j.at("placement").get<std::string>());
}

void to_json(nlohmann::json& j, const Stmt& s) {
  std::visit(
      [&](const auto& node) {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, VarDecl>) {
          to_json(j, node);
        } else if constexpr (std::is_same_v<T, Assign>) {
          j = {{"op", "assign"}, {"dest", node.dest}, {"value", node.value}};
        } else if constexpr (std::is_same_v<T, Read>) {
          j = {{"op", "read"}, {"dest", node.dest}, {"src", node.src}};
        } else if constexpr (std::is_same_v<T, CallStmt>) {
          j = {{"op", "call"},
               {"callee", node.callee},
               {"args", node.args},
               {"dest", opt_str(node.dest)},
               {"gate", gate_name(node.gate)}};
        } else if constexpr (std::is_same_v<T, IndirectCall>) {
          j = {{"op", "icall"},
               {"fn", node.fn_var},
               {"args", node.args},
               {"targets", node.callable_set},
               {"dispatch", node.dispatch},
               {"dest", opt_str(node.dest)}};
        } else if constexpr (std::is_same_v<T, GatePlaceholder>) {
          j = {{"op", "gate-placeholder"},
               {"callee", node.callee},
               {"args", node.args},
               {"dest", opt_str(node.dest)},
               {"caller_lib", node.caller_lib},
               {"callee_lib", node.callee_lib}};
        } else if constexpr (std::is_same_v<T, ReturnStmt>) {
          j = {{"op", "return"}, {"value", node.value}};
        }
      },
      s);
}

void from_json(const nlohmann::json& j, Stmt& s) {
  std::string op = j.at("op").get<std::string>();
  if (op == "var") {
    VarDecl v = j.get<VarDecl>();
    s = std::move(v);
  } else if (op == "assign") {
    Assign a;
    a.dest = j.at("dest").get<std::string>();
    a.value = j.at("value").get<Expr>();
    s = std::move(a);
  } else if (op == "read") {
    Read r;
    r.dest = j.at("dest").get<std::string>();
    r.src = j.at("src").get<std::string>();
    s = std::move(r);
  } else if (op == "call") {
    CallStmt c;
    c.callee = j.at("callee").get<std::string>();
    c.args = j.at("args").get<std::vector<Expr>>();
    c.dest = opt_from(j.at("dest"));
    c.gate = gate_from(j.at("gate").get<std::string>());
    s = std::move(c);
  } else if (op == "icall") {
    IndirectCall ic;
    ic.fn_var = j.at("fn").get<std::string>();
    ic.args = j.at("args").get<std::vector<Expr>>();
    ic.callable_set = j.at("targets").get<std::vector<std::string>>();
    ic.dispatch = j.at("dispatch").get<std::map<std::string, std::string>>();
    ic.dest = opt_from(j.at("dest"));
    s = std::move(ic);
  } else if (op == "gate-placeholder") {
    GatePlaceholder g;
    g.callee = j.at("callee").get<std::string>();
    g.args = j.at("args").get<std::vector<Expr>>();
    g.dest = opt_from(j.at("dest"));
    g.caller_lib = j.at("caller_lib").get<std::string>();
    g.callee_lib = j.at("callee_lib").get<std::string>();
    s = std::move(g);
  } else if (op == "return") {
    ReturnStmt r;
    r.value = j.at("value").get<Expr>();
    s = std::move(r);
  } else {
    throw Error("unknown statement kind '" + op + "'");
  }
}

void to_json(nlohmann::json& j, const FunctionDef& f) {
  j = {{"name", f.name},
       {"params", f.params},
       {"body", f.body},
       {"synthetic", f.synthetic}};
}

void from_json(const nlohmann::json& j, FunctionDef& f) {
  f = FunctionDef{};
  f.name = j.at("name").get<std::string>();
  f.params = j.at("params").get<std::vector<std::string>>();
  f.body = j.at("body").get<std::vector<Stmt>>();
  f.synthetic = j.value("synthetic", false);
}

void to_json(nlohmann::json& j, const LibraryUnit& l) {
  j = {{"name", l.name}, {"globals", l.globals}, {"functions", l.functions}};
}

void from_json(const nlohmann::json& j, LibraryUnit& l) {
  l = LibraryUnit{};
  l.name = j.at("name").get<std::string>();
  l.globals = j.at("globals").get<std::vector<VarDecl>>();
  l.functions = j.at("functions").get<std::vector<FunctionDef>>();
}

void to_json(nlohmann::json& j, const Program& p) {
  j = {{"libraries", p.libraries}};
}

void from_json(const nlohmann::json& j, Program& p) {
  p = Program{};
  p.libraries = j.at("libraries").get<std::vector<LibraryUnit>>();
}

} // namespace flexc::lang
