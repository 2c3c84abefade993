// Copyright the flexc contributors.
// SPDX-License-Identifier: MIT

#include "flexc/mspec.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "flexc/error.hpp"

namespace flexc::mspec {

bool access_leq(Access a, Access b) {
  if (a == b)
    return true;
  if (a == Access::U)
    return true;
  if (a == Access::R && b == Access::RStar)
    return true;
  if (a == Access::W && b == Access::WStar)
    return true;
  return false;
}

bool exec_leq(Exec a, Exec b) {
  return static_cast<int>(a) <= static_cast<int>(b);
}

const char* to_string(Access a) {
  switch (a) {
  case Access::U: return "U";
  case Access::R: return "R";
  case Access::W: return "W";
  case Access::RStar: return "R*";
  case Access::WStar: return "W*";
  }
  return "?";
}

const char* to_string(Exec e) {
  switch (e) {
  case Exec::U: return "U";
  case Exec::X: return "X";
  case Exec::XStar: return "X*";
  }
  return "?";
}

const ComponentSpec* find_spec(const SpecSet& specs, const std::string& name) {
  for (const auto& s : specs)
    if (s.name == name)
      return &s;
  return nullptr;
}

namespace {

// Greatest lower bound in the access order; used when several memory-form
// [Requires] clauses accumulate (every stated bound must hold). The two
// chains only meet at U.
Access access_meet(Access a, Access b) {
  if (access_leq(a, b))
    return a;
  if (access_leq(b, a))
    return b;
  return Access::U;
}

struct Token {
  enum class Kind {
    LBrace, RBrace, LParen, RParen, Comma, Colon, Star,
    Section, Ident, Int, End
  };
  Kind kind = Kind::End;
  std::string text;
  uint64_t value = 0;
  int line = 1;
  int col = 1;
};

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::vector<Token> lex(const std::string& src) {
  std::vector<Token> toks;
  int line = 1, col = 1;
  size_t i = 0;
  auto make = [&](Token::Kind k) {
    Token t;
    t.kind = k;
    t.line = line;
    t.col = col;
    return t;
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
    Token t;
    switch (c) {
    case '{': t = make(Token::Kind::LBrace); break;
    case '}': t = make(Token::Kind::RBrace); break;
    case '(': t = make(Token::Kind::LParen); break;
    case ')': t = make(Token::Kind::RParen); break;
    case ',': t = make(Token::Kind::Comma); break;
    case ':': t = make(Token::Kind::Colon); break;
    case '*': t = make(Token::Kind::Star); break;
    default: t.kind = Token::Kind::End; break;
    }
    if (t.kind != Token::Kind::End) {
      toks.push_back(t);
      ++col;
      ++i;
      continue;
    }
    if (c == '[') {
      t = make(Token::Kind::Section);
      size_t end = src.find_first_of("]\n", i);
      if (end == std::string::npos || src[end] == '\n')
        throw ParseError("syntax", line, col, "unterminated section header");
      t.text = src.substr(i + 1, end - i - 1);
      col += static_cast<int>(end - i + 1);
      i = end + 1;
      toks.push_back(t);
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      t = make(Token::Kind::Int);
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
      t.value = std::stoull(src.substr(digits, i - digits), nullptr, base);
      col += static_cast<int>(i - start);
      toks.push_back(t);
      continue;
    }
    if (ident_start(c)) {
      t = make(Token::Kind::Ident);
      size_t start = i;
      while (i < src.size() && ident_char(src[i]))
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

// Modifier spelled in source: base letter plus optional star.
struct ModTok {
  std::string text;
  int line = 0, col = 0;
};

struct Parser {
  std::vector<Token> toks;
  size_t pos = 0;

  explicit Parser(const std::string& src) : toks(lex(src)) {}

  const Token& tok() const { return toks[pos]; }
  const Token& peek(size_t n) const {
    return toks[std::min(pos + n, toks.size() - 1)];
  }
  void advance() {
    if (pos + 1 < toks.size())
      ++pos;
  }

  [[noreturn]] void fail(const std::string& kind, const std::string& msg) const {
    throw ParseError(kind, tok().line, tok().col, msg);
  }

  Token expect(Token::Kind k, const char* what) {
    if (tok().kind != k)
      fail("syntax", std::string("expected ") + what);
    Token t = tok();
    advance();
    return t;
  }

  bool at_modifier() const {
    if (tok().kind != Token::Kind::Ident)
      return false;
    const std::string& s = tok().text;
    return s == "U" || s == "R" || s == "W" || s == "X";
  }

  // Consumes a modifier token (letter plus optional star) without deciding
  // which alphabet it belongs to; the section context does that.
  ModTok take_modifier() {
    ModTok m{tok().text, tok().line, tok().col};
    advance();
    if (tok().kind == Token::Kind::Star) {
      m.text += '*';
      advance();
    }
    return m;
  }

  Access access_modifier(const ModTok& m) {
    if (m.text == "U") return Access::U;
    if (m.text == "R") return Access::R;
    if (m.text == "W") return Access::W;
    if (m.text == "R*") return Access::RStar;
    if (m.text == "W*") return Access::WStar;
    throw ParseError("unknown-modifier", m.line, m.col,
                     "'" + m.text + "' is not a memory access modifier");
  }

  Exec exec_modifier(const ModTok& m) {
    if (m.text == "U") return Exec::U;
    if (m.text == "X") return Exec::X;
    if (m.text == "X*") return Exec::XStar;
    throw ParseError("unknown-modifier", m.line, m.col,
                     "'" + m.text + "' is not an execution modifier");
  }

  Target target() {
    if (tok().kind == Token::Kind::Ident) {
      Target t = Target::sym(tok().text);
      advance();
      return t;
    }
    if (tok().kind == Token::Kind::Int) {
      Target t = Target::addr(tok().value);
      advance();
      return t;
    }
    fail("syntax", "expected a symbol or address target");
  }

  MemRule mem_rule() {
    expect(Token::Kind::LParen, "'('");
    MemRule r;
    r.target = target();
    expect(Token::Kind::Comma, "','");
    if (tok().kind != Token::Kind::Ident)
      fail("syntax", "expected a basic access modifier (R or W)");
    ModTok m = take_modifier();
    if (m.text == "R") {
      r.access = Access::R;
    } else if (m.text == "W") {
      r.access = Access::W;
    } else {
      throw ParseError("syntax", m.line, m.col,
                       "rule access must be basic R or W, got '" + m.text + "'");
    }
    expect(Token::Kind::Comma, "','");
    Token size = expect(Token::Kind::Int, "a size");
    if (size.value < 1)
      throw ParseError("syntax", size.line, size.col, "size must be at least 1");
    r.size = size.value;
    expect(Token::Kind::Comma, "','");
    Token kind = expect(Token::Kind::Ident, "ADDR or SEG:<name>");
    if (kind.text == "ADDR") {
      r.memtype = MemRule::MemType::Address;
    } else if (kind.text == "SEG") {
      expect(Token::Kind::Colon, "':' after SEG");
      Token seg = expect(Token::Kind::Ident, "a segment name");
      r.memtype = MemRule::MemType::Segment;
      r.segment = seg.text;
    } else {
      throw ParseError("syntax", kind.line, kind.col,
                       "memtype must be ADDR or SEG:<name>, got '" + kind.text + "'");
    }
    expect(Token::Kind::RParen, "')'");
    return r;
  }

  ExecRule exec_rule() {
    expect(Token::Kind::LParen, "'('");
    ExecRule r;
    r.target = target();
    expect(Token::Kind::Comma, "','");
    Token tag = expect(Token::Kind::Ident, "SYMB or ADDR");
    if (tag.text == "SYMB") {
      if (r.target.kind != Target::Kind::Symbol)
        throw ParseError("syntax", tag.line, tag.col, "SYMB target must be a symbol");
    } else if (tag.text == "ADDR") {
      if (r.target.kind != Target::Kind::Address)
        throw ParseError("syntax", tag.line, tag.col, "ADDR target must be an address");
    } else {
      throw ParseError("syntax", tag.line, tag.col,
                       "call type must be SYMB or ADDR, got '" + tag.text + "'");
    }
    expect(Token::Kind::RParen, "')'");
    return r;
  }

  // Parses "{ rule, rule }" with the given element parser.
  template <typename Rule, typename Fn>
  std::vector<Rule> rule_block(Fn parse_one) {
    expect(Token::Kind::LBrace, "'{'");
    std::vector<Rule> rules;
    if (tok().kind != Token::Kind::RBrace) {
      rules.push_back(parse_one());
      while (tok().kind == Token::Kind::Comma) {
        advance();
        rules.push_back(parse_one());
      }
    }
    expect(Token::Kind::RBrace, "'}'");
    return rules;
  }

  // Counts tuple elements from an LParen lookahead without consuming input,
  // to classify an ambiguous [Requires] section.
  int lookahead_arity() const {
    if (tok().kind != Token::Kind::LParen)
      return -1;
    int elems = 1;
    for (size_t n = 1;; ++n) {
      const Token& t = peek(n);
      if (t.kind == Token::Kind::RParen)
        return elems;
      if (t.kind == Token::Kind::Comma)
        ++elems;
      if (t.kind == Token::Kind::End || t.kind == Token::Kind::LBrace)
        return -1;
    }
  }

  void requires_section(ComponentSpec& spec) {
    std::optional<ModTok> mod;
    if (at_modifier())
      mod = take_modifier();
    expect(Token::Kind::LBrace, "'{'");

    bool memory_form;
    if (tok().kind == Token::Kind::RBrace) {
      // No rules to disambiguate with: a lone U reads as the call form ("no
      // calls from neighbors"), no modifier at all as the memory form with
      // the least-privilege default.
      memory_form = !mod || (mod->text != "U" && mod->text[0] != 'X');
    } else {
      int arity = lookahead_arity();
      if (arity == 4)
        memory_form = true;
      else if (arity == 2)
        memory_form = false;
      else
        fail("syntax", "requires rule must be a 4-tuple (memory) or a pair (call)");
    }

    if (memory_form) {
      RequiresMem clause;
      clause.coarse = mod ? access_modifier(*mod) : Access::U;
      if (tok().kind != Token::Kind::RBrace) {
        clause.rules.push_back(mem_rule());
        while (tok().kind == Token::Kind::Comma) {
          advance();
          clause.rules.push_back(mem_rule());
        }
      }
      expect(Token::Kind::RBrace, "'}'");
      if (spec.requires_mem) {
        spec.requires_mem->coarse = access_meet(spec.requires_mem->coarse, clause.coarse);
        spec.requires_mem->rules.insert(spec.requires_mem->rules.end(),
                                        clause.rules.begin(), clause.rules.end());
      } else {
        spec.requires_mem = std::move(clause);
      }
    } else {
      RequiresCall clause;
      if (mod)
        clause.coarse = exec_modifier(*mod);
      if (tok().kind != Token::Kind::RBrace) {
        clause.rules.push_back(exec_rule());
        while (tok().kind == Token::Kind::Comma) {
          advance();
          clause.rules.push_back(exec_rule());
        }
      }
      expect(Token::Kind::RBrace, "'}'");
      spec.requires_call.push_back(std::move(clause));
    }
  }

  ComponentSpec component() {
    Token kw = expect(Token::Kind::Ident, "'component'");
    if (kw.text != "component")
      throw ParseError("syntax", kw.line, kw.col, "expected 'component', got '" + kw.text + "'");
    ComponentSpec spec;
    spec.name = expect(Token::Kind::Ident, "a component name").text;
    expect(Token::Kind::LBrace, "'{'");
    while (tok().kind != Token::Kind::RBrace) {
      Token sec = expect(Token::Kind::Section, "a section header");
      if (sec.text == "Memory Access") {
        if (spec.memory)
          throw ParseError("syntax", sec.line, sec.col, "duplicate [Memory Access] section");
        MemSection s;
        if (at_modifier())
          s.coarse = access_modifier(take_modifier());
        s.rules = rule_block<MemRule>([&] { return mem_rule(); });
        spec.memory = std::move(s);
      } else if (sec.text == "Call") {
        if (spec.call)
          throw ParseError("syntax", sec.line, sec.col, "duplicate [Call] section");
        CallSection s;
        if (at_modifier())
          s.coarse = exec_modifier(take_modifier());
        s.rules = rule_block<ExecRule>([&] { return exec_rule(); });
        spec.call = std::move(s);
      } else if (sec.text == "API") {
        if (!spec.api.empty())
          throw ParseError("syntax", sec.line, sec.col, "duplicate [API] section");
        spec.api = rule_block<ExecRule>([&] { return exec_rule(); });
      } else if (sec.text == "Requires") {
        requires_section(spec);
      } else {
        throw ParseError("syntax", sec.line, sec.col, "unknown section [" + sec.text + "]");
      }
    }
    expect(Token::Kind::RBrace, "'}'");
    return spec;
  }
};

std::string target_text(const Target& t) {
  if (t.kind == Target::Kind::Symbol)
    return t.symbol;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "0x%llx", static_cast<unsigned long long>(t.address));
  return buf;
}

std::string mem_rule_text(const MemRule& r) {
  std::string s = "(" + target_text(r.target) + ", " + to_string(r.access) + ", " +
                  std::to_string(r.size) + ", ";
  s += r.memtype == MemRule::MemType::Address ? "ADDR" : "SEG:" + r.segment;
  return s + ")";
}

std::string exec_rule_text(const ExecRule& r) {
  std::string tag = r.target.kind == Target::Kind::Symbol ? "SYMB" : "ADDR";
  return "(" + target_text(r.target) + ", " + tag + ")";
}

template <typename Rule, typename Fn>
void emit_block(std::ostream& os, const std::string& head,
                const std::vector<Rule>& rules, Fn text) {
  if (rules.empty()) {
    os << "  " << head << " { }\n";
    return;
  }
  os << "  " << head << " {\n";
  for (size_t i = 0; i < rules.size(); ++i)
    os << "    " << text(rules[i]) << (i + 1 < rules.size() ? "," : "") << "\n";
  os << "  }\n";
}

} // namespace

SpecSet parse_mspec(const std::string& text) {
  Parser p(text);
  SpecSet specs;
  std::set<std::string> names;
  while (p.tok().kind != Token::Kind::End) {
    int line = p.tok().line, col = p.tok().col;
    ComponentSpec spec = p.component();
    if (!names.insert(spec.name).second)
      throw ParseError("duplicate-component", line, col,
                       "component '" + spec.name + "' declared twice");
    specs.push_back(std::move(spec));
  }
  return specs;
}

std::string serialize_mspec(const SpecSet& specs) {
  std::ostringstream os;
  for (const auto& spec : specs) {
    os << "component " << spec.name << " {\n";
    if (spec.memory)
      emit_block(os, std::string("[Memory Access] ") + to_string(spec.memory->coarse),
                 spec.memory->rules, mem_rule_text);
    if (spec.call)
      emit_block(os, std::string("[Call] ") + to_string(spec.call->coarse),
                 spec.call->rules, exec_rule_text);
    if (!spec.api.empty())
      emit_block(os, "[API]", spec.api, exec_rule_text);
    if (spec.requires_mem) {
      const auto& req = *spec.requires_mem;
      // U with no rules must stay modifier-free: a lone U reparses as the
      // call form.
      std::string head = "[Requires]";
      if (!(req.coarse == Access::U && req.rules.empty()))
        head += std::string(" ") + to_string(req.coarse);
      emit_block(os, head, req.rules, mem_rule_text);
    }
    for (const auto& clause : spec.requires_call) {
      std::string head = "[Requires]";
      if (clause.coarse)
        head += std::string(" ") + to_string(*clause.coarse);
      emit_block(os, head, clause.rules, exec_rule_text);
    }
    os << "}\n";
  }
  return os.str();
}

namespace {

// Findings produced by X's requirements against Y's declarations when the
// two share a compartment.
void requires_violations(const ComponentSpec& x, const ComponentSpec& y,
                         const std::string& compartment,
                         const std::map<std::string, std::string>* symbol_owner,
                         std::vector<Violation>& out) {
  auto add = [&](const std::string& kind, const std::string& msg) {
    out.push_back({y.name, compartment, kind, msg, Severity::Error});
  };

  if (x.requires_mem) {
    const auto& req = *x.requires_mem;
    if (!access_leq(y.coarse_memory(), req.coarse))
      add("memory-modifier-exceeded",
          "'" + y.name + "' declares memory access " + to_string(y.coarse_memory()) +
              ", but co-located '" + x.name + "' requires at most " + to_string(req.coarse));
    if (y.memory) {
      for (const auto& rule : y.memory->rules) {
        bool covered = false;
        for (const auto& allowed : req.rules) {
          covered |= allowed.target == rule.target && allowed.memtype == rule.memtype &&
                     allowed.segment == rule.segment && allowed.access == rule.access &&
                     rule.size <= allowed.size;
        }
        if (!covered)
          add("memory-rule-uncovered",
              "'" + y.name + "' memory rule " + mem_rule_text(rule) +
                  " is not covered by the requirements of '" + x.name + "'");
      }
    }
  }

  for (const auto& clause : x.requires_call) {
    if (clause.coarse && !exec_leq(y.coarse_call(), *clause.coarse))
      add("call-modifier-exceeded",
          "'" + y.name + "' declares call privilege " + to_string(y.coarse_call()) +
              ", but co-located '" + x.name + "' requires at most " +
              to_string(*clause.coarse));
  }

  // Fine-grained call whitelist: only meaningful when symbols can be
  // attributed to their defining component.
  if (symbol_owner && y.call) {
    std::vector<ExecRule> allowed = x.api;
    for (const auto& clause : x.requires_call)
      allowed.insert(allowed.end(), clause.rules.begin(), clause.rules.end());
    for (const auto& rule : y.call->rules) {
      if (rule.target.kind != Target::Kind::Symbol)
        continue;
      auto it = symbol_owner->find(rule.target.symbol);
      if (it == symbol_owner->end() || it->second != x.name)
        continue;
      if (std::find(allowed.begin(), allowed.end(), rule) == allowed.end())
        add("call-target-not-permitted",
            "'" + y.name + "' declares a call to '" + rule.target.symbol +
                "' of '" + x.name + "' outside its API and requirements");
    }
  }
}

bool pair_conflicts(const ComponentSpec& a, const ComponentSpec& b) {
  std::vector<Violation> v;
  requires_violations(a, b, "", nullptr, v);
  requires_violations(b, a, "", nullptr, v);
  return !v.empty();
}

} // namespace

std::vector<Violation>
check_requires(const SpecSet& specs, const config::ImageConfig& cfg,
               const std::map<std::string, std::string>* symbol_owner) {
  std::vector<Violation> out;
  for (const auto& [lib, comp] : cfg.library_map) {
    if (!find_spec(specs, lib))
      out.push_back({lib, comp, "missing-spec",
                     "library '" + lib + "' has no component spec", Severity::Warning});
  }
  for (const auto& decl : cfg.compartments) {
    std::vector<const ComponentSpec*> members;
    for (const auto& lib : cfg.libraries_of(decl.name))
      if (const auto* s = find_spec(specs, lib))
        members.push_back(s);
    for (const auto* x : members)
      for (const auto* y : members)
        if (x != y)
          requires_violations(*x, *y, decl.name, symbol_owner, out);
  }
  return out;
}

std::vector<Violation>
check_api(const SpecSet& specs, const std::map<std::string, std::string>& symbol_owner) {
  std::vector<Violation> out;
  for (const auto& spec : specs) {
    for (const auto& entry : spec.api) {
      if (entry.target.kind != Target::Kind::Symbol)
        continue;
      auto it = symbol_owner.find(entry.target.symbol);
      if (it == symbol_owner.end()) {
        out.push_back({spec.name, "", "api-symbol-undefined",
                       "API entry '" + entry.target.symbol + "' of '" + spec.name +
                           "' names no known symbol",
                       Severity::Error});
      } else if (it->second != spec.name) {
        out.push_back({spec.name, "", "api-symbol-not-owned",
                       "API entry '" + entry.target.symbol + "' of '" + spec.name +
                           "' is defined by '" + it->second + "'",
                       Severity::Error});
      }
    }
  }
  return out;
}

std::optional<config::Partition> suggest_partition(const SpecSet& specs,
                                                   int max_compartments) {
  const int n = static_cast<int>(specs.size());
  if (n == 0)
    return config::Partition{};
  if (max_compartments <= 0)
    return std::nullopt;

  std::vector<std::vector<bool>> conflict(n, std::vector<bool>(n, false));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      conflict[i][j] = conflict[j][i] = pair_conflicts(specs[i], specs[j]);

  std::vector<std::vector<int>> blocks;
  std::vector<std::vector<int>> best;
  size_t best_count = static_cast<size_t>(std::min(max_compartments, n)) + 1;

  auto fits = [&](int comp, const std::vector<int>& block) {
    for (int member : block)
      if (conflict[comp][member])
        return false;
    return true;
  };

  if (n <= 12) {
    // Exact minimal search over set partitions in restricted-growth order,
    // pruned once the block count cannot beat the best found.
    auto dfs = [&](auto&& self, int i) -> void {
      if (blocks.size() >= best_count)
        return;
      if (i == n) {
        best = blocks;
        best_count = blocks.size();
        return;
      }
      // Index loop: the recursion appends and removes trailing blocks, which
      // can reallocate the vector and would invalidate range-for iterators.
      const size_t existing = blocks.size();
      for (size_t bi = 0; bi < existing; ++bi) {
        if (fits(i, blocks[bi])) {
          blocks[bi].push_back(i);
          self(self, i + 1);
          blocks[bi].pop_back();
        }
      }
      if (blocks.size() + 1 < best_count) {
        blocks.push_back({i});
        self(self, i + 1);
        blocks.pop_back();
      }
    };
    dfs(dfs, 0);
  } else {
    // First-fit fallback for large inputs.
    for (int i = 0; i < n; ++i) {
      bool placed = false;
      for (auto& block : blocks) {
        if (fits(i, block)) {
          block.push_back(i);
          placed = true;
          break;
        }
      }
      if (!placed)
        blocks.push_back({i});
    }
    if (blocks.size() <= static_cast<size_t>(max_compartments)) {
      best = blocks;
      best_count = blocks.size();
    }
  }

  if (best_count > static_cast<size_t>(std::min(max_compartments, n)))
    return std::nullopt;
  config::Partition result;
  for (const auto& block : best) {
    std::vector<std::string> names;
    for (int member : block)
      names.push_back(specs[member].name);
    result.push_back(std::move(names));
  }
  return result;
}

} // namespace flexc::mspec
