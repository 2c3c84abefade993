// Copyright the flexc contributors.
// SPDX-License-Identifier: MIT

#include "flexc/config.hpp"

#include <algorithm>
#include <cstdint>
#include <set>
#include <sstream>

#include "flexc/error.hpp"

namespace flexc::config {

HardeningSet HardeningSet::all() {
  HardeningSet s;
  s.bits_ = (1u << kHardeningCount) - 1;
  return s;
}

std::vector<std::string> HardeningSet::names() const {
  std::vector<std::string> out;
  for (unsigned i = 0; i < kHardeningCount; ++i)
    if (bits_ & (1u << i))
      out.push_back(to_string(static_cast<Hardening>(i)));
  return out;
}

const char* to_string(Mechanism m) {
  switch (m) {
  case Mechanism::FuncCall: return "func-call";
  case Mechanism::MpkLight: return "mpk-light";
  case Mechanism::MpkDss: return "mpk-dss";
  case Mechanism::Ept: return "ept";
  }
  return "?";
}

const char* to_string(Hardening h) {
  switch (h) {
  case Hardening::Cfi: return "cfi";
  case Hardening::Asan: return "asan";
  case Hardening::Ubsan: return "ubsan";
  case Hardening::Kasan: return "kasan";
  case Hardening::StackProtector: return "stack-protector";
  }
  return "?";
}

const char* to_string(Sharing s) {
  switch (s) {
  case Sharing::SharedStack: return "stack";
  case Sharing::Dss: return "dss";
  case Sharing::HeapConversion: return "heap";
  }
  return "?";
}

std::optional<Mechanism> mechanism_from_name(const std::string& name) {
  if (name == "func-call") return Mechanism::FuncCall;
  if (name == "mpk-light") return Mechanism::MpkLight;
  if (name == "mpk-dss") return Mechanism::MpkDss;
  if (name == "ept") return Mechanism::Ept;
  return std::nullopt;
}

std::optional<Hardening> hardening_from_name(const std::string& name) {
  for (unsigned i = 0; i < kHardeningCount; ++i) {
    auto h = static_cast<Hardening>(i);
    if (name == to_string(h))
      return h;
  }
  return std::nullopt;
}

std::optional<Sharing> sharing_from_name(const std::string& name) {
  if (name == "stack") return Sharing::SharedStack;
  if (name == "dss") return Sharing::Dss;
  if (name == "heap") return Sharing::HeapConversion;
  return std::nullopt;
}

const CompartmentDecl* ImageConfig::find_compartment(const std::string& name) const {
  for (const auto& c : compartments)
    if (c.name == name)
      return &c;
  return nullptr;
}

std::optional<int> ImageConfig::compartment_of(const std::string& library) const {
  auto it = library_map.find(library);
  if (it == library_map.end())
    return std::nullopt;
  for (size_t i = 0; i < compartments.size(); ++i)
    if (compartments[i].name == it->second)
      return static_cast<int>(i);
  return std::nullopt;
}

std::optional<int> ImageConfig::default_compartment() const {
  for (size_t i = 0; i < compartments.size(); ++i)
    if (compartments[i].is_default)
      return static_cast<int>(i);
  return std::nullopt;
}

Mechanism ImageConfig::mechanism() const {
  return compartments.empty() ? Mechanism::FuncCall : compartments.front().mechanism;
}

std::vector<std::string> ImageConfig::libraries_of(const std::string& compartment) const {
  std::vector<std::string> out;
  for (const auto& [lib, comp] : library_map)
    if (comp == compartment)
      out.push_back(lib);
  return out;
}

bool ImageConfig::uses_mpk() const {
  for (const auto& c : compartments)
    if (c.mechanism == Mechanism::MpkLight || c.mechanism == Mechanism::MpkDss)
      return true;
  return false;
}

namespace {

struct ConfigLine {
  int no;
  int indent;
  std::string text;
};

[[noreturn]] void fail(const std::string& kind, int line, const std::string& msg) {
  throw ParseError(kind, line, 1, msg);
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos)
    return "";
  size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

// Splits "key: value" at the first colon; value may be empty.
bool split_kv(const std::string& s, std::string& key, std::string& value) {
  size_t pos = s.find(':');
  if (pos == std::string::npos)
    return false;
  key = trim(s.substr(0, pos));
  value = trim(s.substr(pos + 1));
  return !key.empty();
}

bool parse_bool(const std::string& v, int line) {
  if (v == "True" || v == "true")
    return true;
  if (v == "False" || v == "false")
    return false;
  fail("syntax", line, "expected a boolean, got '" + v + "'");
}

// Parses "[a, b, c]" into trimmed element strings; empty list allowed.
std::vector<std::string> parse_bracket_list(const std::string& v, int line) {
  if (v.size() < 2 || v.front() != '[' || v.back() != ']')
    fail("syntax", line, "expected a [..] list, got '" + v + "'");
  std::vector<std::string> out;
  std::string inner = v.substr(1, v.size() - 2);
  std::stringstream ss(inner);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty())
      fail("syntax", line, "empty element in list '" + v + "'");
    out.push_back(item);
  }
  return out;
}

// Raw compartment entry before mechanism/gate are folded together.
struct PendingCompartment {
  int line = 0;
  int mech_line = 0;
  int gate_line = 0;
  std::string name;
  std::optional<std::string> mechanism;
  std::optional<std::string> gate;
  HardeningSet hardening;
  bool is_default = false;
  std::set<std::string> seen_keys;
};

CompartmentDecl finalize(const PendingCompartment& p) {
  CompartmentDecl decl;
  decl.name = p.name;
  decl.hardening = p.hardening;
  decl.is_default = p.is_default;
  if (!p.mechanism)
    fail("syntax", p.line, "compartment '" + p.name + "' has no mechanism");
  const std::string& mech = *p.mechanism;
  if (mech == "none") {
    decl.mechanism = Mechanism::FuncCall;
  } else if (mech == "intel-mpk") {
    decl.mechanism = p.gate ? Mechanism::MpkLight : Mechanism::MpkDss;
  } else if (mech == "vm-ept") {
    decl.mechanism = Mechanism::Ept;
  } else {
    fail("unknown-mechanism", p.mech_line, "unknown mechanism '" + mech + "'");
  }
  if (p.gate && mech != "intel-mpk")
    fail("syntax", p.gate_line, "'gate' only applies to intel-mpk compartments");
  return decl;
}

} // namespace

ImageConfig parse_config(const std::string& text) {
  std::vector<ConfigLine> lines;
  {
    std::stringstream ss(text);
    std::string raw;
    int no = 0;
    while (std::getline(ss, raw)) {
      ++no;
      size_t hash = raw.find('#');
      if (hash != std::string::npos)
        raw = raw.substr(0, hash);
      size_t first = raw.find_first_not_of(' ');
      if (first == std::string::npos)
        continue;
      if (raw.find('\t') != std::string::npos)
        fail("syntax", no, "tabs are not allowed, indent with spaces");
      lines.push_back({no, static_cast<int>(first), trim(raw)});
    }
  }

  enum class Section { None, Compartments, Libraries };
  Section section = Section::None;
  ImageConfig cfg;
  std::optional<PendingCompartment> open;
  std::optional<Sharing> explicit_sharing;
  std::set<std::string> comp_names;
  struct LibEntry { int line; std::string lib, comp; };
  std::vector<LibEntry> libs;

  auto close_item = [&]() {
    if (open) {
      cfg.compartments.push_back(finalize(*open));
      open.reset();
    }
  };

  for (const auto& ln : lines) {
    std::string key, value;
    if (ln.indent == 0) {
      close_item();
      if (!split_kv(ln.text, key, value))
        fail("syntax", ln.no, "expected 'key: value'");
      if (key == "compartments") {
        if (!value.empty())
          fail("syntax", ln.no, "'compartments:' takes no inline value");
        section = Section::Compartments;
      } else if (key == "libraries") {
        if (!value.empty())
          fail("syntax", ln.no, "'libraries:' takes no inline value");
        section = Section::Libraries;
      } else if (key == "sharing") {
        auto s = sharing_from_name(value);
        if (!s)
          fail("syntax", ln.no, "unknown sharing strategy '" + value + "'");
        explicit_sharing = *s;
        section = Section::None;
      } else {
        fail("unknown-key", ln.no, "unknown top-level key '" + key + "'");
      }
      continue;
    }

    bool is_item = ln.text.rfind("- ", 0) == 0;
    if (is_item) {
      close_item();
      std::string body = trim(ln.text.substr(2));
      if (!split_kv(body, key, value))
        fail("syntax", ln.no, "expected '- name:' or '- name: value'");
      if (section == Section::Compartments) {
        if (!value.empty())
          fail("syntax", ln.no, "compartment entry takes attributes on following lines");
        if (!comp_names.insert(key).second)
          fail("duplicate-compartment", ln.no, "compartment '" + key + "' declared twice");
        open = PendingCompartment{};
        open->line = ln.no;
        open->name = key;
      } else if (section == Section::Libraries) {
        if (value.empty())
          fail("syntax", ln.no, "library entry needs a compartment name");
        libs.push_back({ln.no, key, value});
      } else {
        fail("syntax", ln.no, "list item outside a section");
      }
      continue;
    }

    // Attribute of the currently open compartment entry.
    if (section != Section::Compartments || !open)
      fail("syntax", ln.no, "unexpected indented line");
    if (!split_kv(ln.text, key, value))
      fail("syntax", ln.no, "expected 'key: value'");
    if (!open->seen_keys.insert(key).second)
      fail("syntax", ln.no, "duplicate key '" + key + "'");
    if (key == "mechanism") {
      open->mechanism = value;
      open->mech_line = ln.no;
    } else if (key == "gate") {
      if (value != "light")
        fail("syntax", ln.no, "unknown gate flavor '" + value + "'");
      open->gate = value;
      open->gate_line = ln.no;
    } else if (key == "hardening") {
      for (const auto& name : parse_bracket_list(value, ln.no)) {
        auto h = hardening_from_name(name);
        if (!h)
          fail("unknown-hardening", ln.no, "unknown hardening '" + name + "'");
        open->hardening.insert(*h);
      }
    } else if (key == "default") {
      open->is_default = parse_bool(value, ln.no);
    } else {
      fail("unknown-key", ln.no, "unknown compartment key '" + key + "'");
    }
  }
  close_item();

  for (const auto& e : libs) {
    if (!comp_names.count(e.comp))
      fail("unknown-compartment", e.line,
           "library '" + e.lib + "' mapped to unknown compartment '" + e.comp + "'");
    if (!cfg.library_map.emplace(e.lib, e.comp).second)
      fail("duplicate-library", e.line, "library '" + e.lib + "' mapped twice");
  }

  if (explicit_sharing) {
    cfg.sharing = *explicit_sharing;
  } else {
    bool light = false;
    for (const auto& c : cfg.compartments)
      light |= c.mechanism == Mechanism::MpkLight;
    cfg.sharing = light ? Sharing::SharedStack : Sharing::Dss;
  }

  // Per-library view of hardening: push the compartment set down.
  for (const auto& [lib, comp] : cfg.library_map)
    cfg.component_hardening[lib] = cfg.find_compartment(comp)->hardening;

  return cfg;
}

ValidationReport validate_config(const ImageConfig& cfg) {
  ValidationReport rep;
  auto add = [&](Severity sev, const std::string& kind, const std::string& comp,
                 const std::string& msg) {
    rep.violations.push_back({"", comp, kind, msg, sev});
  };

  std::set<std::string> names;
  for (const auto& c : cfg.compartments)
    if (!names.insert(c.name).second)
      add(Severity::Error, "duplicate-compartment", c.name,
          "compartment '" + c.name + "' declared twice");

  int defaults = 0;
  for (const auto& c : cfg.compartments)
    defaults += c.is_default ? 1 : 0;
  if (defaults == 0)
    add(Severity::Error, "no-default-compartment", "",
        "image needs exactly one default compartment, found none");
  if (defaults > 1)
    add(Severity::Error, "multiple-default-compartments", "",
        "image needs exactly one default compartment, found " + std::to_string(defaults));

  for (const auto& [lib, comp] : cfg.library_map) {
    if (!cfg.find_compartment(comp))
      add(Severity::Error, "unknown-compartment", comp,
          "library '" + lib + "' mapped to unknown compartment '" + comp + "'");
  }

  std::set<Mechanism> mechs;
  for (const auto& c : cfg.compartments)
    mechs.insert(c.mechanism);
  if (mechs.size() > 1)
    add(Severity::Error, "mixed-mechanisms", "",
        "all compartments must use the same isolation mechanism");

  if (cfg.uses_mpk()) {
    int n = static_cast<int>(cfg.compartments.size());
    rep.spare_shared_keys = kMpkCompartmentKeys - n;
    if (n > kMpkCompartmentKeys)
      add(Severity::Error, "key-budget-exceeded", "",
          "MPK supports " + std::to_string(kMpkCompartmentKeys) +
              " compartments (one of 16 keys is the shared domain), got " +
              std::to_string(n));
    bool light = false;
    for (const auto& c : cfg.compartments)
      light |= c.mechanism == Mechanism::MpkLight;
    if (light && cfg.sharing != Sharing::SharedStack)
      add(Severity::Error, "sharing-mechanism-mismatch", "",
          "light gates keep one shared stack; sharing must be 'stack'");
  }

  for (const auto& c : cfg.compartments) {
    if (cfg.libraries_of(c.name).empty())
      add(Severity::Warning, "empty-compartment", c.name,
          "compartment '" + c.name + "' has no libraries mapped to it");
  }

  return rep;
}

std::vector<ImageConfig> enumerate_space(const std::vector<std::string>& components,
                                         const std::vector<Partition>& partitions,
                                         HardeningSet universe,
                                         Mechanism mechanism,
                                         Sharing sharing) {
  if (components.size() >= 8 * sizeof(unsigned))
    throw BuildError("invalid-partition", "too many components to enumerate");

  for (const auto& part : partitions) {
    std::multiset<std::string> flat;
    for (const auto& block : part) {
      if (block.empty())
        throw BuildError("invalid-partition", "partition contains an empty block");
      flat.insert(block.begin(), block.end());
    }
    std::multiset<std::string> want(components.begin(), components.end());
    if (flat != want)
      throw BuildError("invalid-partition",
                       "partition blocks must cover every component exactly once");
  }

  std::vector<ImageConfig> out;
  out.reserve(partitions.size() << components.size());
  for (const auto& part : partitions) {
    for (unsigned mask = 0; mask < (1u << components.size()); ++mask) {
      ImageConfig cfg;
      cfg.sharing = sharing;
      for (size_t b = 0; b < part.size(); ++b) {
        CompartmentDecl decl;
        decl.name = "comp" + std::to_string(b + 1);
        decl.mechanism = mechanism;
        for (const auto& lib : part[b]) {
          cfg.library_map[lib] = decl.name;
          if (lib == components.front())
            decl.is_default = true;
        }
        cfg.compartments.push_back(std::move(decl));
      }
      for (size_t i = 0; i < components.size(); ++i) {
        HardeningSet h;
        if (mask & (1u << i))
          h = universe;
        cfg.component_hardening[components[i]] = h;
      }
      // Lift per-component hardening to the owning compartment.
      for (auto& decl : cfg.compartments)
        for (const auto& lib : cfg.libraries_of(decl.name))
          decl.hardening = decl.hardening.united(cfg.component_hardening[lib]);
      out.push_back(std::move(cfg));
    }
  }
  return out;
}

void to_json(nlohmann::json& j, const ImageConfig& cfg) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : cfg.compartments) {
    comps.push_back({{"name", c.name},
                     {"mechanism", to_string(c.mechanism)},
                     {"hardening", c.hardening.names()},
                     {"default", c.is_default}});
  }
  nlohmann::json ch = nlohmann::json::object();
  for (const auto& [lib, set] : cfg.component_hardening)
    ch[lib] = set.names();
  j = nlohmann::json{{"compartments", comps},
                     {"libraries", cfg.library_map},
                     {"sharing", to_string(cfg.sharing)},
                     {"component_hardening", ch}};
}

void from_json(const nlohmann::json& j, ImageConfig& cfg) {
  cfg = ImageConfig{};
  for (const auto& item : j.at("compartments")) {
    CompartmentDecl decl;
    decl.name = item.at("name").get<std::string>();
    auto mech = mechanism_from_name(item.at("mechanism").get<std::string>());
    if (!mech)
      throw Error("unknown mechanism '" + item.at("mechanism").get<std::string>() + "'");
    decl.mechanism = *mech;
    for (const auto& name : item.at("hardening")) {
      auto h = hardening_from_name(name.get<std::string>());
      if (!h)
        throw Error("unknown hardening '" + name.get<std::string>() + "'");
      decl.hardening.insert(*h);
    }
    decl.is_default = item.value("default", false);
    cfg.compartments.push_back(std::move(decl));
  }
  cfg.library_map = j.at("libraries").get<std::map<std::string, std::string>>();
  auto sharing = sharing_from_name(j.at("sharing").get<std::string>());
  if (!sharing)
    throw Error("unknown sharing strategy '" + j.at("sharing").get<std::string>() + "'");
  cfg.sharing = *sharing;
  if (j.contains("component_hardening")) {
    for (const auto& [lib, arr] : j.at("component_hardening").items()) {
      HardeningSet set;
      for (const auto& name : arr) {
        auto h = hardening_from_name(name.get<std::string>());
        if (!h)
          throw Error("unknown hardening '" + name.get<std::string>() + "'");
        set.insert(*h);
      }
      cfg.component_hardening[lib] = set;
    }
  } else {
    for (const auto& [lib, comp] : cfg.library_map) {
      const auto* decl = cfg.find_compartment(comp);
      cfg.component_hardening[lib] = decl ? decl->hardening : HardeningSet{};
    }
  }
}

std::string canonical_json(const ImageConfig& cfg) {
  nlohmann::json j = cfg;
  return j.dump();
}

std::string config_id(const ImageConfig& cfg) {
  std::string s = canonical_json(cfg);
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

} // namespace flexc::config
