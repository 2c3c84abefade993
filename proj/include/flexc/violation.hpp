// Copyright the flexc contributors.
// SPDX-License-Identifier: MIT
#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace flexc {

enum class Severity { Warning, Error };

inline const char* to_string(Severity s) {
  return s == Severity::Error ? "error" : "warning";
}

// One checker finding. `component` and `compartment` are empty when the
// finding is image-wide rather than tied to a specific library or domain.
// `kind` is a stable lowercase tag (e.g. "memory-modifier-exceeded",
// "key-budget-exceeded") so reports can be filtered without string-matching
// prose.
struct Violation {
  std::string component;
  std::string compartment;
  std::string kind;
  std::string message;
  Severity severity = Severity::Error;

  bool operator==(const Violation&) const = default;
};

inline void to_json(nlohmann::json& j, const Violation& v) {
  j = nlohmann::json{{"component", v.component},
                     {"compartment", v.compartment},
                     {"kind", v.kind},
                     {"message", v.message},
                     {"severity", to_string(v.severity)}};
}

inline bool has_errors(const std::vector<Violation>& vs) {
  for (const auto& v : vs)
    if (v.severity == Severity::Error)
      return true;
  return false;
}

inline nlohmann::json violations_report(const std::vector<Violation>& vs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& v : vs)
    arr.push_back(v);
  return nlohmann::json{{"violations", arr}};
}

} // namespace flexc
