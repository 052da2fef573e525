#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "rc3d/error.hpp"

namespace rc3d {

using Json = nlohmann::json;

// Rejects keys outside `allowed`; `context` names the section in the message.
inline void require_known_keys(const Json& j, std::initializer_list<std::string_view> allowed,
                               std::string_view context) {
  if (!j.is_object()) throw ConfigError(std::string(context) + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) {
      std::string msg = std::string(context) + ": unknown key '" + key + "' (allowed:";
      for (auto a : allowed) msg += " " + std::string(a);
      throw ConfigError(msg + ")");
    }
  }
}

// Reads j[key] into out when present, with a typed error on mismatch.
template <typename V>
void read_optional(const Json& j, std::string_view key, V& out, std::string_view context) {
  const auto it = j.find(std::string(key));
  if (it == j.end()) return;
  try {
    out = it->template get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(context) + "." + std::string(key) + ": " + e.what());
  }
}

// Canonical text: sorted keys, two-space indent, trailing newline.
inline std::string canonical_text(const Json& j) { return j.dump(2) + "\n"; }

inline Json parse_json_text(std::string_view text, std::string_view context) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string(context) + ": " + e.what());
  }
}

}  // namespace rc3d
