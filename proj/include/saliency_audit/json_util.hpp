#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "saliency_audit/common.hpp"

namespace sa {

using Json = nlohmann::json;

/// Throws InvalidInput naming the first key of `j` not in `allowed`.
inline void reject_unknown_keys(const Json& j, std::initializer_list<std::string_view> allowed,
                                std::string_view where) {
  if (!j.is_object()) throw InvalidInput(std::string(where) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) throw InvalidInput(std::string(where) + ": unknown key '" + key + "'");
  }
}

/// Reads j[key] into out when present; type errors surface as InvalidInput.
template <typename V>
void read_optional(const Json& j, const char* key, V& out, std::string_view where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const Json::exception& e) {
    throw InvalidInput(std::string(where) + "." + key + ": " + e.what());
  }
}

}  // namespace sa
