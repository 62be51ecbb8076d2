#pragma once

// Small helpers for reading config objects field by field over defaults.

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

namespace sbcq {

/// Throws if `j` is not an object or has a key outside `known`.
inline void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                               std::string_view what) {
  if (!j.is_object()) throw std::invalid_argument(std::string(what) + ": expected a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw std::invalid_argument(std::string(what) + ": unknown field '" + key + "'");
}

/// Overwrite `out` with j[key] when present.
template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->template get<T>();
}

// JSON has no infinities; null stands for ±inf on bounds fields.
inline nlohmann::json bound_to_json(double v) {
  if (std::isinf(v)) return nullptr;
  return v;
}

inline void read_bound(const nlohmann::json& j, const char* key, double& out, double if_null) {
  if (auto it = j.find(key); it != j.end()) out = it->is_null() ? if_null : it->get<double>();
}

}  // namespace sbcq
