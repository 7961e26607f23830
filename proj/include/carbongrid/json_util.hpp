#pragma once

#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "carbongrid/errors.hpp"

namespace carbongrid {

/// Reads optional fields from a JSON object, collecting every type error and
/// unknown key into one problem list instead of failing on the first.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& json, std::string context, std::vector<std::string>& problems)
      : json_(json), context_(std::move(context)), problems_(problems) {
    if (!json_.is_object()) problems_.push_back(context_ + ": expected a JSON object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!json_.is_object() || !json_.contains(key)) return;
    try {
      out = json_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      problems_.push_back(context_ + "." + key + ": wrong type");
    }
  }

  /// Nested object, or null when absent.
  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    if (!json_.is_object() || !json_.contains(key)) return nullptr;
    return &json_.at(key);
  }

  void finish() {
    if (!json_.is_object()) return;
    for (auto it = json_.begin(); it != json_.end(); ++it) {
      if (!seen_.count(it.key())) problems_.push_back(context_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const nlohmann::json& json_;
  std::string context_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
};

inline void throw_if_problems(const std::vector<std::string>& problems, const std::string& what) {
  if (problems.empty()) return;
  std::string msg = what + ":";
  for (const auto& p : problems) msg += "\n  - " + p;
  throw ConfigError(msg);
}

}  // namespace carbongrid
