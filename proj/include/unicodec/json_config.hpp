#pragma once

// Strict reader for JSON configuration objects: every key must be consumed,
// and type or range problems name the full key path.

#include <set>
#include <string>

#include "json.hpp"
#include "unicodec/errors.hpp"

namespace unicodec {

using Json = nlohmann::json;

class JsonSection {
 public:
  JsonSection(const Json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(where() + " must be a JSON object");
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(key_path(key) + " has the wrong type");
    }
  }

  JsonSection section(const std::string& key) {
    seen_.insert(key);
    return JsonSection(obj_.contains(key) ? obj_.at(key) : empty(), key_path(key));
  }

  // Throws on the first key (in sorted order) that was never read.
  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key " + key_path(it.key()));
    }
  }

 private:
  static const Json& empty() {
    static const Json e = Json::object();
    return e;
  }
  std::string where() const { return path_.empty() ? "config" : path_; }

  const Json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace unicodec
