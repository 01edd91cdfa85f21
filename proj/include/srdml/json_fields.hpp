#pragma once

// Strict reading of JSON objects: typed fields, dotted paths in error
// messages, unknown keys rejected.

#include <set>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace srdml {

/// A configuration document that fails validation; `field()` names the offending path.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field.empty() ? message : field + ": " + message),
        field_(std::move(field)),
        message_(message) {}
  const std::string& field() const noexcept { return field_; }
  const std::string& message() const noexcept { return message_; }

 private:
  std::string field_;
  std::string message_;
};

class FieldReader {
 public:
  FieldReader(const nlohmann::json& object, std::string path) : object_(object), path_(std::move(path)) {
    if (!object_.is_object()) throw ConfigError(path_, "expected an object");
  }

  std::string path_of(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) const { return object_.contains(key) && !object_.at(key).is_null(); }

  /// Assigns `out` when the key is present; leaves the default otherwise.
  template <typename T>
  void optional(const std::string& key, T& out) {
    seen_.insert(key);
    if (!has(key)) return;
    try {
      out = object_.at(key).get<T>();
    } catch (const ConfigError& e) {
      throw ConfigError(e.field().empty() ? path_of(key) : path_of(key) + "." + e.field(), e.message());
    } catch (const std::exception& e) {
      throw ConfigError(path_of(key), e.what());
    }
  }

  template <typename T>
  void required(const std::string& key, T& out) {
    if (!has(key)) throw ConfigError(path_of(key), "missing required field");
    optional(key, out);
  }

  const nlohmann::json* child(const std::string& key) {
    seen_.insert(key);
    return has(key) ? &object_.at(key) : nullptr;
  }

  /// Throws on any key that was never asked for.
  void finish() const {
    for (auto it = object_.begin(); it != object_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(path_of(it.key()), "unknown key");
    }
  }

 private:
  const nlohmann::json& object_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace srdml
