#pragma once

#include <functional>
#include <map>
#include <string>

#include <json.hpp>

#include "nacf/error.hpp"

namespace nacf::detail {

using json = nlohmann::json;

/// Binds JSON object keys to typed fields; unknown keys and type errors
/// raise `code` with the dotted key path.
class FieldBinder {
 public:
  FieldBinder(std::string context, ErrorCode code) : context_(std::move(context)), code_(code) {}

  template <class V>
  FieldBinder& bind(const std::string& key, V& target) {
    setters_[key] = [&target](const json& j) { target = j.get<V>(); };
    return *this;
  }

  FieldBinder& custom(const std::string& key, std::function<void(const json&)> setter) {
    setters_[key] = std::move(setter);
    return *this;
  }

  void apply(const json& object) const {
    if (!object.is_object()) throw Error(code_, context_ + ": expected an object");
    for (const auto& [key, value] : object.items()) {
      auto it = setters_.find(key);
      const std::string path = context_.empty() ? key : context_ + "." + key;
      if (it == setters_.end()) throw Error(code_, "unknown key '" + path + "'");
      try {
        it->second(value);
      } catch (const json::exception& e) {
        throw Error(code_, "bad value for '" + path + "': " + e.what());
      }
    }
  }

 private:
  std::string context_;
  ErrorCode code_;
  std::map<std::string, std::function<void(const json&)>> setters_;
};

}  // namespace nacf::detail
