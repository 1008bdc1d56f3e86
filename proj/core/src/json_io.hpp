#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>

#include <json.hpp>

#include "dbias/biasing.hpp"
#include "dbias/corpus.hpp"
#include "dbias/model.hpp"

namespace dbias {

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, _] : j.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; })) {
      throw ConfigError("unknown key '" + k + "' in " + where);
    }
  }
}

nlohmann::json model_config_to_json(const ModelConfig& m);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});
nlohmann::json biasing_config_to_json(const BiasingConfig& b);
BiasingConfig biasing_config_from_json(const nlohmann::json& j, BiasingConfig base = {});
nlohmann::json corpus_config_to_json(const SyntheticCorpusConfig& c);
/// Missing keys keep their value from `base`.
SyntheticCorpusConfig corpus_config_from_json(const nlohmann::json& j, SyntheticCorpusConfig base = {});

}  // namespace dbias
