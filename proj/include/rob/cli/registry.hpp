// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rob/core/serialize.hpp"
#include "rob/models/bundle.hpp"

namespace rob {

inline std::string encoder_config_digest(const EncoderConfig& cfg) {
  Fnv1a h;
  h.update(nlohmann::json(cfg).dump());
  return h.hex();
}

struct TeacherRegistryEntry {
  std::string name;
  std::string checkpoint;      // path to the bundle checkpoint
  std::string method;          // how the teacher was trained
  std::string encoder_digest;  // digest of the encoder config
  std::string file_digest;     // digest of the checkpoint file
  nlohmann::json created = nlohmann::json::object();
};

inline void to_json(nlohmann::json& j, const TeacherRegistryEntry& e) {
  j = {{"name", e.name},
       {"checkpoint", e.checkpoint},
       {"method", e.method},
       {"encoder_digest", e.encoder_digest},
       {"file_digest", e.file_digest},
       {"created", e.created}};
}

inline void from_json(const nlohmann::json& j, TeacherRegistryEntry& e) {
  e.name = j.at("name").get<std::string>();
  e.checkpoint = j.at("checkpoint").get<std::string>();
  e.method = j.value("method", "");
  e.encoder_digest = j.value("encoder_digest", "");
  e.file_digest = j.value("file_digest", "");
  e.created = j.value("created", nlohmann::json::object());
}

inline std::vector<TeacherRegistryEntry> read_registry(const std::string& path) {
  std::ifstream is(path);
  if (!is) return {};
  nlohmann::json j;
  is >> j;
  return j.value("entries", std::vector<TeacherRegistryEntry>{});
}

inline void write_registry(const std::string& path,
                           const std::vector<TeacherRegistryEntry>& entries) {
  namespace fs = std::filesystem;
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write registry: " + path);
  os << nlohmann::json{{"entries", entries}}.dump(2) << "\n";
}

/// Adds or replaces the entry with this name.
inline void register_teacher(const std::string& registry_path,
                             const TeacherRegistryEntry& entry) {
  auto entries = read_registry(registry_path);
  bool replaced = false;
  for (auto& e : entries)
    if (e.name == entry.name) {
      e = entry;
      replaced = true;
    }
  if (!replaced) entries.push_back(entry);
  write_registry(registry_path, entries);
}

inline TeacherRegistryEntry lookup_teacher(const std::string& registry_path,
                                           const std::string& name) {
  for (const auto& e : read_registry(registry_path))
    if (e.name == name) return e;
  throw ConfigError("teacher '" + name + "' not found in registry " + registry_path);
}

/// Loads a registered teacher, verifying both the checkpoint file digest
/// and the encoder-config digest before trusting the weights.
inline ModelBundle load_registered_teacher(const TeacherRegistryEntry& entry) {
  const std::string actual = io::file_digest_hex(entry.checkpoint);
  check(actual == entry.file_digest,
        "teacher checkpoint digest mismatch for '" + entry.name + "': registry has " +
            entry.file_digest + ", file is " + actual);
  LoadedBundle loaded = load_bundle(entry.checkpoint);
  const std::string enc_digest = encoder_config_digest(loaded.bundle.encoder.config());
  check(enc_digest == entry.encoder_digest,
        "teacher encoder-config digest mismatch for '" + entry.name + "'");
  loaded.bundle.role = "teacher";
  loaded.bundle.set_frozen(true);
  return loaded.bundle;
}

}  // namespace rob
