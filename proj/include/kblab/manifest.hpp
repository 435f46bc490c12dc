#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "kblab/rng.hpp"

namespace kblab {

inline const char* tool_version() { return "kblab 0.1.0"; }

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::uint64_t digest_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path + " for digest");
  std::ostringstream ss;
  ss << is.rdbuf();
  const std::string bytes = ss.str();
  return fnv1a64(bytes.data(), bytes.size());
}

// Run manifest: config snapshot, seed, input digests, tool version plus
// whatever counters the command reports. Deliberately free of timestamps so
// identical runs produce identical manifests.
inline nlohmann::json make_manifest(const std::string& command, std::uint64_t seed,
                                    const nlohmann::json& config,
                                    const std::vector<std::string>& input_paths) {
  nlohmann::json m;
  m["tool"] = tool_version();
  m["command"] = command;
  m["seed"] = seed;
  m["config"] = config;
  m["config_digest"] = hex64(fnv1a64(config.dump()));
  m["inputs"] = nlohmann::json::object();
  for (const auto& path : input_paths) {
    m["inputs"][path] = hex64(digest_file(path));
  }
  return m;
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  return nlohmann::json::parse(is);
}

}  // namespace kblab
