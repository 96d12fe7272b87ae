#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hashfield {

std::uint64_t fnv1a64_file(const std::string& path);

/// Record of one CLI run; written atomically as JSON when the run ends.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_json;  // full parsed configuration, already serialized
  std::uint64_t seed = 0;
  std::string tool_version;

  struct InputRecord {
    std::string path;
    std::uint64_t content_hash = 0;  // FNV-1a 64 of the file bytes
  };
  std::vector<InputRecord> inputs;
  std::vector<std::string> outputs;
  double wall_clock_ms = 0.0;
  std::vector<std::string> notes;

  void add_input(const std::string& path);
  void write_atomic(const std::string& path) const;
};

}  // namespace hashfield
