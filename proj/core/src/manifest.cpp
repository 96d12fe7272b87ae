#include "hashfield/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "hashfield/rng.hpp"

namespace hashfield {

std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for hashing: " + path);
  std::uint64_t h = 0xCBF29CE484222325ull;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001B3ull;
    }
    if (n < static_cast<std::streamsize>(sizeof(buf))) break;
  }
  return h;
}

void RunManifest::add_input(const std::string& path) {
  inputs.push_back({path, fnv1a64_file(path)});
}

void RunManifest::write_atomic(const std::string& path) const {
  nlohmann::json j;
  j["command"] = command;
  j["argv"] = argv;
  if (!config_json.empty()) j["config"] = nlohmann::json::parse(config_json);
  j["seed"] = seed;
  j["tool_version"] = tool_version;
  auto in = nlohmann::json::array();
  for (const InputRecord& rec : inputs) {
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(rec.content_hash));
    in.push_back({{"path", rec.path}, {"fnv1a64", hex}});
  }
  j["inputs"] = in;
  j["outputs"] = outputs;
  j["wall_clock_ms"] = wall_clock_ms;
  j["notes"] = notes;

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest: " + tmp);
    out << j.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace hashfield
