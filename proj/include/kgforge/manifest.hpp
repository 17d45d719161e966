#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "kgforge/config.hpp"
#include "kgforge/errors.hpp"

namespace kgforge {

// Every command writes one manifest: the effective config, seeds, hashes of
// the artifacts it emitted and of the inputs it consumed, and wall-clock
// time. Artifact hashes are the reproducibility contract; wall-clock is the
// only field expected to differ between identical runs.

inline u64 hash_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot hash missing file: " + path);
  u64 h = 14695981039346656037ull;
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof(buf));
    h = fnv1a64(buf, static_cast<std::size_t>(is.gcount()), h);
  }
  return h;
}

inline std::string hash_file_hex(const std::string& path) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(hash_file(path)));
  return buf;
}

class ManifestWriter {
 public:
  ManifestWriter(std::string command, const RunConfig& cfg)
      : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {
    config_ = cfg.to_map();
    seed_ = cfg.seed;
  }

  void add_artifact(const std::string& name, const std::string& path) {
    artifacts_[name] = path;
  }
  void add_input(const std::string& name, const std::string& path) {
    inputs_[name] = path;
  }
  void note(const std::string& key, const std::string& value) { notes_[key] = value; }

  void write(const std::string& path) const {
    nlohmann::ordered_json j;
    j["command"] = command_;
    j["version"] = kVersion;
    j["seed"] = seed_;
    j["config"] = config_;
    nlohmann::ordered_json arts;
    for (const auto& [name, p] : artifacts_)
      arts[name] = {{"path", p}, {"fnv1a64", hash_file_hex(p)}};
    j["artifacts"] = std::move(arts);
    nlohmann::ordered_json ins;
    for (const auto& [name, p] : inputs_)
      ins[name] = {{"path", p}, {"fnv1a64", hash_file_hex(p)}};
    j["inputs"] = std::move(ins);
    for (const auto& [k, v] : notes_) j["notes"][k] = v;
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    j["wall_clock_seconds"] = wall;
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot write manifest: " + path);
    os << j.dump(2) << "\n";
  }

 private:
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  std::map<std::string, std::string> config_;
  std::map<std::string, std::string> artifacts_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> notes_;
  u64 seed_ = 0;
};

}  // namespace kgforge
