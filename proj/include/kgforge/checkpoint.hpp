#pragma once

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "kgforge/param_store.hpp"

namespace kgforge {

// Checkpoint file layout (little-endian):
//   magic "KGF1"
//   u64 entry count
//   per entry: u32 name length, name bytes, u32 rank, u64 dims[rank],
//              f64 payload[prod(dims)]
// Adam moments are stored under "opt/m/<name>" and "opt/v/<name>", and the
// step counter under "opt/step", so a checkpoint restores optimizer state.

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace detail {

inline void write_u32(std::ostream& os, u32 v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_u64(std::ostream& os, u64 v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline u32 read_u32(std::istream& is) {
  u32 v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline u64 read_u64(std::istream& is) {
  u64 v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

inline void write_entry(std::ostream& os, const std::string& name, const Tensor& t) {
  write_u32(os, static_cast<u32>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(os, static_cast<u32>(t.rank()));
  for (auto d : t.shape) write_u64(os, d);
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

}  // namespace detail

// Auxiliary scalars a training loop wants persisted alongside the parameters
// (epoch counters and the like) travel under the reserved "meta/" prefix.
struct Checkpoint {
  ParamStore store;
  std::map<std::string, Tensor> meta;
};

inline void save_checkpoint(const ParamStore& store, const std::string& path,
                            const std::map<std::string, Tensor>& meta = {}) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write("KGF1", 4);
  u64 count = store.params.size() + store.opt_m.size() + store.opt_v.size() + 1 + meta.size();
  detail::write_u64(os, count);
  for (const auto& [name, t] : store.params) detail::write_entry(os, name, t);
  for (const auto& [name, t] : store.opt_m) detail::write_entry(os, "opt/m/" + name, t);
  for (const auto& [name, t] : store.opt_v) detail::write_entry(os, "opt/v/" + name, t);
  detail::write_entry(os, "opt/step", Tensor::scalar(static_cast<double>(store.step)));
  for (const auto& [name, t] : meta) detail::write_entry(os, "meta/" + name, t);
  if (!os) throw DataError("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint_full(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "KGF1")
    throw DataError("bad checkpoint magic in " + path);
  const u64 count = detail::read_u64(is);
  Checkpoint ckpt;
  for (u64 e = 0; e < count; ++e) {
    const u32 name_len = detail::read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const u32 rank = detail::read_u32(is);
    std::vector<std::size_t> shape(rank);
    for (u32 i = 0; i < rank; ++i) shape[i] = detail::read_u64(is);
    Tensor t = Tensor::zeros(shape);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!is) throw DataError("truncated checkpoint: " + path);
    if (name == "opt/step") {
      ckpt.store.step = static_cast<i64>(t.item());
    } else if (name.rfind("opt/m/", 0) == 0) {
      ckpt.store.opt_m.emplace(name.substr(6), std::move(t));
    } else if (name.rfind("opt/v/", 0) == 0) {
      ckpt.store.opt_v.emplace(name.substr(6), std::move(t));
    } else if (name.rfind("meta/", 0) == 0) {
      ckpt.meta.emplace(name.substr(5), std::move(t));
    } else {
      ckpt.store.params.emplace(name, std::move(t));
    }
  }
  return ckpt;
}

inline ParamStore load_checkpoint(const std::string& path) {
  return load_checkpoint_full(path).store;
}

}  // namespace kgforge
