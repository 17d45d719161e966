#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace kgforge {

using u32 = std::uint32_t;
using u64 = std::uint64_t;
using i64 = std::int64_t;

// Error categories map onto CLI exit codes: config -> 2, data -> 3, numeric -> 4.
// ContractViolation means a caller broke an API precondition (a bug, not bad input).

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// FNV-1a, used for artifact hashes and for keying seeded generators off strings.
inline u64 fnv1a64(const void* data, std::size_t n, u64 h = 14695981039346656037ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline u64 fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

}  // namespace kgforge
