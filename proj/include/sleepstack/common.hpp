#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sleepstack {

// Base error with a process exit-code category: 1 internal/numeric,
// 2 usage/config, 3 data format.
class Error : public std::runtime_error {
public:
  enum class Kind { internal = 1, usage = 2, data = 3 };

  Error(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

private:
  Kind kind_;
};

struct InternalError : Error {
  explicit InternalError(const std::string& m) : Error(Kind::internal, m) {}
};
struct UsageError : Error {
  explicit UsageError(const std::string& m) : Error(Kind::usage, m) {}
};
struct DataError : Error {
  explicit DataError(const std::string& m) : Error(Kind::data, m) {}
};

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

}  // namespace sleepstack
