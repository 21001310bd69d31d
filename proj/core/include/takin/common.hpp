#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace takin {

inline constexpr const char* kVersion = "0.1.0";

// 25 Hz video frame clock used throughout the motion pipeline.
inline constexpr double kFrameRate = 25.0;

enum class ErrorKind {
  dimension_mismatch,
  invalid_argument,
  numeric,
  io,
  usage,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

// FNV-1a, used for config hashes embedded in output artifacts.
inline std::uint64_t fnv1a(const std::string& data, std::uint64_t seed = 1469598103934665603ULL) {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string to_hex(std::uint64_t value);

}  // namespace takin
