#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace factprobe {

/// Bad input or configuration supplied by the user (CLI exit code 2).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure talking to or inside a model backend (CLI exit code 3).
class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An internal invariant was violated (CLI exit code 4).
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// 64-bit FNV-1a. Stable across platforms and process restarts; used for
/// content hashes and cache keys.
constexpr std::uint64_t fnv1a64(std::string_view data,
                                std::uint64_t seed = 0xcbf29ce484222325ULL) {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// splitmix64 finalizer; mixes a 64-bit value into a well-distributed one.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string trim(std::string_view s);

/// Non-fatal diagnostics (cache corruption, recovered files). Defaults to
/// stderr; tests install their own sink.
void warn(std::string_view message);
void set_warning_sink(std::function<void(std::string_view)> sink);

}  // namespace factprobe
