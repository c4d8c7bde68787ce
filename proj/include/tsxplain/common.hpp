#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tsxplain {

// Malformed input, bad configuration, contract violations on arguments.
// The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failures while executing a well-formed request (IO, numerical breakdown).
// The CLI maps this to exit code 2.
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

// Uniform in [0, 1) from the top 53 bits. Written out instead of using
// std::uniform_real_distribution so streams are identical across standard
// library implementations.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller (one variate per call).
double standard_normal(Rng& rng);

// Uniform integer in [0, n).
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

// Stable per-task seed from a master seed and a string key (e.g. instance id).
std::uint64_t derive_seed(std::uint64_t master, std::string_view key);

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);
std::string sha256_hex(std::span<const double> data);

}  // namespace tsxplain
