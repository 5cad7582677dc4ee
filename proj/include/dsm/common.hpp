#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace dsm {

// Input data violates a documented value precondition (non-finite entries,
// unnormalized probabilities, bad kernel sums, ...).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Structurally invalid call: bad shapes, out-of-domain settings.
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Operation has no meaningful result, e.g. a mask with zero valid pixels.
struct DegenerateInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File parsing failure; carries the byte offset where parsing stopped.
struct FormatError : std::runtime_error {
  FormatError(const std::string& msg, std::size_t offset)
      : std::runtime_error(msg + " (byte " + std::to_string(offset) + ")"),
        byte_offset(offset) {}
  std::size_t byte_offset;
};

// mt19937_64-backed generator. Conversions are hand-rolled instead of using
// std::*_distribution so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t bits() { return eng_(); }

  // uniform in [0, 1)
  double uniform() { return double(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [lo, hi], inclusive
  int uniform_int(int lo, int hi) {
    const std::uint64_t span = std::uint64_t(hi - lo) + 1;
    return lo + int(eng_() % span);
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace dsm
