#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace macu {

// Error taxonomy. Every rejection path in the library throws one of these so
// callers (and the C API) can map failures to stable codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct ChecksumError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct ValueError : Error {
  using Error::Error;
};

// All randomness in the library flows through Rng seeded explicitly by the
// caller. Raw engine outputs are mapped to ranges by hand so the produced
// streams depend only on the mt19937_64 sequence, not on library-specific
// distribution objects.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, n). Modulo bias is irrelevant at the n used here and the
  // mapping stays reproducible everywhere.
  uint64_t next_below(uint64_t n) { return engine_() % n; }

  // Uniform in [0, 1) with 53 random bits.
  double next_unit() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_unit();
  }

 private:
  std::mt19937_64 engine_;
};

inline std::string cat_shape4(int64_t n, int64_t c, int64_t h, int64_t w) {
  return "[" + std::to_string(n) + "," + std::to_string(c) + "," +
         std::to_string(h) + "," + std::to_string(w) + "]";
}

}  // namespace macu
