#pragma once

#include <cstdint>
#include <string_view>

namespace clipforge {

// Deterministic splitmix64 generator. Outputs are identical across platforms,
// so values derived from it (toy encoder weights, noise inits, jitter) can be
// frozen into tests and golden files.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // Uniform double in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);

  // Box-Muller; pairs are cached so consecutive calls consume one uniform pair
  // per two values.
  double normal(double mean, double sigma);

 private:
  std::uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

// Derives the seed of a named stream from a root seed. All randomness in the
// library flows from a single seed through such streams; there is no global
// RNG. Stream names in use:
//   backend seed: "toy-conv-w", "toy-conv-b", "toy-img-proj", "toy-text-proj"
//   config seed:  "init-noise", "calibration-jitter", "gradcheck", "standins"
std::uint64_t stream_seed(std::uint64_t root, std::string_view name);

inline Rng make_stream(std::uint64_t root, std::string_view name) {
  return Rng(stream_seed(root, name));
}

}  // namespace clipforge
