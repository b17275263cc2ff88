#include "clipforge/rng.hpp"

#include <cmath>

namespace clipforge {

std::uint64_t Rng::next_u64() {
  state_ += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal(double mean, double sigma) {
  if (has_cached_) {
    has_cached_ = false;
    return mean + sigma * cached_;
  }
  // Rejection-free polar form would be non-deterministic in call count; the
  // basic Box-Muller transform keeps one uniform pair per two outputs.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double two_pi = 6.283185307179586476925286766559;
  cached_ = r * std::sin(two_pi * u2);
  has_cached_ = true;
  return mean + sigma * r * std::cos(two_pi * u2);
}

namespace {
std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}
}  // namespace

std::uint64_t stream_seed(std::uint64_t root, std::string_view name) {
  Rng mixer(root ^ fnv1a64(name));
  mixer.next_u64();
  return mixer.next_u64();
}

}  // namespace clipforge
