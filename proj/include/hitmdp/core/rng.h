#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace hitmdp {

// Seeded generator with a fixed bit-to-double mapping, so streams are
// reproducible across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  int uniform_int(int n);
  // Standard normal via Box-Muller; one draw consumes two uniforms.
  double normal();
  int categorical(std::span<const double> probs);

  // Independent stream derived from a root seed and a name.
  static std::uint64_t derive(std::uint64_t root, std::string_view name);
  static Rng substream(std::uint64_t root, std::string_view name) {
    return Rng(derive(root, name));
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace hitmdp
