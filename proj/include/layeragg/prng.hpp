#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "layeragg/tensor.hpp"

namespace layeragg {

// Seeded generator with a portable draw sequence. std::mt19937_64 is fully
// specified by the standard; the standard distributions are not, so uniform
// and normal draws are derived from raw 64-bit outputs here.
class Prng {
 public:
  explicit Prng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; the second variate of each pair is kept.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Uniform integer in [0, n) by rejection, no modulo bias.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n + 1) % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x > limit);
    return x % n;
  }

  template <typename Scalar = double>
  Tensor<Scalar> normal_tensor(Shape shape, Scalar stddev = Scalar(1)) {
    Tensor<Scalar> t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(stddev * normal());
    return t;
  }

  /// In-place Fisher-Yates shuffle.
  template <typename Container>
  void shuffle(Container& c) {
    for (std::size_t i = c.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(c[i - 1], c[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace layeragg
