#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "vmbh/tensor.hpp"

namespace vmbh {

// Seeded generator. Uniform and normal variates are derived directly from
// the 64-bit engine output so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  std::uint64_t next() { return engine_(); }
  std::size_t index(std::size_t n);

  Tensor uniform_tensor(Shape shape, double lo, double hi, bool requires_grad = false);
  Tensor normal_tensor(Shape shape, double stddev, bool requires_grad = false);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace vmbh
