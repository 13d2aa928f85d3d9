#include "vmbh/rng.hpp"

#include <cmath>
#include <numbers>

namespace vmbh {

double Rng::uniform() {
  // 53 high bits -> [0, 1)
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

std::size_t Rng::index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

Tensor Rng::uniform_tensor(Shape shape, double lo, double hi, bool requires_grad) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

Tensor Rng::normal_tensor(Shape shape, double stddev, bool requires_grad) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = normal(0.0, stddev);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace vmbh
