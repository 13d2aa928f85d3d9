#pragma once

#include <cstdint>

namespace vmbh::flops {

// Per-thread counter of floating-point operations issued by the heavy ops
// (matmul, conv2d, scans, grid sampling). Elementwise glue is not counted.
void add(std::uint64_t n);
std::uint64_t count();
void reset();

// Restores the counter on scope exit so nested measurements compose.
class Scope {
 public:
  Scope();
  ~Scope();
  std::uint64_t elapsed() const;

 private:
  std::uint64_t saved_;
};

}  // namespace vmbh::flops
