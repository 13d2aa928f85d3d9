#include "vmbh/flops.hpp"

namespace vmbh::flops {

namespace {
thread_local std::uint64_t g_count = 0;
}

void add(std::uint64_t n) { g_count += n; }
std::uint64_t count() { return g_count; }
void reset() { g_count = 0; }

Scope::Scope() : saved_(g_count) { g_count = 0; }
Scope::~Scope() { g_count += saved_; }
std::uint64_t Scope::elapsed() const { return g_count; }

}  // namespace vmbh::flops
