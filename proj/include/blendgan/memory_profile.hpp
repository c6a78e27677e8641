#pragma once

#include <cstdint>
#include <functional>

namespace blendgan {

/// Bytes held by tensors allocated through the CPU allocator. The first call
/// installs a counting wrapper around the active allocator.
struct MemoryCounters {
  std::int64_t current = 0;
  std::int64_t peak = 0;
};
MemoryCounters memory_counters();

/// Peak bytes allocated above the level held when `step` starts.
std::int64_t memory_profile(const std::function<void()>& step);

}  // namespace blendgan
