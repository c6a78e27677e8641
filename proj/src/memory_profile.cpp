#include "blendgan/memory_profile.hpp"

#include "blendgan/errors.hpp"

#include <c10/core/Allocator.h>
#include <c10/core/CPUAllocator.h>

#include <algorithm>
#include <atomic>
#include <limits>
#include <mutex>
#include <unordered_map>

namespace blendgan {
namespace {

/// Wraps the CPU allocator and counts live bytes. Data pointer and context
/// stay identical so the raw allocate/deallocate API keeps working.
class CountingAllocator final : public c10::Allocator {
 public:
  explicit CountingAllocator(c10::Allocator* base)
      : base_(base), base_delete_(base->raw_deleter()) {}

  bool usable() const { return base_delete_ != nullptr; }

  c10::DataPtr allocate(std::size_t n) override {
    c10::DataPtr inner = base_->allocate(n);
    const auto device = inner.device();
    void* p = inner.release_context();
    {
      std::lock_guard<std::mutex> lock(mu_);
      sizes_[p] = static_cast<std::int64_t>(n);
    }
    add(static_cast<std::int64_t>(n));
    return {p, p, &release, device};
  }

  c10::DeleterFnPtr raw_deleter() const override { return &release; }

  void copy_data(void* dest, const void* src, std::size_t count) const override {
    default_copy_data(dest, src, count);
  }

  void reset_peak() { peak_.store(current_.load()); }
  std::int64_t current() const { return current_.load(); }
  std::int64_t peak() const { return peak_.load(); }

  static CountingAllocator* instance;

 private:
  static void release(void* p) {
    auto* self = instance;
    std::int64_t bytes = 0;
    {
      std::lock_guard<std::mutex> lock(self->mu_);
      auto it = self->sizes_.find(p);
      if (it != self->sizes_.end()) {
        bytes = it->second;
        self->sizes_.erase(it);
      }
    }
    self->current_.fetch_sub(bytes);
    self->base_delete_(p);
  }

  void add(std::int64_t n) {
    const auto now = current_.fetch_add(n) + n;
    auto prev = peak_.load();
    while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
    }
  }

  c10::Allocator* base_;
  c10::DeleterFnPtr base_delete_;
  std::mutex mu_;
  std::unordered_map<void*, std::int64_t> sizes_;
  std::atomic<std::int64_t> current_{0};
  std::atomic<std::int64_t> peak_{0};
};

CountingAllocator* CountingAllocator::instance = nullptr;

CountingAllocator& counting_allocator() {
  // leaked on purpose: tensors may be freed during static destruction
  static CountingAllocator* a = [] {
    auto* c = new CountingAllocator(c10::GetCPUAllocator());
    if (!c->usable()) throw Error("CPU allocator cannot be instrumented");
    CountingAllocator::instance = c;
    c10::SetCPUAllocator(c, std::numeric_limits<std::uint8_t>::max());
    return c;
  }();
  return *a;
}

std::mutex& profile_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

MemoryCounters memory_counters() {
  auto& a = counting_allocator();
  return {a.current(), a.peak()};
}

std::int64_t memory_profile(const std::function<void()>& step) {
  std::lock_guard<std::mutex> lock(profile_mutex());
  auto& a = counting_allocator();
  const auto base = a.current();
  a.reset_peak();
  step();
  return std::max<std::int64_t>(0, a.peak() - base);
}

}  // namespace blendgan
