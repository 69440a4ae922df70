#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <new>

namespace fna {

// Process-wide byte accountant for dense buffers. Every Matrix storage
// allocation goes through AccountedAllocator, so a ScratchScope sees all
// transient matrices created by a kernel without explicit registration.
class AllocationAccountant {
 public:
  static AllocationAccountant& instance();

  void on_allocate(std::size_t bytes) noexcept;
  void on_deallocate(std::size_t bytes) noexcept;

  std::size_t current_bytes() const noexcept { return current_.load(std::memory_order_relaxed); }
  std::size_t peak_bytes() const noexcept { return peak_.load(std::memory_order_relaxed); }

  // Resets the peak to the current live byte count.
  void reset_peak() noexcept;

 private:
  std::atomic<std::size_t> current_{0};
  std::atomic<std::size_t> peak_{0};
};

// Measures the peak number of bytes allocated above the level live at
// construction time.
class ScratchScope {
 public:
  ScratchScope() noexcept;
  std::size_t peak_scratch_bytes() const noexcept;

 private:
  std::size_t baseline_;
};

template <typename T>
struct AccountedAllocator {
  using value_type = T;

  AccountedAllocator() noexcept = default;
  template <typename U>
  AccountedAllocator(const AccountedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    auto* p = static_cast<T*>(::operator new(n * sizeof(T)));
    AllocationAccountant::instance().on_allocate(n * sizeof(T));
    return p;
  }

  void deallocate(T* p, std::size_t n) noexcept {
    AllocationAccountant::instance().on_deallocate(n * sizeof(T));
    ::operator delete(p);
  }

  template <typename U>
  bool operator==(const AccountedAllocator<U>&) const noexcept { return true; }
};

}  // namespace fna
