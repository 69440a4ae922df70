#include "fna/accounting.hpp"

namespace fna {

AllocationAccountant& AllocationAccountant::instance() {
  static AllocationAccountant accountant;
  return accountant;
}

void AllocationAccountant::on_allocate(std::size_t bytes) noexcept {
  const std::size_t now = current_.fetch_add(bytes, std::memory_order_relaxed) + bytes;
  std::size_t peak = peak_.load(std::memory_order_relaxed);
  while (now > peak && !peak_.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
}

void AllocationAccountant::on_deallocate(std::size_t bytes) noexcept {
  current_.fetch_sub(bytes, std::memory_order_relaxed);
}

void AllocationAccountant::reset_peak() noexcept {
  peak_.store(current_.load(std::memory_order_relaxed), std::memory_order_relaxed);
}

ScratchScope::ScratchScope() noexcept {
  auto& acc = AllocationAccountant::instance();
  acc.reset_peak();
  baseline_ = acc.current_bytes();
}

std::size_t ScratchScope::peak_scratch_bytes() const noexcept {
  const std::size_t peak = AllocationAccountant::instance().peak_bytes();
  return peak > baseline_ ? peak - baseline_ : 0;
}

}  // namespace fna
