#pragma once

#include <cstddef>
#include <cstdint>

namespace safemon::alloc {

/// True when the process links the counting allocator (safemon_alloc_hook).
bool hooked();

std::size_t current_bytes();
std::size_t peak_bytes();
std::uint64_t allocation_count();
/// Sets the peak to the current live byte count.
void reset_peak();

namespace detail {
void set_hooked();
void on_alloc(std::size_t bytes);
void on_free(std::size_t bytes);
} // namespace detail

} // namespace safemon::alloc
