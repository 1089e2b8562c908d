#include "safemon/alloc_stats.hpp"

#include <atomic>

namespace safemon::alloc {

namespace {
std::atomic<bool> g_hooked{false};
std::atomic<std::size_t> g_current{0};
std::atomic<std::size_t> g_peak{0};
std::atomic<std::uint64_t> g_count{0};
} // namespace

bool hooked() { return g_hooked.load(std::memory_order_relaxed); }
std::size_t current_bytes() { return g_current.load(std::memory_order_relaxed); }
std::size_t peak_bytes() { return g_peak.load(std::memory_order_relaxed); }
std::uint64_t allocation_count() { return g_count.load(std::memory_order_relaxed); }
void reset_peak() { g_peak.store(g_current.load(std::memory_order_relaxed), std::memory_order_relaxed); }

namespace detail {

void set_hooked() { g_hooked.store(true); }

void on_alloc(std::size_t bytes) {
    g_count.fetch_add(1, std::memory_order_relaxed);
    const std::size_t now = g_current.fetch_add(bytes, std::memory_order_relaxed) + bytes;
    std::size_t peak = g_peak.load(std::memory_order_relaxed);
    while (now > peak && !g_peak.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
    }
}

void on_free(std::size_t bytes) { g_current.fetch_sub(bytes, std::memory_order_relaxed); }

} // namespace detail

} // namespace safemon::alloc
