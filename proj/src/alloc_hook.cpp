// Counting wrappers around the glibc allocator. Eigen allocates through
// malloc directly, so operator new alone would miss most matrix storage.
#include <cerrno>
#include <cstddef>
#include <malloc.h>

#include "safemon/alloc_stats.hpp"

extern "C" {
void* __libc_malloc(std::size_t);
void* __libc_calloc(std::size_t, std::size_t);
void* __libc_realloc(void*, std::size_t);
void* __libc_memalign(std::size_t, std::size_t);
void __libc_free(void*);

namespace {
void* track(void* p) {
    if (p) safemon::alloc::detail::on_alloc(malloc_usable_size(p));
    return p;
}
} // namespace

void* malloc(std::size_t n) { return track(__libc_malloc(n)); }

void* calloc(std::size_t n, std::size_t size) { return track(__libc_calloc(n, size)); }

void* realloc(void* p, std::size_t n) {
    if (p) safemon::alloc::detail::on_free(malloc_usable_size(p));
    void* q = __libc_realloc(p, n);
    if (!q && p && n) {
        safemon::alloc::detail::on_alloc(malloc_usable_size(p));
        return nullptr;
    }
    return track(q);
}

void free(void* p) {
    if (!p) return;
    safemon::alloc::detail::on_free(malloc_usable_size(p));
    __libc_free(p);
}

void* memalign(std::size_t align, std::size_t n) { return track(__libc_memalign(align, n)); }

void* aligned_alloc(std::size_t align, std::size_t n) { return track(__libc_memalign(align, n)); }

int posix_memalign(void** out, std::size_t align, std::size_t n) {
    void* p = __libc_memalign(align, n);
    if (!p) return ENOMEM;
    *out = track(p);
    return 0;
}
}

namespace {
struct Install {
    Install() { safemon::alloc::detail::set_hooked(); }
} install;
} // namespace
