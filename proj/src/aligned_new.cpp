// Global allocation with 64-byte alignment. Eigen peels vectorized loops
// according to the address of each buffer, so with AVX the rounding of a
// reduction depended on where malloc happened to place a std::vector. Fixing
// the alignment makes training bit-reproducible for a given seed.
#include <cstdlib>
#include <new>

namespace {

constexpr std::size_t kAlign = 64;

void* allocate(std::size_t n) {
    const std::size_t rounded = (n + kAlign - 1) / kAlign * kAlign;
    if (void* p = std::aligned_alloc(kAlign, rounded == 0 ? kAlign : rounded)) return p;
    throw std::bad_alloc();
}

}  // namespace

void* operator new(std::size_t n) { return allocate(n); }
void* operator new[](std::size_t n) { return allocate(n); }
void* operator new(std::size_t n, const std::nothrow_t&) noexcept {
    try {
        return allocate(n);
    } catch (...) {
        return nullptr;
    }
}
void* operator new[](std::size_t n, const std::nothrow_t& t) noexcept { return operator new(n, t); }
void operator delete(void* p) noexcept { std::free(p); }
void operator delete[](void* p) noexcept { std::free(p); }
void operator delete(void* p, std::size_t) noexcept { std::free(p); }
void operator delete[](void* p, std::size_t) noexcept { std::free(p); }
