// Runtime selection of the kernel table. No intrinsics in this file.
#include <atomic>
#include <cstdlib>
#include <string_view>

#include "cste/simd.hpp"

namespace cste::simd {

#ifdef CSTE_HAVE_AVX2
const KernelTable* avx2_kernels_unchecked() noexcept;
#endif

const KernelTable* avx2_kernels() noexcept {
#if defined(CSTE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    return supported ? avx2_kernels_unchecked() : nullptr;
#else
    return nullptr;
#endif
}

namespace {

const KernelTable* initial_table() noexcept {
    const char* env = std::getenv("CSTE_SIMD");
    if (env != nullptr && std::string_view(env) == "scalar") return &scalar_kernels();
    if (const KernelTable* t = avx2_kernels()) return t;
    return &scalar_kernels();
}

std::atomic<const KernelTable*>& current() noexcept {
    static std::atomic<const KernelTable*> table{initial_table()};
    return table;
}

}  // namespace

const KernelTable& active() noexcept { return *current().load(std::memory_order_relaxed); }

bool select(std::string_view name) noexcept {
    if (name == "scalar") {
        current().store(&scalar_kernels());
        return true;
    }
    if (name == "avx2") {
        if (const KernelTable* t = avx2_kernels()) {
            current().store(t);
            return true;
        }
    }
    return false;
}

}  // namespace cste::simd
