#pragma once

// Data-parallel inner loops shared by the solvers and estimators.
//
// Every kernel has a portable scalar reference implementation and, on x86-64
// builds, an AVX2/FMA variant. The variant is chosen once at first use from
// the CPU feature bits; CSTE_SIMD=scalar in the environment forces the
// reference path. Variants agree to rounding (summation order differs), and a
// given process always uses one table, so results are reproducible per host.

#include <cstddef>
#include <span>
#include <string_view>

namespace cste::simd {

struct KernelTable {
    const char* name;
    // sum_i a[i] * b[i]
    double (*dot)(const double* a, const double* b, std::size_t n);
    // sum_i w[i] * a[i] * b[i]
    double (*wdot)(const double* w, const double* a, const double* b, std::size_t n);
    // sum_i a[i]
    double (*sum)(const double* a, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // y += alpha * w .* x
    void (*waxpy)(double alpha, const double* w, const double* x, double* y, std::size_t n);
    // y1 += alpha * w .* x;  y2 += alpha * x   (coordinate-descent update)
    void (*dual_axpy)(double alpha, const double* w, const double* x, double* y1, double* y2,
                      std::size_t n);
};

const KernelTable& scalar_kernels() noexcept;
// nullptr when the build or the CPU lacks AVX2+FMA.
const KernelTable* avx2_kernels() noexcept;

// The table used by the wrappers below.
const KernelTable& active() noexcept;
// Select a table by name ("scalar", "avx2"); returns false if unavailable.
bool select(std::string_view name) noexcept;

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
    return active().dot(a.data(), b.data(), a.size());
}
inline double wdot(std::span<const double> w, std::span<const double> a,
                   std::span<const double> b) noexcept {
    return active().wdot(w.data(), a.data(), b.data(), a.size());
}
inline double sum(std::span<const double> a) noexcept { return active().sum(a.data(), a.size()); }
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) noexcept {
    active().axpy(alpha, x.data(), y.data(), x.size());
}
inline void waxpy(double alpha, std::span<const double> w, std::span<const double> x,
                  std::span<double> y) noexcept {
    active().waxpy(alpha, w.data(), x.data(), y.data(), x.size());
}
inline void dual_axpy(double alpha, std::span<const double> w, std::span<const double> x,
                      std::span<double> y1, std::span<double> y2) noexcept {
    active().dual_axpy(alpha, w.data(), x.data(), y1.data(), y2.data(), x.size());
}

}  // namespace cste::simd
