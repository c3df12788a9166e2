#include "cste/simd.hpp"

namespace cste::simd {

namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double wdot_scalar(const double* w, const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += w[i] * a[i] * b[i];
    return s;
}

double sum_scalar(const double* a, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i];
    return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void waxpy_scalar(double alpha, const double* w, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * w[i] * x[i];
}

void dual_axpy_scalar(double alpha, const double* w, const double* x, double* y1, double* y2,
                      std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double ax = alpha * x[i];
        y1[i] += w[i] * ax;
        y2[i] += ax;
    }
}

constexpr KernelTable kScalar{
    "scalar", dot_scalar, wdot_scalar, sum_scalar, axpy_scalar, waxpy_scalar, dual_axpy_scalar,
};

}  // namespace

const KernelTable& scalar_kernels() noexcept { return kScalar; }

}  // namespace cste::simd
