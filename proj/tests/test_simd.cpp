#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "cste/simd.hpp"
#include "doctest.h"

using cste::simd::KernelTable;

namespace {

std::vector<double> randvec(std::mt19937_64& rng, std::size_t n) {
    std::normal_distribution<double> nd;
    std::vector<double> v(n);
    for (auto& x : v) x = nd(rng);
    return v;
}

void check_equivalent(const KernelTable& a, const KernelTable& b) {
    std::mt19937_64 rng(7);
    // odd sizes exercise the tails of the vector loops
    for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 7u, 8u, 15u, 16u, 17u, 31u, 100u, 1001u}) {
        const auto x = randvec(rng, n), y = randvec(rng, n), w = randvec(rng, n);
        const double scale = 1.0 + static_cast<double>(n);
        CHECK(std::fabs(a.dot(x.data(), y.data(), n) - b.dot(x.data(), y.data(), n)) <= 1e-12 * scale);
        CHECK(std::fabs(a.wdot(w.data(), x.data(), y.data(), n) - b.wdot(w.data(), x.data(), y.data(), n)) <=
              1e-12 * scale);
        CHECK(std::fabs(a.sum(x.data(), n) - b.sum(x.data(), n)) <= 1e-12 * scale);

        auto y1 = y, y2 = y;
        a.axpy(0.7, x.data(), y1.data(), n);
        b.axpy(0.7, x.data(), y2.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-14));

        y1 = y, y2 = y;
        a.waxpy(-1.3, w.data(), x.data(), y1.data(), n);
        b.waxpy(-1.3, w.data(), x.data(), y2.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-14));

        auto p1 = y, q1 = w, p2 = y, q2 = w;
        a.dual_axpy(0.4, w.data(), x.data(), p1.data(), q1.data(), n);
        b.dual_axpy(0.4, w.data(), x.data(), p2.data(), q2.data(), n);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(p1[i] == doctest::Approx(p2[i]).epsilon(1e-14));
            CHECK(q1[i] == doctest::Approx(q2[i]).epsilon(1e-14));
        }
    }
}

}  // namespace

TEST_CASE("scalar kernels compute the textbook sums") {
    const KernelTable& s = cste::simd::scalar_kernels();
    const double a[] = {1, 2, 3}, b[] = {4, 5, 6}, w[] = {1, 0, 2};
    CHECK(s.dot(a, b, 3) == 32.0);
    CHECK(s.wdot(w, a, b, 3) == 40.0);
    CHECK(s.sum(a, 3) == 6.0);
    double y[] = {1, 1, 1};
    s.axpy(2.0, a, y, 3);
    CHECK(y[2] == 7.0);
    double y1[] = {0, 0, 0}, y2[] = {0, 0, 0};
    s.dual_axpy(1.0, w, a, y1, y2, 3);
    CHECK(y1[2] == 6.0);
    CHECK(y2[1] == 2.0);
}

TEST_CASE("avx2 kernels agree with scalar kernels") {
    const KernelTable* v = cste::simd::avx2_kernels();
    if (v == nullptr) {
        MESSAGE("avx2 unavailable on this host; only the scalar path is exercised");
        return;
    }
    check_equivalent(cste::simd::scalar_kernels(), *v);
}

TEST_CASE("table selection") {
    const std::string before = cste::simd::active().name;
    CHECK(cste::simd::select("scalar"));
    CHECK(std::string(cste::simd::active().name) == "scalar");
    CHECK_FALSE(cste::simd::select("sse9"));
    CHECK(cste::simd::select(before));
    CHECK(std::string(cste::simd::active().name) == before);
}
