#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "cste/design.hpp"
#include "cste/error.hpp"
#include "doctest.h"

using namespace cste::design;
using Eigen::MatrixXd;

namespace {

// Sort-and-index sample quantile: h = (n+1)p between order statistics.
double sorted_quantile(std::vector<double> z, double p) {
    std::sort(z.begin(), z.end());
    const double h = (static_cast<double>(z.size()) + 1.0) * p;
    const auto lo = static_cast<std::size_t>(h);
    if (lo < 1) return z.front();
    if (lo >= z.size()) return z.back();
    return z[lo - 1] + (h - static_cast<double>(lo)) * (z[lo] - z[lo - 1]);
}

// Cox-de Boor recursion on the clamped knot vector.
double cox_de_boor(const std::vector<double>& t, int i, int k, double x) {
    if (k == 0) {
        const bool last = t[i + 1] == t.back() && t[i] < t[i + 1] && x == t.back();
        return (t[i] <= x && x < t[i + 1]) || last ? 1.0 : 0.0;
    }
    double a = 0.0, b = 0.0;
    if (t[i + k] > t[i]) a = (x - t[i]) / (t[i + k] - t[i]) * cox_de_boor(t, i, k - 1, x);
    if (t[i + k + 1] > t[i + 1]) b = (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * cox_de_boor(t, i + 1, k - 1, x);
    return a + b;
}

std::vector<double> reference_bspline(double x, const std::vector<double>& knots, double lo, double hi) {
    std::vector<double> t(4, lo);
    t.insert(t.end(), knots.begin(), knots.end());
    t.insert(t.end(), 4, hi);
    std::vector<double> out;
    for (int i = 0; i + 4 < static_cast<int>(t.size()); ++i) out.push_back(cox_de_boor(t, i, 3, x));
    return out;
}

BasisSpec spline_spec(std::vector<double> knots, double lo, double hi) {
    BasisSpec b;
    b.kind = BasisKind::cubic_spline;
    b.knots = std::move(knots);
    b.lower = lo;
    b.upper = hi;
    return b;
}

std::vector<std::string> names(const std::vector<ColumnExpr>& cols) {
    std::vector<std::string> out;
    for (const auto& c : cols) out.push_back(c.to_string());
    return out;
}

using S = std::vector<std::string>;

}  // namespace

TEST_CASE("quantile_knots examples") {
    std::vector<double> z;
    for (int i = 1; i <= 99; ++i) z.push_back(i / 100.0);
    const auto k = quantile_knots(z, 3);
    REQUIRE(k.size() == 3);
    CHECK(k[0] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(k[1] == doctest::Approx(0.50).epsilon(1e-14));
    CHECK(k[2] == doctest::Approx(0.75).epsilon(1e-14));

    const std::vector<double> sym{-3, -2, -1, 0, 1, 2, 3};
    const auto m = quantile_knots(sym, 1);
    REQUIRE(m.size() == 1);
    CHECK(m[0] == doctest::Approx(0.0));
}

TEST_CASE("quantile_knots matches a sort-and-index oracle") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> z(200);
        for (auto& x : z) x = u(rng);
        const auto k = quantile_knots(z, 3);
        for (int j = 0; j < 3; ++j) CHECK(k[static_cast<std::size_t>(j)] == sorted_quantile(z, (j + 1) / 4.0));
    }
}

TEST_CASE("quantile_knots needs enough distinct values") {
    const std::vector<double> z{0, 0, 1, 1, 2, 2};
    CHECK_THROWS_AS(quantile_knots(z, 2), cste::DegenerateData);
    CHECK_THROWS_AS(quantile_knots(z, 0), cste::ArgumentError);
}

TEST_CASE("spline basis: partition of unity, length and de Boor agreement") {
    const std::vector<double> knots{-0.25, 0.0, 0.25};
    const double lo = -0.5, hi = 0.5;
    CHECK(spline_basis(0.1, knots, lo, hi).size() == 6);
    for (int i = 0; i <= 1000; ++i) {
        const double z = lo + (hi - lo) * i / 1000.0;
        const auto full = bspline_full(z, knots, lo, hi);
        REQUIRE(full.size() == 7);
        double s = 0.0;
        for (double b : full) {
            CHECK(b >= -1e-15);
            s += b;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-13));
        const auto ref = reference_bspline(z, knots, lo, hi);
        for (std::size_t j = 0; j < full.size(); ++j) CHECK(std::fabs(full[j] - ref[j]) < 1e-12);
        const auto dropped = spline_basis(z, knots, lo, hi);
        for (std::size_t j = 0; j < dropped.size(); ++j) CHECK(dropped[j] == full[j + 1]);
    }
}

TEST_CASE("spline basis is continuous away from the knots") {
    const std::vector<double> knots{0.2, 0.45, 0.7};
    const double step = 1e-9;
    double max_jump = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double z = i / 20000.0;
        const auto a = spline_basis(z, knots, 0.0, 1.0);
        const auto b = spline_basis(std::min(1.0, z + step), knots, 0.0, 1.0);
        for (std::size_t j = 0; j < a.size(); ++j) max_jump = std::max(max_jump, std::fabs(a[j] - b[j]));
    }
    CHECK(max_jump < 1e-6);
    // and across each knot
    for (double k : knots) {
        const auto a = spline_basis(k - 1e-10, knots, 0.0, 1.0);
        const auto b = spline_basis(k + 1e-10, knots, 0.0, 1.0);
        for (std::size_t j = 0; j < a.size(); ++j) CHECK(std::fabs(a[j] - b[j]) < 1e-6);
    }
}

TEST_CASE("spline basis clamps outside the boundary") {
    const std::vector<double> knots{0.0};
    bool clamped = false;
    const auto out = spline_basis(2.0, knots, -1.0, 1.0, 3, &clamped);
    CHECK(clamped);
    CHECK(out == spline_basis(1.0, knots, -1.0, 1.0));
    clamped = false;
    spline_basis(0.3, knots, -1.0, 1.0, 3, &clamped);
    CHECK_FALSE(clamped);
    CHECK_THROWS_AS(spline_basis(0.0, knots, -1.0, 1.0, 2), cste::ArgumentError);
}

TEST_CASE("phi_dag examples") {
    BasisSpec bin;
    bin.kind = BasisKind::binary_saturated;
    const double z0[] = {0.0};
    CHECK(phi_dag(z0, bin) == std::vector<double>{1, 0});

    BasisSpec multi;
    multi.kind = BasisKind::multi_binary_saturated;
    multi.num_binary = 2;
    const double z11[] = {1.0, 1.0};
    CHECK(phi_dag(z11, multi) == std::vector<double>{1, 1, 1, 1});
    const double z10[] = {1.0, 0.0};
    CHECK(phi_dag(z10, multi) == std::vector<double>{1, 1, 0, 0});

    BasisSpec tri;
    tri.kind = BasisKind::categorical_dummies;
    tri.levels = {0, 1, 2};
    tri.reference = 0;
    const double z2[] = {2.0};
    CHECK(phi_dag(z2, tri) == std::vector<double>{1, 0, 1});
    const double z9[] = {9.0};
    CHECK_THROWS_AS(phi_dag(z9, tri), cste::DataError);

    CHECK_THROWS_AS(phi_dag(z11, bin), cste::ArgumentError);
}

TEST_CASE("categorical reference is the most frequent level") {
    MatrixXd z(6, 1);
    z << 0, 1, 1, 1, 2, 2;
    const BasisSpec b = make_basis(BasisKind::categorical_dummies, z);
    CHECK(b.reference == 1.0);
    CHECK(b.dimension() == 2);
    CHECK(b.dummy_levels() == std::vector<double>{0, 2});
}

TEST_CASE("build_plan examples") {
    BasisSpec bin;
    bin.kind = BasisKind::binary_saturated;
    const RegressorPlan ma = build_plan(Mode::model_assisted, bin, 2);
    CHECK(names(ma.f_columns) == S{"1", "V1", "V2", "Z1"});
    CHECK(names(ma.g_columns) == S{"1", "V1", "V2", "Z1", "V1*Z1", "V2*Z1"});

    const RegressorPlan dr = build_plan(Mode::doubly_robust, bin, 2);
    CHECK(names(dr.f_columns) == S{"1", "V1", "V2", "Z1", "V1*Z1", "V2*Z1"});
    CHECK(dr.g_columns == dr.f_columns);
    CHECK_FALSE(dr.dr_guarantee_not_applicable);

    const BasisSpec spl = spline_spec({-0.25, 0.0, 0.25}, -0.5, 0.5);
    const RegressorPlan cs = build_plan(Mode::model_assisted, spl, 1);
    // g = (1, V, Phi, V x Phi, distinct products Phi x Phi)
    CHECK(cs.f_columns.size() == 1 + 1 + 6);
    CHECK(cs.g_columns.size() == 1 + 1 + 6 + 6 + 21);
    CHECK(cs.g_columns[8].to_string() == "V1*B1");
    CHECK(cs.g_columns.back().to_string() == "B6*B6");
    CHECK(build_plan(Mode::doubly_robust, spl, 1).dr_guarantee_not_applicable);

    BasisSpec tri;
    tri.kind = BasisKind::categorical_dummies;
    tri.levels = {0, 1, 2};
    tri.reference = 0;
    const RegressorPlan ct = build_plan(Mode::model_assisted, tri, 1);
    // distinct dummies multiply to zero and are omitted
    CHECK(names(ct.g_columns) == S{"1", "V1", "Z1", "Z2", "V1*Z1", "V1*Z2"});
    CHECK(build_plan(Mode::doubly_robust, tri, 1).g_columns == build_plan(Mode::doubly_robust, tri, 1).f_columns);

    BasisSpec multi;
    multi.kind = BasisKind::multi_binary_saturated;
    multi.num_binary = 2;
    const RegressorPlan md = build_plan(Mode::doubly_robust, multi, 1);
    CHECK(md.f_columns == md.g_columns);
    CHECK(names(md.f_columns) == S{"1", "V1", "Z1", "Z2", "Z1*Z2", "V1*Z1", "V1*Z2", "V1*Z1*Z2"});

    CHECK_THROWS_AS(build_plan(Mode::model_assisted, bin, -1), cste::ArgumentError);
}

TEST_CASE("raw Z term for continuous bases") {
    const BasisSpec spl = spline_spec({0.5}, 0.0, 1.0);
    const RegressorPlan p = build_plan(Mode::model_assisted, spl, 2, ZTerm::raw);
    CHECK(names(p.f_columns) == S{"1", "V1", "V2", "z1"});
    // binary bases ignore the raw request
    BasisSpec bin;
    bin.kind = BasisKind::binary_saturated;
    CHECK(build_plan(Mode::model_assisted, bin, 1, ZTerm::raw).z_term == ZTerm::basis);
}

TEST_CASE("dedup is idempotent and structural") {
    const BasisSpec spl = spline_spec({-0.2, 0.1}, -0.5, 0.5);
    for (Mode m : {Mode::model_assisted, Mode::doubly_robust}) {
        const RegressorPlan p = build_plan(m, spl, 3);
        CHECK(dedup(p.f_columns) == p.f_columns);
        CHECK(dedup(p.g_columns) == p.g_columns);
        const RegressorPlan q = build_plan(m, spl, 3);
        CHECK(q.f_columns == p.f_columns);
        CHECK(q.g_columns == p.g_columns);
    }
    const ColumnExpr a = ColumnExpr::parse("V2*B1");
    const ColumnExpr b = ColumnExpr::parse("B1*V2");
    CHECK(a == b);
    CHECK(dedup({a, b, ColumnExpr{}}).size() == 2);
    CHECK(ColumnExpr::parse(a.to_string()) == a);
    CHECK(ColumnExpr::parse("1").is_const());
    CHECK_THROWS_AS(ColumnExpr::parse("Q3"), cste::ArgumentError);
}

TEST_CASE("expand_row examples") {
    BasisSpec bin;
    bin.kind = BasisKind::binary_saturated;
    const RegressorPlan dr = build_plan(Mode::doubly_robust, bin, 1);
    const double z1[] = {1.0}, v2[] = {2.0};
    const auto [f, g] = expand_row(z1, v2, dr);
    CHECK(f == std::vector<double>{1, 2, 1, 2});
    CHECK(g == f);

    const double z0[] = {0.0};
    const auto [f0, g0] = expand_row(z0, v2, dr);
    CHECK(f0 == std::vector<double>{1, 2, 0, 0});

    const double bad[] = {NAN};
    CHECK_THROWS_AS(expand_row(z1, bad, dr), cste::DataError);
    const double v22[] = {1.0, 2.0};
    CHECK_THROWS_AS(expand_row(z1, v22, dr), cste::ArgumentError);
}

TEST_CASE("expand_row matches per-atom products") {
    std::mt19937_64 rng(32);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    std::normal_distribution<double> nd;
    const std::vector<double> knots{-0.2, 0.05, 0.3};
    BasisSpec mixed = spline_spec(knots, -0.5, 0.5);
    mixed.kind = BasisKind::mixed;
    const RegressorPlan p = build_plan(Mode::model_assisted, mixed, 3);
    for (int rep = 0; rep < 50; ++rep) {
        const double zb = rep % 2, zc = u(rng);
        const double z[] = {zb, zc};
        const double v[] = {nd(rng), nd(rng), nd(rng)};
        const auto spl = spline_basis(zc, knots, -0.5, 0.5);
        const auto [f, g] = expand_row(z, v, p);
        auto atom_value = [&](const Atom& a) {
            switch (a.source) {
                case AtomSource::v: return v[a.index];
                case AtomSource::zraw: return z[a.index];
                case AtomSource::zbin: return zb;
                case AtomSource::spline: return spl[static_cast<std::size_t>(a.index)];
            }
            return 0.0;
        };
        for (std::size_t c = 0; c < p.g_columns.size(); ++c) {
            double x = 1.0;
            for (const Atom& a : p.g_columns[c].atoms) x *= atom_value(a);
            CHECK(g[c] == doctest::Approx(x).epsilon(1e-14));
        }
        CHECK(f.size() == p.f_columns.size());
    }
}

TEST_CASE("materialize agrees with expand_row") {
    std::mt19937_64 rng(33);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    std::normal_distribution<double> nd;
    MatrixXd z(40, 1), v(40, 2);
    for (int i = 0; i < 40; ++i) {
        z(i, 0) = u(rng);
        v(i, 0) = nd(rng);
        v(i, 1) = nd(rng);
    }
    const BasisSpec b = make_basis(BasisKind::cubic_spline, z, 2);
    const RegressorPlan p = build_plan(Mode::doubly_robust, b, 2);
    const MatrixXd g = materialize(p.g_columns, z, v, b);
    for (int i = 0; i < 40; ++i) {
        const double zi[] = {z(i, 0)}, vi[] = {v(i, 0), v(i, 1)};
        const auto row = expand_row(zi, vi, p).second;
        for (std::size_t c = 0; c < row.size(); ++c) CHECK(g(i, static_cast<Eigen::Index>(c)) == row[c]);
    }
}

TEST_CASE("discrete bases are saturated") {
    BasisSpec bin;
    bin.kind = BasisKind::binary_saturated;
    BasisSpec tri;
    tri.kind = BasisKind::categorical_dummies;
    tri.levels = {1, 4, 7, 9};
    tri.reference = 4;
    BasisSpec multi;
    multi.kind = BasisKind::multi_binary_saturated;
    multi.num_binary = 3;

    auto check_square_invertible = [](const std::vector<std::vector<double>>& support, const BasisSpec& b) {
        const auto k = static_cast<Eigen::Index>(b.dimension() + 1);
        REQUIRE(static_cast<Eigen::Index>(support.size()) == k);
        MatrixXd m(k, k);
        for (Eigen::Index r = 0; r < k; ++r) {
            const auto row = phi_dag(support[static_cast<std::size_t>(r)], b);
            for (Eigen::Index c = 0; c < k; ++c) m(r, c) = row[static_cast<std::size_t>(c)];
        }
        CHECK(std::fabs(m.determinant()) > 1e-8);
    };
    check_square_invertible({{0}, {1}}, bin);
    check_square_invertible({{1}, {4}, {7}, {9}}, tri);
    std::vector<std::vector<double>> cube;
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 2; ++c) cube.push_back({double(a), double(b), double(c)});
    check_square_invertible(cube, multi);
}

TEST_CASE("basis validation") {
    BasisSpec b = spline_spec({0.3, 0.2}, 0.0, 1.0);
    CHECK_THROWS_AS(b.validate(), cste::ArgumentError);
    b = spline_spec({1.5}, 0.0, 1.0);
    CHECK_THROWS_AS(b.validate(), cste::ArgumentError);
    MatrixXd z(3, 1);
    z << 0, 1, 2;
    CHECK_THROWS_AS(make_basis(BasisKind::binary_saturated, z), cste::DataError);
    CHECK(basis_kind_from_string("cubic_spline") == BasisKind::cubic_spline);
    CHECK_THROWS_AS(basis_kind_from_string("fourier"), cste::ArgumentError);
}
