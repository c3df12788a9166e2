#include <cmath>
#include <random>
#include <vector>

#include "cste/error.hpp"
#include "cste/simlab.hpp"
#include "doctest.h"

using namespace cste;
using namespace cste::simlab;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("covariates follow the banded covariance") {
    const Index d = 6;
    const MatrixXd v = sample_covariates(200000, d, 77);
    const VectorXd mean = v.colwise().mean();
    const MatrixXd c = v.rowwise() - mean.transpose();
    const MatrixXd cov = c.transpose() * c / double(v.rows() - 1);
    CHECK(std::pow(2.0, -1.0) == 0.5);
    CHECK(std::pow(2.0, -2.0) == 0.25);
    for (Index j = 0; j < d; ++j)
        for (Index k = 0; k < d; ++k) CHECK(std::fabs(cov(j, k) - std::pow(2.0, -double(std::abs(j - k)))) <= 0.02);
    CHECK(std::fabs(cov(0, 1) - 0.5) <= 0.02);
    CHECK(std::fabs(cov(0, 2) - 0.25) <= 0.02);

    const MatrixXd a = sample_covariates(50, 10, 5), b = sample_covariates(50, 10, 5);
    CHECK((a.array() == b.array()).all());
    CHECK_FALSE((a.array() == sample_covariates(50, 10, 6).array()).all());
}

TEST_CASE("C1 recipes at a reference point") {
    const Scenario c1{ScenarioId::C1};
    const double v0[4] = {0, 0, 0, 0};
    CHECK(true_m1(c1, 1.0, v0) == 2.0);
    CHECK(expit(true_ps_eta(c1, 1.0, v0)) == doctest::Approx(1.0 / (1.0 + std::exp(-0.5))).epsilon(1e-15));
    CHECK(true_mu1(c1, 0.0) == 1.0);
    CHECK(true_mu1(c1, 1.0) == 2.0);

    const double v[4] = {0.3, -1.0, 0.5, 2.0};
    // m1 = 1 + z + sum V z + 2 V (1 - z)
    CHECK(true_m1(c1, 0.0, v) == doctest::Approx(1.0 + 2.0 * 1.8).epsilon(1e-15));
    CHECK(true_m1(c1, 1.0, v) == doctest::Approx(2.0 + 1.8).epsilon(1e-15));
    CHECK(true_ps_eta(Scenario{ScenarioId::C3}, 1.0, v) ==
          doctest::Approx(0.5 * (1.0 - 0.09 - 1.0 + 0.25 - 4.0)).epsilon(1e-15));
    CHECK(true_m1(Scenario{ScenarioId::C2}, 0.0, v) ==
          doctest::Approx(1.0 + 3.6 + 0.027 / 2 - 1.0 / 4 + 0.125 / 8 + 8.0 / 16).epsilon(1e-15));
}

TEST_CASE("C1 treated fraction matches its integral") {
    const Dataset d = generate(Scenario{ScenarioId::C1}, 100000, 4, 3);
    const double frac = d.t.mean();
    MatrixXd sigma(4, 4);
    for (int j = 0; j < 4; ++j)
        for (int k = 0; k < 4; ++k) sigma(j, k) = std::pow(2.0, -double(std::abs(j - k)));
    VectorXd a(4);
    a << -1, -1, 1, -1;
    const double sd = 0.5 * std::sqrt(a.dot(sigma * a));
    // E expit(0.5 Z + sd N), Z ~ Bernoulli(1/2): midpoint rule
    double integral = 0.0;
    const int steps = 20000;
    for (int s = 0; s < steps; ++s) {
        const double x = -10.0 + 20.0 * (s + 0.5) / steps;
        const double dens = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI) * 20.0 / steps;
        integral += dens * 0.5 * (expit(sd * x) + expit(0.5 + sd * x));
    }
    CHECK(std::fabs(frac - integral) <= 0.02);
}

TEST_CASE("C5 truth includes the mean of the V part") {
    const Scenario c5{ScenarioId::C5};
    CHECK(true_mu1(c5, 0.0) == doctest::Approx(0.46875).epsilon(1e-15));
    CHECK(true_mu1(c5, 1.0) == doctest::Approx(0.46875).epsilon(1e-15));
    // Monte Carlo over V at z = 0
    const MatrixXd v = sample_covariates(400000, 4, 8);
    double s = 0.0;
    for (Index i = 0; i < v.rows(); ++i) {
        const double row[4] = {v(i, 0), v(i, 1), v(i, 2), v(i, 3)};
        s += true_m1(c5, 0.0, row);
    }
    CHECK(std::fabs(s / double(v.rows()) - 0.46875) <= 0.01);

    // best linear approximation: close to the truth on a smooth polynomial
    for (double z : {-0.4, -0.2, 0.0, 0.2, 0.4}) CHECK(std::fabs(true_mu1_bla(c5, z) - true_mu1(c5, z)) <= 0.02);
    // exact for a linear truth
    CHECK(true_mu1_bla(Scenario{ScenarioId::C4}, 0.3) == doctest::Approx(0.3).epsilon(1e-10));
}

TEST_CASE("generated data obey the stated recipes") {
    const SimData sd = generate_full(Scenario{ScenarioId::C4}, 200, 8, 9);
    const Dataset& d = sd.data;
    d.validate();
    CHECK(d.v.cols() == 8);
    CHECK(d.z.minCoeff() >= -0.5);
    CHECK(d.z.maxCoeff() <= 0.5);
    for (Index i = 0; i < d.size(); ++i) {
        const double row[4] = {d.v(i, 0), d.v(i, 1), d.v(i, 2), d.v(i, 3)};
        CHECK(sd.true_m1[i] == true_m1(Scenario{ScenarioId::C4}, d.z(i, 0), row));
        CHECK(d.y[i] == (d.t[i] == 1.0 ? sd.y1[i] : sd.y0[i]));
    }
    const SimData c = generate_full(Scenario{ScenarioId::custom, 0.5, -1.0}, 100, 6, 10);
    for (Index i = 0; i < 100; ++i) CHECK(c.y1[i] - c.y0[i] == doctest::Approx(0.5 - c.data.z(i, 0)).epsilon(1e-12));
    CHECK_THROWS_AS(generate(Scenario{ScenarioId::C1}, 10, 3, 1), ArgumentError);
}

TEST_CASE("oracle influence values give unbiased estimates with nominal coverage") {
    for (ScenarioId id : {ScenarioId::C1, ScenarioId::C5}) {
        MCConfig cfg;
        cfg.scenario = Scenario{id};
        cfg.n = 500;
        cfg.p = 10;
        cfg.reps = 400;
        cfg.threads = 1;
        cfg.estimator = Estimator::oracle;
        if (id == ScenarioId::C5) cfg.z0 = {-0.4, 0.0, 0.4};
        const MCMetrics m = run_mc(cfg);
        CHECK(m.successes == 400);
        CHECK(m.failures == 0);
        for (const auto& pm : m.points) {
            const double mc_se = std::sqrt(pm.var / 400.0);
            CHECK(std::fabs(pm.bias) <= 4.0 * mc_se + 0.02);
            CHECK(std::fabs(pm.cov95 - 0.95) <= 0.035);
            CHECK(pm.cov95 >= pm.cov90);
            CHECK(pm.mean_ci_width > 0.0);
        }
    }
}

TEST_CASE("Monte Carlo runs are reproducible and order independent") {
    MCConfig cfg;
    cfg.scenario = Scenario{ScenarioId::C1};
    cfg.n = 200;
    cfg.p = 10;
    cfg.reps = 6;
    cfg.threads = 1;
    const MCMetrics a = run_mc(cfg);
    cfg.threads = 3;
    const MCMetrics b = run_mc(cfg);
    REQUIRE(a.points.size() == 2);
    for (std::size_t k = 0; k < 2; ++k) {
        CHECK(a.points[k].bias == b.points[k].bias);
        CHECK(a.points[k].var == b.points[k].var);
        CHECK(a.points[k].evar == b.points[k].evar);
        CHECK(a.points[k].cov95 == b.points[k].cov95);
    }
    for (std::size_t r = 0; r < a.replicates.size(); ++r) {
        CHECK(a.replicates[r].seed == splitmix64(cfg.seed ^ r));
        CHECK(a.replicates[r].point == b.replicates[r].point);
        CHECK(a.replicates[r].variance == b.replicates[r].variance);
    }
    // a replicate reruns identically on its own
    const ReplicateResult one = run_replicate(cfg, 2, a.replicates[2].seed);
    CHECK(one.point == a.replicates[2].point);
    // per-z0 entries are distinct estimates
    CHECK(a.replicates[0].point.size() == 2);
    CHECK(a.replicates[0].point[0] != a.replicates[0].point[1]);
}

TEST_CASE("metrics follow their definitions") {
    MCConfig cfg;
    cfg.z0 = {0.0};
    std::vector<ReplicateResult> reps;
    const double pts[] = {1.1, 0.8, 1.3, 0.95};
    const double vars[] = {0.01, 0.04, 0.01, 0.0001};
    for (int i = 0; i < 4; ++i) {
        ReplicateResult r;
        r.rep = i;
        r.ok = true;
        r.point = {pts[i]};
        r.variance = {vars[i]};
        reps.push_back(r);
    }
    ReplicateResult bad;
    bad.rep = 4;
    reps.push_back(bad);
    const MCMetrics m = summarize(cfg, reps);
    CHECK(m.successes == 4);
    CHECK(m.failures == 1);
    const PointMetrics& pm = m.points[0];
    CHECK(pm.truth == 1.0);
    CHECK(pm.bias == doctest::Approx(0.0375).epsilon(1e-12));
    const double mean = 1.0375;
    double ss = 0.0;
    for (double x : pts) ss += (x - mean) * (x - mean);
    CHECK(pm.var == doctest::Approx(ss / 3.0).epsilon(1e-12));
    CHECK(pm.evar == doctest::Approx((0.01 + 0.04 + 0.01 + 0.0001) / 4.0).epsilon(1e-12));
    // |err| / se = 1, 1, 3, 5: covered by both levels only in the first two
    CHECK(pm.cov90 == 0.5);
    CHECK(pm.cov95 == 0.5);
}

TEST_CASE("scenario plans and configuration errors") {
    MCConfig cfg;
    const Dataset d = generate(Scenario{ScenarioId::C5}, 100, 5, 1);
    cfg.scenario = Scenario{ScenarioId::C5};
    const auto plan = scenario_plan(cfg, d);
    CHECK(plan.basis.kind == design::BasisKind::cubic_spline);
    CHECK(plan.basis.dimension() == 6);
    CHECK(plan.z_term == design::ZTerm::raw);

    cfg.scenario = Scenario{ScenarioId::C1};
    const auto p1 = scenario_plan(cfg, generate(Scenario{ScenarioId::C1}, 100, 5, 1));
    CHECK(p1.mode == design::Mode::doubly_robust);
    CHECK(p1.basis.kind == design::BasisKind::binary_saturated);

    cfg.reps = 0;
    CHECK_THROWS_AS(run_mc(cfg), ArgumentError);
    cfg.reps = 1;
    cfg.z0.clear();
    CHECK_THROWS_AS(run_mc(cfg), ArgumentError);
    CHECK_THROWS_AS(estimator_from_string("bogus"), ArgumentError);
    CHECK(estimator_from_string("aipw_kernel_cf4") == Estimator::aipw_kernel_cf4);
    CHECK(thread_count(3) == 3);
}
