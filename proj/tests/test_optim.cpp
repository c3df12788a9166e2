#include <algorithm>
#include <cmath>
#include <random>

#include "cste/error.hpp"
#include "cste/optim.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace cste::optim;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

PenalizedProblem two_obs_calibration() {
    MatrixXd x = MatrixXd::Ones(2, 1);
    VectorXd t(2);
    t << 1, 0;
    return make_calibration(x, t, Arm::treated);
}

struct KindCase {
    LossKind kind;
    Link link;
    Arm arm;
};

const KindCase kAllKinds[] = {
    {LossKind::cal_logistic_treated, Link::identity, Arm::treated},
    {LossKind::cal_logistic_untreated, Link::identity, Arm::untreated},
    {LossKind::ml_logistic, Link::logistic, Arm::treated},
    {LossKind::wglm, Link::identity, Arm::treated},
    {LossKind::wglm, Link::logistic, Arm::untreated},
    {LossKind::ml_glm, Link::identity, Arm::untreated},
    {LossKind::ml_glm, Link::logistic, Arm::treated},
};

VectorXd random_coef(std::mt19937_64& rng, Eigen::Index m, double scale) {
    std::normal_distribution<double> nd;
    VectorXd c(m);
    for (Eigen::Index j = 0; j < m; ++j) c[j] = scale * nd(rng);
    return c;
}

}  // namespace

TEST_CASE("eval_loss examples") {
    MatrixXd one = MatrixXd::Ones(1, 1);
    VectorXd t1 = VectorXd::Ones(1);
    CHECK(eval_loss(make_calibration(one, t1, Arm::treated), VectorXd::Zero(1)) == doctest::Approx(1.0));
    CHECK(eval_loss(two_obs_calibration(), VectorXd::Zero(1)) == doctest::Approx(0.5));
    CHECK(eval_loss(make_ml_logistic(one, t1), VectorXd::Zero(1)) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("eval_gradient examples") {
    CHECK(eval_gradient(two_obs_calibration(), VectorXd::Zero(1))[0] == doctest::Approx(0.0));
    MatrixXd one = MatrixXd::Ones(1, 1);
    VectorXd y = VectorXd::Constant(1, 2.0), t = VectorXd::Ones(1), w = VectorXd::Ones(1);
    const auto p = make_weighted_glm(one, y, t, w, Link::identity, Arm::treated);
    CHECK(eval_gradient(p, VectorXd::Zero(1))[0] == doctest::Approx(-2.0));
}

TEST_CASE("soft_threshold examples") {
    CHECK(soft_threshold(3, 1) == 2.0);
    CHECK(soft_threshold(-0.5, 1) == 0.0);
    CHECK(soft_threshold(0, 5) == 0.0);
    CHECK(soft_threshold(-4, 1.5) == -2.5);
}

TEST_CASE("eval errors") {
    const auto p = two_obs_calibration();
    CHECK_THROWS_AS(eval_loss(p, VectorXd::Zero(2)), cste::ArgumentError);
    CHECK_THROWS_AS(eval_gradient(p, VectorXd::Zero(3)), cste::ArgumentError);
    try {
        eval_loss(p, VectorXd::Constant(1, -1000.0));
        FAIL("expected overflow");
    } catch (const cste::NumericOverflow& e) {
        CHECK(e.linear_predictor() == -1000.0);
    }
}

TEST_CASE("loss and gradient agree with the per-row definitions") {
    std::mt19937_64 rng(11);
    for (const auto& k : kAllKinds) {
        for (int rep = 0; rep < 10; ++rep) {
            const auto p = oracle::random_problem(rng, k.kind, k.link, k.arm, 40, 5);
            const VectorXd c = random_coef(rng, p.width(), 0.3);
            CHECK(eval_loss(p, c) == doctest::Approx(oracle::loss(p, c)).epsilon(1e-12));
            VectorXd g;
            MatrixXd h;
            oracle::derivatives(p, c, g, h);
            CHECK((eval_gradient(p, c) - g).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + g.cwiseAbs().maxCoeff()));
        }
    }
}

TEST_CASE("gradient matches central finite differences") {
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<int> nsize(5, 50), dsize(1, 10);
    for (int rep = 0; rep < 70; ++rep) {
        const auto& k = kAllKinds[rep % 7];
        const auto p = oracle::random_problem(rng, k.kind, k.link, k.arm, nsize(rng), dsize(rng));
        const VectorXd c = random_coef(rng, p.width(), 0.3);
        const VectorXd g = eval_gradient(p, c);
        VectorXd fd(c.size());
        for (Eigen::Index j = 0; j < c.size(); ++j) {
            VectorXd cp = c, cm = c;
            cp[j] += 1e-6;
            cm[j] -= 1e-6;
            fd[j] = (eval_loss(p, cp) - eval_loss(p, cm)) / 2e-6;
        }
        const double rel = (g - fd).norm() / std::max(1e-8, fd.norm());
        CHECK(rel < 1e-5);
    }
}

TEST_CASE("fit_lasso two-observation calibration optimum is zero") {
    const FitResult r = fit_lasso(two_obs_calibration(), 0.0);
    CHECK(r.converged);
    CHECK(std::fabs(r.coef[0]) < 1e-10);
}

TEST_CASE("lambda = 0 matches the damped Newton oracle") {
    std::mt19937_64 rng(13);
    for (const auto& k : kAllKinds) {
        for (int rep = 0; rep < 3; ++rep) {
            const auto p = oracle::random_problem(rng, k.kind, k.link, k.arm, 200, 3);
            const FitResult r = fit_lasso(p, 0.0);
            REQUIRE(r.converged);
            const VectorXd ref = oracle::newton(p);
            CHECK((r.coef - ref).cwiseAbs().maxCoeff() < 1e-6);
        }
    }
}

TEST_CASE("small penalized fits match a golden-section oracle") {
    std::mt19937_64 rng(14);
    const double lambda = 0.1, box = 6.0;
    int checked = 0;
    for (const auto& k : kAllKinds) {
        for (int rep = 0; rep < 4; ++rep) {
            auto p = oracle::random_problem(rng, k.kind, k.link, k.arm, 6, 2);
            // keep at least two rows in the fitted arm for the outcome losses
            p.treatment << 1, 0, 1, 0, 1, 0;
            FitResult r;
            try {
                r = fit_lasso(p, lambda);
            } catch (const cste::NumericOverflow&) {
                continue;  // unbounded below at this lambda; no finite oracle either
            }
            if (!r.converged || r.coef.cwiseAbs().maxCoeff() > box - 0.5) continue;
            const VectorXd ref =
                oracle::nested_golden3([&](const VectorXd& c) { return oracle::objective(p, c, lambda); }, box);
            const double f_ref = oracle::objective(p, ref, lambda);
            CHECK(std::fabs(r.objective - f_ref) < 1e-4);
            CHECK(r.objective <= f_ref + 1e-9);
            ++checked;
        }
    }
    CHECK(checked >= 20);
}

TEST_CASE("lambda at or above lambda_max gives the intercept-only solution") {
    std::mt19937_64 rng(15);
    for (const auto& k : kAllKinds) {
        const auto p = oracle::random_problem(rng, k.kind, k.link, k.arm, 80, 6);
        const auto grid = lambda_grid(p, 20);
        for (double lam : {grid[0], 2.0 * grid[0]}) {
            const FitResult r = fit_lasso(p, lam);
            REQUIRE(r.converged);
            for (Eigen::Index j = 1; j < r.coef.size(); ++j) CHECK(r.coef[j] == 0.0);
            auto d0 = [&](double c0) {
                VectorXd c = VectorXd::Zero(p.width());
                c[0] = c0;
                VectorXd g;
                MatrixXd h;
                oracle::derivatives(p, c, g, h);
                return g[0];
            };
            const double c0 = oracle::bisect(d0, -30.0, 30.0);
            CHECK(r.coef[0] == doctest::Approx(c0).epsilon(1e-8));
        }
        // just below lambda_max some slope enters
        const FitResult below = fit_lasso(p, 0.9 * grid[0]);
        CHECK(below.active_set.size() >= 1);
    }
}

TEST_CASE("lambda_grid shape") {
    std::mt19937_64 rng(16);
    const auto p = oracle::random_problem(rng, LossKind::cal_logistic_treated, Link::identity, Arm::treated, 100, 8);
    const auto grid = lambda_grid(p, 50, 1e-3);
    REQUIRE(grid.size() == 50);
    for (std::size_t k = 0; k < grid.size(); ++k) {
        CHECK(grid[k] > 0.0);
        if (k > 0) CHECK(grid[k] < grid[k - 1]);
    }
    CHECK(grid.back() == doctest::Approx(grid.front() * 1e-3));
    CHECK(grid.front() == doctest::Approx(lambda_max(p)));
}

TEST_CASE("kkt_report at converged fits") {
    std::mt19937_64 rng(17);
    for (const auto& k : kAllKinds) {
        const auto p = oracle::random_problem(rng, k.kind, k.link, k.arm, 200, 10);
        const auto grid = lambda_grid(p, 10, 0.01);
        for (double lam : {grid[3], grid[6], grid[9]}) {
            const FitResult r = fit_lasso(p, lam);
            REQUIRE(r.converged);
            const VectorXd res = kkt_report(p, r.coef, lam);
            CHECK(std::fabs(res[0]) <= 1e-8);
            for (Eigen::Index j = 1; j < res.size(); ++j) {
                if (r.coef[j] != 0.0) {
                    CHECK(std::fabs(std::fabs(res[j]) - lam) <= 1e-6);
                    CHECK(res[j] * r.coef[j] > 0.0);
                } else {
                    CHECK(std::fabs(res[j]) <= lam + 1e-8);
                }
            }
            CHECK((res - r.kkt_residuals).cwiseAbs().maxCoeff() < 1e-12);
            CHECK(r.objective == doctest::Approx(eval_objective(p, r.coef, lam)).epsilon(1e-12));
            CHECK(r.max_kkt_violation <= 1e-6);
        }
    }
}

TEST_CASE("calibration residuals are weighted covariate imbalances") {
    std::mt19937_64 rng(18);
    const auto p = oracle::random_problem(rng, LossKind::cal_logistic_treated, Link::identity, Arm::treated, 150, 4);
    const VectorXd c = random_coef(rng, p.width(), 0.2);
    const VectorXd res = kkt_report(p, c, 0.0);
    const VectorXd eta = p.design * c;
    for (Eigen::Index j = 0; j < p.width(); ++j) {
        double s = 0;
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            const double pi = 1.0 / (1.0 + std::exp(-eta[i]));
            s += p.treatment[i] * p.design(i, j) / pi - p.design(i, j);
        }
        CHECK(res[j] == doctest::Approx(s / static_cast<double>(p.rows())).epsilon(1e-10));
    }
}

TEST_CASE("objective trace is nonincreasing") {
    std::mt19937_64 rng(19);
    for (const auto& k : kAllKinds) {
        for (int rep = 0; rep < 5; ++rep) {
            const auto p = oracle::random_problem(rng, k.kind, k.link, k.arm, 120, 15);
            const double lam = 0.2 * lambda_max(p);
            const FitResult r = fit_lasso(p, lam, random_coef(rng, p.width(), 0.5));
            REQUIRE(r.objective_trace.size() >= 1);
            for (std::size_t i = 1; i < r.objective_trace.size(); ++i)
                CHECK(r.objective_trace[i] <= r.objective_trace[i - 1] + 1e-12 * std::fabs(r.objective_trace[i - 1]));
        }
    }
}

TEST_CASE("losses are midpoint convex along random segments") {
    std::mt19937_64 rng(20);
    for (const auto& k : kAllKinds) {
        const auto p = oracle::random_problem(rng, k.kind, k.link, k.arm, 60, 5);
        for (int rep = 0; rep < 50; ++rep) {
            const VectorXd a = random_coef(rng, p.width(), 0.5), b = random_coef(rng, p.width(), 0.5);
            const double mid = eval_loss(p, 0.5 * (a + b));
            CHECK(mid <= 0.5 * (eval_loss(p, a) + eval_loss(p, b)) + 1e-12);
        }
    }
}

TEST_CASE("fits are deterministic") {
    std::mt19937_64 rng(21);
    const auto p = oracle::random_problem(rng, LossKind::wglm, Link::identity, Arm::treated, 200, 30);
    const double lam = 0.05 * lambda_max(p);
    const FitResult a = fit_lasso(p, lam), b = fit_lasso(p, lam);
    CHECK(a.coef == b.coef);
    CHECK(a.iterations == b.iterations);
}

TEST_CASE("separated data raise a numeric overflow") {
    MatrixXd x(20, 2);
    VectorXd t(20);
    for (int i = 0; i < 20; ++i) {
        x(i, 0) = 1.0;
        x(i, 1) = i < 10 ? -1.0 - 0.1 * i : 1.0 + 0.1 * i;
        t[i] = i < 10 ? 0.0 : 1.0;
    }
    CHECK_THROWS_AS(fit_lasso(make_calibration(x, t, Arm::treated), 0.0), cste::NumericOverflow);
}

TEST_CASE("constant columns are dropped with coefficient zero") {
    std::mt19937_64 rng(22);
    auto p = oracle::random_problem(rng, LossKind::ml_logistic, Link::logistic, Arm::treated, 100, 3);
    p.design.col(2).setConstant(3.0);
    const FitResult r = fit_lasso(p, 0.0);
    CHECK(r.coef[2] == 0.0);
    CHECK(std::find(r.dropped_columns.begin(), r.dropped_columns.end(), 2) != r.dropped_columns.end());
}

TEST_CASE("problem validation") {
    auto p = two_obs_calibration();
    p.penalty_mask[0] = 1;
    CHECK_THROWS_AS(p.validate(), cste::ArgumentError);
    p = two_obs_calibration();
    p.treatment[0] = 2.0;
    CHECK_THROWS_AS(p.validate(), cste::DataError);
    p = two_obs_calibration();
    p.design(1, 0) = 0.5;
    CHECK_THROWS_AS(p.validate(), cste::ArgumentError);
    CHECK_THROWS_AS(fit_lasso(two_obs_calibration(), -1.0), cste::ArgumentError);
}
