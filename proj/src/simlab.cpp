#include "cste/simlab.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <random>
#include <thread>

#include "cste/error.hpp"
#include "cste/kernels.hpp"
#include "cste/normal.hpp"

namespace cste::simlab {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

const char* to_string(ScenarioId s) noexcept {
    switch (s) {
        case ScenarioId::C1: return "C1";
        case ScenarioId::C2: return "C2";
        case ScenarioId::C3: return "C3";
        case ScenarioId::C4: return "C4";
        case ScenarioId::C5: return "C5";
        case ScenarioId::custom: return "custom";
    }
    return "unknown";
}

ScenarioId scenario_from_string(const std::string& s) {
    if (s == "C1") return ScenarioId::C1;
    if (s == "C2") return ScenarioId::C2;
    if (s == "C3") return ScenarioId::C3;
    if (s == "C4") return ScenarioId::C4;
    if (s == "C5") return ScenarioId::C5;
    if (s == "custom") return ScenarioId::custom;
    throw ArgumentError("simlab.unknown_scenario", "unknown scenario '" + s + "'");
}

const char* to_string(Estimator e) noexcept {
    switch (e) {
        case Estimator::proposed: return "proposed";
        case Estimator::rml_msm: return "rml_msm";
        case Estimator::aipw_kernel_full: return "aipw_kernel_full";
        case Estimator::aipw_kernel_cf4: return "aipw_kernel_cf4";
        case Estimator::oracle: return "oracle";
    }
    return "unknown";
}

Estimator estimator_from_string(const std::string& s) {
    if (s == "proposed") return Estimator::proposed;
    if (s == "rml_msm") return Estimator::rml_msm;
    if (s == "aipw_kernel_full") return Estimator::aipw_kernel_full;
    if (s == "aipw_kernel_cf4") return Estimator::aipw_kernel_cf4;
    if (s == "oracle") return Estimator::oracle;
    throw ArgumentError("simlab.unknown_estimator", "unknown estimator '" + s + "'");
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

namespace {

constexpr double kRho = 0.5;
const double kInnov = std::sqrt(1.0 - kRho * kRho);

void ar1_row(std::mt19937_64& rng, std::normal_distribution<double>& nd, double* out, Index d) {
    for (Index j = 0; j < d; ++j) {
        const double e = nd(rng);
        out[j] = j == 0 ? e : kRho * out[j - 1] + kInnov * e;
    }
}

double expit(double eta) {
    if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
    const double e = std::exp(eta);
    return e / (1.0 + e);
}

}  // namespace

MatrixXd sample_covariates(Index n, Index d, std::uint64_t seed) {
    if (d < 1) throw ArgumentError("simlab.bad_dimension", "covariate dimension must be at least 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    MatrixXd v(n, d);
    std::vector<double> row(static_cast<std::size_t>(d));
    for (Index i = 0; i < n; ++i) {
        ar1_row(rng, nd, row.data(), d);
        for (Index j = 0; j < d; ++j) v(i, j) = row[static_cast<std::size_t>(j)];
    }
    return v;
}

double true_ps_eta(const Scenario& sc, double z, const double* v) {
    static constexpr double sgn[4] = {-1.0, -1.0, 1.0, -1.0};
    double eta = z;
    for (int i = 0; i < 4; ++i) {
        const double x = sc.id == ScenarioId::C3 ? v[i] * v[i] : v[i];
        eta += sgn[i] * x;
    }
    return 0.5 * eta;
}

double true_m1(const Scenario& sc, double z, const double* v) {
    switch (sc.id) {
        case ScenarioId::C1:
        case ScenarioId::C3:
        case ScenarioId::custom:
        case ScenarioId::C2: {
            double m = 1.0 + z;
            for (int i = 0; i < 4; ++i) {
                m += v[i] * z + 2.0 * v[i] * (1.0 - z);
                if (sc.id == ScenarioId::C2) m += v[i] * v[i] * v[i] / std::ldexp(1.0, i + 1);
            }
            return m;
        }
        case ScenarioId::C4: {
            double m = z;
            for (int i = 0; i < 4; ++i) m += v[i];
            return m;
        }
        case ScenarioId::C5: {
            const double a = 1.0 + 2.0 * z;
            const double b = z - 1.0;
            double m = z * a * a * b * b;
            for (int i = 0; i < 4; ++i) m += (v[i] * v[i] + v[i]) / std::ldexp(1.0, i + 2);
            return m;
        }
    }
    return 0.0;
}

double true_m0(const Scenario& sc, double z, const double* v) {
    double s = 0.0;
    for (int i = 0; i < 4; ++i) s += v[i];
    switch (sc.id) {
        case ScenarioId::C1:
        case ScenarioId::C2:
        case ScenarioId::C3: return 1.0 + s;
        case ScenarioId::C4:
        case ScenarioId::C5: return s;
        case ScenarioId::custom: return true_m1(sc, z, v) - (sc.tau_intercept + sc.tau_slope * z);
    }
    return 0.0;
}

SimData generate_full(const Scenario& sc, Index n, Index p, std::uint64_t seed) {
    if (p < 4) throw ArgumentError("simlab.bad_dimension", "scenarios need at least 4 V columns");
    if (n < 1) throw ArgumentError("simlab.bad_size", "n must be positive");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);

    SimData s;
    Dataset& d = s.data;
    d.y.resize(n);
    d.t.resize(n);
    d.z.resize(n, 1);
    d.v.resize(n, p);
    s.y1.resize(n);
    s.y0.resize(n);
    s.true_pi.resize(n);
    s.true_m1.resize(n);
    s.true_m0.resize(n);
    std::vector<double> v(static_cast<std::size_t>(p));
    for (Index i = 0; i < n; ++i) {
        const double z = sc.continuous_z() ? unif(rng) - 0.5 : (coin(rng) ? 1.0 : 0.0);
        ar1_row(rng, nd, v.data(), p);
        const double pi = expit(true_ps_eta(sc, z, v.data()));
        const double t = unif(rng) < pi ? 1.0 : 0.0;
        const double e1 = nd(rng);
        const double e0 = nd(rng);
        const double m1 = true_m1(sc, z, v.data());
        const double m0 = true_m0(sc, z, v.data());
        s.y1[i] = m1 + e1;
        s.y0[i] = sc.id == ScenarioId::custom ? m0 + e1 : m0 + e0;
        d.z(i, 0) = z;
        for (Index j = 0; j < p; ++j) d.v(i, j) = v[static_cast<std::size_t>(j)];
        d.t[i] = t;
        d.y[i] = t == 1.0 ? s.y1[i] : s.y0[i];
        s.true_pi[i] = pi;
        s.true_m1[i] = m1;
        s.true_m0[i] = m0;
    }
    d.z_names = {"Z"};
    d.v_names.clear();
    for (Index j = 0; j < p; ++j) d.v_names.push_back("V" + std::to_string(j + 1));
    return s;
}

Dataset generate(const Scenario& sc, Index n, Index p, std::uint64_t seed) {
    return generate_full(sc, n, p, seed).data;
}

double true_mu1(const Scenario& sc, double z) {
    switch (sc.id) {
        case ScenarioId::C1:
        case ScenarioId::C2:
        case ScenarioId::C3:
        case ScenarioId::custom: return 1.0 + z;
        case ScenarioId::C4: return z;
        case ScenarioId::C5: {
            // E(V^2 + V) = 1 for each coordinate
            const double a = 1.0 + 2.0 * z;
            const double b = z - 1.0;
            return z * a * a * b * b + (0.25 + 0.125 + 0.0625 + 0.03125);
        }
    }
    return 0.0;
}

double true_tau(const Scenario& sc, double z) {
    switch (sc.id) {
        case ScenarioId::C1:
        case ScenarioId::C2:
        case ScenarioId::C3: return z;
        case ScenarioId::C4:
        case ScenarioId::C5: return true_mu1(sc, z);
        case ScenarioId::custom: return sc.tau_intercept + sc.tau_slope * z;
    }
    return 0.0;
}

double true_mu1_bla(const Scenario& sc, double z) {
    if (!sc.continuous_z()) return true_mu1(sc, z);
    static const std::vector<double> knots{-0.25, 0.0, 0.25};
    static const double lo = -0.5, hi = 0.5;
    // 8-point Gauss-Legendre on each knot interval: exact for the piecewise
    // polynomial integrands here.
    static const double gx[8] = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                                 -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                                 0.7966664774136267,  0.9602898564975363};
    static const double gw[8] = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873, 0.3626837833783620,
                                 0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763};
    const std::vector<double> breaks{lo, -0.25, 0.0, 0.25, hi};
    const int k = static_cast<int>(knots.size()) + 3 + 1;
    MatrixXd gram = MatrixXd::Zero(k, k);
    VectorXd rhs = VectorXd::Zero(k);
    for (std::size_t s = 0; s + 1 < breaks.size(); ++s) {
        const double a = breaks[s], b = breaks[s + 1];
        for (int q = 0; q < 8; ++q) {
            const double x = 0.5 * (a + b) + 0.5 * (b - a) * gx[q];
            const double w = 0.5 * (b - a) * gw[q];
            std::vector<double> phi{1.0};
            const auto sp = design::spline_basis(x, knots, lo, hi);
            phi.insert(phi.end(), sp.begin(), sp.end());
            const Eigen::Map<const VectorXd> f(phi.data(), k);
            gram += w * f * f.transpose();
            rhs += w * true_mu1(sc, x) * f;
        }
    }
    const VectorXd beta = gram.ldlt().solve(rhs);
    std::vector<double> phi{1.0};
    const auto sp = design::spline_basis(std::clamp(z, lo, hi), knots, lo, hi);
    phi.insert(phi.end(), sp.begin(), sp.end());
    return beta.dot(Eigen::Map<const VectorXd>(phi.data(), k));
}

double truth_at(const MCConfig& cfg, double z0) {
    if (cfg.target == effect::TargetKind::tau) return true_tau(cfg.scenario, z0);
    const bool kernel = cfg.estimator == Estimator::aipw_kernel_full || cfg.estimator == Estimator::aipw_kernel_cf4;
    return kernel ? true_mu1(cfg.scenario, z0) : true_mu1_bla(cfg.scenario, z0);
}

design::RegressorPlan scenario_plan(const MCConfig& cfg, const Dataset& data) {
    const int p = static_cast<int>(data.num_v());
    if (!cfg.scenario.continuous_z()) {
        const auto basis = design::make_basis(design::BasisKind::binary_saturated, data.z);
        return design::build_plan(design::Mode::doubly_robust, basis, p);
    }
    const auto basis = design::make_basis(design::BasisKind::cubic_spline, data.z, cfg.knots);
    return design::build_plan(design::Mode::model_assisted, basis, p, design::ZTerm::raw);
}

ReplicateResult run_replicate(const MCConfig& cfg, int rep, std::uint64_t seed) {
    ReplicateResult r;
    r.rep = rep;
    r.seed = seed;
    const SimData sd = generate_full(cfg.scenario, cfg.n, cfg.p, seed);
    const Dataset& data = sd.data;
    const design::RegressorPlan plan = scenario_plan(cfg, data);
    const bool tau = cfg.target == effect::TargetKind::tau;
    nuisance::CVOptions cv = cfg.cv;
    cv.seed = splitmix64(seed ^ 0x5EEDF01DULL);

    auto record = [&](const effect::MsmFit& msm) {
        for (double z0 : cfg.z0) {
            const double zz[1] = {z0};
            const auto e = effect::evaluate(msm, plan.basis, cfg.target, zz, 0.95);
            r.point.push_back(e.point);
            r.variance.push_back(e.variance);
        }
    };

    switch (cfg.estimator) {
        case Estimator::proposed:
        case Estimator::rml_msm: {
            effect::EstimationOptions opts;
            opts.method = cfg.estimator == Estimator::proposed ? effect::Method::proposed : effect::Method::rml;
            opts.cv = cv;
            const auto a = effect::analyze(data, plan, !tau, false, tau, opts);
            record(tau ? *a.msm_tau : *a.msm1);
            break;
        }
        case Estimator::oracle: {
            VectorXd phi(data.size());
            for (Index i = 0; i < data.size(); ++i) {
                const double t = data.t[i];
                const double pi = sd.true_pi[i];
                const double p1 = effect::aipw_phi(data.y[i], t, pi, sd.true_m1[i]);
                const double p0 = effect::aipw_phi(data.y[i], 1.0 - t, 1.0 - pi, sd.true_m0[i]);
                phi[i] = tau ? p1 - p0 : p1;
            }
            record(effect::msm_fit(phi, design::phi_dag_matrix(data.z, plan.basis), effect::phidag_names(plan.basis)));
            break;
        }
        case Estimator::aipw_kernel_full:
        case Estimator::aipw_kernel_cf4: {
            if (tau) throw ArgumentError("simlab.unsupported", "kernel competitors estimate mu1 only");
            if (!cfg.scenario.continuous_z())
                throw ArgumentError("simlab.unsupported", "kernel competitors need a continuous Z");
            const nuisance::Workspace ws = nuisance::prepare(data, kernels::competitor_plan(plan.basis, plan.num_v));
            const auto fitter = kernels::rml_fitter(ws, optim::Link::identity, cv);
            const int folds = cfg.estimator == Estimator::aipw_kernel_full ? 1 : 4;
            const auto cf = kernels::cross_fit(data.t, folds, splitmix64(seed ^ 0xC0FFEEULL), fitter);
            kernels::KernelConfig kc;
            kc.crossfit_folds = folds;
            for (double z0 : cfg.z0) {
                const auto e = kernels::aipw_kernel(z0, data, std::span<const double>(cf.m_hat.data(), cf.m_hat.size()),
                                                    std::span<const double>(cf.pi_hat.data(), cf.pi_hat.size()), kc);
                r.point.push_back(e.point);
                r.variance.push_back(e.variance);
            }
            break;
        }
    }
    r.ok = true;
    return r;
}

int thread_count(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("CSTE_THREADS")) {
        const int k = std::atoi(env);
        if (k > 0) return k;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

MCMetrics run_mc(const MCConfig& cfg) {
    if (cfg.reps < 1) throw ArgumentError("simlab.bad_reps", "reps must be at least 1");
    if (cfg.p < 4) throw ArgumentError("simlab.bad_dimension", "p must be at least 4");
    if (cfg.z0.empty()) throw ArgumentError("simlab.no_z0", "at least one evaluation point is required");
    std::vector<ReplicateResult> results(static_cast<std::size_t>(cfg.reps));
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            const int rep = next.fetch_add(1);
            if (rep >= cfg.reps) return;
            const std::uint64_t s = splitmix64(cfg.seed ^ static_cast<std::uint64_t>(rep));
            ReplicateResult r;
            try {
                r = run_replicate(cfg, rep, s);
            } catch (const std::exception& first) {
                const std::uint64_t s2 = splitmix64(s ^ 0xA5A5A5A5A5A5A5A5ULL);
                try {
                    r = run_replicate(cfg, rep, s2);
                    r.retried = true;
                } catch (const std::exception& second) {
                    r = ReplicateResult{};
                    r.rep = rep;
                    r.seed = s;
                    r.retried = true;
                    r.error = second.what();
                }
            }
            results[static_cast<std::size_t>(rep)] = std::move(r);
        }
    };
    const int nt = std::min(thread_count(cfg.threads), cfg.reps);
    if (nt <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int k = 0; k < nt; ++k) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return summarize(cfg, std::move(results));
}

MCMetrics summarize(const MCConfig& cfg, std::vector<ReplicateResult> reps) {
    MCMetrics m;
    const double z90 = two_sided_critical(0.90);
    const double z95 = two_sided_critical(0.95);
    for (const auto& r : reps) (r.ok ? m.successes : m.failures)++;
    for (std::size_t k = 0; k < cfg.z0.size(); ++k) {
        PointMetrics pm;
        pm.z0 = cfg.z0[k];
        pm.truth = truth_at(cfg, pm.z0);
        double sum = 0.0, sum_var = 0.0, c90 = 0.0, c95 = 0.0, width = 0.0;
        int cnt = 0;
        for (const auto& r : reps) {
            if (!r.ok) continue;
            const double pt = r.point[k];
            const double se = std::sqrt(r.variance[k]);
            sum += pt;
            sum_var += r.variance[k];
            c90 += std::fabs(pt - pm.truth) <= z90 * se ? 1.0 : 0.0;
            c95 += std::fabs(pt - pm.truth) <= z95 * se ? 1.0 : 0.0;
            width += 2.0 * z95 * se;
            ++cnt;
        }
        if (cnt > 0) {
            const double mean = sum / cnt;
            double ss = 0.0;
            for (const auto& r : reps)
                if (r.ok) ss += (r.point[k] - mean) * (r.point[k] - mean);
            pm.bias = mean - pm.truth;
            pm.var = cnt > 1 ? ss / (cnt - 1) : 0.0;
            pm.evar = sum_var / cnt;
            pm.cov90 = c90 / cnt;
            pm.cov95 = c95 / cnt;
            pm.mean_ci_width = width / cnt;
        }
        m.points.push_back(pm);
    }
    m.replicates = std::move(reps);
    return m;
}

}  // namespace cste::simlab
