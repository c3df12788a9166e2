#pragma once

// Data-generating processes C1-C5, Monte Carlo execution and coverage
// metrics.

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cste/dataset.hpp"
#include "cste/design.hpp"
#include "cste/effect.hpp"

namespace cste::simlab {

enum class ScenarioId { C1, C2, C3, C4, C5, custom };
const char* to_string(ScenarioId s) noexcept;
ScenarioId scenario_from_string(const std::string& s);

// custom: C1 covariates, propensity and Y1; Y0 = Y1 - (tau_intercept +
// tau_slope * Z) on the same noise draw.
struct Scenario {
    ScenarioId id = ScenarioId::C1;
    double tau_intercept = 0.0;
    double tau_slope = 0.0;

    bool continuous_z() const noexcept { return id == ScenarioId::C4 || id == ScenarioId::C5; }
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

// n x d draws of N(0, Sigma), Sigma_jk = 2^{-|j-k|}, through the
// lower-triangular factor of Sigma (an AR(1) recursion).
Eigen::MatrixXd sample_covariates(Eigen::Index n, Eigen::Index d, std::uint64_t seed);

struct SimData {
    Dataset data;
    Eigen::VectorXd y1, y0;
    Eigen::VectorXd true_pi;  // P(T=1 | X)
    Eigen::VectorXd true_m1;  // E(Y1 | X)
    Eigen::VectorXd true_m0;  // E(Y0 | X)
};

SimData generate_full(const Scenario& sc, Eigen::Index n, Eigen::Index p, std::uint64_t seed);
Dataset generate(const Scenario& sc, Eigen::Index n, Eigen::Index p, std::uint64_t seed);

// True propensity linear predictor and conditional means for one row
// (z, v of length >= 4).
double true_ps_eta(const Scenario& sc, double z, const double* v);
double true_m1(const Scenario& sc, double z, const double* v);
double true_m0(const Scenario& sc, double z, const double* v);

// mu1(z) = E(Y1 | Z = z), and its best linear approximation by the cubic
// spline basis with knots at the population quartiles of Z (continuous Z).
double true_mu1(const Scenario& sc, double z);
double true_tau(const Scenario& sc, double z);
double true_mu1_bla(const Scenario& sc, double z);

enum class Estimator { proposed, rml_msm, aipw_kernel_full, aipw_kernel_cf4, oracle };
const char* to_string(Estimator e) noexcept;
Estimator estimator_from_string(const std::string& s);

struct MCConfig {
    Scenario scenario;
    Eigen::Index n = 500;
    Eigen::Index p = 200;  // dimension of V
    int reps = 1000;
    std::vector<double> z0{0.0, 1.0};
    std::uint64_t seed = 20240101;
    Estimator estimator = Estimator::proposed;
    effect::TargetKind target = effect::TargetKind::mu1;  // mu1 or tau
    int threads = 0;  // 0: CSTE_THREADS or hardware concurrency
    int knots = 3;
    nuisance::CVOptions cv{};
};

// Basis and regressor plan used for a scenario's estimators.
design::RegressorPlan scenario_plan(const MCConfig& cfg, const Dataset& data);

struct ReplicateResult {
    int rep = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    bool retried = false;
    std::string error;
    std::vector<double> point;     // per z0
    std::vector<double> variance;  // per z0
};

struct PointMetrics {
    double z0 = 0.0;
    double truth = 0.0;
    double bias = 0.0;
    double var = 0.0;
    double evar = 0.0;
    double cov90 = 0.0;
    double cov95 = 0.0;
    double mean_ci_width = 0.0;  // 95% interval
};

struct MCMetrics {
    std::vector<PointMetrics> points;
    int successes = 0;
    int failures = 0;
    std::vector<ReplicateResult> replicates;
};

// One replicate with a given stream seed; throws on estimator errors.
ReplicateResult run_replicate(const MCConfig& cfg, int rep, std::uint64_t seed);

MCMetrics run_mc(const MCConfig& cfg);

// Metrics from replicate results (successful ones only).
MCMetrics summarize(const MCConfig& cfg, std::vector<ReplicateResult> reps);

double truth_at(const MCConfig& cfg, double z0);

int thread_count(int requested);

}  // namespace cste::simlab
