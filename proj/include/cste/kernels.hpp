#pragma once

// Kernel local-constant competitors: outcome-regression, IPW and AIPW
// estimators of mu1(z) for a continuous Z, with full-sample or cross-fitted
// nuisance fits.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cste/dataset.hpp"
#include "cste/design.hpp"
#include "cste/nuisance.hpp"

namespace cste::kernels {

struct KernelConfig {
    double bandwidth = 0.0;  // <= 0: use bandwidth_rule on the sample
    int crossfit_folds = 1;  // 1 = full sample
    std::uint64_t seed = 1;
};

inline double gaussian(double u) noexcept {
    constexpr double c = 0.39894228040143267794;  // 1/sqrt(2 pi)
    return c * std::exp(-0.5 * u * u);
}

// Normalized weights K((z_i - z0)/h) / sum_j K((z_j - z0)/h).
std::vector<double> kernel_weights(double z0, std::span<const double> z, double h);

// Kernel-weighted mean of values at z0.
double local_constant(double z0, std::span<const double> z, std::span<const double> values, double h);

// 1.06 sd(z) n^{-1/5}, times the undersmoothing factor n^{1/5} n^{-2/7}.
double bandwidth_rule(std::span<const double> z);
double silverman_base(std::span<const double> z);

struct KernelEstimate {
    double point = 0.0;
    double variance = 0.0;  // sum_i w_i^2 (phi_i - point)^2
};

// Local-constant regression of phi on z with its weighted sandwich variance.
KernelEstimate smooth(double z0, std::span<const double> z, std::span<const double> phi, double h);

// Estimators on a data set with a single continuous Z column and nuisance
// values supplied per observation.
KernelEstimate aipw_kernel(double z0, const Dataset& data, std::span<const double> m_hat,
                           std::span<const double> pi_hat, const KernelConfig& cfg);
double ipw_kernel(double z0, const Dataset& data, std::span<const double> pi_hat, const KernelConfig& cfg);
double or_kernel(double z0, const Dataset& data, std::span<const double> m_hat, const KernelConfig& cfg);

// Nuisance values (m_hat, pi_hat) for all n rows, fitted on the given
// training rows.
using NuisanceFitter =
    std::function<std::pair<Eigen::VectorXd, Eigen::VectorXd>(const std::vector<int>& train_rows)>;

struct CrossFit {
    Eigen::VectorXd m_hat;
    Eigen::VectorXd pi_hat;
    std::vector<int> fold_of;  // all zero for the full-sample fit
};

// folds = 1: one fit on every row. folds > 1: folds stratified by T; the
// values of fold k come from the fit on the other folds.
CrossFit cross_fit(const Eigen::VectorXd& t, int folds, std::uint64_t seed, const NuisanceFitter& fitter);

// f = g = (1, V, Z) with Z entering raw, the working models of the kernel
// competitors.
design::RegressorPlan competitor_plan(const design::BasisSpec& basis, int num_v);

// Lasso-penalized maximum likelihood nuisances on plan columns. Penalties are
// chosen once by cross-validation on the full sample and reused for every
// training fold.
NuisanceFitter rml_fitter(const nuisance::Workspace& ws, optim::Link link, const nuisance::CVOptions& cv,
                          const optim::SolverOptions& solver = {});

}  // namespace cste::kernels
