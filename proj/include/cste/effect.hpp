#pragma once

// AIPW influence values, the marginal structural model fit with its sandwich
// variance, and the full estimation pipeline for mu1(z), mu0(z) and tau(z).

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cste/dataset.hpp"
#include "cste/design.hpp"
#include "cste/nuisance.hpp"

namespace cste::effect {

enum class TargetKind { mu1, mu0, tau };
const char* to_string(TargetKind t) noexcept;

// t y / pi - (t / pi - 1) m
double aipw_phi(double y, double t, double pi_hat, double m_hat);

struct MsmFit {
    Eigen::VectorXd beta;     // K+1
    Eigen::MatrixXd M;        // n^{-1} sum phidag phidag'
    Eigen::MatrixXd M_inv;
    Eigen::VectorXd phi;      // per-observation influence values
    Eigen::VectorXd residuals;
    Eigen::MatrixXd G_hat;    // n^{-1} sum phidag phidag' r^2
    Eigen::Index n = 0;
};

// Least-squares projection of phi on the rows of phidag. column_names label
// the phidag columns in singular-design errors.
MsmFit msm_fit(const Eigen::VectorXd& phi, const Eigen::MatrixXd& phidag_rows,
               const std::vector<std::string>& column_names = {});

// phidag(z0)' M^{-1} G M^{-1} phidag(z0) / n
double sandwich_variance(const MsmFit& msm, std::span<const double> phidag_z0);
double sandwich_variance(const MsmFit& msm, std::span<const double> z0, const design::BasisSpec& basis);

struct CsteEstimate {
    TargetKind target = TargetKind::mu1;
    std::vector<double> z0;
    double point = 0.0;
    double variance = 0.0;  // on the scale used by the interval: ci = point -/+ z sqrt(variance)
    double level = 0.95;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    bool clamped = false;   // z0 was outside the spline boundary
    bool approximate = false;  // basis is not saturated: best linear approximation target

    double se() const;
};

CsteEstimate evaluate(const MsmFit& msm, const design::BasisSpec& basis, TargetKind target,
                      std::span<const double> z0, double level);

// Column labels (1, Phi) of a basis.
std::vector<std::string> phidag_names(const design::BasisSpec& basis);

enum class Method { proposed, rml };
const char* to_string(Method m) noexcept;

struct EstimationOptions {
    Method method = Method::proposed;
    optim::Link link = optim::Link::identity;
    double level = 0.95;
    nuisance::CVOptions cv{};
    // Fixed penalties; CV is used for whichever is unset.
    std::optional<double> ps_lambda;
    std::optional<double> or_lambda;
    optim::SolverOptions solver{};
};

struct NuisanceFits {
    std::optional<nuisance::PSFit> ps1;   // treated-arm PS (RCAL or RML)
    std::optional<nuisance::PSFit> ps0;   // untreated-arm PS (RCAL); RML reuses ps1
    std::optional<nuisance::ORFit> or1;
    std::optional<nuisance::ORFit> or0;
    std::vector<std::pair<nuisance::Target, nuisance::CVResult>> cv;
};

NuisanceFits fit_nuisance(const nuisance::Workspace& ws, bool treated, bool untreated,
                          const EstimationOptions& opts);

// Influence values phi(Y, T; m1, pi) for the treated arm and
// phi(Y, 1-T; m0, 1-pi0) for the untreated arm.
Eigen::VectorXd arm_phi(const nuisance::Workspace& ws, const NuisanceFits& fits, optim::Arm arm);

struct Analysis {
    nuisance::Workspace ws;
    NuisanceFits fits;
    Eigen::MatrixXd phidag;  // n x (K+1)
    std::optional<MsmFit> msm1, msm0, msm_tau;
};

// Runs the nuisance fits needed for the targets and fits the MSMs.
Analysis analyze(const Dataset& data, const design::RegressorPlan& plan, bool want_mu1, bool want_mu0,
                 bool want_tau, const EstimationOptions& opts);

std::vector<CsteEstimate> estimate_mu(optim::Arm arm, const Dataset& data, const design::RegressorPlan& plan,
                                      const std::vector<std::vector<double>>& z0s,
                                      const EstimationOptions& opts = {});
std::vector<CsteEstimate> estimate_tau(const Dataset& data, const design::RegressorPlan& plan,
                                       const std::vector<std::vector<double>>& z0s,
                                       const EstimationOptions& opts = {});

// ---------------------------------------------------------------------------
// Knot-count search for a continuous Z.

struct KnotRow {
    int knots = 0;
    int dimension = 0;  // K = knots + 3
    double rss = 0.0;
    double aic = 0.0;
    double bic = 0.0;
};

struct KnotSearch {
    std::vector<KnotRow> rows;
    int best_aic = 0;  // knot counts
    int best_bic = 0;
};

// Least-squares regression of phi on (1, B(z)) for 1..max_knots quantile knots
// with a Gaussian working likelihood:
//   AIC = n log(RSS/n) + 2 (K+2),  BIC = n log(RSS/n) + log(n) (K+2).
KnotSearch knot_search(const Eigen::VectorXd& phi, const Eigen::VectorXd& z, int max_knots = 10);

// Fits the nuisance models once with a max_knots-knot spline plan on the
// single continuous Z column, computes phi_tau and runs the search above.
KnotSearch knot_search(const Dataset& data, design::Mode mode, const EstimationOptions& opts, int max_knots = 10);

}  // namespace cste::effect
