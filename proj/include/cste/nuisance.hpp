#pragma once

// Propensity-score and outcome-regression fits: regularized calibrated (RCAL)
// and weighted likelihood (RWL) estimators, regularized maximum likelihood
// (RML), cross-validated lambda selection and balance diagnostics.

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "cste/dataset.hpp"
#include "cste/design.hpp"
#include "cste/optim.hpp"

namespace cste::nuisance {

using optim::Arm;
using optim::Link;

enum class PsMethod { rcal, rml };
enum class OrMethod { rwl, rml };
const char* to_string(PsMethod m) noexcept;
const char* to_string(OrMethod m) noexcept;

inline constexpr double kPiFloor = 1e-6;

// Materialized and standardized f(X), g(X) for one data set. Non-constant
// columns are centred and scaled by their full-sample mean and sd (1/n),
// column 0 stays the constant. All coefficients below refer to these
// standardized columns.
struct Workspace {
    design::RegressorPlan plan;
    Eigen::VectorXd y;
    Eigen::VectorXd t;
    Eigen::MatrixXd f;
    Eigen::MatrixXd g;
    Eigen::VectorXd f_mean, f_sd;
    Eigen::VectorXd g_mean, g_sd;

    Eigen::Index rows() const noexcept { return y.size(); }
};

Workspace prepare(const Dataset& data, const design::RegressorPlan& plan);

struct PSFit {
    Eigen::VectorXd gamma;
    Eigen::VectorXd eta;         // gamma' f(X_i)
    Eigen::VectorXd fitted_pi;   // P(T=1 | X_i), clamped to [kPiFloor, 1-kPiFloor]
    Arm arm = Arm::treated;
    double lambda = 0.0;
    PsMethod method = PsMethod::rcal;
    bool clamped = false;
    optim::FitResult fit;

    // Inverse-probability weight of observation i in this fit's arm:
    // T/pi for the treated arm, (1-T)/(1-pi) for the untreated arm.
    double ipw(Eigen::Index i, double t) const;
};

struct ORFit {
    Eigen::VectorXd alpha;
    Link link = Link::identity;
    Eigen::VectorXd fitted_m;
    Arm arm = Arm::treated;
    double lambda = 0.0;
    OrMethod method = OrMethod::rwl;
    optim::FitResult fit;
};

struct CVResult {
    std::vector<double> lambda_grid;
    // folds x grid; NaN where a fold's path was not evaluated (stopped early
    // or diverged).
    Eigen::MatrixXd fold_losses;
    std::vector<double> mean_loss;  // NaN where not every fold was evaluated
    std::vector<double> se_loss;
    double chosen_lambda = 0.0;
    int chosen_index = 0;
    double one_se_lambda = 0.0;
    std::vector<int> fold_of;  // fold id per observation
    std::uint64_t seed = 0;
    int attempts = 1;
};

enum class Target { ps_rcal, ps_rcal_untreated, or_rwl, or_rwl_untreated, ps_rml, or_rml, or_rml_untreated };
const char* to_string(Target t) noexcept;

struct CVOptions {
    int folds = 5;
    int grid_size = 50;
    double ratio = 1e-3;
    // Stop walking down the grid once the mean held-out loss has not improved
    // for this many consecutive values (0 = walk the full grid).
    int patience = 10;
    std::uint64_t seed = 1;
    optim::SolverOptions solver{};
};

// --- fits ---------------------------------------------------------------

PSFit fit_ps_rcal(const Workspace& ws, double lambda, const optim::SolverOptions& opts = {});
PSFit fit_ps_rcal_untreated(const Workspace& ws, double lambda, const optim::SolverOptions& opts = {});
PSFit fit_ps_rml(const Workspace& ws, double lambda, const optim::SolverOptions& opts = {});

// ps must be an RCAL fit of the matching arm.
ORFit fit_or_rwl(const Workspace& ws, const PSFit& ps, double lambda, Link link,
                 const optim::SolverOptions& opts = {});
ORFit fit_or_rwl_untreated(const Workspace& ws, const PSFit& ps0, double lambda, Link link,
                           const optim::SolverOptions& opts = {});
ORFit fit_or_rml(const Workspace& ws, double lambda, Link link, Arm arm = Arm::treated,
                 const optim::SolverOptions& opts = {});

// Convenience forms taking the data set and plan directly.
PSFit fit_ps_rcal(const Dataset& data, const design::RegressorPlan& plan, double lambda);
PSFit fit_ps_rcal_untreated(const Dataset& data, const design::RegressorPlan& plan, double lambda);
PSFit fit_ps_rml(const Dataset& data, const design::RegressorPlan& plan, double lambda);
ORFit fit_or_rwl(const Dataset& data, const design::RegressorPlan& plan, const PSFit& ps, double lambda, Link link);
ORFit fit_or_rwl_untreated(const Dataset& data, const design::RegressorPlan& plan, const PSFit& ps0, double lambda,
                           Link link);
ORFit fit_or_rml(const Dataset& data, const design::RegressorPlan& plan, double lambda, Link link,
                 Arm arm = Arm::treated);

// RWL weights e^{-eta} (treated) or e^{eta} (untreated) for the rows of ps.
Eigen::VectorXd rwl_weights(const PSFit& ps);

// Penalized problems for each target on the workspace (weights for the RWL
// targets come from ps).
optim::PenalizedProblem problem_for(const Workspace& ws, Target target, Link link, const PSFit* ps = nullptr);

// --- tuning -------------------------------------------------------------

// Stratified fold assignment: treated rows dealt round-robin after a seeded
// shuffle, control rows continue the rotation.
std::vector<int> stratified_folds(const Eigen::VectorXd& t, int folds, std::uint64_t seed);

// Cross-validated lambda for one target. For the RWL targets ps_lambda is the
// penalty of the training-fold RCAL fit that supplies the weights.
CVResult cv_lambda(const Workspace& ws, Target target, Link link, const CVOptions& opts = {},
                   double ps_lambda = 0.0);

// Fit at a CV choice, walking the grid down to the chosen value with warm
// starts.
PSFit fit_ps_cv(const Workspace& ws, Target target, const CVResult& cv, const optim::SolverOptions& opts = {});
ORFit fit_or_cv(const Workspace& ws, Target target, Link link, const CVResult& cv, const PSFit* ps,
                const optim::SolverOptions& opts = {});

// --- diagnostics --------------------------------------------------------

// Standardized calibration difference of column h under the fit's weights:
// [sum w h / sum w - mean(h)] / sd(h), w the arm's inverse-probability weights.
double std_cal_diff(const PSFit& ps, const Eigen::VectorXd& h, const Eigen::VectorXd& t);

}  // namespace cste::nuisance
