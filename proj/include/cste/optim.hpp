#pragma once

// L1-penalized convex losses shared by all nuisance fits, and a proximal
// Newton / coordinate-descent solver for them.
//
// All losses are sample averages  n^{-1} sum_i l_i(eta_i)  of a per-row term
// in the linear predictor eta_i = coef' x_i:
//
//   cal_logistic_treated    T e^{-eta} + (1-T) eta
//   cal_logistic_untreated  (1-T) e^{eta} - T eta
//   wglm                    a w (-y eta + Psi(eta))     a = T or 1-T by arm
//   ml_logistic             -T eta + log(1 + e^{eta})
//   ml_glm                  a (-y eta + Psi(eta))
//
// Psi is the antiderivative of the inverse link (eta^2/2 for identity,
// log(1+e^eta) for logistic).

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <vector>

namespace cste::optim {

enum class LossKind { cal_logistic_treated, cal_logistic_untreated, wglm, ml_logistic, ml_glm };
enum class Link { identity, logistic };
enum class Arm { treated, untreated };

const char* to_string(LossKind k) noexcept;
const char* to_string(Link l) noexcept;

struct PenalizedProblem {
    LossKind loss = LossKind::cal_logistic_treated;
    Link link = Link::identity;  // wglm, ml_glm
    Arm arm = Arm::treated;      // wglm, ml_glm
    Eigen::MatrixXd design;      // n x (d+1); column 0 is the constant 1
    Eigen::VectorXd response;    // outcome; unused by propensity losses
    Eigen::VectorXd treatment;   // 0/1
    Eigen::VectorXd weights;     // wglm only
    std::vector<std::uint8_t> penalty_mask;  // 1 = penalized; [0] must be 0

    Eigen::Index rows() const noexcept { return design.rows(); }
    Eigen::Index width() const noexcept { return design.cols(); }

    // Throws ArgumentError / DataError on any violated invariant.
    void validate() const;
};

PenalizedProblem make_calibration(Eigen::MatrixXd design, Eigen::VectorXd treatment, Arm arm);
PenalizedProblem make_weighted_glm(Eigen::MatrixXd design, Eigen::VectorXd response,
                                   Eigen::VectorXd treatment, Eigen::VectorXd weights, Link link,
                                   Arm arm);
PenalizedProblem make_ml_logistic(Eigen::MatrixXd design, Eigen::VectorXd treatment);
PenalizedProblem make_ml_glm(Eigen::MatrixXd design, Eigen::VectorXd response,
                             Eigen::VectorXd treatment, Link link, Arm arm);

// Returns a problem restricted to the given rows (CV folds).
PenalizedProblem subset_rows(const PenalizedProblem& problem, const std::vector<int>& rows);

struct SolverOptions {
    int max_iter = 10000;            // outer (Newton) iterations
    double kkt_tol = 1e-9;           // max KKT violation on the original scale
    double curvature_cap = 1e8;      // cap on per-row curvature weights
    double exp_clamp = 35.0;         // |eta| clamp used inside curvature weights
    double divergence_bound = 50.0;  // |eta| beyond this is separation (exp-type losses)
    int max_halvings = 60;
    int max_inner_sweeps = 100000;
    bool standardize = true;
    bool record_trace = true;
};

struct FitResult {
    Eigen::VectorXd coef;
    double objective = 0.0;
    int iterations = 0;
    bool converged = false;
    Eigen::VectorXd kkt_residuals;  // -grad of the unpenalized loss at coef
    double max_kkt_violation = 0.0;
    std::vector<int> active_set;    // penalized columns with nonzero coef
    std::vector<int> dropped_columns;  // zero-variance columns, coef fixed at 0
    bool clamp_touched = false;     // some |eta| exceeded exp_clamp at the solution
    std::vector<double> objective_trace;  // penalized objective after each accepted step
};

// Sample-average loss without penalty. Throws NumericOverflow when exp()
// overflows, ArgumentError on dimension mismatch.
double eval_loss(const PenalizedProblem& problem, const Eigen::VectorXd& coef);
Eigen::VectorXd eval_gradient(const PenalizedProblem& problem, const Eigen::VectorXd& coef);

// Penalized objective: eval_loss + lambda * sum_{penalized j} |coef_j|.
double eval_objective(const PenalizedProblem& problem, const Eigen::VectorXd& coef, double lambda);

inline double soft_threshold(double x, double t) noexcept {
    if (x > t) return x - t;
    if (x < -t) return x + t;
    return 0.0;
}

// Per-coordinate KKT residuals -grad L(coef). At a solution these are
// lambda*sign(coef_j) for active penalized j, inside [-lambda, lambda] for
// inactive penalized j, and 0 for unpenalized j.
Eigen::VectorXd kkt_report(const PenalizedProblem& problem, const Eigen::VectorXd& coef,
                           double lambda);

// Largest violation of the KKT conditions above.
double kkt_violation(const PenalizedProblem& problem, const Eigen::VectorXd& coef, double lambda);

FitResult fit_lasso(const PenalizedProblem& problem, double lambda,
                    const Eigen::VectorXd& init = Eigen::VectorXd(),
                    const SolverOptions& opts = {});

// Fits along a decreasing lambda sequence with warm starts.
std::vector<FitResult> fit_path(const PenalizedProblem& problem, const std::vector<double>& lambdas,
                                const SolverOptions& opts = {});

// Smallest lambda with every penalized coefficient at zero.
double lambda_max(const PenalizedProblem& problem, const SolverOptions& opts = {});

// Geometric grid from lambda_max down to ratio * lambda_max.
std::vector<double> lambda_grid(const PenalizedProblem& problem, int grid_size = 50,
                                double ratio = 1e-3, const SolverOptions& opts = {});

}  // namespace cste::optim
