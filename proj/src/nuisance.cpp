#include "cste/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "cste/error.hpp"

namespace cste::nuisance {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double expit(double eta) {
    if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
    const double e = std::exp(eta);
    return e / (1.0 + e);
}

void standardize(MatrixXd& x, VectorXd& mean, VectorXd& sd) {
    const Index n = x.rows();
    mean = VectorXd::Zero(x.cols());
    sd = VectorXd::Ones(x.cols());
    const double dn = static_cast<double>(n);
    for (Index j = 1; j < x.cols(); ++j) {
        const double m = x.col(j).sum() / dn;
        const double s = std::sqrt((x.col(j).array() - m).square().sum() / dn);
        if (!(s > 1e-12 * std::max(1.0, std::fabs(m)))) continue;
        mean[j] = m;
        sd[j] = s;
        x.col(j) = (x.col(j).array() - m) / s;
    }
}

void require_both_arms(const VectorXd& t) {
    const Index n1 = static_cast<Index>(t.sum());
    if (n1 == 0 || n1 == t.size())
        throw DegenerateData("nuisance", "both treatment arms must be present (treated count " +
                                             std::to_string(n1) + " of " + std::to_string(t.size()) + ")");
}

PSFit make_ps(const Workspace& ws, optim::FitResult fit, Arm arm, double lambda, PsMethod method) {
    PSFit ps;
    ps.gamma = fit.coef;
    ps.eta = ws.f * ps.gamma;
    ps.arm = arm;
    ps.lambda = lambda;
    ps.method = method;
    ps.fitted_pi.resize(ps.eta.size());
    for (Index i = 0; i < ps.eta.size(); ++i) {
        double p = expit(ps.eta[i]);
        if (p < kPiFloor || p > 1.0 - kPiFloor) {
            p = std::clamp(p, kPiFloor, 1.0 - kPiFloor);
            ps.clamped = true;
        }
        ps.fitted_pi[i] = p;
    }
    ps.fit = std::move(fit);
    return ps;
}

ORFit make_or(const Workspace& ws, optim::FitResult fit, Link link, Arm arm, double lambda, OrMethod method) {
    ORFit o;
    o.alpha = fit.coef;
    o.link = link;
    o.arm = arm;
    o.lambda = lambda;
    o.method = method;
    const VectorXd eta = ws.g * o.alpha;
    o.fitted_m = eta;
    if (link == Link::logistic)
        for (Index i = 0; i < eta.size(); ++i) o.fitted_m[i] = expit(eta[i]);
    o.fit = std::move(fit);
    return o;
}

bool is_ps(Target t) {
    return t == Target::ps_rcal || t == Target::ps_rcal_untreated || t == Target::ps_rml;
}

bool is_rwl(Target t) { return t == Target::or_rwl || t == Target::or_rwl_untreated; }

Arm target_arm(Target t) {
    return (t == Target::ps_rcal_untreated || t == Target::or_rwl_untreated || t == Target::or_rml_untreated)
               ? Arm::untreated
               : Arm::treated;
}

}  // namespace

const char* to_string(PsMethod m) noexcept { return m == PsMethod::rcal ? "rcal" : "rml"; }
const char* to_string(OrMethod m) noexcept { return m == OrMethod::rwl ? "rwl" : "rml"; }

const char* to_string(Target t) noexcept {
    switch (t) {
        case Target::ps_rcal: return "ps_rcal";
        case Target::ps_rcal_untreated: return "ps_rcal_untreated";
        case Target::or_rwl: return "or_rwl";
        case Target::or_rwl_untreated: return "or_rwl_untreated";
        case Target::ps_rml: return "ps_rml";
        case Target::or_rml: return "or_rml";
        case Target::or_rml_untreated: return "or_rml_untreated";
    }
    return "unknown";
}

double PSFit::ipw(Index i, double t) const {
    const double p = fitted_pi[i];
    return arm == Arm::treated ? t / p : (1.0 - t) / (1.0 - p);
}

Workspace prepare(const Dataset& data, const design::RegressorPlan& plan) {
    data.validate();
    if (data.num_v() != plan.num_v)
        throw ArgumentError("nuisance.plan_mismatch", "data has " + std::to_string(data.num_v()) +
                                                          " V columns, plan expects " + std::to_string(plan.num_v));
    Workspace ws;
    ws.plan = plan;
    ws.y = data.y;
    ws.t = data.t;
    ws.f = design::materialize(plan.f_columns, data.z, data.v, plan.basis);
    ws.g = design::materialize(plan.g_columns, data.z, data.v, plan.basis);
    standardize(ws.f, ws.f_mean, ws.f_sd);
    standardize(ws.g, ws.g_mean, ws.g_sd);
    return ws;
}

VectorXd rwl_weights(const PSFit& ps) {
    if (ps.method != PsMethod::rcal)
        throw ArgumentError("nuisance.bad_ps", "weighted likelihood fits need a calibrated propensity fit");
    VectorXd w(ps.eta.size());
    const double s = ps.arm == Arm::treated ? -1.0 : 1.0;
    for (Index i = 0; i < w.size(); ++i) w[i] = std::exp(s * ps.eta[i]);
    return w;
}

optim::PenalizedProblem problem_for(const Workspace& ws, Target target, Link link, const PSFit* ps) {
    switch (target) {
        case Target::ps_rcal: return optim::make_calibration(ws.f, ws.t, Arm::treated);
        case Target::ps_rcal_untreated: return optim::make_calibration(ws.f, ws.t, Arm::untreated);
        case Target::ps_rml: return optim::make_ml_logistic(ws.f, ws.t);
        case Target::or_rwl:
        case Target::or_rwl_untreated: {
            if (!ps) throw ArgumentError("nuisance.missing_ps", "weighted likelihood target needs a propensity fit");
            if (ps->arm != target_arm(target))
                throw ArgumentError("nuisance.bad_ps", "propensity fit arm does not match the outcome arm");
            return optim::make_weighted_glm(ws.g, ws.y, ws.t, rwl_weights(*ps), link, target_arm(target));
        }
        case Target::or_rml:
        case Target::or_rml_untreated:
            return optim::make_ml_glm(ws.g, ws.y, ws.t, link, target_arm(target));
    }
    throw ArgumentError("nuisance.bad_target", "unknown target");
}

PSFit fit_ps_rcal(const Workspace& ws, double lambda, const optim::SolverOptions& opts) {
    require_both_arms(ws.t);
    auto fit = optim::fit_lasso(problem_for(ws, Target::ps_rcal, Link::identity), lambda, {}, opts);
    return make_ps(ws, std::move(fit), Arm::treated, lambda, PsMethod::rcal);
}

PSFit fit_ps_rcal_untreated(const Workspace& ws, double lambda, const optim::SolverOptions& opts) {
    require_both_arms(ws.t);
    auto fit = optim::fit_lasso(problem_for(ws, Target::ps_rcal_untreated, Link::identity), lambda, {}, opts);
    return make_ps(ws, std::move(fit), Arm::untreated, lambda, PsMethod::rcal);
}

PSFit fit_ps_rml(const Workspace& ws, double lambda, const optim::SolverOptions& opts) {
    require_both_arms(ws.t);
    auto fit = optim::fit_lasso(problem_for(ws, Target::ps_rml, Link::logistic), lambda, {}, opts);
    return make_ps(ws, std::move(fit), Arm::treated, lambda, PsMethod::rml);
}

ORFit fit_or_rwl(const Workspace& ws, const PSFit& ps, double lambda, Link link, const optim::SolverOptions& opts) {
    require_both_arms(ws.t);
    auto fit = optim::fit_lasso(problem_for(ws, Target::or_rwl, link, &ps), lambda, {}, opts);
    return make_or(ws, std::move(fit), link, Arm::treated, lambda, OrMethod::rwl);
}

ORFit fit_or_rwl_untreated(const Workspace& ws, const PSFit& ps0, double lambda, Link link,
                           const optim::SolverOptions& opts) {
    require_both_arms(ws.t);
    auto fit = optim::fit_lasso(problem_for(ws, Target::or_rwl_untreated, link, &ps0), lambda, {}, opts);
    return make_or(ws, std::move(fit), link, Arm::untreated, lambda, OrMethod::rwl);
}

ORFit fit_or_rml(const Workspace& ws, double lambda, Link link, Arm arm, const optim::SolverOptions& opts) {
    require_both_arms(ws.t);
    const Target target = arm == Arm::treated ? Target::or_rml : Target::or_rml_untreated;
    auto fit = optim::fit_lasso(problem_for(ws, target, link), lambda, {}, opts);
    return make_or(ws, std::move(fit), link, arm, lambda, OrMethod::rml);
}

PSFit fit_ps_rcal(const Dataset& data, const design::RegressorPlan& plan, double lambda) {
    return fit_ps_rcal(prepare(data, plan), lambda);
}
PSFit fit_ps_rcal_untreated(const Dataset& data, const design::RegressorPlan& plan, double lambda) {
    return fit_ps_rcal_untreated(prepare(data, plan), lambda);
}
PSFit fit_ps_rml(const Dataset& data, const design::RegressorPlan& plan, double lambda) {
    return fit_ps_rml(prepare(data, plan), lambda);
}
ORFit fit_or_rwl(const Dataset& data, const design::RegressorPlan& plan, const PSFit& ps, double lambda, Link link) {
    return fit_or_rwl(prepare(data, plan), ps, lambda, link);
}
ORFit fit_or_rwl_untreated(const Dataset& data, const design::RegressorPlan& plan, const PSFit& ps0, double lambda,
                           Link link) {
    return fit_or_rwl_untreated(prepare(data, plan), ps0, lambda, link);
}
ORFit fit_or_rml(const Dataset& data, const design::RegressorPlan& plan, double lambda, Link link, Arm arm) {
    return fit_or_rml(prepare(data, plan), lambda, link, arm);
}

// ---------------------------------------------------------------------------

std::vector<int> stratified_folds(const VectorXd& t, int folds, std::uint64_t seed) {
    if (folds < 2) throw ArgumentError("nuisance.bad_folds", "at least two folds are required");
    std::vector<int> treated, control;
    for (Index i = 0; i < t.size(); ++i) (t[i] == 1.0 ? treated : control).push_back(static_cast<int>(i));
    std::mt19937_64 rng(seed);
    std::shuffle(treated.begin(), treated.end(), rng);
    std::shuffle(control.begin(), control.end(), rng);
    std::vector<int> fold_of(static_cast<std::size_t>(t.size()), 0);
    int k = 0;
    for (int i : treated) {
        fold_of[static_cast<std::size_t>(i)] = k;
        k = (k + 1) % folds;
    }
    for (int i : control) {
        fold_of[static_cast<std::size_t>(i)] = k;
        k = (k + 1) % folds;
    }
    return fold_of;
}

namespace {

bool folds_have_both_arms(const VectorXd& t, const std::vector<int>& fold_of, int folds) {
    std::vector<int> n1(static_cast<std::size_t>(folds), 0), n0(static_cast<std::size_t>(folds), 0);
    for (Index i = 0; i < t.size(); ++i) {
        const auto k = static_cast<std::size_t>(fold_of[static_cast<std::size_t>(i)]);
        (t[i] == 1.0 ? n1 : n0)[k]++;
    }
    for (int k = 0; k < folds; ++k)
        if (n1[static_cast<std::size_t>(k)] == 0 || n0[static_cast<std::size_t>(k)] == 0) return false;
    return true;
}

struct FoldProblem {
    optim::PenalizedProblem train;
    optim::PenalizedProblem test;
    Eigen::VectorXd init;
    bool dead = false;
};

}  // namespace

CVResult cv_lambda(const Workspace& ws, Target target, Link link, const CVOptions& opts, double ps_lambda) {
    require_both_arms(ws.t);
    if (opts.folds < 2) throw ArgumentError("nuisance.bad_folds", "at least two folds are required");
    CVResult cv;

    // fold assignment, refolded when a fold misses an arm
    std::uint64_t seed = opts.seed;
    for (cv.attempts = 1;; ++cv.attempts) {
        cv.fold_of = stratified_folds(ws.t, opts.folds, seed);
        if (folds_have_both_arms(ws.t, cv.fold_of, opts.folds)) break;
        if (cv.attempts >= 10)
            throw DegenerateData("nuisance", "could not form " + std::to_string(opts.folds) +
                                                 " folds containing both arms");
        seed = seed * 6364136223846793005ULL + 1442695040888963407ULL;
    }
    cv.seed = seed;

    // full-sample problem defines the grid
    const Target ps_target = target_arm(target) == Arm::treated ? Target::ps_rcal : Target::ps_rcal_untreated;
    PSFit full_ps;
    if (is_rwl(target)) {
        auto fit = optim::fit_lasso(problem_for(ws, ps_target, Link::identity), ps_lambda, {}, opts.solver);
        full_ps = make_ps(ws, std::move(fit), target_arm(target), ps_lambda, PsMethod::rcal);
    }
    const optim::PenalizedProblem full = problem_for(ws, target, link, is_rwl(target) ? &full_ps : nullptr);
    cv.lambda_grid = optim::lambda_grid(full, opts.grid_size, opts.ratio, opts.solver);

    // per-fold train/test problems
    const optim::PenalizedProblem ps_full_problem = problem_for(ws, ps_target, Link::identity);
    std::vector<FoldProblem> fp(static_cast<std::size_t>(opts.folds));
    for (int k = 0; k < opts.folds; ++k) {
        std::vector<int> train, test;
        for (Index i = 0; i < ws.rows(); ++i)
            (cv.fold_of[static_cast<std::size_t>(i)] == k ? test : train).push_back(static_cast<int>(i));
        if (is_rwl(target)) {
            const auto ps_fit = optim::fit_lasso(optim::subset_rows(ps_full_problem, train), ps_lambda, {}, opts.solver);
            const double s = target_arm(target) == Arm::treated ? -1.0 : 1.0;
            const VectorXd eta = ws.f * ps_fit.coef;
            optim::PenalizedProblem weighted = full;
            for (Index i = 0; i < ws.rows(); ++i) weighted.weights[i] = std::exp(s * eta[i]);
            fp[static_cast<std::size_t>(k)].train = optim::subset_rows(weighted, train);
            fp[static_cast<std::size_t>(k)].test = optim::subset_rows(weighted, test);
        } else {
            fp[static_cast<std::size_t>(k)].train = optim::subset_rows(full, train);
            fp[static_cast<std::size_t>(k)].test = optim::subset_rows(full, test);
        }
    }

    const auto grid_n = static_cast<Index>(cv.lambda_grid.size());
    cv.fold_losses = MatrixXd::Constant(opts.folds, grid_n, kNaN);
    cv.mean_loss.assign(static_cast<std::size_t>(grid_n), kNaN);
    cv.se_loss.assign(static_cast<std::size_t>(grid_n), kNaN);

    int best = -1;
    double best_loss = std::numeric_limits<double>::infinity();
    for (Index g = 0; g < grid_n; ++g) {
        const double lambda = cv.lambda_grid[static_cast<std::size_t>(g)];
        bool all = true;
        for (int k = 0; k < opts.folds; ++k) {
            FoldProblem& f = fp[static_cast<std::size_t>(k)];
            if (f.dead) {
                all = false;
                continue;
            }
            try {
                const auto fit = optim::fit_lasso(f.train, lambda, f.init, opts.solver);
                const double loss = optim::eval_loss(f.test, fit.coef);
                f.init = fit.coef;
                cv.fold_losses(k, g) = loss;
            } catch (const NumericError&) {
                f.dead = true;
                all = false;
            }
        }
        if (!all) break;
        const VectorXd col = cv.fold_losses.col(g);
        const double mean = col.mean();
        const double var = (col.array() - mean).square().sum() / std::max(1.0, double(opts.folds - 1));
        cv.mean_loss[static_cast<std::size_t>(g)] = mean;
        cv.se_loss[static_cast<std::size_t>(g)] = std::sqrt(var / double(opts.folds));
        if (mean < best_loss) {
            best_loss = mean;
            best = static_cast<int>(g);
        }
        if (opts.patience > 0 && g - best >= opts.patience) break;
    }
    if (best < 0)
        throw NumericError("nuisance.cv_failed",
                           std::string("no lambda on the grid could be fitted on every fold for ") + to_string(target));
    cv.chosen_index = best;
    cv.chosen_lambda = cv.lambda_grid[static_cast<std::size_t>(best)];
    const double bound = best_loss + cv.se_loss[static_cast<std::size_t>(best)];
    cv.one_se_lambda = cv.chosen_lambda;
    for (int g = 0; g <= best; ++g) {
        const double m = cv.mean_loss[static_cast<std::size_t>(g)];
        if (std::isfinite(m) && m <= bound) {
            cv.one_se_lambda = cv.lambda_grid[static_cast<std::size_t>(g)];
            break;
        }
    }
    return cv;
}

namespace {

optim::FitResult walk_grid(const optim::PenalizedProblem& problem, const CVResult& cv,
                           const optim::SolverOptions& opts) {
    std::vector<double> path(cv.lambda_grid.begin(), cv.lambda_grid.begin() + cv.chosen_index + 1);
    auto fits = optim::fit_path(problem, path, opts);
    return std::move(fits.back());
}

}  // namespace

PSFit fit_ps_cv(const Workspace& ws, Target target, const CVResult& cv, const optim::SolverOptions& opts) {
    if (!is_ps(target)) throw ArgumentError("nuisance.bad_target", "not a propensity target");
    require_both_arms(ws.t);
    const Link link = target == Target::ps_rml ? Link::logistic : Link::identity;
    auto fit = walk_grid(problem_for(ws, target, link), cv, opts);
    return make_ps(ws, std::move(fit), target_arm(target), cv.chosen_lambda,
                   target == Target::ps_rml ? PsMethod::rml : PsMethod::rcal);
}

ORFit fit_or_cv(const Workspace& ws, Target target, Link link, const CVResult& cv, const PSFit* ps,
                const optim::SolverOptions& opts) {
    if (is_ps(target)) throw ArgumentError("nuisance.bad_target", "not an outcome target");
    require_both_arms(ws.t);
    auto fit = walk_grid(problem_for(ws, target, link, ps), cv, opts);
    return make_or(ws, std::move(fit), link, target_arm(target), cv.chosen_lambda,
                   is_rwl(target) ? OrMethod::rwl : OrMethod::rml);
}

double std_cal_diff(const PSFit& ps, const VectorXd& h, const VectorXd& t) {
    const Index n = h.size();
    if (t.size() != n || ps.fitted_pi.size() != n)
        throw ArgumentError("nuisance.dimension_mismatch", "column, treatment and fit lengths differ");
    if (!h.allFinite()) throw DataError("nuisance.non_finite", "diagnostic column has non-finite values");
    const double mean = h.mean();
    const double sd = std::sqrt((h.array() - mean).square().sum() / double(n));
    if (!(sd > 0.0)) throw NumericError("nuisance.undefined_diagnostic", "diagnostic column has zero variance");
    double sw = 0.0, swh = 0.0;
    for (Index i = 0; i < n; ++i) {
        const double w = ps.ipw(i, t[i]);
        sw += w;
        swh += w * h[i];
    }
    return (swh / sw - mean) / sd;
}

}  // namespace cste::nuisance
