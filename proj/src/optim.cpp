#include "cste/optim.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include "cste/error.hpp"
#include "cste/simd.hpp"

namespace cste::optim {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

const char* to_string(LossKind k) noexcept {
    switch (k) {
        case LossKind::cal_logistic_treated: return "cal_logistic_treated";
        case LossKind::cal_logistic_untreated: return "cal_logistic_untreated";
        case LossKind::wglm: return "wglm";
        case LossKind::ml_logistic: return "ml_logistic";
        case LossKind::ml_glm: return "ml_glm";
    }
    return "unknown";
}

const char* to_string(Link l) noexcept { return l == Link::identity ? "identity" : "logistic"; }

namespace {

constexpr double kExpOverflow = 709.0;

std::span<const double> col(const MatrixXd& x, Index j) {
    return {x.data() + j * x.rows(), static_cast<std::size_t>(x.rows())};
}

std::span<const double> cspan(const VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
std::span<double> mspan(VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

inline double log1pexp(double eta) {
    return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

inline double expit(double eta) {
    if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
    const double e = std::exp(eta);
    return e / (1.0 + e);
}

// Per-row loss written in one of two families:
//   calibration:  a e^{s eta} - s b eta         (s = -1 treated, +1 untreated)
//   likelihood:   a (-b eta + Psi(eta))
struct RowTerms {
    bool calibration = true;
    double sign = -1.0;
    Link link = Link::identity;
    VectorXd a;
    VectorXd b;

    bool exp_type() const noexcept { return calibration || link == Link::logistic; }
};

RowTerms make_terms(const PenalizedProblem& p) {
    RowTerms rt;
    const Index n = p.rows();
    auto arm_indicator = [&](Arm arm) {
        VectorXd ind(n);
        for (Index i = 0; i < n; ++i) ind[i] = arm == Arm::treated ? p.treatment[i] : 1.0 - p.treatment[i];
        return ind;
    };
    switch (p.loss) {
        case LossKind::cal_logistic_treated:
            rt.calibration = true;
            rt.sign = -1.0;
            rt.a = p.treatment;
            rt.b = VectorXd::Ones(n) - p.treatment;
            break;
        case LossKind::cal_logistic_untreated:
            rt.calibration = true;
            rt.sign = 1.0;
            rt.a = VectorXd::Ones(n) - p.treatment;
            rt.b = p.treatment;
            break;
        case LossKind::wglm:
            rt.calibration = false;
            rt.link = p.link;
            rt.a = arm_indicator(p.arm).cwiseProduct(p.weights);
            rt.b = p.response;
            break;
        case LossKind::ml_glm:
            rt.calibration = false;
            rt.link = p.link;
            rt.a = arm_indicator(p.arm);
            rt.b = p.response;
            break;
        case LossKind::ml_logistic:
            rt.calibration = false;
            rt.link = Link::logistic;
            rt.a = VectorXd::Ones(n);
            rt.b = p.treatment;
            break;
    }
    return rt;
}

// Sum over rows of the loss. Returns +inf on exp overflow and stores the
// offending predictor in *bad.
double loss_sum(const RowTerms& rt, const VectorXd& eta, double* bad = nullptr) {
    const Index n = eta.size();
    double s = 0.0;
    if (rt.calibration) {
        for (Index i = 0; i < n; ++i) {
            const double se = rt.sign * eta[i];
            if (rt.a[i] != 0.0) {
                if (se > kExpOverflow || !std::isfinite(se)) {
                    if (bad) *bad = eta[i];
                    return std::numeric_limits<double>::infinity();
                }
                s += rt.a[i] * std::exp(se);
            }
            s -= rt.sign * rt.b[i] * eta[i];
        }
    } else if (rt.link == Link::identity) {
        for (Index i = 0; i < n; ++i) {
            if (rt.a[i] == 0.0) continue;
            if (!std::isfinite(eta[i])) {
                if (bad) *bad = eta[i];
                return std::numeric_limits<double>::infinity();
            }
            s += rt.a[i] * (-rt.b[i] * eta[i] + 0.5 * eta[i] * eta[i]);
        }
    } else {
        for (Index i = 0; i < n; ++i) {
            if (rt.a[i] == 0.0) continue;
            if (!std::isfinite(eta[i])) {
                if (bad) *bad = eta[i];
                return std::numeric_limits<double>::infinity();
            }
            s += rt.a[i] * (-rt.b[i] * eta[i] + log1pexp(eta[i]));
        }
    }
    return s;
}

// First derivative u and curvature weight h of each row term. Curvature uses
// the clamped predictor and is capped; u is exact.
void row_derivatives(const RowTerms& rt, const VectorXd& eta, VectorXd& u, VectorXd& h,
                     double clamp, double cap) {
    const Index n = eta.size();
    if (rt.calibration) {
        for (Index i = 0; i < n; ++i) {
            double e = 0.0;
            double ec = 0.0;
            if (rt.a[i] != 0.0) {
                e = rt.a[i] * std::exp(rt.sign * eta[i]);
                ec = rt.a[i] * std::exp(std::clamp(rt.sign * eta[i], -clamp, clamp));
            }
            u[i] = rt.sign * (e - rt.b[i]);
            h[i] = std::min(ec, cap);
        }
    } else if (rt.link == Link::identity) {
        for (Index i = 0; i < n; ++i) {
            u[i] = rt.a[i] * (eta[i] - rt.b[i]);
            h[i] = std::min(rt.a[i], cap);
        }
    } else {
        for (Index i = 0; i < n; ++i) {
            const double pr = expit(eta[i]);
            const double pc = expit(std::clamp(eta[i], -clamp, clamp));
            u[i] = rt.a[i] * (pr - rt.b[i]);
            h[i] = std::min(rt.a[i] * pc * (1.0 - pc), cap);
        }
    }
}

void check_coef(const PenalizedProblem& p, const VectorXd& coef) {
    if (coef.size() != p.width())
        throw ArgumentError("optim.dimension_mismatch",
                            "coefficient length " + std::to_string(coef.size()) +
                                " does not match design width " + std::to_string(p.width()));
}

double penalty(const PenalizedProblem& p, const VectorXd& coef, double lambda) {
    double s = 0.0;
    for (Index j = 0; j < coef.size(); ++j)
        if (p.penalty_mask[j] && coef[j] != 0.0) s += std::fabs(coef[j]);
    return s == 0.0 ? 0.0 : lambda * s;
}

double violation_of(const VectorXd& grad, const VectorXd& coef, const std::vector<std::uint8_t>& mask,
                    double lambda) {
    double v = 0.0;
    for (Index j = 0; j < grad.size(); ++j) {
        double e;
        if (!mask[j]) {
            e = std::fabs(grad[j]);
        } else if (coef[j] != 0.0) {
            e = std::fabs(grad[j] + lambda * (coef[j] > 0 ? 1.0 : -1.0));
        } else {
            e = std::max(std::fabs(grad[j]) - lambda, 0.0);
        }
        v = std::max(v, e);
    }
    return v;
}

}  // namespace

void PenalizedProblem::validate() const {
    const Index n = design.rows();
    const Index m = design.cols();
    if (n == 0 || m == 0) throw ArgumentError("optim.empty_problem", "design matrix is empty");
    if (treatment.size() != n)
        throw ArgumentError("optim.dimension_mismatch", "treatment length does not match design rows");
    if (static_cast<Index>(penalty_mask.size()) != m)
        throw ArgumentError("optim.dimension_mismatch", "penalty mask length does not match design width");
    if (penalty_mask[0] != 0)
        throw ArgumentError("optim.penalized_intercept", "column 0 (intercept) must be unpenalized");
    for (Index i = 0; i < n; ++i) {
        if (design(i, 0) != 1.0)
            throw ArgumentError("optim.bad_intercept", "design column 0 must be identically 1");
        if (treatment[i] != 0.0 && treatment[i] != 1.0)
            throw DataError("optim.non_binary_treatment", "treatment entries must be 0 or 1");
    }
    if (!design.allFinite()) throw DataError("optim.non_finite_design", "design has non-finite entries");
    const bool glm = loss == LossKind::wglm || loss == LossKind::ml_glm;
    if (glm) {
        if (response.size() != n)
            throw ArgumentError("optim.dimension_mismatch", "response length does not match design rows");
        if (!response.allFinite())
            throw DataError("optim.non_finite_response", "response has non-finite entries");
        if (link == Link::logistic)
            for (Index i = 0; i < n; ++i)
                if (response[i] < 0.0 || response[i] > 1.0)
                    throw ArgumentError("optim.link_mismatch",
                                        "logistic link requires outcomes in [0, 1]");
    }
    if (loss == LossKind::wglm) {
        if (weights.size() != n)
            throw ArgumentError("optim.dimension_mismatch", "weights length does not match design rows");
        for (Index i = 0; i < n; ++i)
            if (!std::isfinite(weights[i]) || weights[i] < 0.0)
                throw DataError("optim.bad_weights", "weights must be finite and nonnegative");
    }
}

namespace {
std::vector<std::uint8_t> default_mask(Index m) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(m), 1);
    if (m > 0) mask[0] = 0;
    return mask;
}
}  // namespace

PenalizedProblem make_calibration(MatrixXd design, VectorXd treatment, Arm arm) {
    PenalizedProblem p;
    p.loss = arm == Arm::treated ? LossKind::cal_logistic_treated : LossKind::cal_logistic_untreated;
    p.penalty_mask = default_mask(design.cols());
    p.design = std::move(design);
    p.treatment = std::move(treatment);
    return p;
}

PenalizedProblem make_weighted_glm(MatrixXd design, VectorXd response, VectorXd treatment,
                                   VectorXd weights, Link link, Arm arm) {
    PenalizedProblem p;
    p.loss = LossKind::wglm;
    p.link = link;
    p.arm = arm;
    p.penalty_mask = default_mask(design.cols());
    p.design = std::move(design);
    p.response = std::move(response);
    p.treatment = std::move(treatment);
    p.weights = std::move(weights);
    return p;
}

PenalizedProblem make_ml_logistic(MatrixXd design, VectorXd treatment) {
    PenalizedProblem p;
    p.loss = LossKind::ml_logistic;
    p.link = Link::logistic;
    p.penalty_mask = default_mask(design.cols());
    p.design = std::move(design);
    p.treatment = std::move(treatment);
    return p;
}

PenalizedProblem make_ml_glm(MatrixXd design, VectorXd response, VectorXd treatment, Link link,
                             Arm arm) {
    PenalizedProblem p;
    p.loss = LossKind::ml_glm;
    p.link = link;
    p.arm = arm;
    p.penalty_mask = default_mask(design.cols());
    p.design = std::move(design);
    p.response = std::move(response);
    p.treatment = std::move(treatment);
    return p;
}

PenalizedProblem subset_rows(const PenalizedProblem& problem, const std::vector<int>& rows) {
    PenalizedProblem s;
    s.loss = problem.loss;
    s.link = problem.link;
    s.arm = problem.arm;
    s.penalty_mask = problem.penalty_mask;
    const Index k = static_cast<Index>(rows.size());
    s.design.resize(k, problem.width());
    s.treatment.resize(k);
    if (problem.response.size()) s.response.resize(k);
    if (problem.weights.size()) s.weights.resize(k);
    for (Index r = 0; r < k; ++r) {
        const Index i = rows[static_cast<std::size_t>(r)];
        s.design.row(r) = problem.design.row(i);
        s.treatment[r] = problem.treatment[i];
        if (problem.response.size()) s.response[r] = problem.response[i];
        if (problem.weights.size()) s.weights[r] = problem.weights[i];
    }
    return s;
}

double eval_loss(const PenalizedProblem& problem, const VectorXd& coef) {
    check_coef(problem, coef);
    const RowTerms rt = make_terms(problem);
    const VectorXd eta = problem.design * coef;
    double bad = 0.0;
    const double s = loss_sum(rt, eta, &bad);
    if (!std::isfinite(s)) throw NumericOverflow("optim", bad);
    return s / static_cast<double>(problem.rows());
}

VectorXd eval_gradient(const PenalizedProblem& problem, const VectorXd& coef) {
    check_coef(problem, coef);
    const RowTerms rt = make_terms(problem);
    const VectorXd eta = problem.design * coef;
    double bad = 0.0;
    if (!std::isfinite(loss_sum(rt, eta, &bad))) throw NumericOverflow("optim", bad);
    VectorXd u(eta.size()), h(eta.size());
    row_derivatives(rt, eta, u, h, std::numeric_limits<double>::infinity(),
                    std::numeric_limits<double>::infinity());
    return problem.design.transpose() * u / static_cast<double>(problem.rows());
}

double eval_objective(const PenalizedProblem& problem, const VectorXd& coef, double lambda) {
    return eval_loss(problem, coef) + penalty(problem, coef, lambda);
}

VectorXd kkt_report(const PenalizedProblem& problem, const VectorXd& coef, double /*lambda*/) {
    if (!coef.allFinite()) throw ArgumentError("optim.non_finite_coef", "coefficients must be finite");
    return -eval_gradient(problem, coef);
}

double kkt_violation(const PenalizedProblem& problem, const VectorXd& coef, double lambda) {
    return violation_of(eval_gradient(problem, coef), coef, problem.penalty_mask, lambda);
}

namespace {

// Proximal Newton with a coordinate-descent inner solver, working on a
// centred and scaled copy of the design. The penalty factor of each scaled
// column is 1/sd so the objective is the one posed on the original columns.
// Rows that contribute nothing to a likelihood-type loss (a_i = 0) are left
// out of the working copy.
class Solver {
public:
    Solver(const PenalizedProblem& p, const SolverOptions& opts)
        : p_(p), opts_(opts), m_(p.width()), dn_(static_cast<double>(p.rows())) {
        const RowTerms full = make_terms(p);
        for (Index i = 0; i < p.rows(); ++i)
            if (full.calibration || full.a[i] != 0.0) rows_.push_back(i);
        n_ = static_cast<Index>(rows_.size());
        rt_.calibration = full.calibration;
        rt_.sign = full.sign;
        rt_.link = full.link;
        rt_.a.resize(n_);
        rt_.b.resize(n_);
        x_.resize(n_, m_);
        for (Index r = 0; r < n_; ++r) {
            const Index i = rows_[static_cast<std::size_t>(r)];
            rt_.a[r] = full.a[i];
            rt_.b[r] = full.b[i];
            x_.row(r) = p.design.row(i);
        }

        mu_ = VectorXd::Zero(m_);
        sd_ = VectorXd::Ones(m_);
        dropped_.assign(static_cast<std::size_t>(m_), 0);
        const double nu = std::max<double>(1.0, double(n_));
        for (Index j = 1; j < m_; ++j) {
            const double mean = n_ ? x_.col(j).sum() / nu : 0.0;
            const double var = n_ ? (x_.col(j).array() - mean).square().sum() / nu : 0.0;
            const double sd = std::sqrt(var);
            if (!(sd > 1e-12 * std::max(1.0, std::fabs(mean)))) {
                dropped_[static_cast<std::size_t>(j)] = 1;
                x_.col(j).setZero();
                sd_[j] = 0.0;
                continue;
            }
            if (opts.standardize) {
                mu_[j] = mean;
                sd_[j] = sd;
                x_.col(j) = (x_.col(j).array() - mean) / sd;
            }
        }
        pf_ = VectorXd::Zero(m_);
        for (Index j = 1; j < m_; ++j)
            if (p.penalty_mask[static_cast<std::size_t>(j)] && !dropped_[static_cast<std::size_t>(j)])
                pf_[j] = 1.0 / sd_[j];
    }

    FitResult run(double lambda, const VectorXd& init) {
        lambda_ = lambda;
        VectorXd b = to_scaled(init);
        VectorXd eta = x_ * b;
        VectorXd u(n_), h(n_), grad(m_);
        FitResult res;

        double bad = 0.0;
        double f = objective(b, eta, &bad);
        if (!std::isfinite(f)) throw NumericOverflow("optim", bad);
        if (opts_.record_trace) res.objective_trace.push_back(f);

        int stalls = 0;
        int iter = 0;
        bool converged = false;
        for (; iter < opts_.max_iter; ++iter) {
            row_derivatives(rt_, eta, u, h, opts_.exp_clamp, opts_.curvature_cap);
            for (Index j = 0; j < m_; ++j)
                grad[j] = dropped_[static_cast<std::size_t>(j)] ? 0.0 : simd::dot(col(x_, j), cspan(u)) / dn_;
            const double viol = original_violation(b, grad);
            if (viol <= opts_.kkt_tol) {
                converged = true;
                break;
            }
            const double inner_tol = std::max(0.1 * opts_.kkt_tol, 1e-3 * viol);
            VectorXd step = VectorXd::Zero(m_);
            VectorXd delta = VectorXd::Zero(n_);
            inner(b, eta, u, h, grad, inner_tol, step, delta);
            if (step.cwiseAbs().maxCoeff() == 0.0) break;

            double t = 1.0;
            bool accepted = false;
            VectorXd b_try, eta_try;
            double f_try = f;
            for (int k = 0; k < opts_.max_halvings; ++k, t *= 0.5) {
                b_try = b + t * step;
                eta_try = eta + t * delta;
                f_try = objective(b_try, eta_try, nullptr);
                if (f_try <= f + 1e-13 * std::fabs(f)) {
                    accepted = true;
                    break;
                }
            }
            if (!accepted) break;
            check_divergence(eta_try);
            const double decrease = f - f_try;
            b.swap(b_try);
            eta.swap(eta_try);
            f = f_try;
            if (opts_.record_trace) res.objective_trace.push_back(f);
            stalls = decrease <= 1e-15 * std::max(1.0, std::fabs(f)) ? stalls + 1 : 0;
            if (stalls >= 3) break;
        }

        res.coef = to_original(b);
        res.iterations = iter;
        res.converged = converged;
        res.objective = eval_loss(p_, res.coef) + penalty(p_, res.coef, lambda);
        res.kkt_residuals = kkt_report(p_, res.coef, lambda);
        res.max_kkt_violation = violation_of(-res.kkt_residuals, res.coef, p_.penalty_mask, lambda);
        for (Index j = 0; j < m_; ++j) {
            if (dropped_[static_cast<std::size_t>(j)]) res.dropped_columns.push_back(static_cast<int>(j));
            if (p_.penalty_mask[static_cast<std::size_t>(j)] && res.coef[j] != 0.0)
                res.active_set.push_back(static_cast<int>(j));
        }
        if (rt_.exp_type())
            for (Index i = 0; i < n_; ++i)
                if (rt_.a[i] != 0.0 && std::fabs(eta[i]) > opts_.exp_clamp) res.clamp_touched = true;
        return res;
    }

private:
    // An unbounded linear predictor signals separation: the calibration loss
    // is unbounded below along directions that vanish on the exp-term rows.
    void check_divergence(const VectorXd& eta) const {
        if (!rt_.exp_type()) return;
        for (Index i = 0; i < n_; ++i)
            if (std::fabs(eta[i]) > opts_.divergence_bound) throw NumericOverflow("optim", eta[i]);
    }

    VectorXd to_scaled(const VectorXd& beta) const {
        VectorXd b = VectorXd::Zero(m_);
        if (beta.size() == 0) return b;
        b[0] = beta[0];
        for (Index j = 1; j < m_; ++j) {
            if (dropped_[static_cast<std::size_t>(j)]) continue;
            b[j] = beta[j] * sd_[j];
            b[0] += beta[j] * mu_[j];
        }
        return b;
    }

    VectorXd to_original(const VectorXd& b) const {
        VectorXd beta = VectorXd::Zero(m_);
        beta[0] = b[0];
        for (Index j = 1; j < m_; ++j) {
            if (dropped_[static_cast<std::size_t>(j)] || b[j] == 0.0) continue;
            beta[j] = b[j] / sd_[j];
            beta[0] -= beta[j] * mu_[j];
        }
        return beta;
    }

    double objective(const VectorXd& b, const VectorXd& eta, double* bad) const {
        const double s = loss_sum(rt_, eta, bad);
        if (!std::isfinite(s)) return s;
        double pen = 0.0;
        for (Index j = 1; j < m_; ++j)
            if (pf_[j] != 0.0 && b[j] != 0.0) pen += pf_[j] * std::fabs(b[j]);
        return s / dn_ + (pen == 0.0 ? 0.0 : lambda_ * pen);
    }

    // KKT violation on the original column scale, from the scaled gradient:
    // G_0 = g_0 and G_j = sd_j g_j + mu_j G_0.
    double original_violation(const VectorXd& b, const VectorXd& g) const {
        double v = std::fabs(g[0]);
        for (Index j = 1; j < m_; ++j) {
            const double G = sd_[j] * g[j] + mu_[j] * g[0];
            double e;
            if (!p_.penalty_mask[static_cast<std::size_t>(j)]) {
                e = std::fabs(G);
            } else if (b[j] != 0.0) {
                e = std::fabs(G + lambda_ * (b[j] > 0 ? 1.0 : -1.0));
            } else {
                e = std::max(std::fabs(G) - lambda_, 0.0);
            }
            v = std::max(v, e);
        }
        return v;
    }

    // Coordinate descent on the quadratic model
    //   g'd + (1/2n) sum_i h_i (x_i'd)^2 + lambda * sum_j pf_j |b_j + d_j|
    // with an active-set outer loop. When sweeps stall, a Newton step on the
    // current sign pattern is taken, truncated at the first sign change.
    // Writes the step and X*step.
    void inner(const VectorXd& b, const VectorXd& eta, const VectorXd& u, const VectorXd& h,
               const VectorXd& grad, double tol, VectorXd& step, VectorXd& delta) {
        VectorXd s = u;
        VectorXd curv = VectorXd::Constant(m_, -1.0);
        std::vector<std::uint8_t> in_set(static_cast<std::size_t>(m_), 0);
        std::vector<Index> work;
        auto thresh = [&](Index j) { return pf_[j] == 0.0 ? 0.0 : lambda_ * pf_[j]; };
        auto penalized = [&](Index j) { return p_.penalty_mask[static_cast<std::size_t>(j)] != 0; };
        for (Index j = 0; j < m_; ++j) {
            if (dropped_[static_cast<std::size_t>(j)]) continue;
            if (!penalized(j) || b[j] != 0.0 || std::fabs(grad[j]) > thresh(j)) {
                work.push_back(j);
                in_set[static_cast<std::size_t>(j)] = 1;
            }
        }
        auto curvature = [&](Index j) {
            if (curv[j] < 0.0) curv[j] = std::max(simd::wdot(cspan(h), col(x_, j), col(x_, j)) / dn_, 1e-12);
            return curv[j];
        };
        auto move = [&](Index j, double d) {
            step[j] += d;
            simd::dual_axpy(d, cspan(h), col(x_, j), mspan(s), mspan(delta));
        };
        auto update = [&](Index j) {
            const double gq = simd::dot(col(x_, j), cspan(s)) / dn_;
            const double c = curvature(j);
            const double v = b[j] + step[j];
            const double nv = penalized(j) ? soft_threshold(c * v - gq, thresh(j)) / c : v - gq / c;
            const double d = nv - v;
            if (d != 0.0) move(j, d);
            return c * std::fabs(d);
        };
        auto newton = [&]() {
            std::vector<Index> act;
            for (Index j : work)
                if (!penalized(j) || b[j] + step[j] != 0.0) act.push_back(j);
            const auto k = static_cast<Index>(act.size());
            if (k == 0) return;
            MatrixXd xa(n_, k);
            VectorXd rhs(k);
            for (Index c = 0; c < k; ++c) {
                const Index j = act[static_cast<std::size_t>(c)];
                xa.col(c) = x_.col(j);
                const double v = b[j] + step[j];
                rhs[c] = -(simd::dot(col(x_, j), cspan(s)) / dn_ +
                           (penalized(j) ? thresh(j) * (v > 0 ? 1.0 : -1.0) : 0.0));
            }
            MatrixXd q = xa.transpose() * (h.asDiagonal() * xa) / dn_;
            Eigen::LLT<MatrixXd> llt(q);
            if (llt.info() != Eigen::Success) return;
            const VectorXd d = llt.solve(rhs);
            if (!d.allFinite()) return;
            double t = 1.0;
            Index hit = -1;
            for (Index c = 0; c < k; ++c) {
                const Index j = act[static_cast<std::size_t>(c)];
                if (!penalized(j)) continue;
                const double v = b[j] + step[j];
                if (v * (v + d[c]) < 0.0 && -v / d[c] < t) {
                    t = -v / d[c];
                    hit = c;
                }
            }
            for (Index c = 0; c < k; ++c) {
                const Index j = act[static_cast<std::size_t>(c)];
                double dj = t * d[c];
                if (c == hit) dj = -(b[j] + step[j]);
                if (dj != 0.0) move(j, dj);
            }
        };

        // The model step already leaves the region where exp-type losses are
        // bounded; the line search and divergence check take over from here.
        auto runaway = [&]() {
            if (!rt_.exp_type()) return false;
            for (Index i = 0; i < n_; ++i)
                if (std::fabs(eta[i] + delta[i]) > 2.0 * opts_.divergence_bound) return true;
            return false;
        };

        int sweeps = 0;
        for (;;) {
            int since_newton = 0;
            for (; sweeps < opts_.max_inner_sweeps; ++sweeps) {
                double change = 0.0;
                for (Index j : work) change = std::max(change, update(j));
                if (change < tol) break;
                if (runaway()) return;
                if (++since_newton >= 8) {
                    newton();
                    since_newton = 0;
                }
            }
            bool added = false;
            for (Index j = 0; j < m_; ++j) {
                if (in_set[static_cast<std::size_t>(j)] || dropped_[static_cast<std::size_t>(j)]) continue;
                const double gq = simd::dot(col(x_, j), cspan(s)) / dn_;
                if (std::fabs(gq) > thresh(j) + 0.5 * tol) {
                    work.push_back(j);
                    in_set[static_cast<std::size_t>(j)] = 1;
                    added = true;
                }
            }
            if (!added || sweeps >= opts_.max_inner_sweeps) break;
            std::sort(work.begin(), work.end());
        }
    }

    const PenalizedProblem& p_;
    SolverOptions opts_;
    RowTerms rt_;
    std::vector<Index> rows_;
    Index n_ = 0;
    Index m_;
    double dn_;
    MatrixXd x_;
    VectorXd mu_;
    VectorXd sd_;
    VectorXd pf_;
    std::vector<std::uint8_t> dropped_;
    double lambda_ = 0.0;
};

}  // namespace

FitResult fit_lasso(const PenalizedProblem& problem, double lambda, const VectorXd& init,
                    const SolverOptions& opts) {
    problem.validate();
    if (!(lambda >= 0.0)) throw ArgumentError("optim.bad_lambda", "lambda must be nonnegative");
    if (init.size() != 0) {
        check_coef(problem, init);
        if (!init.allFinite()) throw ArgumentError("optim.non_finite_init", "initial coefficients must be finite");
    }
    Solver solver(problem, opts);
    return solver.run(lambda, init);
}

std::vector<FitResult> fit_path(const PenalizedProblem& problem, const std::vector<double>& lambdas,
                                const SolverOptions& opts) {
    problem.validate();
    Solver solver(problem, opts);
    std::vector<FitResult> out;
    out.reserve(lambdas.size());
    VectorXd init;
    for (double lambda : lambdas) {
        if (!(lambda >= 0.0)) throw ArgumentError("optim.bad_lambda", "lambda must be nonnegative");
        out.push_back(solver.run(lambda, init));
        init = out.back().coef;
    }
    return out;
}

double lambda_max(const PenalizedProblem& problem, const SolverOptions& opts) {
    const FitResult base = fit_lasso(problem, std::numeric_limits<double>::max(), VectorXd(), opts);
    double lmax = 0.0;
    for (Index j = 0; j < problem.width(); ++j)
        if (problem.penalty_mask[static_cast<std::size_t>(j)])
            lmax = std::max(lmax, std::fabs(base.kkt_residuals[j]));
    return lmax;
}

std::vector<double> lambda_grid(const PenalizedProblem& problem, int grid_size, double ratio,
                                const SolverOptions& opts) {
    if (grid_size < 1) throw ArgumentError("optim.bad_grid", "grid_size must be at least 1");
    if (!(ratio > 0.0 && ratio < 1.0)) throw ArgumentError("optim.bad_grid", "ratio must lie in (0, 1)");
    double lmax = lambda_max(problem, opts);
    if (!(lmax > 0.0)) lmax = std::numeric_limits<double>::min();
    std::vector<double> grid(static_cast<std::size_t>(grid_size));
    for (int k = 0; k < grid_size; ++k) {
        const double frac = grid_size == 1 ? 0.0 : double(k) / double(grid_size - 1);
        grid[static_cast<std::size_t>(k)] = lmax * std::pow(ratio, frac);
    }
    return grid;
}

}  // namespace cste::optim
