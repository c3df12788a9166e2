#include "cste/effect.hpp"

#include <algorithm>
#include <cmath>

#include "cste/error.hpp"
#include "cste/normal.hpp"

namespace cste::effect {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nuisance::Target;
using optim::Arm;

const char* to_string(TargetKind t) noexcept {
    switch (t) {
        case TargetKind::mu1: return "mu1";
        case TargetKind::mu0: return "mu0";
        case TargetKind::tau: return "tau";
    }
    return "unknown";
}

const char* to_string(Method m) noexcept { return m == Method::proposed ? "proposed" : "rml"; }

double aipw_phi(double y, double t, double pi_hat, double m_hat) {
    if (!(pi_hat > 0.0 && pi_hat <= 1.0))
        throw ArgumentError("effect.bad_probability", "propensity value must lie in (0, 1]");
    return t * y / pi_hat - (t / pi_hat - 1.0) * m_hat;
}

MsmFit msm_fit(const VectorXd& phi, const MatrixXd& phidag_rows, const std::vector<std::string>& column_names) {
    const Index n = phidag_rows.rows();
    const Index k = phidag_rows.cols();
    if (phi.size() != n) throw ArgumentError("effect.dimension_mismatch", "phi and basis rows differ in length");
    if (n == 0 || k == 0) throw ArgumentError("effect.empty", "no observations or basis columns");
    if (!phi.allFinite()) throw NumericError("effect.non_finite", "influence values are not finite");

    MsmFit fit;
    fit.n = n;
    fit.phi = phi;
    fit.M = phidag_rows.transpose() * phidag_rows / double(n);
    const VectorXd rhs = phidag_rows.transpose() * phi / double(n);

    Eigen::ColPivHouseholderQR<MatrixXd> qr(fit.M);
    qr.setThreshold(1e-10 * fit.M.diagonal().cwiseAbs().maxCoeff() /
                    std::max(1e-300, qr.maxPivot()));
    if (qr.rank() < k) {
        std::string cols;
        for (Index r = qr.rank(); r < k; ++r) {
            const Index c = qr.colsPermutation().indices()[r];
            if (!cols.empty()) cols += ", ";
            cols += static_cast<std::size_t>(c) < column_names.size() ? column_names[static_cast<std::size_t>(c)]
                                                                     : "column " + std::to_string(c);
        }
        throw SingularDesign("effect", "basis matrix is rank deficient (rank " + std::to_string(qr.rank()) + " of " +
                                           std::to_string(k) + "); unidentified: " + cols);
    }
    fit.beta = qr.solve(rhs);
    fit.M_inv = qr.inverse();
    fit.residuals = phi - phidag_rows * fit.beta;
    const VectorXd r2 = fit.residuals.array().square();
    fit.G_hat = phidag_rows.transpose() * r2.asDiagonal() * phidag_rows / double(n);
    return fit;
}

double sandwich_variance(const MsmFit& msm, std::span<const double> phidag_z0) {
    if (static_cast<Index>(phidag_z0.size()) != msm.beta.size())
        throw ArgumentError("effect.dimension_mismatch", "basis vector length does not match the fit");
    const Eigen::Map<const VectorXd> a(phidag_z0.data(), static_cast<Index>(phidag_z0.size()));
    const VectorXd b = msm.M_inv * a;
    return std::max(0.0, b.dot(msm.G_hat * b) / double(msm.n));
}

double sandwich_variance(const MsmFit& msm, std::span<const double> z0, const design::BasisSpec& basis) {
    const std::vector<double> pd = design::phi_dag(z0, basis);
    return sandwich_variance(msm, pd);
}

double CsteEstimate::se() const { return std::sqrt(variance); }

CsteEstimate evaluate(const MsmFit& msm, const design::BasisSpec& basis, TargetKind target,
                      std::span<const double> z0, double level) {
    CsteEstimate e;
    e.target = target;
    e.z0.assign(z0.begin(), z0.end());
    e.level = level;
    const std::vector<double> pd = design::phi_dag(z0, basis, &e.clamped);
    const Eigen::Map<const VectorXd> a(pd.data(), static_cast<Index>(pd.size()));
    e.point = msm.beta.dot(a);
    e.variance = sandwich_variance(msm, pd);
    const double half = two_sided_critical(level) * std::sqrt(e.variance);
    e.ci_lo = e.point - half;
    e.ci_hi = e.point + half;
    e.approximate = !basis.discrete();
    return e;
}

std::vector<std::string> phidag_names(const design::BasisSpec& basis) {
    std::vector<std::string> names{"1"};
    for (const auto& c : design::phi_columns(basis)) names.push_back(c.to_string());
    return names;
}

// ---------------------------------------------------------------------------

NuisanceFits fit_nuisance(const nuisance::Workspace& ws, bool treated, bool untreated, const EstimationOptions& opts) {
    NuisanceFits out;
    auto cv_for = [&](Target target, double ps_lambda) {
        auto cv = nuisance::cv_lambda(ws, target, opts.link, opts.cv, ps_lambda);
        out.cv.emplace_back(target, cv);
        return cv;
    };
    auto ps_fit = [&](Target target) {
        if (opts.ps_lambda) {
            switch (target) {
                case Target::ps_rcal: return nuisance::fit_ps_rcal(ws, *opts.ps_lambda, opts.solver);
                case Target::ps_rcal_untreated:
                    return nuisance::fit_ps_rcal_untreated(ws, *opts.ps_lambda, opts.solver);
                default: return nuisance::fit_ps_rml(ws, *opts.ps_lambda, opts.solver);
            }
        }
        return nuisance::fit_ps_cv(ws, target, cv_for(target, 0.0), opts.solver);
    };
    auto or_fit = [&](Target target, const nuisance::PSFit* ps) {
        if (opts.or_lambda) {
            switch (target) {
                case Target::or_rwl: return nuisance::fit_or_rwl(ws, *ps, *opts.or_lambda, opts.link, opts.solver);
                case Target::or_rwl_untreated:
                    return nuisance::fit_or_rwl_untreated(ws, *ps, *opts.or_lambda, opts.link, opts.solver);
                case Target::or_rml:
                    return nuisance::fit_or_rml(ws, *opts.or_lambda, opts.link, Arm::treated, opts.solver);
                default: return nuisance::fit_or_rml(ws, *opts.or_lambda, opts.link, Arm::untreated, opts.solver);
            }
        }
        const auto cv = cv_for(target, ps ? ps->lambda : 0.0);
        return nuisance::fit_or_cv(ws, target, opts.link, cv, ps, opts.solver);
    };

    if (opts.method == Method::proposed) {
        if (treated) {
            out.ps1 = ps_fit(Target::ps_rcal);
            out.or1 = or_fit(Target::or_rwl, &*out.ps1);
        }
        if (untreated) {
            out.ps0 = ps_fit(Target::ps_rcal_untreated);
            out.or0 = or_fit(Target::or_rwl_untreated, &*out.ps0);
        }
    } else {
        out.ps1 = ps_fit(Target::ps_rml);
        if (treated) out.or1 = or_fit(Target::or_rml, nullptr);
        if (untreated) out.or0 = or_fit(Target::or_rml_untreated, nullptr);
    }
    return out;
}

VectorXd arm_phi(const nuisance::Workspace& ws, const NuisanceFits& fits, Arm arm) {
    const Index n = ws.rows();
    VectorXd phi(n);
    if (arm == Arm::treated) {
        if (!fits.ps1 || !fits.or1) throw ArgumentError("effect.missing_fit", "treated-arm fits are missing");
        for (Index i = 0; i < n; ++i)
            phi[i] = aipw_phi(ws.y[i], ws.t[i], fits.ps1->fitted_pi[i], fits.or1->fitted_m[i]);
    } else {
        const nuisance::PSFit* ps = fits.ps0 ? &*fits.ps0 : (fits.ps1 ? &*fits.ps1 : nullptr);
        if (!ps || !fits.or0) throw ArgumentError("effect.missing_fit", "untreated-arm fits are missing");
        for (Index i = 0; i < n; ++i)
            phi[i] = aipw_phi(ws.y[i], 1.0 - ws.t[i], 1.0 - ps->fitted_pi[i], fits.or0->fitted_m[i]);
    }
    return phi;
}

Analysis analyze(const Dataset& data, const design::RegressorPlan& plan, bool want_mu1, bool want_mu0,
                 bool want_tau, const EstimationOptions& opts) {
    Analysis a;
    a.ws = nuisance::prepare(data, plan);
    const bool treated = want_mu1 || want_tau;
    const bool untreated = want_mu0 || want_tau;
    a.fits = fit_nuisance(a.ws, treated, untreated, opts);
    a.phidag = design::phi_dag_matrix(data.z, plan.basis);
    const auto names = phidag_names(plan.basis);
    VectorXd phi1, phi0;
    if (treated) phi1 = arm_phi(a.ws, a.fits, Arm::treated);
    if (untreated) phi0 = arm_phi(a.ws, a.fits, Arm::untreated);
    if (want_mu1) a.msm1 = msm_fit(phi1, a.phidag, names);
    if (want_mu0) a.msm0 = msm_fit(phi0, a.phidag, names);
    if (want_tau) a.msm_tau = msm_fit(phi1 - phi0, a.phidag, names);
    return a;
}

std::vector<CsteEstimate> estimate_mu(Arm arm, const Dataset& data, const design::RegressorPlan& plan,
                                      const std::vector<std::vector<double>>& z0s, const EstimationOptions& opts) {
    const bool t1 = arm == Arm::treated;
    const Analysis a = analyze(data, plan, t1, !t1, false, opts);
    std::vector<CsteEstimate> out;
    for (const auto& z0 : z0s)
        out.push_back(evaluate(t1 ? *a.msm1 : *a.msm0, plan.basis, t1 ? TargetKind::mu1 : TargetKind::mu0, z0,
                               opts.level));
    return out;
}

std::vector<CsteEstimate> estimate_tau(const Dataset& data, const design::RegressorPlan& plan,
                                       const std::vector<std::vector<double>>& z0s, const EstimationOptions& opts) {
    const Analysis a = analyze(data, plan, false, false, true, opts);
    std::vector<CsteEstimate> out;
    for (const auto& z0 : z0s) out.push_back(evaluate(*a.msm_tau, plan.basis, TargetKind::tau, z0, opts.level));
    return out;
}

// ---------------------------------------------------------------------------

KnotSearch knot_search(const VectorXd& phi, const VectorXd& z, int max_knots) {
    if (max_knots < 1) throw ArgumentError("effect.bad_knots", "max_knots must be at least 1");
    if (phi.size() != z.size()) throw ArgumentError("effect.dimension_mismatch", "phi and z differ in length");
    const double n = static_cast<double>(z.size());
    const MatrixXd zm = z;
    KnotSearch ks;
    for (int k = 1; k <= max_knots; ++k) {
        const design::BasisSpec basis = design::make_basis(design::BasisKind::cubic_spline, zm, k);
        const MatrixXd p = design::phi_dag_matrix(zm, basis);
        const Eigen::ColPivHouseholderQR<MatrixXd> qr(p);
        const VectorXd coef = qr.solve(phi);
        const double rss = (phi - p * coef).squaredNorm();
        KnotRow row;
        row.knots = k;
        row.dimension = basis.dimension();
        row.rss = rss;
        const double params = double(row.dimension) + 2.0;
        const double fit_term = n * std::log(rss / n);
        row.aic = fit_term + 2.0 * params;
        row.bic = fit_term + std::log(n) * params;
        ks.rows.push_back(row);
    }
    auto best = [&](auto key) {
        return std::min_element(ks.rows.begin(), ks.rows.end(),
                                [&](const KnotRow& a, const KnotRow& b) { return key(a) < key(b); })
            ->knots;
    };
    ks.best_aic = best([](const KnotRow& r) { return r.aic; });
    ks.best_bic = best([](const KnotRow& r) { return r.bic; });
    return ks;
}

KnotSearch knot_search(const Dataset& data, design::Mode mode, const EstimationOptions& opts, int max_knots) {
    if (data.z.cols() != 1) throw ArgumentError("effect.bad_z", "knot search needs a single continuous Z column");
    const design::BasisSpec basis = design::make_basis(design::BasisKind::cubic_spline, data.z, max_knots);
    const design::RegressorPlan plan = design::build_plan(mode, basis, static_cast<int>(data.num_v()));
    const nuisance::Workspace ws = nuisance::prepare(data, plan);
    const NuisanceFits fits = fit_nuisance(ws, true, true, opts);
    const VectorXd phi_tau = arm_phi(ws, fits, Arm::treated) - arm_phi(ws, fits, Arm::untreated);
    return knot_search(phi_tau, data.z.col(0), max_knots);
}

}  // namespace cste::effect
