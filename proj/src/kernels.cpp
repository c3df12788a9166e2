#include "cste/kernels.hpp"

#include <algorithm>
#include <limits>
#include <memory>

#include "cste/error.hpp"

namespace cste::kernels {

using Eigen::Index;
using Eigen::VectorXd;

namespace {

double expit(double eta) {
    if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
    const double e = std::exp(eta);
    return e / (1.0 + e);
}

std::span<const double> z_column(const Dataset& data) {
    if (data.z.cols() != 1)
        throw ArgumentError("kernels.bad_z", "kernel estimators need exactly one continuous Z column");
    return {data.z.data(), static_cast<std::size_t>(data.z.rows())};
}

double resolve_bandwidth(const Dataset& data, const KernelConfig& cfg) {
    return cfg.bandwidth > 0.0 ? cfg.bandwidth : bandwidth_rule(z_column(data));
}

void check_length(std::span<const double> v, const Dataset& data, const char* what) {
    if (static_cast<Index>(v.size()) != data.size())
        throw ArgumentError("kernels.dimension_mismatch", std::string(what) + " length does not match the data");
}

}  // namespace

std::vector<double> kernel_weights(double z0, std::span<const double> z, double h) {
    if (!(h > 0.0) || !std::isfinite(h)) throw ArgumentError("kernels.bad_bandwidth", "bandwidth must be positive");
    std::vector<double> w(z.size());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        w[i] = gaussian((z[i] - z0) / h);
        s += w[i];
    }
    if (!(s > 0.0))
        throw DataError("kernels.empty_neighborhood", "no observations carry kernel weight at z0 = " + std::to_string(z0));
    for (double& x : w) x /= s;
    return w;
}

double local_constant(double z0, std::span<const double> z, std::span<const double> values, double h) {
    if (values.size() != z.size()) throw ArgumentError("kernels.dimension_mismatch", "z and values differ in length");
    const std::vector<double> w = kernel_weights(z0, z, h);
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) s += w[i] * values[i];
    return s;
}

double silverman_base(std::span<const double> z) {
    const double n = static_cast<double>(z.size());
    if (z.size() < 10) throw ArgumentError("kernels.too_few", "bandwidth rule needs at least 10 observations");
    double mean = 0.0;
    for (double x : z) mean += x;
    mean /= n;
    double ss = 0.0, scale = 0.0;
    for (double x : z) ss += (x - mean) * (x - mean), scale = std::max(scale, std::fabs(x));
    const double sd = std::sqrt(ss / (n - 1.0));
    if (!(sd > 1e-12 * scale)) throw DegenerateData("kernels", "z has zero variance");
    return 1.06 * sd * std::pow(n, -0.2);
}

double bandwidth_rule(std::span<const double> z) {
    const double n = static_cast<double>(z.size());
    return silverman_base(z) * std::pow(n, 0.2) * std::pow(n, -2.0 / 7.0);
}

KernelEstimate smooth(double z0, std::span<const double> z, std::span<const double> phi, double h) {
    if (phi.size() != z.size()) throw ArgumentError("kernels.dimension_mismatch", "z and phi differ in length");
    const std::vector<double> w = kernel_weights(z0, z, h);
    KernelEstimate e;
    for (std::size_t i = 0; i < z.size(); ++i) e.point += w[i] * phi[i];
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double r = phi[i] - e.point;
        e.variance += w[i] * w[i] * r * r;
    }
    return e;
}

KernelEstimate aipw_kernel(double z0, const Dataset& data, std::span<const double> m_hat,
                           std::span<const double> pi_hat, const KernelConfig& cfg) {
    check_length(m_hat, data, "m_hat");
    check_length(pi_hat, data, "pi_hat");
    std::vector<double> phi(static_cast<std::size_t>(data.size()));
    for (Index i = 0; i < data.size(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        if (!(pi_hat[k] > 0.0 && pi_hat[k] <= 1.0))
            throw ArgumentError("kernels.bad_probability", "propensity value must lie in (0, 1]");
        phi[k] = data.t[i] * data.y[i] / pi_hat[k] - (data.t[i] / pi_hat[k] - 1.0) * m_hat[k];
    }
    return smooth(z0, z_column(data), phi, resolve_bandwidth(data, cfg));
}

double ipw_kernel(double z0, const Dataset& data, std::span<const double> pi_hat, const KernelConfig& cfg) {
    check_length(pi_hat, data, "pi_hat");
    std::vector<double> v(static_cast<std::size_t>(data.size()));
    for (Index i = 0; i < data.size(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        if (!(pi_hat[k] > 0.0 && pi_hat[k] <= 1.0))
            throw ArgumentError("kernels.bad_probability", "propensity value must lie in (0, 1]");
        v[k] = data.t[i] * data.y[i] / pi_hat[k];
    }
    return local_constant(z0, z_column(data), v, resolve_bandwidth(data, cfg));
}

double or_kernel(double z0, const Dataset& data, std::span<const double> m_hat, const KernelConfig& cfg) {
    check_length(m_hat, data, "m_hat");
    return local_constant(z0, z_column(data), m_hat, resolve_bandwidth(data, cfg));
}

CrossFit cross_fit(const VectorXd& t, int folds, std::uint64_t seed, const NuisanceFitter& fitter) {
    if (folds < 1) throw ArgumentError("kernels.bad_folds", "crossfit_folds must be at least 1");
    const Index n = t.size();
    CrossFit cf;
    if (folds == 1) {
        std::vector<int> all(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = static_cast<int>(i);
        auto [m, p] = fitter(all);
        cf.m_hat = std::move(m);
        cf.pi_hat = std::move(p);
        cf.fold_of.assign(static_cast<std::size_t>(n), 0);
        return cf;
    }
    cf.fold_of = nuisance::stratified_folds(t, folds, seed);
    cf.m_hat = VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
    cf.pi_hat = VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
    for (int k = 0; k < folds; ++k) {
        std::vector<int> train;
        for (Index i = 0; i < n; ++i)
            if (cf.fold_of[static_cast<std::size_t>(i)] != k) train.push_back(static_cast<int>(i));
        const auto [m, p] = fitter(train);
        if (m.size() != n || p.size() != n)
            throw ArgumentError("kernels.dimension_mismatch", "nuisance fitter must return values for every row");
        for (Index i = 0; i < n; ++i) {
            if (cf.fold_of[static_cast<std::size_t>(i)] != k) continue;
            cf.m_hat[i] = m[i];
            cf.pi_hat[i] = p[i];
        }
    }
    return cf;
}

design::RegressorPlan competitor_plan(const design::BasisSpec& basis, int num_v) {
    design::RegressorPlan plan;
    plan.mode = design::Mode::model_assisted;
    plan.z_term = design::ZTerm::raw;
    plan.basis = basis;
    plan.num_v = num_v;
    plan.f_columns = {design::ColumnExpr{}};
    for (int j = 0; j < num_v; ++j) plan.f_columns.push_back({{{design::AtomSource::v, j}}});
    for (int c = 0; c < basis.z_width(); ++c) plan.f_columns.push_back({{{design::AtomSource::zraw, c}}});
    plan.g_columns = plan.f_columns;
    return plan;
}

NuisanceFitter rml_fitter(const nuisance::Workspace& ws, optim::Link link, const nuisance::CVOptions& cv,
                          const optim::SolverOptions& solver) {
    using nuisance::Target;
    auto shared = std::make_shared<const nuisance::Workspace>(ws);
    const nuisance::CVResult ps_cv = nuisance::cv_lambda(ws, Target::ps_rml, optim::Link::logistic, cv);
    const nuisance::CVResult or_cv = nuisance::cv_lambda(ws, Target::or_rml, link, cv);
    auto path_to = [](const nuisance::CVResult& c) {
        return std::vector<double>(c.lambda_grid.begin(), c.lambda_grid.begin() + c.chosen_index + 1);
    };
    const std::vector<double> ps_path = path_to(ps_cv);
    const std::vector<double> or_path = path_to(or_cv);
    return [shared, link, ps_path, or_path, solver](const std::vector<int>& train) {
        const nuisance::Workspace& w = *shared;
        const auto ps_problem =
            optim::subset_rows(nuisance::problem_for(w, Target::ps_rml, optim::Link::logistic), train);
        const auto or_problem = optim::subset_rows(nuisance::problem_for(w, Target::or_rml, link), train);
        const VectorXd gamma = optim::fit_path(ps_problem, ps_path, solver).back().coef;
        const VectorXd alpha = optim::fit_path(or_problem, or_path, solver).back().coef;
        VectorXd pi = w.f * gamma;
        for (Index i = 0; i < pi.size(); ++i)
            pi[i] = std::clamp(expit(pi[i]), nuisance::kPiFloor, 1.0 - nuisance::kPiFloor);
        VectorXd m = w.g * alpha;
        if (link == optim::Link::logistic)
            for (Index i = 0; i < m.size(); ++i) m[i] = expit(m[i]);
        return std::make_pair(std::move(m), std::move(pi));
    };
}

}  // namespace cste::kernels
