// cste: covariate-specific treatment effect estimation from the command line.
//
//   cste fit       --input data.csv --outcome Y --treatment T --z Z --out dir
//   cste diagnose  ...same data flags...
//   cste compare   ...same data flags...
//   cste simulate  --scenario C1 --reps 1000 --out dir
//   cste replay    --manifest dir/manifest.json --out dir2
//
// fit, diagnose and compare accept --scenario/--n/--p/--seed instead of
// --input to run on one synthetic draw.

#include <CLI11.hpp>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cste/dataset.hpp"
#include "cste/design.hpp"
#include "cste/effect.hpp"
#include "cste/error.hpp"
#include "cste/io.hpp"
#include "cste/kernels.hpp"
#include "cste/normal.hpp"
#include "cste/nuisance.hpp"
#include "cste/simd.hpp"
#include "cste/simlab.hpp"
#include "cste/version.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using Eigen::Index;
using Eigen::VectorXd;

namespace {

using namespace cste;

struct DataFlags {
    std::string input;
    std::string outcome, treatment;
    std::vector<std::string> z, v, categorical, continuous;
    std::string scenario;
    long n = 500;
    long p = -1;  // scenario default
    double tau_intercept = 0.0, tau_slope = 0.0;
};

struct ModelFlags {
    std::string mode = "auto";
    std::string basis = "auto";
    int knots = 3;
    std::string auto_knots;  // aic | bic
    int max_knots = 10;
    std::string link = "identity";
    std::string method = "proposed";
    int folds = 5;
    std::vector<std::string> z0;
    double level = 0.95;
};

struct Options {
    std::string command;
    std::string out = "cste_out";
    std::uint64_t seed = 20240101;
    DataFlags data;
    ModelFlags model;
    // simulate
    int reps = 1000;
    std::string estimator = "proposed";
    std::string target = "mu1";
    // replay
    std::string manifest;
};

struct Context {
    Options opt;
    std::vector<std::string> argv;
    json warnings = json::array();
    json manifest_extra = json::object();
};

void warn(Context& ctx, const std::string& code, const std::string& msg) {
    ctx.warnings.push_back({{"code", code}, {"message", msg}});
    std::cerr << "warning: " << msg << "\n";
}

json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

std::string path_in(const Context& ctx, const std::string& file) { return (fs::path(ctx.opt.out) / file).string(); }

void write_json(const Context& ctx, const std::string& file, const json& j) {
    io::write_text_file(path_in(ctx, file), j.dump(2) + "\n");
}

long default_p(simlab::ScenarioId id) { return id == simlab::ScenarioId::C4 || id == simlab::ScenarioId::C5 ? 59 : 200; }

simlab::Scenario scenario_of(const DataFlags& d) {
    simlab::Scenario sc;
    sc.id = simlab::scenario_from_string(d.scenario);
    sc.tau_intercept = d.tau_intercept;
    sc.tau_slope = d.tau_slope;
    return sc;
}

// ---------------------------------------------------------------------------
// data, basis and plan

struct Loaded {
    Dataset data;
    io::IngestReport report;
    std::set<std::string> categorical_z;
};

Loaded load_data(Context& ctx) {
    const DataFlags& d = ctx.opt.data;
    Loaded l;
    if (!d.input.empty()) {
        io::ColumnRoles roles{d.outcome, d.treatment, d.z, d.v, d.categorical, d.continuous};
        auto in = io::ingest(d.input, roles);
        l.data = std::move(in.data);
        l.report = std::move(in.report);
        for (const auto& c : l.report.categorical)
            if (std::find(d.z.begin(), d.z.end(), c.name) != d.z.end()) l.categorical_z.insert(c.name);
        if (l.report.rows_dropped > 0)
            warn(ctx, "cli.rows_dropped",
                 std::to_string(l.report.rows_dropped) + " of " + std::to_string(l.report.rows_read) +
                     " rows dropped for missing values");
        return l;
    }
    if (d.scenario.empty()) throw ArgumentError("cli.no_data", "either --input or --scenario is required");
    const auto sc = scenario_of(d);
    const long p = d.p > 0 ? d.p : default_p(sc.id);
    l.data = simlab::generate(sc, d.n, p, ctx.opt.seed);
    l.report.rows_read = d.n;
    return l;
}

bool is_binary_col(const Eigen::MatrixXd& z, Index c) {
    for (Index i = 0; i < z.rows(); ++i)
        if (z(i, c) != 0.0 && z(i, c) != 1.0) return false;
    return true;
}

std::size_t distinct(const Eigen::MatrixXd& z, Index c) {
    std::set<double> s(z.col(c).data(), z.col(c).data() + z.rows());
    return s.size();
}

design::BasisKind choose_basis(const Context& ctx, const Loaded& l) {
    if (ctx.opt.model.basis != "auto") return design::basis_kind_from_string(ctx.opt.model.basis);
    const Eigen::MatrixXd& z = l.data.z;
    if (z.cols() == 1) {
        if (is_binary_col(z, 0)) return design::BasisKind::binary_saturated;
        if (l.categorical_z.count(l.data.z_names[0]) ||
            (distinct(z, 0) <= static_cast<std::size_t>(io::kCategoricalMaxLevels) &&
             std::find(ctx.opt.data.continuous.begin(), ctx.opt.data.continuous.end(), l.data.z_names[0]) ==
                 ctx.opt.data.continuous.end()))
            return design::BasisKind::categorical_dummies;
        return design::BasisKind::cubic_spline;
    }
    bool all_binary = true;
    for (Index c = 0; c < z.cols(); ++c) all_binary = all_binary && is_binary_col(z, c);
    if (all_binary) return design::BasisKind::multi_binary_saturated;
    if (z.cols() == 2 && is_binary_col(z, 0)) return design::BasisKind::mixed;
    throw ArgumentError("cli.unsupported_z",
                        "Z columns must be one column, several binary columns, or a binary then a continuous column");
}

design::Mode choose_mode(const Context& ctx, const design::BasisSpec& basis) {
    if (ctx.opt.model.mode == "auto")
        return basis.discrete() ? design::Mode::doubly_robust : design::Mode::model_assisted;
    return design::mode_from_string(ctx.opt.model.mode);
}

optim::Link parse_link(const std::string& s) {
    if (s == "identity") return optim::Link::identity;
    if (s == "logistic") return optim::Link::logistic;
    throw ArgumentError("cli.unknown_link", "unknown link '" + s + "'");
}

effect::Method parse_method(const std::string& s) {
    if (s == "proposed") return effect::Method::proposed;
    if (s == "rml" || s == "rml_msm") return effect::Method::rml;
    throw ArgumentError("cli.unknown_method", "unknown method '" + s + "'");
}

effect::EstimationOptions estimation_options(const Context& ctx) {
    effect::EstimationOptions o;
    o.method = parse_method(ctx.opt.model.method);
    o.link = parse_link(ctx.opt.model.link);
    if (!(ctx.opt.model.level > 0.0 && ctx.opt.model.level < 1.0))
        throw ArgumentError("cli.bad_level", "--level must lie in (0, 1)");
    o.level = ctx.opt.model.level;
    o.cv.folds = ctx.opt.model.folds;
    o.cv.seed = ctx.opt.seed;
    return o;
}

struct Setup {
    Loaded loaded;
    design::RegressorPlan plan;
    effect::EstimationOptions est;
    std::optional<effect::KnotSearch> knots;
};

json basis_json(const design::BasisSpec& b) {
    json j{{"kind", design::to_string(b.kind)}, {"dimension", b.dimension()}};
    if (!b.levels.empty()) j["levels"] = b.levels, j["reference"] = b.reference;
    if (b.num_binary > 0) j["num_binary"] = b.num_binary;
    if (b.kind == design::BasisKind::cubic_spline || b.kind == design::BasisKind::mixed) {
        j["knots"] = b.knots;
        j["lower"] = b.lower;
        j["upper"] = b.upper;
    }
    return j;
}

Setup setup(Context& ctx) {
    Setup s;
    s.loaded = load_data(ctx);
    s.est = estimation_options(ctx);
    const Dataset& data = s.loaded.data;
    const auto kind = choose_basis(ctx, s.loaded);
    int knots = ctx.opt.model.knots;
    const auto& ak = ctx.opt.model.auto_knots;
    if (!ak.empty()) {
        if (ak != "aic" && ak != "bic") throw ArgumentError("cli.bad_auto_knots", "--auto-knots takes aic or bic");
        if (kind != design::BasisKind::cubic_spline)
            throw ArgumentError("cli.bad_auto_knots", "--auto-knots needs a single continuous Z");
        const auto probe = design::make_basis(kind, data.z, 1);
        s.knots = effect::knot_search(data, choose_mode(ctx, probe), s.est, ctx.opt.model.max_knots);
        knots = ak == "aic" ? s.knots->best_aic : s.knots->best_bic;
    }
    const auto basis = design::make_basis(kind, data.z, knots);
    s.plan = design::build_plan(choose_mode(ctx, basis), basis, static_cast<int>(data.num_v()));
    if (s.plan.dr_guarantee_not_applicable)
        warn(ctx, "design.dr_guarantee_not_applicable",
             "doubly robust plan on a continuous basis: intervals are model-assisted only");
    return s;
}

// z0 points: numbers, components joined by ':', or grid:N over the observed
// range of a single Z column. Defaults to the support of a discrete basis or
// an 11-point grid.
std::vector<std::vector<double>> resolve_z0(Context& ctx, const Dataset& data, const design::BasisSpec& basis) {
    std::vector<std::vector<double>> pts;
    const int width = basis.z_width();
    auto grid = [&](int k) {
        if (data.z.cols() != 1) throw ArgumentError("cli.bad_z0", "grid:N needs a single Z column");
        if (k < 2) throw ArgumentError("cli.bad_z0", "grid:N needs N >= 2");
        const double lo = data.z.col(0).minCoeff(), hi = data.z.col(0).maxCoeff();
        for (int i = 0; i < k; ++i) pts.push_back({lo + (hi - lo) * i / (k - 1)});
    };
    if (ctx.opt.model.z0.empty()) {
        switch (basis.kind) {
            case design::BasisKind::binary_saturated: pts = {{0.0}, {1.0}}; break;
            case design::BasisKind::categorical_dummies:
                for (double l : basis.levels) pts.push_back({l});
                break;
            case design::BasisKind::multi_binary_saturated:
                for (int m = 0; m < (1 << basis.num_binary); ++m) {
                    std::vector<double> p;
                    for (int c = 0; c < basis.num_binary; ++c) p.push_back((m >> c) & 1);
                    pts.push_back(p);
                }
                break;
            case design::BasisKind::cubic_spline: grid(11); break;
            case design::BasisKind::mixed:
                for (double b : {0.0, 1.0})
                    for (int i = 0; i < 5; ++i) pts.push_back({b, basis.lower + (basis.upper - basis.lower) * i / 4.0});
                break;
        }
        return pts;
    }
    for (const auto& tok : ctx.opt.model.z0) {
        if (tok.rfind("grid:", 0) == 0) {
            int k = 0;
            try {
                k = std::stoi(tok.substr(5));
            } catch (const std::exception&) {
                throw ArgumentError("cli.bad_z0", "bad grid specification '" + tok + "'");
            }
            grid(k);
            continue;
        }
        std::vector<double> p;
        std::stringstream ss(tok);
        std::string part;
        while (std::getline(ss, part, ':')) {
            try {
                std::size_t used = 0;
                p.push_back(std::stod(part, &used));
                if (used != part.size()) throw std::invalid_argument(part);
            } catch (const std::exception&) {
                throw ArgumentError("cli.bad_z0", "bad z0 value '" + tok + "'");
            }
        }
        if (static_cast<int>(p.size()) != width)
            throw ArgumentError("cli.bad_z0", "z0 '" + tok + "' needs " + std::to_string(width) + " components");
        pts.push_back(p);
    }
    for (const auto& p : pts)
        for (std::size_t c = 0; c < p.size(); ++c) {
            const double lo = data.z.col(static_cast<Index>(c)).minCoeff();
            const double hi = data.z.col(static_cast<Index>(c)).maxCoeff();
            if (p[c] < lo || p[c] > hi)
                warn(ctx, "cli.z0_outside_support",
                     "z0 component " + io::format_exact(p[c]) + " lies outside the observed range [" +
                         io::format_exact(lo) + ", " + io::format_exact(hi) + "]");
        }
    return pts;
}

io::ResultRow to_row(const std::string& method, const effect::CsteEstimate& e, const nuisance::PSFit* ps = nullptr,
                     const nuisance::ORFit* orf = nullptr) {
    io::ResultRow r;
    if (ps) r.lambda_ps = ps->lambda;
    if (orf) r.lambda_or = orf->lambda;
    r.method = method;
    r.target = effect::to_string(e.target);
    r.z0 = e.z0;
    r.point = e.point;
    r.se = e.se();
    r.level = e.level;
    r.ci_lo = e.ci_lo;
    r.ci_hi = e.ci_hi;
    r.approximate = e.approximate;
    r.clamped = e.clamped;
    return r;
}

json row_json(const io::ResultRow& r) {
    return {{"method", r.method},     {"target", r.target}, {"z0", r.z0},
            {"point", num(r.point)},  {"se", num(r.se)},    {"level", r.level},
            {"ci_lo", num(r.ci_lo)},  {"ci_hi", num(r.ci_hi)},
            {"lambda_ps", num(r.lambda_ps)}, {"lambda_or", num(r.lambda_or)},
            {"estimand", r.approximate ? "best_linear_approximation" : "cste"},
            {"clamped", r.clamped}};
}

json data_json(const Loaded& l) {
    json cats = json::array();
    for (const auto& c : l.report.categorical) cats.push_back({{"column", c.name}, {"levels", c.levels}});
    return {{"rows", l.data.size()},
            {"rows_read", l.report.rows_read},
            {"rows_dropped", l.report.rows_dropped},
            {"treated", l.data.treated_count()},
            {"outcome", l.data.y_name},
            {"treatment", l.data.t_name},
            {"z", l.data.z_names},
            {"num_v", l.data.num_v()},
            {"categorical", cats}};
}

json plan_json(const design::RegressorPlan& p) {
    json f = json::array(), g = json::array();
    for (const auto& c : p.f_columns) f.push_back(c.to_string());
    for (const auto& c : p.g_columns) g.push_back(c.to_string());
    return {{"mode", design::to_string(p.mode)},
            {"z_term", p.z_term == design::ZTerm::raw ? "raw" : "basis"},
            {"basis", basis_json(p.basis)},
            {"num_v", p.num_v},
            {"f_columns", f},
            {"g_columns", g},
            {"dr_guarantee_not_applicable", p.dr_guarantee_not_applicable}};
}

// Nonzero coefficients on the original column scale, keyed by column
// expression.
json coef_json(const VectorXd& c, const VectorXd& mean, const VectorXd& sd,
               const std::vector<design::ColumnExpr>& cols) {
    json j = json::object();
    double intercept = c[0];
    for (Index k = 1; k < c.size(); ++k) {
        if (c[k] == 0.0 || !(sd[k] > 0.0)) continue;
        const double b = c[k] / sd[k];
        intercept -= b * mean[k];
        j[cols[static_cast<std::size_t>(k)].to_string()] = b;
    }
    json out{{cols[0].to_string(), intercept}};
    out.update(j);
    return out;
}

json nuisance_json(const nuisance::Workspace& ws, const effect::NuisanceFits& fits) {
    json j = json::object();
    auto ps = [&](const nuisance::PSFit& f) {
        return json{{"method", nuisance::to_string(f.method)},
                    {"lambda", f.lambda},
                    {"nonzero", f.fit.active_set.size()},
                    {"converged", f.fit.converged},
                    {"clamped", f.clamped},
                    {"coefficients", coef_json(f.gamma, ws.f_mean, ws.f_sd, ws.plan.f_columns)}};
    };
    auto orf = [&](const nuisance::ORFit& f) {
        return json{{"method", nuisance::to_string(f.method)},
                    {"lambda", f.lambda},
                    {"nonzero", f.fit.active_set.size()},
                    {"converged", f.fit.converged},
                    {"coefficients", coef_json(f.alpha, ws.g_mean, ws.g_sd, ws.plan.g_columns)}};
    };
    if (fits.ps1) j["ps_treated"] = ps(*fits.ps1);
    if (fits.ps0) j["ps_untreated"] = ps(*fits.ps0);
    if (fits.or1) j["or_treated"] = orf(*fits.or1);
    if (fits.or0) j["or_untreated"] = orf(*fits.or0);
    json cv = json::array();
    for (const auto& [target, r] : fits.cv)
        cv.push_back({{"target", nuisance::to_string(target)},
                      {"chosen_lambda", r.chosen_lambda},
                      {"chosen_index", r.chosen_index},
                      {"one_se_lambda", r.one_se_lambda},
                      {"grid_size", r.lambda_grid.size()},
                      {"fold_seed", r.seed}});
    j["cv"] = cv;
    return j;
}

json knots_json(const effect::KnotSearch& k) {
    json rows = json::array();
    for (const auto& r : k.rows)
        rows.push_back({{"knots", r.knots}, {"dimension", r.dimension}, {"rss", r.rss}, {"aic", r.aic}, {"bic", r.bic}});
    return {{"rows", rows}, {"best_aic", k.best_aic}, {"best_bic", k.best_bic}};
}

void write_results(const Context& ctx, const std::vector<io::ResultRow>& rows) {
    std::ostringstream csv;
    io::write_results_csv(csv, rows);
    io::write_text_file(path_in(ctx, "results.csv"), csv.str());
}

// ---------------------------------------------------------------------------
// commands

json cmd_fit(Context& ctx) {
    Setup s = setup(ctx);
    const Dataset& data = s.loaded.data;
    const auto z0s = resolve_z0(ctx, data, s.plan.basis);
    const auto a = effect::analyze(data, s.plan, true, true, true, s.est);
    const std::string method = effect::to_string(s.est.method);
    std::vector<io::ResultRow> rows;
    for (const auto& z0 : z0s) {
        const auto* ps0 = a.fits.ps0 ? &*a.fits.ps0 : &*a.fits.ps1;
        rows.push_back(to_row(method, effect::evaluate(*a.msm_tau, s.plan.basis, effect::TargetKind::tau, z0, s.est.level),
                              &*a.fits.ps1, &*a.fits.or1));
        rows.push_back(to_row(method, effect::evaluate(*a.msm1, s.plan.basis, effect::TargetKind::mu1, z0, s.est.level),
                              &*a.fits.ps1, &*a.fits.or1));
        rows.push_back(to_row(method, effect::evaluate(*a.msm0, s.plan.basis, effect::TargetKind::mu0, z0, s.est.level),
                              ps0, &*a.fits.or0));
    }
    write_results(ctx, rows);
    if (data.z.cols() == 1) {
        std::string curve = "z,point,ci_lo,ci_hi\n";
        for (const auto& r : rows)
            if (r.target == "tau")
                curve += io::format_short(r.z0[0]) + "," + io::format_short(r.point) + "," + io::format_short(r.ci_lo) +
                         "," + io::format_short(r.ci_hi) + "\n";
        io::write_text_file(path_in(ctx, "curve.csv"), curve);
    }
    json est = json::array();
    for (const auto& r : rows) est.push_back(row_json(r));
    json j{{"command", "fit"},
           {"data", data_json(s.loaded)},
           {"basis", basis_json(s.plan.basis)},
           {"plan", plan_json(s.plan)},
           {"method", method},
           {"link", optim::to_string(s.est.link)},
           {"nuisance", nuisance_json(a.ws, a.fits)},
           {"estimates", est}};
    if (s.knots) j["knot_search"] = knots_json(*s.knots);
    return j;
}

json cmd_diagnose(Context& ctx) {
    Setup s = setup(ctx);
    const Dataset& data = s.loaded.data;
    const auto ws = nuisance::prepare(data, s.plan);
    nuisance::CVOptions cv = s.est.cv;
    const auto cv_rcal = nuisance::cv_lambda(ws, nuisance::Target::ps_rcal, s.est.link, cv);
    const auto rcal = nuisance::fit_ps_cv(ws, nuisance::Target::ps_rcal, cv_rcal);
    const auto cv_rml = nuisance::cv_lambda(ws, nuisance::Target::ps_rml, s.est.link, cv);
    const auto rml = nuisance::fit_ps_cv(ws, nuisance::Target::ps_rml, cv_rml);

    std::string csv = "index,column,rcal,rml\n";
    json cols = json::array();
    double max_rcal = 0.0, max_rml = 0.0;
    bool within = true;
    for (Index j = 1; j < ws.f.cols(); ++j) {
        const std::string name = s.plan.f_columns[static_cast<std::size_t>(j)].to_string();
        double a = std::numeric_limits<double>::quiet_NaN(), b = a;
        if (ws.f_sd[j] > 0.0) {
            a = nuisance::std_cal_diff(rcal, ws.f.col(j), ws.t);
            b = nuisance::std_cal_diff(rml, ws.f.col(j), ws.t);
            max_rcal = std::max(max_rcal, std::fabs(a));
            max_rml = std::max(max_rml, std::fabs(b));
            within = within && std::fabs(a) <= rcal.lambda * (1.0 + 1e-6) + 1e-8;
        }
        csv += std::to_string(j) + "," + io::csv_escape(name) + "," + (std::isfinite(a) ? io::format_short(a) : "") +
               "," + (std::isfinite(b) ? io::format_short(b) : "") + "\n";
        cols.push_back({{"index", j}, {"column", name}, {"rcal", num(a)}, {"rml", num(b)}});
    }
    io::write_text_file(path_in(ctx, "balance.csv"), csv);
    return {{"command", "diagnose"},
            {"data", data_json(s.loaded)},
            {"basis", basis_json(s.plan.basis)},
            {"plan", plan_json(s.plan)},
            {"rcal", {{"lambda", rcal.lambda}, {"max_abs_cal", max_rcal}, {"box_bound", rcal.lambda}, {"within_box", within}}},
            {"rml", {{"lambda", rml.lambda}, {"max_abs_cal", max_rml}}},
            {"columns", cols}};
}

json cmd_compare(Context& ctx) {
    Setup s = setup(ctx);
    const Dataset& data = s.loaded.data;
    const auto z0s = resolve_z0(ctx, data, s.plan.basis);
    std::vector<io::ResultRow> rows;
    for (auto m : {effect::Method::proposed, effect::Method::rml}) {
        auto est = s.est;
        est.method = m;
        const auto a = effect::analyze(data, s.plan, true, false, true, est);
        const std::string name = m == effect::Method::proposed ? "proposed" : "rml_msm";
        for (const auto& z0 : z0s) {
            rows.push_back(to_row(name, effect::evaluate(*a.msm1, s.plan.basis, effect::TargetKind::mu1, z0, est.level),
                                  &*a.fits.ps1, &*a.fits.or1));
            rows.push_back(to_row(name, effect::evaluate(*a.msm_tau, s.plan.basis, effect::TargetKind::tau, z0, est.level),
                                  &*a.fits.ps1, &*a.fits.or1));
        }
    }
    if (s.plan.basis.kind == design::BasisKind::cubic_spline) {
        const auto ws = nuisance::prepare(data, kernels::competitor_plan(s.plan.basis, static_cast<int>(data.num_v())));
        const auto fitter = kernels::rml_fitter(ws, s.est.link, s.est.cv);
        const double z = two_sided_critical(s.est.level);
        auto span_of = [](const VectorXd& x) { return std::span<const double>(x.data(), static_cast<std::size_t>(x.size())); };
        auto kernel_row = [&](const char* method, const std::vector<double>& z0, double point, double var) {
            io::ResultRow r;
            r.method = method;
            r.target = "mu1";
            r.z0 = z0;
            r.point = point;
            r.se = std::sqrt(var);
            r.level = s.est.level;
            r.ci_lo = point - z * r.se;
            r.ci_hi = point + z * r.se;
            return r;
        };
        const double nan = std::numeric_limits<double>::quiet_NaN();
        for (int folds : {1, 4}) {
            const auto cf = kernels::cross_fit(data.t, folds, simlab::splitmix64(ctx.opt.seed ^ 0xC0FFEEULL), fitter);
            kernels::KernelConfig kc;
            kc.crossfit_folds = folds;
            for (const auto& z0 : z0s) {
                const auto e = kernels::aipw_kernel(z0[0], data, span_of(cf.m_hat), span_of(cf.pi_hat), kc);
                rows.push_back(kernel_row(folds == 1 ? "aipw_full" : "aipw_crossfit", z0, e.point, e.variance));
                if (folds == 1) {
                    rows.push_back(kernel_row("ipw", z0, kernels::ipw_kernel(z0[0], data, span_of(cf.pi_hat), kc), nan));
                    rows.push_back(kernel_row("or", z0, kernels::or_kernel(z0[0], data, span_of(cf.m_hat), kc), nan));
                }
            }
        }
    }
    write_results(ctx, rows);
    std::string csv = "method,target,z0,point,se,ci_lo,ci_hi\n";
    for (const auto& r : rows) {
        std::string zs;
        for (std::size_t k = 0; k < r.z0.size(); ++k) zs += (k ? ":" : "") + io::format_short(r.z0[k]);
        auto f = [](double x) { return std::isfinite(x) ? io::format_short(x) : std::string(); };
        csv += r.method + "," + r.target + "," + zs + "," + f(r.point) + "," + f(r.se) + "," + f(r.ci_lo) + "," +
               f(r.ci_hi) + "\n";
    }
    io::write_text_file(path_in(ctx, "compare.csv"), csv);
    json est = json::array();
    for (const auto& r : rows) est.push_back(row_json(r));
    return {{"command", "compare"},
            {"data", data_json(s.loaded)},
            {"basis", basis_json(s.plan.basis)},
            {"plan", plan_json(s.plan)},
            {"estimates", est}};
}

json cmd_simulate(Context& ctx) {
    const Options& o = ctx.opt;
    if (o.data.scenario.empty()) throw ArgumentError("cli.no_scenario", "simulate needs --scenario");
    simlab::MCConfig cfg;
    cfg.scenario = scenario_of(o.data);
    cfg.n = o.data.n;
    cfg.p = o.data.p > 0 ? o.data.p : default_p(cfg.scenario.id);
    cfg.reps = o.reps;
    cfg.seed = o.seed;
    cfg.estimator = simlab::estimator_from_string(o.estimator);
    if (o.target == "mu1")
        cfg.target = effect::TargetKind::mu1;
    else if (o.target == "tau")
        cfg.target = effect::TargetKind::tau;
    else
        throw ArgumentError("cli.bad_target", "--target takes mu1 or tau");
    cfg.knots = o.model.knots;
    cfg.cv.folds = o.model.folds;
    if (o.model.z0.empty()) {
        cfg.z0 = cfg.scenario.continuous_z() ? std::vector<double>{-0.4, -0.2, 0.0, 0.2, 0.4}
                                             : std::vector<double>{0.0, 1.0};
    } else {
        cfg.z0.clear();
        for (const auto& t : o.model.z0) {
            try {
                std::size_t used = 0;
                cfg.z0.push_back(std::stod(t, &used));
                if (used != t.size()) throw std::invalid_argument(t);
            } catch (const std::exception&) {
                throw ArgumentError("cli.bad_z0", "bad z0 value '" + t + "'");
            }
        }
    }
    const auto m = simlab::run_mc(cfg);

    std::string csv = "rep,seed,ok,retried,z0,point,se,error\n";
    for (const auto& r : m.replicates) {
        for (std::size_t k = 0; k < cfg.z0.size(); ++k) {
            csv += std::to_string(r.rep) + "," + std::to_string(r.seed) + "," + (r.ok ? "1" : "0") + "," +
                   (r.retried ? "1" : "0") + "," + io::format_exact(cfg.z0[k]) + ",";
            if (r.ok) csv += io::format_exact(r.point[k]) + "," + io::format_exact(std::sqrt(r.variance[k]));
            else csv += ",";
            csv += "," + io::csv_escape(r.error) + "\n";
        }
    }
    io::write_text_file(path_in(ctx, "replicates.csv"), csv);

    json pts = json::array();
    for (const auto& p : m.points)
        pts.push_back({{"z0", p.z0},
                       {"truth", p.truth},
                       {"bias", p.bias},
                       {"sd", std::sqrt(p.var)},
                       {"var", p.var},
                       {"evar", p.evar},
                       {"cov90", p.cov90},
                       {"cov95", p.cov95},
                       {"mean_ci_width", p.mean_ci_width}});
    json metrics{{"scenario", simlab::to_string(cfg.scenario.id)},
                 {"estimator", simlab::to_string(cfg.estimator)},
                 {"target", effect::to_string(cfg.target)},
                 {"estimand", cfg.scenario.continuous_z() &&
                                      (cfg.estimator == simlab::Estimator::proposed ||
                                       cfg.estimator == simlab::Estimator::rml_msm ||
                                       cfg.estimator == simlab::Estimator::oracle)
                                  ? "best_linear_approximation"
                                  : "cste"},
                 {"n", cfg.n},
                 {"p", cfg.p},
                 {"reps", cfg.reps},
                 {"seed", cfg.seed},
                 {"successes", m.successes},
                 {"failures", m.failures},
                 {"points", pts}};
    write_json(ctx, "metrics.json", metrics);
    ctx.manifest_extra["threads"] = simlab::thread_count(0);
    return metrics;
}

// ---------------------------------------------------------------------------

int run(std::vector<std::string> args, int depth = 0);

json cmd_replay(Context& ctx) {
    if (ctx.opt.manifest.empty()) throw ArgumentError("cli.no_manifest", "replay needs --manifest");
    std::ifstream in(ctx.opt.manifest);
    if (!in) throw DataError("cli.unreadable_input", "cannot open manifest '" + ctx.opt.manifest + "'");
    json m;
    try {
        m = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("cli.bad_manifest", std::string("manifest is not valid JSON: ") + e.what());
    }
    if (!m.contains("argv") || !m["argv"].is_array()) throw DataError("cli.bad_manifest", "manifest has no argv");
    std::vector<std::string> args = m["argv"].get<std::vector<std::string>>();
    for (std::size_t k = 0; k + 1 < args.size(); ++k)
        if (args[k] == "--out") args[k + 1] = ctx.opt.out;
    if (std::find(args.begin(), args.end(), "--out") == args.end()) {
        args.push_back("--out");
        args.push_back(ctx.opt.out);
    }
    return {{"replayed", m.value("command", "")}, {"exit_code", run(args, 1)}};
}

void add_data_flags(CLI::App* app, Options& o) {
    app->add_option("--input", o.data.input, "CSV file with a header row");
    app->add_option("--outcome", o.data.outcome, "outcome column");
    app->add_option("--treatment", o.data.treatment, "0/1 treatment column");
    app->add_option("--z", o.data.z, "Z columns defining the subpopulations")->delimiter(',');
    app->add_option("--v", o.data.v, "V columns (default: all other columns)")->delimiter(',');
    app->add_option("--categorical", o.data.categorical, "columns to dummy code")->delimiter(',');
    app->add_option("--continuous", o.data.continuous, "columns never dummy coded")->delimiter(',');
    app->add_option("--scenario", o.data.scenario, "synthetic scenario C1..C5 or custom instead of --input");
    app->add_option("--n", o.data.n, "synthetic sample size");
    app->add_option("--p", o.data.p, "synthetic dimension of V (default 200, or 59 for C4/C5)");
    app->add_option("--tau-intercept", o.data.tau_intercept, "custom scenario: tau(z) intercept");
    app->add_option("--tau-slope", o.data.tau_slope, "custom scenario: tau(z) slope");
}

void add_model_flags(CLI::App* app, Options& o) {
    app->add_option("--mode", o.model.mode, "model_assisted, doubly_robust or auto");
    app->add_option("--basis", o.model.basis, "binary, categorical, multi_binary, spline, mixed or auto");
    auto* k = app->add_option("--knots", o.model.knots, "interior spline knots");
    auto* a = app->add_option("--auto-knots", o.model.auto_knots, "choose the knot count by aic or bic");
    k->excludes(a);
    app->add_option("--max-knots", o.model.max_knots, "largest knot count searched by --auto-knots");
    app->add_option("--link", o.model.link, "outcome link: identity or logistic");
    app->add_option("--method", o.model.method, "proposed or rml");
    app->add_option("--folds", o.model.folds, "cross-validation folds");
    app->add_option("--level", o.model.level, "confidence level");
}

int run(std::vector<std::string> args, int depth) {
    Context ctx;
    ctx.argv = args;
    Options& o = ctx.opt;
    CLI::App app{"Covariate-specific treatment effects in high dimensions"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    auto* fit = app.add_subcommand("fit", "estimate tau(z), mu1(z), mu0(z) with confidence intervals");
    auto* diagnose = app.add_subcommand("diagnose", "standardized calibration differences per f column");
    auto* compare = app.add_subcommand("compare", "proposed, RML and kernel estimators on the same data");
    auto* simulate = app.add_subcommand("simulate", "Monte Carlo study of one estimator on a scenario");
    auto* replay = app.add_subcommand("replay", "rerun the command recorded in a manifest");
    for (auto* sc : {fit, diagnose, compare, simulate, replay}) {
        sc->add_option("--out", o.out, "output directory");
        sc->add_option("--seed", o.seed, "master seed");
    }
    for (auto* sc : {fit, diagnose, compare}) {
        add_data_flags(sc, o);
        add_model_flags(sc, o);
        sc->add_option("--z0", o.model.z0, "evaluation points (a:b for several Z columns, or grid:N)")->delimiter(',');
    }
    simulate->add_option("--scenario", o.data.scenario, "C1..C5 or custom")->required();
    simulate->add_option("--reps", o.reps, "replicates");
    simulate->add_option("--n", o.data.n, "sample size");
    simulate->add_option("--p", o.data.p, "dimension of V (default 200, or 59 for C4/C5)");
    simulate->add_option("--estimator", o.estimator, "proposed, rml_msm, aipw_kernel_full, aipw_kernel_cf4, oracle");
    simulate->add_option("--target", o.target, "mu1 or tau");
    simulate->add_option("--knots", o.model.knots, "interior spline knots for continuous Z");
    simulate->add_option("--folds", o.model.folds, "cross-validation folds");
    simulate->add_option("--z0", o.model.z0, "evaluation points")->delimiter(',');
    simulate->add_option("--tau-intercept", o.data.tau_intercept, "custom scenario: tau(z) intercept");
    simulate->add_option("--tau-slope", o.data.tau_slope, "custom scenario: tau(z) slope");
    replay->add_option("--manifest", o.manifest, "manifest.json of an earlier run")->required();

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        json err{{"error", {{"code", "cli.bad_arguments"}, {"class", "config"}, {"message", e.what()}, {"exit_code", 2}}}};
        std::cerr << err.dump() << "\n";
        return 2;
    }
    o.command = app.get_subcommands().front()->get_name();

    try {
        if (o.command == "replay" && depth > 0) throw ArgumentError("cli.bad_manifest", "a manifest cannot replay a replay");
        fs::create_directories(o.out);
        json result;
        if (o.command == "fit") result = cmd_fit(ctx);
        else if (o.command == "diagnose") result = cmd_diagnose(ctx);
        else if (o.command == "compare") result = cmd_compare(ctx);
        else if (o.command == "simulate") result = cmd_simulate(ctx);
        else return cmd_replay(ctx)["exit_code"].get<int>();
        result["warnings"] = ctx.warnings;
        if (o.command != "simulate") write_json(ctx, "results.json", result);

        json manifest{{"tool", "cste"},
                      {"version", kVersion},
                      {"command", o.command},
                      {"argv", ctx.argv},
                      {"seed", o.seed},
                      {"simd", simd::active().name},
                      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                    std::to_string(EIGEN_MINOR_VERSION)}};
        for (auto& [k, v] : ctx.manifest_extra.items()) manifest[k] = v;
        write_json(ctx, "manifest.json", manifest);
        return 0;
    } catch (const Error& e) {
        const char* cls = e.error_class() == ErrorClass::config ? "config"
                          : e.error_class() == ErrorClass::data ? "data"
                                                                : "numeric";
        json err{{"error", {{"code", e.code()}, {"class", cls}, {"message", e.what()}, {"exit_code", e.exit_code()}}}};
        std::cerr << err.dump() << "\n";
        try {
            fs::create_directories(o.out);
            write_json(ctx, "error.json", err);
        } catch (...) {
        }
        return e.exit_code();
    } catch (const fs::filesystem_error& e) {
        json err{{"error", {{"code", "cli.unwritable_output"}, {"class", "data"}, {"message", e.what()}, {"exit_code", 3}}}};
        std::cerr << err.dump() << "\n";
        return 3;
    } catch (const std::exception& e) {
        json err{{"error", {{"code", "cli.internal"}, {"class", "numeric"}, {"message", e.what()}, {"exit_code", 4}}}};
        std::cerr << err.dump() << "\n";
        try {
            write_json(ctx, "error.json", err);
        } catch (...) {
        }
        return 4;
    }
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args);
}
