#include "cste/design.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "cste/error.hpp"

namespace cste::design {

using Eigen::Index;
using Eigen::MatrixXd;

const char* to_string(BasisKind k) noexcept {
    switch (k) {
        case BasisKind::binary_saturated: return "binary_saturated";
        case BasisKind::categorical_dummies: return "categorical_dummies";
        case BasisKind::multi_binary_saturated: return "multi_binary_saturated";
        case BasisKind::cubic_spline: return "cubic_spline";
        case BasisKind::mixed: return "mixed";
    }
    return "unknown";
}

BasisKind basis_kind_from_string(const std::string& s) {
    if (s == "binary_saturated" || s == "binary") return BasisKind::binary_saturated;
    if (s == "categorical_dummies" || s == "categorical") return BasisKind::categorical_dummies;
    if (s == "multi_binary_saturated" || s == "multi_binary") return BasisKind::multi_binary_saturated;
    if (s == "cubic_spline" || s == "spline" || s == "continuous") return BasisKind::cubic_spline;
    if (s == "mixed") return BasisKind::mixed;
    throw ArgumentError("design.unknown_basis", "unknown basis kind '" + s + "'");
}

const char* to_string(Mode m) noexcept {
    return m == Mode::model_assisted ? "model_assisted" : "doubly_robust";
}

Mode mode_from_string(const std::string& s) {
    if (s == "model_assisted") return Mode::model_assisted;
    if (s == "doubly_robust") return Mode::doubly_robust;
    throw ArgumentError("design.unknown_mode", "unknown mode '" + s + "'");
}

int BasisSpec::dimension() const {
    const int spline_dim = static_cast<int>(knots.size()) + 3;
    switch (kind) {
        case BasisKind::binary_saturated: return 1;
        case BasisKind::categorical_dummies: return static_cast<int>(levels.size()) - 1;
        case BasisKind::multi_binary_saturated: return (1 << num_binary) - 1;
        case BasisKind::cubic_spline: return spline_dim;
        case BasisKind::mixed: return 1 + 2 * spline_dim;
    }
    return 0;
}

int BasisSpec::z_width() const {
    switch (kind) {
        case BasisKind::multi_binary_saturated: return num_binary;
        case BasisKind::mixed: return 2;
        default: return 1;
    }
}

std::vector<double> BasisSpec::dummy_levels() const {
    std::vector<double> out;
    for (double l : levels)
        if (l != reference) out.push_back(l);
    return out;
}

void BasisSpec::validate() const {
    switch (kind) {
        case BasisKind::binary_saturated: break;
        case BasisKind::categorical_dummies:
            if (levels.size() < 2)
                throw ArgumentError("design.bad_basis", "categorical basis needs at least two levels");
            if (std::find(levels.begin(), levels.end(), reference) == levels.end())
                throw ArgumentError("design.bad_basis", "reference level is not among the levels");
            break;
        case BasisKind::multi_binary_saturated:
            if (num_binary < 1 || num_binary > 16)
                throw ArgumentError("design.bad_basis", "multi-binary basis needs 1..16 components");
            break;
        case BasisKind::cubic_spline:
        case BasisKind::mixed:
            if (!(lower < upper)) throw ArgumentError("design.bad_basis", "spline boundary knots must satisfy lower < upper");
            for (std::size_t k = 0; k < knots.size(); ++k) {
                if (!(knots[k] > lower && knots[k] < upper))
                    throw ArgumentError("design.bad_basis", "spline knots must be interior to the boundary");
                if (k > 0 && !(knots[k] > knots[k - 1]))
                    throw ArgumentError("design.bad_basis", "spline knots must be strictly increasing");
            }
            break;
    }
}

std::vector<double> quantile_knots(std::span<const double> z, int num_knots) {
    if (num_knots < 1) throw ArgumentError("design.bad_knots", "num_knots must be at least 1");
    std::vector<double> s(z.begin(), z.end());
    std::sort(s.begin(), s.end());
    const auto distinct = static_cast<int>(std::unique(s.begin(), s.end()) - s.begin());
    if (distinct < num_knots + 2)
        throw DegenerateData("design", "too few distinct values (" + std::to_string(distinct) +
                                           ") for " + std::to_string(num_knots) + " knots");
    s.assign(z.begin(), z.end());
    std::sort(s.begin(), s.end());
    const double n = static_cast<double>(s.size());
    std::vector<double> knots;
    for (int k = 1; k <= num_knots; ++k) {
        const double p = double(k) / double(num_knots + 1);
        const double h = (n + 1.0) * p;
        double q;
        if (h <= 1.0) {
            q = s.front();
        } else if (h >= n) {
            q = s.back();
        } else {
            const auto lo = static_cast<std::size_t>(std::floor(h));
            const double frac = h - std::floor(h);
            q = s[lo - 1] + frac * (s[lo] - s[lo - 1]);
        }
        knots.push_back(q);
    }
    for (std::size_t k = 0; k < knots.size(); ++k) {
        const bool increasing = k == 0 || knots[k] > knots[k - 1];
        if (!increasing || !(knots[k] > s.front() && knots[k] < s.back()))
            throw DegenerateData("design", "sample quantile knots are tied or not interior");
    }
    return knots;
}

std::vector<double> bspline_full(double z, std::span<const double> knots, double lower, double upper,
                                 bool* clamped) {
    constexpr int order = 4;
    constexpr int deg = order - 1;
    const int k = static_cast<int>(knots.size());
    std::vector<double> t;
    t.reserve(static_cast<std::size_t>(k + 2 * order));
    for (int i = 0; i < order; ++i) t.push_back(lower);
    t.insert(t.end(), knots.begin(), knots.end());
    for (int i = 0; i < order; ++i) t.push_back(upper);

    if (!std::isfinite(z)) throw DataError("design.non_finite", "spline argument is not finite");
    if (z < lower || z > upper) {
        if (clamped) *clamped = true;
        z = std::clamp(z, lower, upper);
    }

    // knot span: t[mu] <= z < t[mu+1], with the right boundary in the last span
    int mu = k + deg;
    if (z < upper) {
        mu = static_cast<int>(std::upper_bound(t.begin() + deg, t.begin() + k + order, z) - t.begin()) - 1;
    }

    double nb[order] = {1.0, 0.0, 0.0, 0.0};
    double left[order] = {};
    double right[order] = {};
    for (int j = 1; j <= deg; ++j) {
        left[j] = z - t[static_cast<std::size_t>(mu + 1 - j)];
        right[j] = t[static_cast<std::size_t>(mu + j)] - z;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double temp = nb[r] / (right[r + 1] + left[j - r]);
            nb[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        nb[j] = saved;
    }
    std::vector<double> out(static_cast<std::size_t>(k + order), 0.0);
    for (int r = 0; r < order; ++r) out[static_cast<std::size_t>(mu - deg + r)] = nb[r];
    return out;
}

std::vector<double> spline_basis(double z, std::span<const double> knots, double lower, double upper,
                                 int degree, bool* clamped) {
    if (degree != 3) throw ArgumentError("design.bad_degree", "only cubic splines (degree 3) are supported");
    std::vector<double> full = bspline_full(z, knots, lower, upper, clamped);
    full.erase(full.begin());
    return full;
}

namespace {

double check_binary(double x) {
    if (x != 0.0 && x != 1.0) throw DataError("design.non_binary_z", "binary Z component must be 0 or 1");
    return x;
}

// Values of the zbin and spline atoms for one covariate value.
struct ZAtoms {
    std::vector<double> zbin;
    std::vector<double> spline;
};

ZAtoms z_atoms(std::span<const double> z, const BasisSpec& b, bool* clamped) {
    if (static_cast<int>(z.size()) != b.z_width())
        throw ArgumentError("design.z_width", "covariate value has " + std::to_string(z.size()) +
                                                  " components, basis expects " + std::to_string(b.z_width()));
    ZAtoms a;
    switch (b.kind) {
        case BasisKind::binary_saturated: a.zbin = {check_binary(z[0])}; break;
        case BasisKind::categorical_dummies: {
            if (std::find(b.levels.begin(), b.levels.end(), z[0]) == b.levels.end()) {
                std::ostringstream os;
                os << "categorical level " << z[0] << " was not seen when the basis was built";
                throw DataError("design.unknown_level", os.str());
            }
            for (double l : b.dummy_levels()) a.zbin.push_back(z[0] == l ? 1.0 : 0.0);
            break;
        }
        case BasisKind::multi_binary_saturated:
            for (double x : z) a.zbin.push_back(check_binary(x));
            break;
        case BasisKind::cubic_spline:
            a.spline = spline_basis(z[0], b.knots, b.lower, b.upper, 3, clamped);
            break;
        case BasisKind::mixed:
            a.zbin = {check_binary(z[0])};
            a.spline = spline_basis(z[1], b.knots, b.lower, b.upper, 3, clamped);
            break;
    }
    return a;
}

double eval_expr(const ColumnExpr& c, std::span<const double> z, std::span<const double> v, const ZAtoms& za) {
    double x = 1.0;
    for (const Atom& a : c.atoms) {
        const auto i = static_cast<std::size_t>(a.index);
        switch (a.source) {
            case AtomSource::v: x *= v[i]; break;
            case AtomSource::zraw: x *= z[i]; break;
            case AtomSource::zbin: x *= za.zbin[i]; break;
            case AtomSource::spline: x *= za.spline[i]; break;
        }
    }
    return x;
}

}  // namespace

std::vector<double> phi(std::span<const double> z, const BasisSpec& basis, bool* clamped) {
    const ZAtoms za = z_atoms(z, basis, clamped);
    std::vector<double> out;
    for (const ColumnExpr& c : phi_columns(basis)) out.push_back(eval_expr(c, z, {}, za));
    return out;
}

std::vector<double> phi_dag(std::span<const double> z, const BasisSpec& basis, bool* clamped) {
    std::vector<double> out{1.0};
    const std::vector<double> p = phi(z, basis, clamped);
    out.insert(out.end(), p.begin(), p.end());
    return out;
}

BasisSpec make_basis(BasisKind kind, const MatrixXd& z, int num_knots) {
    BasisSpec b;
    b.kind = kind;
    if (z.rows() == 0) throw DataError("data.empty", "no rows to build a basis from");
    auto continuous = [&](Index c) {
        std::vector<double> col(z.col(c).data(), z.col(c).data() + z.rows());
        b.knots = quantile_knots(col, num_knots);
        b.lower = z.col(c).minCoeff();
        b.upper = z.col(c).maxCoeff();
    };
    switch (kind) {
        case BasisKind::binary_saturated:
            if (z.cols() != 1) throw ArgumentError("design.z_width", "binary basis needs one Z column");
            for (Index i = 0; i < z.rows(); ++i) check_binary(z(i, 0));
            break;
        case BasisKind::categorical_dummies: {
            if (z.cols() != 1) throw ArgumentError("design.z_width", "categorical basis needs one Z column");
            std::map<double, long> counts;
            for (Index i = 0; i < z.rows(); ++i) ++counts[z(i, 0)];
            if (counts.size() < 2) throw DegenerateData("design", "categorical Z has a single level");
            long best = -1;
            for (const auto& [level, count] : counts) {
                b.levels.push_back(level);
                if (count > best) {
                    best = count;
                    b.reference = level;
                }
            }
            break;
        }
        case BasisKind::multi_binary_saturated:
            b.num_binary = static_cast<int>(z.cols());
            for (Index i = 0; i < z.rows(); ++i)
                for (Index c = 0; c < z.cols(); ++c) check_binary(z(i, c));
            break;
        case BasisKind::cubic_spline:
            if (z.cols() != 1) throw ArgumentError("design.z_width", "spline basis needs one Z column");
            continuous(0);
            break;
        case BasisKind::mixed:
            if (z.cols() != 2)
                throw ArgumentError("design.z_width", "mixed basis needs a binary and a continuous Z column");
            for (Index i = 0; i < z.rows(); ++i) check_binary(z(i, 0));
            continuous(1);
            break;
    }
    b.validate();
    return b;
}

MatrixXd phi_dag_matrix(const MatrixXd& z, const BasisSpec& basis) {
    const int k = basis.dimension();
    MatrixXd out(z.rows(), k + 1);
    std::vector<double> row(static_cast<std::size_t>(z.cols()));
    for (Index i = 0; i < z.rows(); ++i) {
        for (Index c = 0; c < z.cols(); ++c) row[static_cast<std::size_t>(c)] = z(i, c);
        const std::vector<double> pd = phi_dag(row, basis);
        for (int j = 0; j <= k; ++j) out(i, j) = pd[static_cast<std::size_t>(j)];
    }
    return out;
}

// ---------------------------------------------------------------------------

std::string ColumnExpr::to_string() const {
    if (atoms.empty()) return "1";
    std::string s;
    for (const Atom& a : atoms) {
        if (!s.empty()) s += '*';
        switch (a.source) {
            case AtomSource::v: s += 'V'; break;
            case AtomSource::zraw: s += 'z'; break;
            case AtomSource::zbin: s += 'Z'; break;
            case AtomSource::spline: s += 'B'; break;
        }
        s += std::to_string(a.index + 1);
    }
    return s;
}

ColumnExpr ColumnExpr::parse(const std::string& s) {
    ColumnExpr c;
    if (s == "1") return c;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, '*')) {
        if (tok.size() < 2) throw ArgumentError("design.bad_column", "cannot parse column '" + s + "'");
        Atom a{AtomSource::v, 0};
        switch (tok[0]) {
            case 'V': a.source = AtomSource::v; break;
            case 'z': a.source = AtomSource::zraw; break;
            case 'Z': a.source = AtomSource::zbin; break;
            case 'B': a.source = AtomSource::spline; break;
            default: throw ArgumentError("design.bad_column", "cannot parse column '" + s + "'");
        }
        try {
            a.index = std::stoi(tok.substr(1)) - 1;
        } catch (const std::exception&) {
            throw ArgumentError("design.bad_column", "cannot parse column '" + s + "'");
        }
        if (a.index < 0) throw ArgumentError("design.bad_column", "cannot parse column '" + s + "'");
        c.atoms.push_back(a);
    }
    std::sort(c.atoms.begin(), c.atoms.end());
    return c;
}

std::optional<ColumnExpr> multiply(const ColumnExpr& a, const ColumnExpr& b, const BasisSpec& basis) {
    ColumnExpr c;
    c.atoms = a.atoms;
    c.atoms.insert(c.atoms.end(), b.atoms.begin(), b.atoms.end());
    std::sort(c.atoms.begin(), c.atoms.end());
    // indicators are idempotent: Z*Z = Z
    std::vector<Atom> out;
    for (const Atom& x : c.atoms) {
        if (x.source == AtomSource::zbin && !out.empty() && out.back() == x) continue;
        out.push_back(x);
    }
    if (basis.kind == BasisKind::categorical_dummies) {
        const auto nbin = std::count_if(out.begin(), out.end(),
                                        [](const Atom& x) { return x.source == AtomSource::zbin; });
        if (nbin > 1) return std::nullopt;
    }
    c.atoms = std::move(out);
    return c;
}

std::vector<ColumnExpr> phi_columns(const BasisSpec& basis) {
    std::vector<ColumnExpr> cols;
    const int spline_dim = static_cast<int>(basis.knots.size()) + 3;
    switch (basis.kind) {
        case BasisKind::binary_saturated: cols.push_back({{{AtomSource::zbin, 0}}}); break;
        case BasisKind::categorical_dummies:
            for (int k = 0; k < basis.dimension(); ++k) cols.push_back({{{AtomSource::zbin, k}}});
            break;
        case BasisKind::multi_binary_saturated: {
            const int r = basis.num_binary;
            for (int size = 1; size <= r; ++size) {
                // subsets of the given size in lexicographic order
                std::vector<int> idx(static_cast<std::size_t>(size));
                for (int i = 0; i < size; ++i) idx[static_cast<std::size_t>(i)] = i;
                for (;;) {
                    ColumnExpr c;
                    for (int i : idx) c.atoms.push_back({AtomSource::zbin, i});
                    cols.push_back(c);
                    int pos = size - 1;
                    while (pos >= 0 && idx[static_cast<std::size_t>(pos)] == r - size + pos) --pos;
                    if (pos < 0) break;
                    ++idx[static_cast<std::size_t>(pos)];
                    for (int i = pos + 1; i < size; ++i)
                        idx[static_cast<std::size_t>(i)] = idx[static_cast<std::size_t>(i - 1)] + 1;
                }
            }
            break;
        }
        case BasisKind::cubic_spline:
            for (int k = 0; k < spline_dim; ++k) cols.push_back({{{AtomSource::spline, k}}});
            break;
        case BasisKind::mixed:
            cols.push_back({{{AtomSource::zbin, 0}}});
            for (int k = 0; k < spline_dim; ++k) cols.push_back({{{AtomSource::spline, k}}});
            for (int k = 0; k < spline_dim; ++k)
                cols.push_back({{{AtomSource::zbin, 0}, {AtomSource::spline, k}}});
            break;
    }
    return cols;
}

std::vector<ColumnExpr> dedup(const std::vector<ColumnExpr>& cols) {
    std::vector<ColumnExpr> out;
    std::set<std::vector<Atom>> seen;
    for (const ColumnExpr& c : cols)
        if (seen.insert(c.atoms).second) out.push_back(c);
    return out;
}

RegressorPlan build_plan(Mode mode, const BasisSpec& basis, int num_v, ZTerm z_term) {
    if (num_v < 0) throw ArgumentError("design.bad_num_v", "num_v must be nonnegative");
    basis.validate();
    RegressorPlan plan;
    plan.mode = mode;
    plan.basis = basis;
    plan.num_v = num_v;
    plan.z_term = basis.discrete() ? ZTerm::basis : z_term;
    plan.dr_guarantee_not_applicable = mode == Mode::doubly_robust && !basis.discrete();

    const std::vector<ColumnExpr> phis = phi_columns(basis);
    std::vector<ColumnExpr> f{ColumnExpr{}};
    for (int j = 0; j < num_v; ++j) f.push_back({{{AtomSource::v, j}}});
    if (plan.z_term == ZTerm::basis) {
        f.insert(f.end(), phis.begin(), phis.end());
    } else {
        for (int c = 0; c < basis.z_width(); ++c) f.push_back({{{AtomSource::zraw, c}}});
    }
    if (mode == Mode::doubly_robust) {
        for (const ColumnExpr& p : phis)
            for (int j = 0; j < num_v; ++j)
                if (auto prod = multiply({{{AtomSource::v, j}}}, p, basis)) f.push_back(*prod);
    }
    plan.f_columns = dedup(f);

    std::vector<ColumnExpr> g = plan.f_columns;
    for (const ColumnExpr& c : plan.f_columns)
        for (const ColumnExpr& p : phis)
            if (auto prod = multiply(c, p, basis)) g.push_back(*prod);
    plan.g_columns = dedup(g);
    return plan;
}

std::pair<std::vector<double>, std::vector<double>> expand_row(std::span<const double> z,
                                                               std::span<const double> v,
                                                               const RegressorPlan& plan) {
    if (static_cast<int>(v.size()) != plan.num_v)
        throw ArgumentError("design.v_width", "v has " + std::to_string(v.size()) + " entries, plan expects " +
                                                  std::to_string(plan.num_v));
    for (double x : v)
        if (!std::isfinite(x)) throw DataError("design.non_finite", "non-finite V entry");
    for (double x : z)
        if (!std::isfinite(x)) throw DataError("design.non_finite", "non-finite Z entry");
    const ZAtoms za = z_atoms(z, plan.basis, nullptr);
    std::pair<std::vector<double>, std::vector<double>> out;
    for (const ColumnExpr& c : plan.f_columns) out.first.push_back(eval_expr(c, z, v, za));
    for (const ColumnExpr& c : plan.g_columns) out.second.push_back(eval_expr(c, z, v, za));
    return out;
}

MatrixXd materialize(const std::vector<ColumnExpr>& cols, const MatrixXd& z, const MatrixXd& v,
                     const BasisSpec& basis) {
    const Index n = z.rows();
    if (v.rows() != n) throw ArgumentError("design.dimension_mismatch", "Z and V have different row counts");
    if (!v.allFinite() || !z.allFinite()) throw DataError("design.non_finite", "non-finite covariate entries");

    // atom columns for the basis-derived atoms
    MatrixXd zbin, spl;
    std::vector<double> zrow(static_cast<std::size_t>(z.cols()));
    for (Index i = 0; i < n; ++i) {
        for (Index c = 0; c < z.cols(); ++c) zrow[static_cast<std::size_t>(c)] = z(i, c);
        const ZAtoms za = z_atoms(zrow, basis, nullptr);
        if (i == 0) {
            zbin.resize(n, static_cast<Index>(za.zbin.size()));
            spl.resize(n, static_cast<Index>(za.spline.size()));
        }
        for (std::size_t k = 0; k < za.zbin.size(); ++k) zbin(i, static_cast<Index>(k)) = za.zbin[k];
        for (std::size_t k = 0; k < za.spline.size(); ++k) spl(i, static_cast<Index>(k)) = za.spline[k];
    }

    MatrixXd out(n, static_cast<Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) {
        auto dst = out.col(static_cast<Index>(c));
        dst.setOnes();
        for (const Atom& a : cols[c].atoms) {
            switch (a.source) {
                case AtomSource::v: dst.array() *= v.col(a.index).array(); break;
                case AtomSource::zraw: dst.array() *= z.col(a.index).array(); break;
                case AtomSource::zbin: dst.array() *= zbin.col(a.index).array(); break;
                case AtomSource::spline: dst.array() *= spl.col(a.index).array(); break;
            }
        }
    }
    return out;
}

}  // namespace cste::design
