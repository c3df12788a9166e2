#pragma once

// Basis functions Phi(z) for the marginal structural model and the symbolic
// regressor plans f(X), g(X) built from them.

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cste/dataset.hpp"

namespace cste::design {

enum class BasisKind { binary_saturated, categorical_dummies, multi_binary_saturated, cubic_spline, mixed };

const char* to_string(BasisKind k) noexcept;
BasisKind basis_kind_from_string(const std::string& s);

struct BasisSpec {
    BasisKind kind = BasisKind::binary_saturated;

    // categorical_dummies: all observed levels (sorted) and the reference
    // level; one dummy per non-reference level, in sorted order.
    std::vector<double> levels;
    double reference = 0.0;

    // multi_binary_saturated: number of binary components.
    int num_binary = 0;

    // cubic_spline (and the continuous part of mixed): interior knots and
    // boundary knots.
    std::vector<double> knots;
    double lower = 0.0;
    double upper = 1.0;

    // Number of basis functions K (constant excluded).
    int dimension() const;
    // Number of Z components a covariate value must have.
    int z_width() const;
    bool discrete() const noexcept {
        return kind == BasisKind::binary_saturated || kind == BasisKind::categorical_dummies ||
               kind == BasisKind::multi_binary_saturated;
    }
    std::vector<double> dummy_levels() const;

    void validate() const;
};

// Knots at sample quantiles k/(num_knots+1), k = 1..num_knots, using
// Q(p) = z_(h) with h = (n+1)p interpolated between order statistics.
std::vector<double> quantile_knots(std::span<const double> z, int num_knots);

// Cubic B-spline values with boundary knots [lower, upper], first column
// dropped: length knots.size() + 3. z outside the boundary is clamped and
// *clamped (if given) is set.
std::vector<double> spline_basis(double z, std::span<const double> knots, double lower, double upper,
                                 int degree = 3, bool* clamped = nullptr);

// Full B-spline vector (knots.size() + 4 values, no column dropped).
std::vector<double> bspline_full(double z, std::span<const double> knots, double lower, double upper,
                                 bool* clamped = nullptr);

std::vector<double> phi(std::span<const double> z, const BasisSpec& basis, bool* clamped = nullptr);
// (1, Phi(z)')'
std::vector<double> phi_dag(std::span<const double> z, const BasisSpec& basis, bool* clamped = nullptr);

// Builds a basis from the Z columns of a data set. num_knots applies to the
// spline kinds.
BasisSpec make_basis(BasisKind kind, const Eigen::MatrixXd& z, int num_knots = 3);

// Phi-dagger rows for every observation: n x (K+1).
Eigen::MatrixXd phi_dag_matrix(const Eigen::MatrixXd& z, const BasisSpec& basis);

// ---------------------------------------------------------------------------
// Symbolic columns

enum class AtomSource { v, zraw, zbin, spline };

struct Atom {
    AtomSource source;
    int index;
    auto operator<=>(const Atom&) const = default;
};

// Product of atoms; the empty product is the constant column. Atoms are kept
// sorted so equality is multiset equality.
struct ColumnExpr {
    std::vector<Atom> atoms;

    bool is_const() const noexcept { return atoms.empty(); }
    bool operator==(const ColumnExpr&) const = default;
    std::string to_string() const;
    static ColumnExpr parse(const std::string& s);
};

// Product of two columns under the algebra of the basis: binary indicators
// are idempotent, distinct dummies of one categorical multiply to zero
// (returned as nullopt).
std::optional<ColumnExpr> multiply(const ColumnExpr& a, const ColumnExpr& b, const BasisSpec& basis);

// Phi(z) as symbolic columns.
std::vector<ColumnExpr> phi_columns(const BasisSpec& basis);

enum class Mode { model_assisted, doubly_robust };
const char* to_string(Mode m) noexcept;
Mode mode_from_string(const std::string& s);

// How Z enters f(X): through Phi(z) (default) or as its raw components.
enum class ZTerm { basis, raw };

struct RegressorPlan {
    Mode mode = Mode::model_assisted;
    ZTerm z_term = ZTerm::basis;
    BasisSpec basis;
    int num_v = 0;
    std::vector<ColumnExpr> f_columns;
    std::vector<ColumnExpr> g_columns;
    // Set when a doubly robust plan is built on a basis without a saturated
    // discrete model; the doubly robust interval guarantee does not apply.
    bool dr_guarantee_not_applicable = false;
};

// f = (1, V, Phi) [model_assisted] or (1, V, Phi, V x Phi) [doubly_robust];
// g = f followed by the new columns of f x Phi, duplicates removed.
RegressorPlan build_plan(Mode mode, const BasisSpec& basis, int num_v, ZTerm z_term = ZTerm::basis);

// Removes structural duplicates keeping the first occurrence.
std::vector<ColumnExpr> dedup(const std::vector<ColumnExpr>& cols);

// Materializes f and g for one observation.
std::pair<std::vector<double>, std::vector<double>> expand_row(std::span<const double> z,
                                                               std::span<const double> v,
                                                               const RegressorPlan& plan);

// Evaluates a list of columns for every row of a data set (n x cols).
Eigen::MatrixXd materialize(const std::vector<ColumnExpr>& cols, const Eigen::MatrixXd& z,
                            const Eigen::MatrixXd& v, const BasisSpec& basis);

}  // namespace cste::design
