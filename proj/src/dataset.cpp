#include "cste/dataset.hpp"

#include <cmath>

#include "cste/error.hpp"

namespace cste {

Eigen::Index Dataset::treated_count() const noexcept {
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < t.size(); ++i) k += t[i] == 1.0;
    return k;
}

void Dataset::validate() const {
    const Eigen::Index n = y.size();
    if (n == 0) throw DataError("data.empty", "dataset has no rows");
    if (t.size() != n || z.rows() != n || v.rows() != n)
        throw ArgumentError("data.dimension_mismatch", "columns of the dataset have different lengths");
    for (Eigen::Index i = 0; i < n; ++i)
        if (t[i] != 0.0 && t[i] != 1.0)
            throw DataError("data.non_binary_treatment", "treatment must be coded 0/1");
    if (!y.allFinite() || !z.allFinite() || !v.allFinite())
        throw DataError("data.non_finite", "dataset contains non-finite values");
}

Dataset Dataset::subset(const std::vector<int>& rows) const {
    Dataset s;
    const auto k = static_cast<Eigen::Index>(rows.size());
    s.y.resize(k);
    s.t.resize(k);
    s.z.resize(k, z.cols());
    s.v.resize(k, v.cols());
    for (Eigen::Index r = 0; r < k; ++r) {
        const Eigen::Index i = rows[static_cast<std::size_t>(r)];
        s.y[r] = y[i];
        s.t[r] = t[i];
        s.z.row(r) = z.row(i);
        s.v.row(r) = v.row(i);
    }
    s.y_name = y_name;
    s.t_name = t_name;
    s.z_names = z_names;
    s.v_names = v_names;
    return s;
}

}  // namespace cste
