#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace cste {

// Observation table (Y, T, Z, V). Z holds the covariates that define
// subpopulations (one column per component), V the auxiliary covariates.
struct Dataset {
    Eigen::VectorXd y;
    Eigen::VectorXd t;
    Eigen::MatrixXd z;
    Eigen::MatrixXd v;

    std::string y_name = "Y";
    std::string t_name = "T";
    std::vector<std::string> z_names;
    std::vector<std::string> v_names;

    Eigen::Index size() const noexcept { return y.size(); }
    Eigen::Index num_v() const noexcept { return v.cols(); }

    Eigen::Index treated_count() const noexcept;

    // Dimensions agree, treatment is 0/1, everything finite.
    void validate() const;

    Dataset subset(const std::vector<int>& rows) const;
};

}  // namespace cste
