#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cspkit/dataio.hpp"

namespace cspkit {

struct SpatialCovariance {
    Matrix matrix;
    bool normalized = false;
};

struct ClassCovariance {
    std::uint32_t label = 0;
    SpatialCovariance average;
    std::size_t n_retained = 0;
    std::size_t n_rejected = 0;
};

struct ClassCovarianceSet {
    std::vector<ClassCovariance> per_class;  // ordered by label
    std::vector<std::uint32_t> outlier_ids;

    std::vector<Matrix> matrices() const;
};

/// EE' or, with `normalize`, EE'/trace(EE').
SpatialCovariance spatial_covariance(const Trial& trial, bool normalize);

/// Frobenius norm of the un-normalized covariance EE' of every trial.
std::vector<double> trial_norms(std::span<const Trial> trials);

/// Flags entries whose z-score (population standard deviation) exceeds
/// `z_threshold` in magnitude. A constant list yields no outliers.
std::vector<bool> outlier_mask(std::span<const double> norms, double z_threshold);

/// Outlier mask computed independently within each class.
std::vector<bool> per_class_outlier_mask(const TrialSet& set, double z_threshold);

/// Mean trace-normalized covariance of the retained trials of each class.
/// `mask[i] == true` removes trial i from the average.
ClassCovarianceSet class_average(const TrialSet& set, const std::vector<bool>& mask);

/// Checks symmetry and positive semidefiniteness within the given tolerances.
bool is_valid_covariance(const Matrix& c, double sym_tol = 1e-12, double psd_rel_tol = 1e-10);

}  // namespace cspkit
