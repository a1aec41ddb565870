#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cspkit/covariance.hpp"
#include "cspkit/dataio.hpp"

namespace cspkit {

/// Spatial filters as rows: Z = W * E.
struct SpatialFilterBank {
    Matrix W;
    std::vector<Vector> eigvals_per_class;  // diag(W C_c W') when known
    std::vector<double> scores;             // one per row of W
    std::vector<std::size_t> selected;      // rows used for features, in order
    std::string method;
};

struct FeatureVector {
    Vector values;
    std::uint32_t label = 0;
    std::uint32_t trial_id = 0;
};

/// Two-class CSP: whitening of the composite C1 + C2 followed by the
/// eigendecomposition of the whitened C1. Rows are ordered by descending
/// eigenvalue of class 1, so W C1 W' = diag(l1), W C2 W' = I - diag(l1).
SpatialFilterBank csp_two_class(const Matrix& c1, const Matrix& c2);

/// Per-class median of the filtered power w_j' E E' w_j, divided by the sum
/// over classes. Row c-1 holds the ratios with class c in the numerator.
Matrix median_ratios(const Matrix& W, const TrialSet& trials);

/// Class-1 median ratio of every filter, in [0, 1].
std::vector<double> median_score(const Matrix& W, const TrialSet& trials);

/// Class-rotated ranking score for more than two classes:
/// max over c of |ratio_c - 1/n_classes|.
std::vector<double> median_discriminability(const Matrix& ratios);

/// Fills scores with the class-1 median ratio and selects the m highest
/// followed by the m lowest scoring filters.
void select_by_median(SpatialFilterBank& bank, const TrialSet& trials, std::size_t m);

/// f_p = log(var(Z_p) / sum_i var(Z_i)) over the selected rows, using the
/// biased sample variance.
FeatureVector extract_features(const Trial& trial, const Matrix& W,
                               std::span<const std::size_t> selected);
std::vector<FeatureVector> extract_features(const TrialSet& trials, const SpatialFilterBank& bank);

/// Normalized log-variance of every filter for every trial (trials x filters).
Matrix log_variance_matrix(const TrialSet& trials, const Matrix& W);

struct FfdiagOptions {
    int max_iter = 100;
    double tol = 1e-9;
};

struct FfdiagResult {
    Matrix W;                        // rows are unit-norm filters
    std::vector<double> objective;   // off-diagonality before each iteration and at exit
    int iterations = 0;
    bool converged = false;
};

/// Sum over matrices of the squared off-diagonal entries of W C W'.
double off_diagonality(const Matrix& W, std::span<const Matrix> covs);

/// Fast Frobenius diagonalization: multiplicative updates W <- (I + U) W
/// with zero-diagonal U, initialised from the whitening transform of the
/// mean matrix. Steps that would increase the off-diagonality are halved,
/// so the recorded objective never increases.
FfdiagResult ffdiag(std::span<const Matrix> covs, const FfdiagOptions& opts = {});

enum class MiEstimator { gaussian, histogram };

/// I(c; f) in bits, with per-class Gaussian fits of the scalar feature and
/// numerically integrated mixture entropy.
double mutual_information_gaussian(std::span<const double> feature,
                                   std::span<const std::uint32_t> labels, std::uint32_t n_classes);
/// Plug-in estimate over 16 equal-width bins.
double mutual_information_histogram(std::span<const double> feature,
                                    std::span<const std::uint32_t> labels, std::uint32_t n_classes);

struct ItfeScores {
    std::vector<double> scores;     // bits, one per column
    std::vector<bool> degenerate;   // zero-variance feature, score forced to 0
};

/// Mutual information between the class label and each column of `features`.
ItfeScores itfe_scores(const Matrix& features, std::span<const std::uint32_t> labels,
                       std::uint32_t n_classes, MiEstimator estimator = MiEstimator::gaussian);

struct ErrorBounds {
    double lower = 0.0;  // Fano
    double upper = 0.0;
};

/// Bayes error bounds from I(c; f) and the class priors, base-2 logs,
/// each clamped to [0, 1] independently.
ErrorBounds fano_bounds(double mutual_info, std::span<const double> priors);

double entropy_bits(std::span<const double> probabilities);

/// Joint diagonalization of the class averages, then the k filters with the
/// highest mutual information with the label (on `trials`) are selected.
SpatialFilterBank multiclass_csp(const ClassCovarianceSet& ccs, const TrialSet& trials,
                                 std::size_t k, const FfdiagOptions& opts = {},
                                 MiEstimator estimator = MiEstimator::gaussian,
                                 FfdiagResult* diagnostics = nullptr);

/// Flips each row so that its largest-magnitude entry is positive.
void canonicalize_signs(Matrix& W);

}  // namespace cspkit
