#include "cspkit/covariance.hpp"

#include <cmath>
#include <numeric>

#include "cspkit/error.hpp"

namespace cspkit {

std::vector<Matrix> ClassCovarianceSet::matrices() const {
    std::vector<Matrix> out;
    out.reserve(per_class.size());
    for (const auto& c : per_class) out.push_back(c.average.matrix);
    return out;
}

SpatialCovariance spatial_covariance(const Trial& trial, bool normalize) {
    Matrix c = trial.data * trial.data.transpose();
    // Symmetrize exactly; the product is symmetric up to rounding.
    c = 0.5 * (c + c.transpose()).eval();
    if (normalize) {
        const double tr = c.trace();
        if (!(tr > 0.0))
            throw NumericalError("trial " + std::to_string(trial.id) +
                                 ": zero signal power, cannot trace-normalize covariance");
        c /= tr;
    }
    return {std::move(c), normalize};
}

std::vector<double> trial_norms(std::span<const Trial> trials) {
    if (trials.empty()) throw ValidationError("trial_norms: empty trial list");
    const auto n = trials.front().channels();
    std::vector<double> norms;
    norms.reserve(trials.size());
    for (const auto& t : trials) {
        if (t.channels() != n) throw ValidationError("trial_norms: channel counts differ");
        norms.push_back(spatial_covariance(t, false).matrix.norm());
    }
    return norms;
}

std::vector<bool> outlier_mask(std::span<const double> norms, double z_threshold) {
    if (norms.size() < 2) throw ValidationError("outlier_mask: need at least 2 norms");
    if (!(z_threshold > 0.0)) throw ValidationError("outlier_mask: z threshold must be positive");
    const double n = static_cast<double>(norms.size());
    const double mean = std::accumulate(norms.begin(), norms.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : norms) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / n);

    std::vector<bool> mask(norms.size(), false);
    if (!(sd > 0.0)) return mask;
    for (std::size_t i = 0; i < norms.size(); ++i)
        mask[i] = std::abs((norms[i] - mean) / sd) > z_threshold;
    return mask;
}

std::vector<bool> per_class_outlier_mask(const TrialSet& set, double z_threshold) {
    std::vector<bool> mask(set.size(), false);
    for (std::uint32_t c = 1; c <= set.n_classes; ++c) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < set.size(); ++i)
            if (set.trials[i].label == c) idx.push_back(i);
        if (idx.size() < 2) continue;
        std::vector<double> norms;
        norms.reserve(idx.size());
        for (auto i : idx) norms.push_back(spatial_covariance(set.trials[i], false).matrix.norm());
        const auto m = outlier_mask(norms, z_threshold);
        for (std::size_t k = 0; k < idx.size(); ++k) mask[idx[k]] = m[k];
    }
    return mask;
}

ClassCovarianceSet class_average(const TrialSet& set, const std::vector<bool>& mask) {
    if (mask.size() != set.size()) throw ValidationError("class_average: mask length mismatch");
    const auto n = static_cast<Eigen::Index>(set.n_channels);

    ClassCovarianceSet out;
    for (std::uint32_t c = 1; c <= set.n_classes; ++c) {
        ClassCovariance cc;
        cc.label = c;
        Matrix sum = Matrix::Zero(n, n);
        for (std::size_t i = 0; i < set.size(); ++i) {
            const auto& t = set.trials[i];
            if (t.label != c) continue;
            if (mask[i]) {
                ++cc.n_rejected;
                out.outlier_ids.push_back(t.id);
                continue;
            }
            sum += spatial_covariance(t, true).matrix;
            ++cc.n_retained;
        }
        if (cc.n_retained == 0)
            throw ValidationError("class " + std::to_string(c) +
                                  " has no trials left after outlier rejection");
        cc.average = {sum / static_cast<double>(cc.n_retained), true};
        out.per_class.push_back(std::move(cc));
    }
    return out;
}

bool is_valid_covariance(const Matrix& c, double sym_tol, double psd_rel_tol) {
    if (c.rows() != c.cols() || !c.allFinite()) return false;
    if ((c - c.transpose()).cwiseAbs().maxCoeff() > sym_tol) return false;
    Eigen::SelfAdjointEigenSolver<Matrix> es(c, Eigen::EigenvaluesOnly);
    const auto& ev = es.eigenvalues();
    return ev.minCoeff() >= -psd_rel_tol * std::max(ev.maxCoeff(), 0.0);
}

}  // namespace cspkit
