#include "cspkit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>

#include "cspkit/error.hpp"
#include "cspkit/preprocess.hpp"
#include "cspkit/seed.hpp"

namespace cspkit {

namespace {

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = nd(rng);
    return m;
}

std::vector<Vector> default_profiles(const SynthSpec& spec) {
    std::vector<Vector> out;
    for (std::uint32_t c = 0; c < spec.n_classes; ++c) {
        Vector p = Vector::Ones(spec.n_channels);
        p(c) = spec.class_gain;
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace

Matrix GroundTruth::class_covariance(std::uint32_t label) const {
    const auto& p = class_profiles.at(label - 1);
    Matrix c = mixing * p.asDiagonal() * mixing.transpose();
    c += noise_variance * Matrix::Identity(c.rows(), c.cols());
    return c / c.trace();
}

Matrix random_orthogonal(Eigen::Index n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const Matrix g = gaussian_matrix(n, n, rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(n, n);
    const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index i = 0; i < n; ++i)
        if (r(i, i) < 0.0) q.col(i) *= -1.0;
    return q;
}

void validate(const SynthSpec& spec) {
    if (spec.n_channels < 2) throw ValidationError("synth: need at least 2 channels");
    if (spec.n_classes < 1) throw ValidationError("synth: need at least 1 class");
    if (spec.class_profiles.empty() && spec.n_classes > spec.n_channels)
        throw ValidationError("synth: default profiles need n_classes <= n_channels");
    if (spec.samples_per_trial < 2) throw ValidationError("synth: need at least 2 samples per trial");
    if (!(spec.fs > 0.0)) throw ValidationError("synth: sampling rate must be positive");
    if (!(spec.noise_variance >= 0.0)) throw ValidationError("synth: noise variance must be >= 0");
    if (!(spec.outlier_rate >= 0.0 && spec.outlier_rate < 1.0))
        throw ValidationError("synth: outlier rate must lie in [0, 1)");
    if (!(spec.outlier_gain > 0.0)) throw ValidationError("synth: outlier gain must be positive");
    if (!(spec.class_gain > 0.0)) throw ValidationError("synth: class gain must be positive");
    if (spec.band_limited && !(spec.fs > 60.0))
        throw ValidationError("synth: band-limited sources need fs > 60 Hz");
    const auto n = static_cast<Eigen::Index>(spec.n_channels);
    if (spec.mixing.size() != 0) {
        if (spec.mixing.rows() != n || spec.mixing.cols() != n)
            throw ValidationError("synth: mixing must be n_channels x n_channels");
        Eigen::JacobiSVD<Matrix> svd(spec.mixing);
        const auto& sv = svd.singularValues();
        if (!(sv(sv.size() - 1) > 0.0) || sv(0) / sv(sv.size() - 1) >= 1e6)
            throw ValidationError("synth: mixing is singular or ill-conditioned");
    }
    if (!spec.class_profiles.empty()) {
        if (spec.class_profiles.size() != spec.n_classes)
            throw ValidationError("synth: need one variance profile per class");
        for (const auto& p : spec.class_profiles)
            if (p.size() != n || !(p.minCoeff() > 0.0))
                throw ValidationError("synth: profiles need n_channels positive variances");
    }
}

SynthResult generate(const SynthSpec& spec) {
    validate(spec);
    const auto n = static_cast<Eigen::Index>(spec.n_channels);
    const auto t = static_cast<Eigen::Index>(spec.samples_per_trial);

    SynthResult res;
    auto& truth = res.truth;
    truth.mixing = spec.mixing.size() != 0 ? spec.mixing
                                           : random_orthogonal(n, derive_seed(spec.seed, "synth/mixing"));
    truth.class_profiles = spec.class_profiles.empty() ? default_profiles(spec) : spec.class_profiles;
    truth.noise_variance = spec.noise_variance;

    std::mt19937_64 rng(derive_seed(spec.seed, "synth/trials/" + spec.session));
    std::normal_distribution<double> nd(0.0, 1.0);

    // Presentation order: classes interleaved at random.
    std::vector<std::uint32_t> labels;
    for (std::uint32_t c = 1; c <= spec.n_classes; ++c)
        labels.insert(labels.end(), spec.trials_per_class, c);
    std::shuffle(labels.begin(), labels.end(), rng);

    // A fixed number of outliers per class, positions drawn at random.
    const auto per_class_outliers =
        static_cast<std::uint32_t>(std::llround(spec.outlier_rate * spec.trials_per_class));
    truth.outlier.assign(labels.size(), false);
    for (std::uint32_t c = 1; c <= spec.n_classes; ++c) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == c) idx.push_back(i);
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::uint32_t k = 0; k < per_class_outliers && k < idx.size(); ++k) truth.outlier[idx[k]] = true;
    }

    std::optional<IIRFilterSpec> band;
    if (spec.band_limited) band = design_bandpass(4, 8.0, 30.0, spec.fs);

    auto& set = res.trials;
    set.n_classes = spec.n_classes;
    set.fs = spec.fs;
    set.n_channels = spec.n_channels;
    set.trials.reserve(labels.size());
    const double noise_sd = std::sqrt(spec.noise_variance);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const Vector sd = truth.class_profiles[labels[i] - 1].cwiseSqrt();
        Matrix sources = gaussian_matrix(n, t, rng);
        if (band) {
            std::vector<double> row(static_cast<std::size_t>(t));
            for (Eigen::Index r = 0; r < n; ++r) {
                for (Eigen::Index s = 0; s < t; ++s) row[s] = sources(r, s);
                row = filter_signal(*band, std::move(row));
                for (Eigen::Index s = 0; s < t; ++s) sources(r, s) = row[s];
            }
        }
        sources = sd.asDiagonal() * sources;
        Matrix data = truth.mixing * sources;
        if (noise_sd > 0.0) data += noise_sd * gaussian_matrix(n, t, rng);

        if (truth.outlier[i]) {
            // Artifact burst: a random spatial pattern carrying as much power
            // as the clean trial, then the whole trial scaled by the gain.
            Vector pattern = gaussian_matrix(n, 1, rng).col(0);
            pattern.normalize();
            const double power = data.squaredNorm() / static_cast<double>(t);
            const Matrix burst = gaussian_matrix(1, t, rng) * std::sqrt(power);
            data = spec.outlier_gain * (data + pattern * burst);
            truth.outlier_ids.push_back(static_cast<std::uint32_t>(i));
        }

        Trial trial;
        trial.id = static_cast<std::uint32_t>(i);
        trial.label = labels[i];
        trial.fs = spec.fs;
        trial.data = std::move(data);
        set.trials.push_back(std::move(trial));
    }
    return res;
}

}  // namespace cspkit
