#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cspkit/dataio.hpp"

namespace cspkit {

/// Ground-truth generator: trials are mixing * sources + sensor noise, with
/// source c-1 elevated for class c.
struct SynthSpec {
    std::uint32_t n_channels = 22;
    std::uint32_t n_classes = 4;
    std::uint32_t trials_per_class = 72;
    std::uint32_t samples_per_trial = 1000;
    double fs = 250.0;
    Matrix mixing;                      // empty: random orthogonal from the seed
    std::vector<Vector> class_profiles; // empty: baseline 1, source c-1 = class_gain
    double class_gain = 4.0;
    double noise_variance = 0.01;
    double outlier_rate = 0.0;
    double outlier_gain = 20.0;
    bool band_limited = false;          // sources filtered to 8-30 Hz
    std::uint64_t seed = 1;
    // Sessions share mixing and profiles but draw independent trials.
    std::string session = "train";
};

struct GroundTruth {
    Matrix mixing;
    std::vector<Vector> class_profiles;
    double noise_variance = 0.0;
    std::vector<bool> outlier;           // per trial, in TrialSet order
    std::vector<std::uint32_t> outlier_ids;

    /// mixing * diag(profile_c) * mixing' + noise * I, trace-normalized.
    Matrix class_covariance(std::uint32_t label) const;
};

struct SynthResult {
    TrialSet trials;
    GroundTruth truth;
};

void validate(const SynthSpec& spec);
SynthResult generate(const SynthSpec& spec);

Matrix random_orthogonal(Eigen::Index n, std::uint64_t seed);

}  // namespace cspkit
