#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cspkit {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// One epoch of multichannel EEG. `data` is channels x samples, row = channel.
/// Labels are 1-based class indices.
struct Trial {
    std::uint32_t id = 0;
    std::uint32_t label = 1;
    double fs = 0.0;
    Matrix data;

    Eigen::Index channels() const { return data.rows(); }
    Eigen::Index samples() const { return data.cols(); }
};

struct TrialSet {
    std::uint32_t n_classes = 0;
    double fs = 0.0;
    std::uint32_t n_channels = 0;
    std::vector<Trial> trials;

    std::size_t size() const { return trials.size(); }
    bool empty() const { return trials.empty(); }
};

/// Throws ValidationError when a trial breaks the Trial invariants with respect
/// to its containing set (channel count, label range, finiteness, N >= 2, T >= 2).
void validate_trial(const Trial& trial, std::uint32_t n_classes, std::uint32_t n_channels,
                    double fs);
void validate_trialset(const TrialSet& set);

/// Binary trial file:
///   "CSPK1\0" | n_classes u32 | fs_hz f64 | n_channels u32 | n_trials u32
///   then per trial: id u32 | label u32 | n_samples u32 | f64 data (channels x samples, row-major)
/// All fields little-endian.
TrialSet read_trialset(const std::filesystem::path& path);
void write_trialset(const TrialSet& set, const std::filesystem::path& path);

/// Returns the trials with the given label, preserving order.
std::vector<const Trial*> trials_of_class(const TrialSet& set, std::uint32_t label);

struct ManifestEntry {
    std::string subject;
    std::string session;
    std::filesystem::path path;
};

/// Manifest text: one "subject session path" entry per line; '#' starts a
/// comment. Relative paths resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);

}  // namespace cspkit
