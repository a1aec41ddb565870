#include "cspkit/dataio.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "cspkit/error.hpp"

namespace cspkit {

namespace {

constexpr std::array<char, 6> kMagic = {'C', 'S', 'P', 'K', '1', '\0'};

using detail::get_f64;
using detail::get_u32;
using detail::put_f64;
using detail::put_u32;

}  // namespace

void validate_trial(const Trial& trial, std::uint32_t n_classes, std::uint32_t n_channels,
                    double fs) {
    const auto id = std::to_string(trial.id);
    if (trial.channels() < 2) throw ValidationError("trial " + id + ": fewer than 2 channels");
    if (trial.samples() < 2) throw ValidationError("trial " + id + ": fewer than 2 samples");
    if (static_cast<std::uint32_t>(trial.channels()) != n_channels)
        throw ValidationError("trial " + id + ": channel count " + std::to_string(trial.channels()) +
                              " does not match set (" + std::to_string(n_channels) + ")");
    if (trial.label < 1 || trial.label > n_classes)
        throw ValidationError("trial " + id + ": label " + std::to_string(trial.label) +
                              " outside 1.." + std::to_string(n_classes));
    if (trial.fs != fs) throw ValidationError("trial " + id + ": sampling rate differs from set");
    if (!trial.data.allFinite()) throw ValidationError("trial " + id + ": non-finite sample");
}

void validate_trialset(const TrialSet& set) {
    if (set.n_classes < 1) throw ValidationError("trial set: n_classes must be >= 1");
    if (!(set.fs > 0.0) || !std::isfinite(set.fs))
        throw ValidationError("trial set: sampling rate must be positive");
    if (set.n_channels < 2) throw ValidationError("trial set: fewer than 2 channels");
    for (const auto& t : set.trials) validate_trial(t, set.n_classes, set.n_channels, set.fs);
}

TrialSet read_trialset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open trial file " + path.string());

    std::array<char, kMagic.size()> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kMagic)
        throw ValidationError("not a trial file (bad magic): " + path.string());

    TrialSet set;
    set.n_classes = get_u32(in, "header");
    set.fs = get_f64(in, "header");
    set.n_channels = get_u32(in, "header");
    const std::uint32_t n_trials = get_u32(in, "header");
    if (set.n_classes < 1 || !(set.fs > 0.0) || !std::isfinite(set.fs) || set.n_channels < 2)
        throw ValidationError("malformed trial file header: " + path.string());

    set.trials.reserve(n_trials);
    for (std::uint32_t r = 0; r < n_trials; ++r) {
        const auto where = "record " + std::to_string(r) + ": ";
        const auto field = "record " + std::to_string(r);
        Trial t;
        t.id = get_u32(in, field);
        t.label = get_u32(in, field);
        const std::uint32_t n_samples = get_u32(in, field);
        t.fs = set.fs;
        if (t.label < 1 || t.label > set.n_classes)
            throw ValidationError(where + "label " + std::to_string(t.label) + " outside 1.." +
                                  std::to_string(set.n_classes));
        if (n_samples < 2) throw ValidationError(where + "fewer than 2 samples");
        t.data.resize(set.n_channels, n_samples);
        for (std::uint32_t c = 0; c < set.n_channels; ++c)
            for (std::uint32_t s = 0; s < n_samples; ++s) {
                const double v = get_f64(in, field);
                if (!std::isfinite(v)) throw ValidationError(where + "non-finite sample");
                t.data(c, s) = v;
            }
        set.trials.push_back(std::move(t));
    }
    if (in.peek() != std::char_traits<char>::eof())
        throw ValidationError("trial file has trailing bytes (channel-count mismatch?): " +
                              path.string());
    return set;
}

void write_trialset(const TrialSet& set, const std::filesystem::path& path) {
    validate_trialset(set);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());

    out.write(kMagic.data(), kMagic.size());
    put_u32(out, set.n_classes);
    put_f64(out, set.fs);
    put_u32(out, set.n_channels);
    put_u32(out, static_cast<std::uint32_t>(set.trials.size()));
    for (const auto& t : set.trials) {
        put_u32(out, t.id);
        put_u32(out, t.label);
        put_u32(out, static_cast<std::uint32_t>(t.samples()));
        for (Eigen::Index c = 0; c < t.channels(); ++c)
            for (Eigen::Index s = 0; s < t.samples(); ++s) put_f64(out, t.data(c, s));
    }
    out.flush();
    if (!out) throw std::runtime_error("I/O failure writing " + path.string());
}

std::vector<const Trial*> trials_of_class(const TrialSet& set, std::uint32_t label) {
    std::vector<const Trial*> out;
    for (const auto& t : set.trials)
        if (t.label == label) out.push_back(&t);
    return out;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open manifest " + path.string());
    const auto base = path.parent_path();

    std::vector<ManifestEntry> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        ManifestEntry e;
        std::string file;
        if (!(ss >> e.subject)) continue;
        if (!(ss >> e.session >> file))
            throw ValidationError("manifest line " + std::to_string(lineno) +
                                  ": expected 'subject session path'");
        std::string extra;
        if (ss >> extra)
            throw ValidationError("manifest line " + std::to_string(lineno) + ": trailing fields");
        e.path = file;
        if (e.path.is_relative()) e.path = base / e.path;
        entries.push_back(std::move(e));
    }
    return entries;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << "# subject session path\n";
    for (const auto& e : entries) out << e.subject << ' ' << e.session << ' ' << e.path.string() << '\n';
    if (!out) throw std::runtime_error("I/O failure writing " + path.string());
}

}  // namespace cspkit
