#include "cspkit/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cspkit/error.hpp"

namespace cspkit {

namespace {

using cplx = std::complex<double>;

cplx bilinear(cplx s, double fs) { return (2.0 * fs + s) / (2.0 * fs - s); }

double prewarp(double hz, double fs) { return 2.0 * fs * std::tan(std::numbers::pi * hz / fs); }

void run_sections(const std::vector<Biquad>& sections, std::vector<double>& x) {
    for (const auto& sec : sections) {
        double z1 = 0.0, z2 = 0.0;
        for (double& v : x) {
            const double in = v;
            const double out = sec.b[0] * in + z1;
            z1 = sec.b[1] * in - sec.a[0] * out + z2;
            z2 = sec.b[2] * in - sec.a[1] * out;
            v = out;
        }
    }
}

}  // namespace

IIRFilterSpec design_bandpass(int order, double low_hz, double high_hz, double fs) {
    if (order < 1) throw ValidationError("filter order must be >= 1");
    if (!(fs > 0.0)) throw ValidationError("sampling rate must be positive");
    if (!(low_hz > 0.0 && low_hz < high_hz && high_hz < fs / 2.0))
        throw ValidationError("band edges must satisfy 0 < low < high < fs/2");

    const double w1 = prewarp(low_hz, fs);
    const double w2 = prewarp(high_hz, fs);
    const double w0 = std::sqrt(w1 * w2);
    const double bw = w2 - w1;

    // Low-pass prototype poles on the left half of the unit circle, then the
    // low-pass to band-pass substitution s -> (s^2 + w0^2) / (bw s).
    std::vector<cplx> zpoles;
    for (int k = 0; k < order; ++k) {
        const double theta = std::numbers::pi * (2.0 * k + order + 1) / (2.0 * order);
        const cplx p = std::polar(1.0, theta);
        const cplx half = p * bw / 2.0;
        const cplx root = std::sqrt(half * half - w0 * w0);
        zpoles.push_back(bilinear(half + root, fs));
        zpoles.push_back(bilinear(half - root, fs));
    }

    // Pair conjugates; real poles pair with each other.
    std::vector<cplx> upper, real;
    constexpr double kImagTol = 1e-12;
    for (const auto& p : zpoles) {
        if (std::abs(p.imag()) <= kImagTol * std::max(1.0, std::abs(p)))
            real.push_back(cplx(p.real(), 0.0));
        else if (p.imag() > 0.0)
            upper.push_back(p);
    }
    std::sort(real.begin(), real.end(), [](cplx a, cplx b) { return a.real() < b.real(); });
    if (upper.size() * 2 + real.size() != zpoles.size() || real.size() % 2 != 0)
        throw NumericalError("band-pass design produced unpaired poles");

    IIRFilterSpec spec{order, low_hz, high_hz, fs, {}};
    // Each section gets one zero at z = 1 and one at z = -1.
    auto push = [&](double a1, double a2) {
        spec.sections.push_back(Biquad{{1.0, 0.0, -1.0}, {a1, a2}});
    };
    for (const auto& p : upper) push(-2.0 * p.real(), std::norm(p));
    for (std::size_t i = 0; i < real.size(); i += 2)
        push(-(real[i].real() + real[i + 1].real()), real[i].real() * real[i + 1].real());

    for (const auto& p : poles(spec))
        if (!(std::abs(p) < 1.0)) throw NumericalError("band-pass design is unstable");

    // Unit gain at the digital image of the analog center frequency.
    const double f0 = fs / std::numbers::pi * std::atan(w0 / (2.0 * fs));
    const double g = std::abs(frequency_response(spec, f0));
    if (!(g > 0.0) || !std::isfinite(g)) throw NumericalError("band-pass gain normalization failed");
    for (double& b : spec.sections.front().b) b /= g;
    return spec;
}

std::complex<double> frequency_response(const IIRFilterSpec& spec, double hz) {
    const cplx zinv = std::polar(1.0, -2.0 * std::numbers::pi * hz / spec.fs);
    cplx h = 1.0;
    for (const auto& s : spec.sections) {
        const cplx num = s.b[0] + s.b[1] * zinv + s.b[2] * zinv * zinv;
        const cplx den = 1.0 + s.a[0] * zinv + s.a[1] * zinv * zinv;
        h *= num / den;
    }
    return h;
}

std::vector<std::complex<double>> poles(const IIRFilterSpec& spec) {
    std::vector<cplx> out;
    for (const auto& s : spec.sections) {
        // z^2 + a1 z + a2 = 0
        const cplx disc = std::sqrt(cplx(s.a[0] * s.a[0] - 4.0 * s.a[1], 0.0));
        out.push_back((-s.a[0] + disc) / 2.0);
        out.push_back((-s.a[0] - disc) / 2.0);
    }
    return out;
}

std::vector<double> filter_signal(const IIRFilterSpec& spec, std::vector<double> x) {
    run_sections(spec.sections, x);
    return x;
}

Trial apply_filter(const Trial& trial, const IIRFilterSpec& spec, FilterPhase phase) {
    if (trial.fs != spec.fs)
        throw ValidationError("trial " + std::to_string(trial.id) +
                              ": sampling rate does not match filter design");
    Trial out = trial;
    std::vector<double> row(static_cast<std::size_t>(trial.samples()));
    for (Eigen::Index c = 0; c < trial.channels(); ++c) {
        for (Eigen::Index s = 0; s < trial.samples(); ++s) row[s] = trial.data(c, s);
        run_sections(spec.sections, row);
        if (phase == FilterPhase::zero_phase) {
            std::reverse(row.begin(), row.end());
            run_sections(spec.sections, row);
            std::reverse(row.begin(), row.end());
        }
        for (Eigen::Index s = 0; s < trial.samples(); ++s) out.data(c, s) = row[s];
    }
    return out;
}

Trial epoch(const Trial& trial, double start_s, double end_s) {
    const double duration = static_cast<double>(trial.samples()) / trial.fs;
    if (!(start_s >= 0.0 && start_s < end_s))
        throw ValidationError("epoch window must satisfy 0 <= start < end");
    const auto first = static_cast<Eigen::Index>(std::llround(start_s * trial.fs));
    const auto count = static_cast<Eigen::Index>(std::llround((end_s - start_s) * trial.fs));
    if (end_s > duration + 1e-9 || first + count > trial.samples())
        throw ValidationError("epoch window [" + std::to_string(start_s) + ", " +
                              std::to_string(end_s) + ") s exceeds recording of " +
                              std::to_string(duration) + " s (trial " + std::to_string(trial.id) + ")");
    if (count < 2) throw ValidationError("epoch window shorter than 2 samples");
    Trial out;
    out.id = trial.id;
    out.label = trial.label;
    out.fs = trial.fs;
    out.data = trial.data.middleCols(first, count);
    return out;
}

}  // namespace cspkit
