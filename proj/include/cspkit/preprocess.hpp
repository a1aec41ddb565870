#pragma once

#include <array>
#include <complex>
#include <vector>

#include "cspkit/dataio.hpp"

namespace cspkit {

/// Second-order section: b0 + b1 z^-1 + b2 z^-2 over 1 + a1 z^-1 + a2 z^-2.
struct Biquad {
    std::array<double, 3> b{};
    std::array<double, 2> a{};  // a1, a2
};

struct IIRFilterSpec {
    int order = 0;
    double low_hz = 0.0;
    double high_hz = 0.0;
    double fs = 0.0;
    std::vector<Biquad> sections;
};

/// Butterworth band-pass by bilinear transform with frequency pre-warping.
/// A prototype of `order` yields 2*order poles, so `order` sections.
IIRFilterSpec design_bandpass(int order, double low_hz, double high_hz, double fs);

std::complex<double> frequency_response(const IIRFilterSpec& spec, double hz);
std::vector<std::complex<double>> poles(const IIRFilterSpec& spec);

enum class FilterPhase { causal, zero_phase };

/// Filters one signal through the cascade (transposed direct form II).
std::vector<double> filter_signal(const IIRFilterSpec& spec, std::vector<double> x);

/// Filters every channel independently. `zero_phase` runs the cascade
/// forward then backward.
Trial apply_filter(const Trial& trial, const IIRFilterSpec& spec,
                   FilterPhase phase = FilterPhase::causal);

/// Samples in [start_s, end_s) relative to the trial start.
Trial epoch(const Trial& trial, double start_s, double end_s);

}  // namespace cspkit
