#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cspkit/srit2nfis.hpp"

namespace cspkit {

struct PSOConfig {
    int iterations = 10;
    int swarm_size = 10;
    double parameter_width = 0.2;  // velocity clamp, fraction of each range
    double inertia = 0.72;
    double cognitive = 1.49;
    double social = 1.49;
    std::uint64_t seed = 1;
    bool include_default = true;   // particle 0 starts at the default hyperparameters

    void validate() const;
};

/// Tuned dimensions: add threshold, novelty threshold, inter-class overlap,
/// update threshold.
struct SearchSpace {
    static constexpr std::size_t kDims = 4;
    static constexpr std::array<double, kDims> lower = {kAddThresholdMin, kNoveltyMin, kInterOverlapMin,
                                                        kUpdateThresholdMin};
    static constexpr std::array<double, kDims> upper = {kAddThresholdMax, kNoveltyMax, kInterOverlapMax,
                                                        kUpdateThresholdMax};

    static std::array<double, kDims> to_position(const HyperParams& hp);
    static HyperParams to_hyper(const std::array<double, kDims>& pos, HyperParams base = {});
};

struct PSOResult {
    HyperParams best;
    double best_fitness = 0.0;
    std::vector<double> trace;  // best-so-far fitness after each iteration
    std::size_t evaluations = 0;
};

using Fitness = std::function<double(const HyperParams&)>;

/// Global-best particle swarm maximizing `fitness` over the search space.
/// Ties keep the earlier best.
PSOResult optimize(const Fitness& fitness, const PSOConfig& cfg, const HyperParams& base = {});

/// Fitness = validation accuracy of a classifier trained from scratch on `train`.
PSOResult tune(std::span<const Sample> train, std::span<const Sample> val, std::uint32_t n_classes,
               const PSOConfig& cfg, std::size_t max_passes = 3);

struct SweepCell {
    double width = 0.0;
    int iterations = 0;
    double accuracy = 0.0;
};

/// Best validation accuracy for each (width, iterations) pair, all with the
/// same seed. A width's cells come from one run read at each iteration count;
/// the trajectory does not depend on the total iteration count.
std::vector<SweepCell> sweep(std::span<const Sample> train, std::span<const Sample> val,
                             std::uint32_t n_classes, std::span<const double> widths,
                             std::span<const int> iteration_counts, const PSOConfig& cfg,
                             std::size_t max_passes = 3);

std::string sweep_csv(std::span<const SweepCell> cells);

struct Split {
    std::vector<Sample> train;
    std::vector<Sample> validation;
};

/// Holds out the last `fraction` of each class (in presentation order).
Split stratified_tail_split(std::span<const Sample> samples, std::uint32_t n_classes,
                            double fraction = 0.25);

}  // namespace cspkit
