#include "cspkit/pso.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "cspkit/error.hpp"

namespace cspkit {

void PSOConfig::validate() const {
    if (iterations < 1) throw ValidationError("PSO needs at least 1 iteration");
    if (swarm_size < 2) throw ValidationError("PSO needs a swarm of at least 2");
    if (!(parameter_width > 0.0 && parameter_width <= 1.0))
        throw ValidationError("PSO parameter width must lie in (0, 1]");
    if (!std::isfinite(inertia) || !std::isfinite(cognitive) || !std::isfinite(social))
        throw ValidationError("PSO coefficients must be finite");
}

std::array<double, SearchSpace::kDims> SearchSpace::to_position(const HyperParams& hp) {
    return {hp.add_threshold_init, hp.novelty_threshold, hp.inter_overlap, hp.update_threshold_init};
}

HyperParams SearchSpace::to_hyper(const std::array<double, kDims>& pos, HyperParams base) {
    base.add_threshold_init = std::clamp(pos[0], lower[0], upper[0]);
    base.novelty_threshold = std::clamp(pos[1], lower[1], upper[1]);
    base.inter_overlap = std::clamp(pos[2], lower[2], upper[2]);
    base.update_threshold_init = std::clamp(pos[3], lower[3], upper[3]);
    return base;
}

PSOResult optimize(const Fitness& fitness, const PSOConfig& cfg, const HyperParams& base) {
    cfg.validate();
    constexpr auto D = SearchSpace::kDims;
    using Point = std::array<double, D>;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Point vmax{};
    for (std::size_t d = 0; d < D; ++d)
        vmax[d] = cfg.parameter_width * (SearchSpace::upper[d] - SearchSpace::lower[d]);

    const auto n = static_cast<std::size_t>(cfg.swarm_size);
    std::vector<Point> pos(n), vel(n), best_pos(n);
    std::vector<double> best_fit(n, -std::numeric_limits<double>::infinity());
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t d = 0; d < D; ++d) {
            pos[p][d] = SearchSpace::lower[d] + unit(rng) * (SearchSpace::upper[d] - SearchSpace::lower[d]);
            vel[p][d] = (2.0 * unit(rng) - 1.0) * vmax[d];
        }
    if (cfg.include_default) pos[0] = SearchSpace::to_position(base);

    PSOResult res;
    Point gbest = pos[0];
    double gfit = -std::numeric_limits<double>::infinity();

    auto evaluate_swarm = [&] {
        for (std::size_t p = 0; p < n; ++p) {
            const double f = fitness(SearchSpace::to_hyper(pos[p], base));
            ++res.evaluations;
            if (f > best_fit[p]) {
                best_fit[p] = f;
                best_pos[p] = pos[p];
            }
            if (f > gfit) {
                gfit = f;
                gbest = pos[p];
            }
        }
        res.trace.push_back(gfit);
    };

    evaluate_swarm();
    for (int it = 1; it < cfg.iterations; ++it) {
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t d = 0; d < D; ++d) {
                const double r1 = unit(rng), r2 = unit(rng);
                double v = cfg.inertia * vel[p][d] + cfg.cognitive * r1 * (best_pos[p][d] - pos[p][d]) +
                           cfg.social * r2 * (gbest[d] - pos[p][d]);
                v = std::clamp(v, -vmax[d], vmax[d]);
                vel[p][d] = v;
                pos[p][d] = std::clamp(pos[p][d] + v, SearchSpace::lower[d], SearchSpace::upper[d]);
            }
        evaluate_swarm();
    }
    res.best = SearchSpace::to_hyper(gbest, base);
    res.best_fitness = gfit;
    return res;
}

PSOResult tune(std::span<const Sample> train, std::span<const Sample> val, std::uint32_t n_classes,
               const PSOConfig& cfg, std::size_t max_passes) {
    if (train.empty() || val.empty()) throw ValidationError("tune: train and validation sets must be nonempty");
    const std::size_t dim = static_cast<std::size_t>(train.front().x.size());
    auto fitness = [&](const HyperParams& hp) {
        Srit2nfis model(n_classes, dim, hp);
        model.train(train, max_passes);
        return evaluate(model, val).accuracy;
    };
    return optimize(fitness, cfg);
}

std::vector<SweepCell> sweep(std::span<const Sample> train, std::span<const Sample> val,
                             std::uint32_t n_classes, std::span<const double> widths,
                             std::span<const int> iteration_counts, const PSOConfig& cfg,
                             std::size_t max_passes) {
    if (widths.empty() || iteration_counts.empty()) throw ValidationError("sweep: empty grid");
    const int longest = *std::max_element(iteration_counts.begin(), iteration_counts.end());
    std::vector<SweepCell> cells;
    for (double w : widths) {
        PSOConfig c = cfg;
        c.parameter_width = w;
        c.iterations = longest;
        const auto res = tune(train, val, n_classes, c, max_passes);
        for (int it : iteration_counts) {
            if (it < 1) throw ValidationError("sweep: iteration counts must be >= 1");
            cells.push_back({w, it, res.trace[static_cast<std::size_t>(it - 1)]});
        }
    }
    return cells;
}

std::string sweep_csv(std::span<const SweepCell> cells) {
    auto num = [](double v) {
        std::array<char, 32> buf{};
        return std::string(buf.data(), std::to_chars(buf.data(), buf.data() + buf.size(), v).ptr);
    };
    std::ostringstream out;
    out << "width,iterations,accuracy\n";
    for (const auto& c : cells) out << num(c.width) << ',' << c.iterations << ',' << num(c.accuracy) << '\n';
    return out.str();
}

Split stratified_tail_split(std::span<const Sample> samples, std::uint32_t n_classes, double fraction) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ValidationError("validation fraction must lie in (0, 1)");
    std::vector<std::size_t> count(n_classes + 1, 0);
    for (const auto& s : samples) {
        if (s.label < 1 || s.label > n_classes) throw ValidationError("split: label out of range");
        ++count[s.label];
    }
    std::vector<std::size_t> hold(n_classes + 1, 0), seen(n_classes + 1, 0);
    for (std::uint32_t c = 1; c <= n_classes; ++c) {
        hold[c] = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(count[c])));
        if (count[c] >= 2) hold[c] = std::clamp<std::size_t>(hold[c], 1, count[c] - 1);
        else hold[c] = 0;
    }
    Split out;
    for (const auto& s : samples) {
        const bool to_val = seen[s.label] >= count[s.label] - hold[s.label];
        ++seen[s.label];
        (to_val ? out.validation : out.train).push_back(s);
    }
    return out;
}

}  // namespace cspkit
