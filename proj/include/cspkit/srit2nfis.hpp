#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cspkit/dataio.hpp"

namespace cspkit {

/// Interval type-2 Gaussian membership with uncertain mean [mean_lo, mean_hi]
/// and fixed width.
struct IT2GaussianMF {
    double mean_lo = 0.0;
    double mean_hi = 0.0;
    double sigma = 1.0;

    double upper(double x) const;
    double lower(double x) const;
    double center() const { return 0.5 * (mean_lo + mean_hi); }
};

/// Fixed-capacity record of whether a rule was starved (contribution below
/// the pruning threshold) on recent samples of its own class.
class ContributionWindow {
public:
    explicit ContributionWindow(std::size_t capacity = 10);

    void push(bool starved);
    /// Full window and every entry starved.
    bool all_starved() const { return count_ == flags_.size() && starved_ == flags_.size(); }
    std::size_t size() const { return count_; }
    std::size_t capacity() const { return flags_.size(); }
    std::size_t starved() const { return starved_; }
    /// Oldest first.
    std::vector<bool> contents() const;

private:
    std::vector<bool> flags_;
    std::size_t head_ = 0;
    std::size_t count_ = 0;
    std::size_t starved_ = 0;
};

struct Rule {
    std::uint64_t id = 0;
    std::vector<IT2GaussianMF> mfs;
    Vector weights;                 // one consequent per class
    std::uint32_t class_assoc = 1;
    std::uint64_t age = 0;          // samples processed since creation
    ContributionWindow recent_contribution;

    Vector center() const;
    double mean_sigma() const;
};

/// The first four fields are tuned per subject; the rest are fixed and
/// validate() rejects any other value.
struct HyperParams {
    double add_threshold_init = 1.05;
    double novelty_threshold = 0.30;
    double inter_overlap = 0.25;
    double update_threshold_init = 0.10;

    double intra_overlap = 0.95;
    double gamma = 0.99;
    double prune_threshold = 0.01;
    std::size_t prune_window = 10;
    double delete_threshold = 0.05;
    double regularization = 0.01;
    double alpha = 0.5;

    void validate() const;
};

inline constexpr double kAddThresholdMin = 1.01, kAddThresholdMax = 1.20;
inline constexpr double kNoveltyMin = 0.01, kNoveltyMax = 0.60;
inline constexpr double kInterOverlapMin = 0.1, kInterOverlapMax = 0.4;
inline constexpr double kUpdateThresholdMin = 0.04, kUpdateThresholdMax = 0.2;

struct Sample {
    Vector x;
    std::uint32_t label = 1;
};

/// +1 at the true class, -1 elsewhere.
Vector encode_target(std::uint32_t label, std::uint32_t n_classes);

struct HingeError {
    Vector error;
    double abs_max = 0.0;
};

/// e_j = 0 where y_j t_j > 1, t_j - y_j otherwise.
HingeError hinge_error(const Vector& y, const Vector& target);

struct Prediction {
    std::uint32_t label = 1;
    Vector output;
    std::vector<double> lower_firing;
    std::vector<double> upper_firing;
    std::vector<double> reduced_firing;
    double total_firing = 0.0;
    bool no_rule_fired = false;
};

enum class Action { grew_rule, updated_params, deleted_sample, reserved_sample };

const char* to_string(Action a);

struct LearnOutcome {
    Action action = Action::reserved_sample;
    std::vector<std::uint64_t> pruned;
    Prediction prediction;
    double abs_max_hinge = 0.0;
    double potential = 0.0;
};

struct TrainingReport {
    std::size_t grew = 0;
    std::size_t updated = 0;
    std::size_t deleted = 0;
    std::size_t reserved = 0;
    std::size_t pruned = 0;
    std::size_t passes = 0;
    std::size_t final_rules = 0;
    std::vector<double> add_threshold_trace;
    std::vector<double> update_threshold_trace;
    std::vector<Sample> reserve_remaining;
};

/// Self-regulated interval type-2 neuro-fuzzy classifier: five-layer TSK
/// network (input, IT2 fuzzification, product firing, Nie-Tan reduction,
/// normalized weighted output) with sequential learning that grows, updates,
/// prunes, deletes or reserves on every sample.
class Srit2nfis {
public:
    Srit2nfis(std::uint32_t n_classes, std::size_t dim, HyperParams hyper = {});

    Prediction predict(const Vector& x) const;

    /// Class-specific spherical potential in [0, 1]; higher means less novel.
    double spherical_potential(const Vector& x, std::uint32_t label) const;
    double spherical_potential(const Vector& x, std::uint32_t label, const Prediction& firing) const;

    LearnOutcome learn_sample(const Vector& x, std::uint32_t label);

    /// One pass over `samples`, then up to max_passes - 1 passes over the
    /// reserve queue while it keeps shrinking.
    TrainingReport train(std::span<const Sample> samples, std::size_t max_passes = 3);

    /// Appends a rule verbatim (assigns an id if 0).
    void add_rule(Rule rule);

    const std::vector<Rule>& rules() const { return rules_; }
    std::uint32_t n_classes() const { return n_classes_; }
    std::size_t dim() const { return dim_; }
    const HyperParams& hyper() const { return hyper_; }
    double add_threshold() const { return add_threshold_; }
    double update_threshold() const { return update_threshold_; }
    const std::vector<Sample>& reserve_queue() const { return reserve_queue_; }

    void save(const std::filesystem::path& path) const;
    static Srit2nfis load(const std::filesystem::path& path);

private:
    void grow_rule(const Vector& x, std::uint32_t label);
    void update_weights(const Prediction& pred, const HingeError& err);
    std::vector<std::uint64_t> track_contributions(const Prediction& pred, std::size_t n_existing,
                                                   std::uint32_t label);
    double input_spread() const;
    void check_input(const Vector& x, std::uint32_t label) const;

    std::uint32_t n_classes_;
    std::size_t dim_;
    HyperParams hyper_;
    double add_threshold_;
    double update_threshold_;
    std::vector<Rule> rules_;
    std::vector<Sample> reserve_queue_;
    std::uint64_t next_rule_id_ = 1;
    // Running input statistics (Welford).
    std::uint64_t seen_ = 0;
    Vector input_mean_;
    Vector input_m2_;
};

struct Evaluation {
    double accuracy = 0.0;
    Eigen::MatrixXi confusion;  // rows = true class
};

Evaluation evaluate(const Srit2nfis& model, std::span<const Sample> samples);

}  // namespace cspkit
