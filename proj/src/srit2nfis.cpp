#include "cspkit/srit2nfis.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>

#include "binary_io.hpp"
#include "cspkit/error.hpp"

namespace cspkit {

namespace {

constexpr double kUnderflow = 1e-300;
constexpr double kSignificantFiring = 0.1;
constexpr double kUpdateFiringFloor = 0.01;
constexpr double kMinSigma = 1e-6;
constexpr std::array<char, 8> kModelMagic = {'S', 'R', 'I', 'T', '2', 'M', '1', '\0'};
constexpr std::uint32_t kModelVersion = 1;

double gauss(double x, double m, double s) {
    const double d = x - m;
    return std::exp(-d * d / (2.0 * s * s));
}

void check_range(double v, double lo, double hi, const char* name) {
    if (!(v >= lo && v <= hi))
        throw ValidationError(std::string(name) + " = " + std::to_string(v) + " outside [" +
                              std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

void check_fixed(double v, double expected, const char* name) {
    if (v != expected)
        throw ValidationError(std::string(name) + " is fixed at " + std::to_string(expected));
}

}  // namespace

double IT2GaussianMF::upper(double x) const {
    if (x < mean_lo) return gauss(x, mean_lo, sigma);
    if (x > mean_hi) return gauss(x, mean_hi, sigma);
    return 1.0;
}

double IT2GaussianMF::lower(double x) const {
    return x <= center() ? gauss(x, mean_hi, sigma) : gauss(x, mean_lo, sigma);
}

ContributionWindow::ContributionWindow(std::size_t capacity) : flags_(capacity, false) {
    if (capacity == 0) throw ValidationError("contribution window needs capacity >= 1");
}

void ContributionWindow::push(bool starved) {
    if (count_ == flags_.size()) {
        if (flags_[head_]) --starved_;
    } else {
        ++count_;
    }
    flags_[head_] = starved;
    if (starved) ++starved_;
    head_ = (head_ + 1) % flags_.size();
}

std::vector<bool> ContributionWindow::contents() const {
    std::vector<bool> out;
    const std::size_t start = (head_ + flags_.size() - count_) % flags_.size();
    for (std::size_t i = 0; i < count_; ++i) out.push_back(flags_[(start + i) % flags_.size()]);
    return out;
}

Vector Rule::center() const {
    Vector c(static_cast<Eigen::Index>(mfs.size()));
    for (std::size_t i = 0; i < mfs.size(); ++i) c(i) = mfs[i].center();
    return c;
}

double Rule::mean_sigma() const {
    double s = 0.0;
    for (const auto& mf : mfs) s += mf.sigma;
    return s / static_cast<double>(mfs.size());
}

void HyperParams::validate() const {
    check_range(add_threshold_init, kAddThresholdMin, kAddThresholdMax, "add_threshold");
    check_range(novelty_threshold, kNoveltyMin, kNoveltyMax, "novelty_threshold");
    check_range(inter_overlap, kInterOverlapMin, kInterOverlapMax, "inter_overlap");
    check_range(update_threshold_init, kUpdateThresholdMin, kUpdateThresholdMax, "update_threshold");
    check_fixed(intra_overlap, 0.95, "intra_overlap");
    check_fixed(gamma, 0.99, "gamma");
    check_fixed(prune_threshold, 0.01, "prune_threshold");
    if (prune_window != 10) throw ValidationError("prune_window is fixed at 10");
    check_fixed(delete_threshold, 0.05, "delete_threshold");
    check_fixed(regularization, 0.01, "regularization");
    check_fixed(alpha, 0.5, "alpha");
}

Vector encode_target(std::uint32_t label, std::uint32_t n_classes) {
    if (label < 1 || label > n_classes)
        throw ValidationError("class " + std::to_string(label) + " outside 1.." + std::to_string(n_classes));
    Vector t = Vector::Constant(n_classes, -1.0);
    t(label - 1) = 1.0;
    return t;
}

HingeError hinge_error(const Vector& y, const Vector& target) {
    if (y.size() != target.size()) throw ValidationError("hinge_error: length mismatch");
    HingeError h;
    h.error = Vector::Zero(y.size());
    for (Eigen::Index j = 0; j < y.size(); ++j) {
        if (y(j) * target(j) > 1.0) continue;
        h.error(j) = target(j) - y(j);
    }
    h.abs_max = y.size() > 0 ? h.error.cwiseAbs().maxCoeff() : 0.0;
    return h;
}

const char* to_string(Action a) {
    switch (a) {
        case Action::grew_rule: return "grew_rule";
        case Action::updated_params: return "updated_params";
        case Action::deleted_sample: return "deleted_sample";
        case Action::reserved_sample: return "reserved_sample";
    }
    return "unknown";
}

Srit2nfis::Srit2nfis(std::uint32_t n_classes, std::size_t dim, HyperParams hyper)
    : n_classes_(n_classes),
      dim_(dim),
      hyper_(hyper),
      add_threshold_(hyper.add_threshold_init),
      update_threshold_(hyper.update_threshold_init),
      input_mean_(Vector::Zero(static_cast<Eigen::Index>(dim))),
      input_m2_(Vector::Zero(static_cast<Eigen::Index>(dim))) {
    if (n_classes < 1) throw ValidationError("classifier needs at least one class");
    if (dim < 1) throw ValidationError("classifier needs input dimension >= 1");
    hyper_.validate();
}

void Srit2nfis::check_input(const Vector& x, std::uint32_t label) const {
    if (static_cast<std::size_t>(x.size()) != dim_)
        throw ValidationError("input has dimension " + std::to_string(x.size()) + ", model expects " +
                              std::to_string(dim_));
    if (!x.allFinite()) throw ValidationError("input contains non-finite values");
    if (label < 1 || label > n_classes_) throw ValidationError("label outside 1..n_classes");
}

Prediction Srit2nfis::predict(const Vector& x) const {
    if (rules_.empty()) throw ValidationError("cannot predict with an empty rule base");
    if (static_cast<std::size_t>(x.size()) != dim_) throw ValidationError("input dimension mismatch");

    Prediction p;
    p.output = Vector::Zero(n_classes_);
    for (const auto& r : rules_) {
        double lo = 1.0, up = 1.0;
        for (std::size_t i = 0; i < dim_; ++i) {
            lo *= r.mfs[i].lower(x(i));
            up *= r.mfs[i].upper(x(i));
        }
        const double h = (1.0 - hyper_.alpha) * lo + hyper_.alpha * up;
        p.lower_firing.push_back(lo);
        p.upper_firing.push_back(up);
        p.reduced_firing.push_back(h);
        p.total_firing += h;
    }
    if (!(p.total_firing >= kUnderflow)) {
        p.no_rule_fired = true;
        p.label = 1;
        return p;
    }
    for (std::size_t r = 0; r < rules_.size(); ++r) p.output += rules_[r].weights * p.reduced_firing[r];
    p.output /= p.total_firing;
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < p.output.size(); ++j)
        if (p.output(j) > p.output(best)) best = j;
    p.label = static_cast<std::uint32_t>(best + 1);
    return p;
}

double Srit2nfis::spherical_potential(const Vector& x, std::uint32_t label) const {
    if (rules_.empty()) return 0.0;
    return spherical_potential(x, label, predict(x));
}

double Srit2nfis::spherical_potential(const Vector& x, std::uint32_t label,
                                      const Prediction& firing) const {
    if (rules_.empty() || firing.no_rule_fired) return 0.0;
    const double max_firing = *std::max_element(firing.reduced_firing.begin(), firing.reduced_firing.end());
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t r = 0; r < rules_.size(); ++r) {
        const auto& rule = rules_[r];
        if (rule.class_assoc != label) continue;
        if (!(firing.reduced_firing[r] > kSignificantFiring * max_firing)) continue;
        const double s = rule.mean_sigma();
        sum += std::exp(-(x - rule.center()).squaredNorm() / (2.0 * s * s));
        ++count;
    }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

double Srit2nfis::input_spread() const {
    if (seen_ < 2) return 1.0;
    const double spread = (input_m2_ / static_cast<double>(seen_)).cwiseSqrt().mean();
    return spread > 0.0 && std::isfinite(spread) ? spread : 1.0;
}

void Srit2nfis::grow_rule(const Vector& x, std::uint32_t label) {
    double d_intra = std::numeric_limits<double>::infinity();
    double d_inter = std::numeric_limits<double>::infinity();
    for (const auto& r : rules_) {
        const double d = (x - r.center()).norm();
        if (r.class_assoc == label)
            d_intra = std::min(d_intra, d);
        else
            d_inter = std::min(d_inter, d);
    }
    double sigma = std::isfinite(d_intra) ? hyper_.intra_overlap * d_intra : 0.5 * input_spread();
    if (std::isfinite(d_inter)) sigma = std::min(sigma, hyper_.inter_overlap * d_inter);
    sigma = std::max(sigma, kMinSigma);

    Rule rule;
    rule.class_assoc = label;
    rule.weights = encode_target(label, n_classes_);
    rule.recent_contribution = ContributionWindow(hyper_.prune_window);
    rule.mfs.reserve(dim_);
    const double half = 0.05 * sigma;
    for (std::size_t i = 0; i < dim_; ++i) rule.mfs.push_back({x(i) - half, x(i) + half, sigma});
    add_rule(std::move(rule));
}

void Srit2nfis::add_rule(Rule rule) {
    if (rule.mfs.size() != dim_) throw ValidationError("rule dimension does not match model");
    if (static_cast<std::uint32_t>(rule.weights.size()) != n_classes_)
        throw ValidationError("rule needs one weight per class");
    if (rule.class_assoc < 1 || rule.class_assoc > n_classes_) throw ValidationError("rule class out of range");
    for (const auto& mf : rule.mfs)
        if (!(mf.sigma > 0.0) || !(mf.mean_lo <= mf.mean_hi))
            throw ValidationError("membership needs sigma > 0 and mean_lo <= mean_hi");
    if (rule.recent_contribution.capacity() != hyper_.prune_window)
        rule.recent_contribution = ContributionWindow(hyper_.prune_window);
    if (rule.id == 0) rule.id = next_rule_id_;
    next_rule_id_ = std::max(next_rule_id_, rule.id + 1);
    rules_.push_back(std::move(rule));
}

void Srit2nfis::update_weights(const Prediction& pred, const HingeError& err) {
    std::vector<double> norm(rules_.size());
    double energy = 0.0;
    for (std::size_t r = 0; r < rules_.size(); ++r) {
        norm[r] = pred.reduced_firing[r] / pred.total_firing;
        if (norm[r] > kUpdateFiringFloor) energy += norm[r] * norm[r];
    }
    const double denom = energy + hyper_.regularization;
    for (std::size_t r = 0; r < rules_.size(); ++r)
        if (norm[r] > kUpdateFiringFloor) rules_[r].weights += (norm[r] / denom) * err.error;
}

std::vector<std::uint64_t> Srit2nfis::track_contributions(const Prediction& pred, std::size_t n_existing,
                                                         std::uint32_t label) {
    for (std::size_t r = 0; r < n_existing; ++r) {
        auto& rule = rules_[r];
        if (rule.class_assoc != label) continue;
        const double contribution = pred.no_rule_fired ? 0.0 : pred.reduced_firing[r] / pred.total_firing;
        rule.recent_contribution.push(contribution < hyper_.prune_threshold);
    }
    std::vector<std::uint64_t> pruned;
    for (std::size_t r = 0; r < rules_.size();) {
        const auto& rule = rules_[r];
        if (!rule.recent_contribution.all_starved()) {
            ++r;
            continue;
        }
        const auto same_class = std::count_if(rules_.begin(), rules_.end(), [&](const Rule& o) {
            return o.class_assoc == rule.class_assoc;
        });
        if (same_class <= 1) {
            ++r;
            continue;
        }
        pruned.push_back(rule.id);
        rules_.erase(rules_.begin() + static_cast<std::ptrdiff_t>(r));
    }
    return pruned;
}

LearnOutcome Srit2nfis::learn_sample(const Vector& x, std::uint32_t label) {
    check_input(x, label);

    ++seen_;
    const Vector delta = x - input_mean_;
    input_mean_ += delta / static_cast<double>(seen_);
    input_m2_ += delta.cwiseProduct(x - input_mean_);

    LearnOutcome out;
    if (rules_.empty()) {
        out.prediction.output = Vector::Zero(n_classes_);
        out.prediction.no_rule_fired = true;
    } else {
        out.prediction = predict(x);
    }
    const Prediction& pred = out.prediction;
    const Vector target = encode_target(label, n_classes_);
    const HingeError err = hinge_error(pred.output, target);
    out.abs_max_hinge = err.abs_max;
    out.potential = spherical_potential(x, label, pred);
    const double novelty = 1.0 - out.potential;

    const std::size_t n_existing = rules_.size();
    for (auto& r : rules_) ++r.age;

    // With no firing rule the output is all zeros and the hinge error is
    // capped at 1, below every admissible add threshold; growth then only
    // depends on novelty, which is maximal.
    const bool wrong = pred.no_rule_fired || pred.label != label;
    const bool error_high = pred.no_rule_fired || err.abs_max >= add_threshold_;
    if (wrong && error_high && novelty >= hyper_.novelty_threshold) {
        grow_rule(x, label);
        add_threshold_ = std::clamp(hyper_.gamma * add_threshold_ + (1.0 - hyper_.gamma) * err.abs_max,
                                    kAddThresholdMin, kAddThresholdMax);
        out.action = Action::grew_rule;
    } else if (!pred.no_rule_fired && pred.label == label && err.abs_max >= update_threshold_) {
        update_weights(pred, err);
        update_threshold_ =
            std::clamp(hyper_.gamma * update_threshold_ + (1.0 - hyper_.gamma) * err.abs_max,
                       kUpdateThresholdMin, kUpdateThresholdMax);
        out.action = Action::updated_params;
    } else if (err.abs_max < hyper_.delete_threshold) {
        out.action = Action::deleted_sample;
    } else {
        reserve_queue_.push_back({x, label});
        out.action = Action::reserved_sample;
    }

    out.pruned = track_contributions(pred, n_existing, label);
    return out;
}

TrainingReport Srit2nfis::train(std::span<const Sample> samples, std::size_t max_passes) {
    if (samples.empty()) throw ValidationError("train: no samples");
    if (max_passes < 1) throw ValidationError("train: max_passes must be >= 1");

    TrainingReport rep;
    auto process = [&](const Sample& s) {
        const auto o = learn_sample(s.x, s.label);
        switch (o.action) {
            case Action::grew_rule: ++rep.grew; break;
            case Action::updated_params: ++rep.updated; break;
            case Action::deleted_sample: ++rep.deleted; break;
            case Action::reserved_sample: ++rep.reserved; break;
        }
        rep.pruned += o.pruned.size();
        rep.add_threshold_trace.push_back(add_threshold_);
        rep.update_threshold_trace.push_back(update_threshold_);
    };

    for (const auto& s : samples) process(s);
    rep.passes = 1;
    while (rep.passes < max_passes && !reserve_queue_.empty()) {
        std::vector<Sample> queue;
        queue.swap(reserve_queue_);
        const std::size_t before = queue.size();
        for (const auto& s : queue) process(s);
        ++rep.passes;
        if (reserve_queue_.size() >= before) break;
    }
    rep.final_rules = rules_.size();
    rep.reserve_remaining = reserve_queue_;
    return rep;
}

void Srit2nfis::save(const std::filesystem::path& path) const {
    using namespace detail;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out.write(kModelMagic.data(), kModelMagic.size());
    put_u32(out, kModelVersion);
    put_u32(out, n_classes_);
    put_u64(out, dim_);
    for (double v : {hyper_.add_threshold_init, hyper_.novelty_threshold, hyper_.inter_overlap,
                     hyper_.update_threshold_init, hyper_.intra_overlap, hyper_.gamma,
                     hyper_.prune_threshold, hyper_.delete_threshold, hyper_.regularization, hyper_.alpha})
        put_f64(out, v);
    put_u64(out, hyper_.prune_window);
    put_f64(out, add_threshold_);
    put_f64(out, update_threshold_);
    put_u64(out, next_rule_id_);
    put_u64(out, seen_);
    for (std::size_t i = 0; i < dim_; ++i) {
        put_f64(out, input_mean_(i));
        put_f64(out, input_m2_(i));
    }

    put_u64(out, rules_.size());
    for (const auto& r : rules_) {
        put_u64(out, r.id);
        put_u32(out, r.class_assoc);
        put_u64(out, r.age);
        for (const auto& mf : r.mfs) {
            put_f64(out, mf.mean_lo);
            put_f64(out, mf.mean_hi);
            put_f64(out, mf.sigma);
        }
        for (std::uint32_t j = 0; j < n_classes_; ++j) put_f64(out, r.weights(j));
        const auto window = r.recent_contribution.contents();
        put_u64(out, window.size());
        for (bool b : window) put_u32(out, b ? 1 : 0);
    }
    put_u64(out, reserve_queue_.size());
    for (const auto& s : reserve_queue_) {
        put_u32(out, s.label);
        for (std::size_t i = 0; i < dim_; ++i) put_f64(out, s.x(i));
    }
    if (!out) throw std::runtime_error("I/O failure writing " + path.string());
}

Srit2nfis Srit2nfis::load(const std::filesystem::path& path) {
    using namespace detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open model file " + path.string());
    std::array<char, kModelMagic.size()> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kModelMagic)
        throw ValidationError("not a model file: " + path.string());
    if (const auto v = get_u32(in, "version"); v != kModelVersion)
        throw ValidationError("unsupported model version " + std::to_string(v));
    const auto n_classes = get_u32(in, "header");
    const auto dim = static_cast<std::size_t>(get_u64(in, "header"));
    HyperParams hp;
    for (double* v : {&hp.add_threshold_init, &hp.novelty_threshold, &hp.inter_overlap,
                      &hp.update_threshold_init, &hp.intra_overlap, &hp.gamma, &hp.prune_threshold,
                      &hp.delete_threshold, &hp.regularization, &hp.alpha})
        *v = get_f64(in, "hyperparameters");
    hp.prune_window = static_cast<std::size_t>(get_u64(in, "hyperparameters"));

    Srit2nfis m(n_classes, dim, hp);
    m.add_threshold_ = get_f64(in, "state");
    m.update_threshold_ = get_f64(in, "state");
    m.next_rule_id_ = get_u64(in, "state");
    m.seen_ = get_u64(in, "state");
    for (std::size_t i = 0; i < dim; ++i) {
        m.input_mean_(i) = get_f64(in, "state");
        m.input_m2_(i) = get_f64(in, "state");
    }

    const auto n_rules = get_u64(in, "rules");
    for (std::uint64_t k = 0; k < n_rules; ++k) {
        Rule r;
        r.id = get_u64(in, "rule");
        r.class_assoc = get_u32(in, "rule");
        r.age = get_u64(in, "rule");
        for (std::size_t i = 0; i < dim; ++i) {
            IT2GaussianMF mf;
            mf.mean_lo = get_f64(in, "rule");
            mf.mean_hi = get_f64(in, "rule");
            mf.sigma = get_f64(in, "rule");
            r.mfs.push_back(mf);
        }
        r.weights.resize(n_classes);
        for (std::uint32_t j = 0; j < n_classes; ++j) r.weights(j) = get_f64(in, "rule");
        r.recent_contribution = ContributionWindow(hp.prune_window);
        const auto w = get_u64(in, "rule");
        for (std::uint64_t i = 0; i < w; ++i) r.recent_contribution.push(get_u32(in, "rule") != 0);
        const auto next = m.next_rule_id_;
        m.add_rule(std::move(r));
        m.next_rule_id_ = next;
    }
    const auto n_queue = get_u64(in, "reserve queue");
    for (std::uint64_t k = 0; k < n_queue; ++k) {
        Sample s;
        s.label = get_u32(in, "reserve queue");
        s.x.resize(static_cast<Eigen::Index>(dim));
        for (std::size_t i = 0; i < dim; ++i) s.x(i) = get_f64(in, "reserve queue");
        m.reserve_queue_.push_back(std::move(s));
    }
    return m;
}

Evaluation evaluate(const Srit2nfis& model, std::span<const Sample> samples) {
    if (samples.empty()) throw ValidationError("evaluate: no samples");
    Evaluation ev;
    const auto n = static_cast<Eigen::Index>(model.n_classes());
    ev.confusion = Eigen::MatrixXi::Zero(n, n);
    for (const auto& s : samples) {
        if (s.label < 1 || s.label > model.n_classes()) throw ValidationError("evaluate: label out of range");
        const auto pred = model.predict(s.x);
        ++ev.confusion(s.label - 1, pred.label - 1);
    }
    ev.accuracy = static_cast<double>(ev.confusion.trace()) / static_cast<double>(samples.size());
    return ev;
}

}  // namespace cspkit
