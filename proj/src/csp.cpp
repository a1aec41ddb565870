#include "cspkit/csp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "cspkit/error.hpp"

namespace cspkit {

namespace {

Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

double median_of(std::vector<double> v) {
    const auto n = v.size();
    auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (n % 2 == 1) return *mid;
    const double hi = *mid;
    const double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

void normalize_rows(Matrix& W) {
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
        const double n = W.row(r).norm();
        if (!(n > 0.0) || !std::isfinite(n)) throw NumericalError("spatial filter collapsed to zero");
        W.row(r) /= n;
    }
}

std::vector<std::size_t> order_descending(const std::vector<double>& scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

std::vector<double> class_priors(std::span<const std::uint32_t> labels, std::uint32_t n_classes) {
    std::vector<double> p(n_classes, 0.0);
    for (auto l : labels) p[l - 1] += 1.0;
    for (auto& v : p) v /= static_cast<double>(labels.size());
    return p;
}

void check_labels(std::span<const double> feature, std::span<const std::uint32_t> labels,
                  std::uint32_t n_classes) {
    if (feature.size() != labels.size()) throw ValidationError("feature/label length mismatch");
    if (n_classes < 2) throw ValidationError("mutual information needs at least 2 classes");
    for (auto l : labels)
        if (l < 1 || l > n_classes) throw ValidationError("label outside 1..n_classes");
}

}  // namespace

void canonicalize_signs(Matrix& W) {
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
        Eigen::Index j = 0;
        W.row(r).cwiseAbs().maxCoeff(&j);
        if (W(r, j) < 0.0) W.row(r) *= -1.0;
    }
}

SpatialFilterBank csp_two_class(const Matrix& c1, const Matrix& c2) {
    if (c1.rows() != c1.cols() || c1.rows() != c2.rows() || c2.rows() != c2.cols())
        throw ValidationError("csp_two_class: covariance dimensions differ");
    const Matrix composite = symmetrized(c1 + c2);

    Eigen::SelfAdjointEigenSolver<Matrix> comp(composite);
    if (comp.info() != Eigen::Success) throw NumericalError("eigendecomposition of composite failed");
    const Vector lambda = comp.eigenvalues();
    if (!(lambda.minCoeff() > 1e-10))
        throw NumericalError(
            "composite covariance is rank deficient (min eigenvalue " +
            std::to_string(lambda.minCoeff()) + "); reduce the channel count before CSP");

    // Whitening P = lambda^{-1/2} U', rows in descending eigenvalue order.
    const Eigen::Index n = composite.rows();
    Matrix P(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index src = n - 1 - i;
        P.row(i) = comp.eigenvectors().col(src).transpose() / std::sqrt(lambda(src));
    }

    const Matrix s1 = symmetrized(P * c1 * P.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> rot(s1);
    if (rot.info() != Eigen::Success) throw NumericalError("eigendecomposition of whitened class 1 failed");

    // B columns in descending eigenvalue order; W = B' P.
    Matrix Bt(n, n);
    for (Eigen::Index i = 0; i < n; ++i) Bt.row(i) = rot.eigenvectors().col(n - 1 - i).transpose();
    SpatialFilterBank bank;
    bank.W = Bt * P;
    canonicalize_signs(bank.W);
    bank.eigvals_per_class.push_back((bank.W * c1 * bank.W.transpose()).diagonal());
    bank.eigvals_per_class.push_back((bank.W * c2 * bank.W.transpose()).diagonal());
    bank.method = "csp-two-class";
    return bank;
}

Matrix median_ratios(const Matrix& W, const TrialSet& trials) {
    if (W.cols() != static_cast<Eigen::Index>(trials.n_channels))
        throw ValidationError("filter width does not match channel count");
    const auto k = W.rows();
    Matrix med(trials.n_classes, k);
    for (std::uint32_t c = 1; c <= trials.n_classes; ++c) {
        const auto members = trials_of_class(trials, c);
        if (members.empty()) throw ValidationError("class " + std::to_string(c) + " has no trials");
        std::vector<std::vector<double>> power(k);
        for (const Trial* t : members) {
            const Vector p = (W * t->data).rowwise().squaredNorm();
            for (Eigen::Index j = 0; j < k; ++j) power[j].push_back(p(j));
        }
        for (Eigen::Index j = 0; j < k; ++j) med(c - 1, j) = median_of(std::move(power[j]));
    }
    Matrix ratios(trials.n_classes, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const double total = med.col(j).sum();
        if (!(total > 0.0)) throw NumericalError("filter " + std::to_string(j) + " passes no power");
        ratios.col(j) = med.col(j) / total;
    }
    return ratios;
}

std::vector<double> median_score(const Matrix& W, const TrialSet& trials) {
    const Matrix r = median_ratios(W, trials);
    std::vector<double> out(static_cast<std::size_t>(r.cols()));
    for (Eigen::Index j = 0; j < r.cols(); ++j) out[j] = r(0, j);
    return out;
}

std::vector<double> median_discriminability(const Matrix& ratios) {
    const double chance = 1.0 / static_cast<double>(ratios.rows());
    std::vector<double> out(static_cast<std::size_t>(ratios.cols()));
    for (Eigen::Index j = 0; j < ratios.cols(); ++j)
        out[j] = (ratios.col(j).array() - chance).abs().maxCoeff();
    return out;
}

void select_by_median(SpatialFilterBank& bank, const TrialSet& trials, std::size_t m) {
    const auto k = static_cast<std::size_t>(bank.W.rows());
    if (m < 1 || 2 * m > k) throw ValidationError("need 1 <= m and 2m <= number of filters");
    bank.scores = median_score(bank.W, trials);
    const auto order = order_descending(bank.scores);
    bank.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
    bank.selected.insert(bank.selected.end(), order.end() - static_cast<std::ptrdiff_t>(m), order.end());
}

FeatureVector extract_features(const Trial& trial, const Matrix& W,
                               std::span<const std::size_t> selected) {
    if (selected.size() < 2) throw ValidationError("feature extraction needs at least 2 filters");
    if (W.cols() != trial.channels()) throw ValidationError("filter width does not match channel count");
    Vector var(static_cast<Eigen::Index>(selected.size()));
    for (std::size_t p = 0; p < selected.size(); ++p) {
        if (selected[p] >= static_cast<std::size_t>(W.rows()))
            throw ValidationError("selected filter index out of range");
        const Vector z = (W.row(static_cast<Eigen::Index>(selected[p])) * trial.data).transpose();
        var(p) = (z.array() - z.mean()).square().mean();
        if (!(var(p) > 0.0))
            throw NumericalError("trial " + std::to_string(trial.id) + ": filter " +
                                 std::to_string(selected[p]) + " output has zero variance");
    }
    FeatureVector f;
    f.values = (var / var.sum()).array().log();
    f.label = trial.label;
    f.trial_id = trial.id;
    return f;
}

std::vector<FeatureVector> extract_features(const TrialSet& trials, const SpatialFilterBank& bank) {
    std::vector<FeatureVector> out;
    out.reserve(trials.size());
    for (const auto& t : trials.trials) out.push_back(extract_features(t, bank.W, bank.selected));
    return out;
}

Matrix log_variance_matrix(const TrialSet& trials, const Matrix& W) {
    std::vector<std::size_t> all(static_cast<std::size_t>(W.rows()));
    std::iota(all.begin(), all.end(), 0);
    Matrix out(static_cast<Eigen::Index>(trials.size()), W.rows());
    for (std::size_t i = 0; i < trials.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = extract_features(trials.trials[i], W, all).values.transpose();
    return out;
}

double off_diagonality(const Matrix& W, std::span<const Matrix> covs) {
    double total = 0.0;
    for (const auto& c : covs) {
        Matrix t = W * c * W.transpose();
        t.diagonal().setZero();
        total += t.squaredNorm();
    }
    return total;
}

FfdiagResult ffdiag(std::span<const Matrix> covs, const FfdiagOptions& opts) {
    if (covs.size() < 2) throw ValidationError("ffdiag needs at least 2 matrices");
    if (opts.max_iter < 1 || !(opts.tol > 0.0)) throw ValidationError("ffdiag: invalid options");
    const Eigen::Index n = covs.front().rows();
    Matrix mean = Matrix::Zero(n, n);
    for (const auto& c : covs) {
        if (c.rows() != n || c.cols() != n) throw ValidationError("ffdiag: matrix dimensions differ");
        mean += c;
    }
    mean = symmetrized(mean / static_cast<double>(covs.size()));

    Eigen::SelfAdjointEigenSolver<Matrix> es(mean);
    const Vector lambda = es.eigenvalues();
    if (!(lambda.minCoeff() > 1e-10 * lambda.maxCoeff()))
        throw NumericalError("ffdiag: mean covariance is rank deficient; reduce the channel count");

    FfdiagResult res;
    res.W.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        res.W.row(i) = es.eigenvectors().col(n - 1 - i).transpose() / std::sqrt(lambda(n - 1 - i));
    normalize_rows(res.W);

    constexpr double kMaxStepNorm = 0.9;
    constexpr int kMaxHalvings = 40;
    const Matrix identity = Matrix::Identity(n, n);
    double f = off_diagonality(res.W, covs);
    res.objective.push_back(f);

    while (res.iterations < opts.max_iter) {
        if (f < opts.tol) {
            res.converged = true;
            break;
        }
        // Diagonal and off-diagonal parts of the current transforms.
        Matrix z = Matrix::Zero(n, n);
        Matrix y = Matrix::Zero(n, n);
        for (const auto& c : covs) {
            const Matrix t = symmetrized(res.W * c * res.W.transpose());
            const Vector d = t.diagonal();
            z += d * d.transpose();
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < n; ++j)
                    if (i != j) y(i, j) += d(j) * t(i, j);
        }
        // Light damping keeps the 2x2 solves bounded for nearly collinear
        // diagonal profiles.
        const double damping = 1e-10 * z.diagonal().maxCoeff();
        Matrix u = Matrix::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = i + 1; j < n; ++j) {
                const double zii = z(i, i) + damping;
                const double zjj = z(j, j) + damping;
                const double det = zii * zjj - z(i, j) * z(i, j);
                if (!(std::abs(det) > 0.0) || !std::isfinite(det))
                    throw NumericalError("ffdiag: singular update for filters " + std::to_string(i) +
                                         " and " + std::to_string(j));
                u(i, j) = (z(i, j) * y(j, i) - zii * y(i, j)) / det;
                u(j, i) = (z(i, j) * y(i, j) - zjj * y(j, i)) / det;
            }
        if (!u.allFinite()) throw NumericalError("ffdiag: non-finite update");
        if (const double un = u.norm(); un > kMaxStepNorm) u *= kMaxStepNorm / un;

        double step = 1.0;
        bool accepted = false;
        Matrix candidate;
        double f_new = f;
        for (int h = 0; h < kMaxHalvings; ++h, step *= 0.5) {
            candidate = (identity + step * u) * res.W;
            normalize_rows(candidate);
            f_new = off_diagonality(candidate, covs);
            if (f_new <= f) {
                accepted = true;
                break;
            }
        }
        ++res.iterations;
        if (!accepted) {
            // No descent left along the update direction.
            res.converged = true;
            break;
        }
        const double improvement = f - f_new;
        res.W = std::move(candidate);
        f = f_new;
        res.objective.push_back(f);
        if (f < opts.tol || improvement <= opts.tol * f) {
            res.converged = true;
            break;
        }
    }
    canonicalize_signs(res.W);
    return res;
}

double entropy_bits(std::span<const double> probabilities) {
    double h = 0.0;
    for (double p : probabilities)
        if (p > 0.0) h -= p * std::log2(p);
    return h;
}

double mutual_information_gaussian(std::span<const double> feature,
                                   std::span<const std::uint32_t> labels, std::uint32_t n_classes) {
    check_labels(feature, labels, n_classes);
    const auto priors = class_priors(labels, n_classes);
    std::vector<double> mean(n_classes, 0.0), var(n_classes, 0.0);
    std::vector<double> count(n_classes, 0.0);
    for (std::size_t i = 0; i < feature.size(); ++i) {
        mean[labels[i] - 1] += feature[i];
        count[labels[i] - 1] += 1.0;
    }
    for (std::uint32_t c = 0; c < n_classes; ++c)
        if (count[c] > 0.0) mean[c] /= count[c];
    for (std::size_t i = 0; i < feature.size(); ++i) {
        const double d = feature[i] - mean[labels[i] - 1];
        var[labels[i] - 1] += d * d;
    }
    std::size_t present = 0;
    for (std::uint32_t c = 0; c < n_classes; ++c) {
        if (count[c] == 0.0) continue;
        ++present;
        var[c] /= count[c];
        if (!(var[c] > 0.0)) return 0.0;
    }
    if (present < 2) return 0.0;

    auto log_mixture = [&](double x) {
        double best = -std::numeric_limits<double>::infinity();
        std::vector<double> terms;
        terms.reserve(n_classes);
        for (std::uint32_t c = 0; c < n_classes; ++c) {
            if (count[c] == 0.0) continue;
            const double d = x - mean[c];
            const double t = std::log(priors[c]) - 0.5 * std::log(2.0 * std::numbers::pi * var[c]) -
                             d * d / (2.0 * var[c]);
            terms.push_back(t);
            best = std::max(best, t);
        }
        double s = 0.0;
        for (double t : terms) s += std::exp(t - best);
        return best + std::log(s);
    };

    // Mixture entropy as the prior-weighted expectation of -log p(x) under
    // each component, each integrated with a 512-point midpoint rule over +-6 sd.
    constexpr int kPoints = 512;
    constexpr double kSpan = 6.0;
    const double du = 2.0 * kSpan / kPoints;
    std::vector<double> nodes(kPoints), weights(kPoints);
    double wsum = 0.0;
    for (int i = 0; i < kPoints; ++i) {
        nodes[i] = -kSpan + (i + 0.5) * du;
        weights[i] = std::exp(-0.5 * nodes[i] * nodes[i]);
        wsum += weights[i];
    }
    double h_mix = 0.0, h_cond = 0.0;
    for (std::uint32_t c = 0; c < n_classes; ++c) {
        if (count[c] == 0.0) continue;
        const double sd = std::sqrt(var[c]);
        double e = 0.0;
        for (int i = 0; i < kPoints; ++i) e -= weights[i] / wsum * log_mixture(mean[c] + sd * nodes[i]);
        h_mix += priors[c] * e;
        h_cond += priors[c] * 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * var[c]);
    }
    // Nats to bits, then remove the first-order small-sample bias of the
    // fitted per-class means and variances.
    const double raw = (h_mix - h_cond) / std::numbers::ln2;
    const double bias = 2.0 * static_cast<double>(present - 1) /
                        (2.0 * static_cast<double>(feature.size()) * std::numbers::ln2);
    return std::clamp(raw - bias, 0.0, entropy_bits(priors));
}

double mutual_information_histogram(std::span<const double> feature,
                                    std::span<const std::uint32_t> labels, std::uint32_t n_classes) {
    check_labels(feature, labels, n_classes);
    constexpr int kBins = 16;
    const auto [lo_it, hi_it] = std::minmax_element(feature.begin(), feature.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!(hi > lo)) return 0.0;

    const double n = static_cast<double>(feature.size());
    Matrix joint = Matrix::Zero(kBins, n_classes);
    for (std::size_t i = 0; i < feature.size(); ++i) {
        int b = static_cast<int>((feature[i] - lo) / (hi - lo) * kBins);
        b = std::clamp(b, 0, kBins - 1);
        joint(b, labels[i] - 1) += 1.0;
    }
    joint /= n;
    const Vector pb = joint.rowwise().sum();
    const Vector pc = joint.colwise().sum().transpose();
    double mi = 0.0;
    int occupied_joint = 0, occupied_bins = 0, occupied_classes = 0;
    for (int b = 0; b < kBins; ++b) {
        if (pb(b) > 0.0) ++occupied_bins;
        for (std::uint32_t c = 0; c < n_classes; ++c)
            if (joint(b, c) > 0.0) {
                ++occupied_joint;
                mi += joint(b, c) * std::log2(joint(b, c) / (pb(b) * pc(c)));
            }
    }
    for (std::uint32_t c = 0; c < n_classes; ++c)
        if (pc(c) > 0.0) ++occupied_classes;
    // Miller-Madow correction applied to each of the three plug-in entropies.
    const double bias =
        static_cast<double>(occupied_joint - occupied_bins - occupied_classes + 1) / (2.0 * n * std::numbers::ln2);
    std::vector<double> priors(pc.data(), pc.data() + pc.size());
    return std::clamp(mi - bias, 0.0, entropy_bits(priors));
}

ItfeScores itfe_scores(const Matrix& features, std::span<const std::uint32_t> labels,
                       std::uint32_t n_classes, MiEstimator estimator) {
    if (static_cast<std::size_t>(features.rows()) != labels.size())
        throw ValidationError("itfe_scores: feature/label count mismatch");
    ItfeScores out;
    for (Eigen::Index j = 0; j < features.cols(); ++j) {
        const Vector col = features.col(j);
        std::span<const double> f(col.data(), static_cast<std::size_t>(col.size()));
        const double spread = (col.array() - col.mean()).square().sum();
        if (!(spread > 0.0)) {
            out.scores.push_back(0.0);
            out.degenerate.push_back(true);
            continue;
        }
        out.scores.push_back(estimator == MiEstimator::gaussian
                                 ? mutual_information_gaussian(f, labels, n_classes)
                                 : mutual_information_histogram(f, labels, n_classes));
        out.degenerate.push_back(false);
    }
    return out;
}

ErrorBounds fano_bounds(double mutual_info, std::span<const double> priors) {
    if (priors.empty()) throw ValidationError("fano_bounds: no classes");
    const double h = entropy_bits(priors);
    const double log_c = std::log2(static_cast<double>(priors.size()));
    ErrorBounds b;
    b.lower = log_c > 0.0 ? std::clamp((h - mutual_info - 1.0) / log_c, 0.0, 1.0) : 0.0;
    b.upper = std::clamp(1.0 - std::exp2(mutual_info - h), 0.0, 1.0);
    return b;
}

SpatialFilterBank multiclass_csp(const ClassCovarianceSet& ccs, const TrialSet& trials,
                                 std::size_t k, const FfdiagOptions& opts, MiEstimator estimator,
                                 FfdiagResult* diagnostics) {
    if (ccs.per_class.size() < 2) throw ValidationError("multiclass CSP needs at least 2 classes");
    const auto covs = ccs.matrices();
    const auto n = static_cast<std::size_t>(covs.front().rows());
    if (k < 2 || k > n) throw ValidationError("k must satisfy 2 <= k <= number of channels");

    FfdiagResult jd = ffdiag(covs, opts);
    SpatialFilterBank bank;
    bank.W = jd.W;
    for (const auto& c : covs) bank.eigvals_per_class.push_back((bank.W * c * bank.W.transpose()).diagonal());

    std::vector<std::uint32_t> labels;
    labels.reserve(trials.size());
    for (const auto& t : trials.trials) labels.push_back(t.label);
    const auto mi = itfe_scores(log_variance_matrix(trials, bank.W), labels, trials.n_classes, estimator);
    bank.scores = mi.scores;
    const auto order = order_descending(bank.scores);
    bank.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    bank.method = estimator == MiEstimator::gaussian ? "ffdiag+itfe-gaussian" : "ffdiag+itfe-histogram";
    if (diagnostics) *diagnostics = std::move(jd);
    return bank;
}

}  // namespace cspkit
