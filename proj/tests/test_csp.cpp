#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

#include "cspkit/covariance.hpp"
#include "cspkit/csp.hpp"
#include "cspkit/error.hpp"
#include "cspkit/synth.hpp"
#include "helpers.hpp"

using namespace cspkit;

namespace {

// Index of the dominant entry of each row of W*A and the worst ratio of the
// runner-up to the dominant magnitude.
std::pair<std::vector<Eigen::Index>, double> dominance(const Matrix& wa) {
    std::vector<Eigen::Index> idx;
    double worst = 0.0;
    for (Eigen::Index r = 0; r < wa.rows(); ++r) {
        const Vector a = wa.row(r).cwiseAbs();
        Eigen::Index j = 0;
        const double top = a.maxCoeff(&j);
        double second = 0.0;
        for (Eigen::Index c = 0; c < a.size(); ++c)
            if (c != j) second = std::max(second, a(c));
        idx.push_back(j);
        worst = std::max(worst, second / top);
    }
    return {idx, worst};
}

// I(c; f) by brute-force trapezoid integration of the fitted Gaussian mixture
// on a fine global grid (no bias correction).
double reference_gaussian_mi(const std::vector<double>& f, const std::vector<std::uint32_t>& y, std::uint32_t k) {
    std::vector<double> n(k, 0.0), mu(k, 0.0), var(k, 0.0);
    for (std::size_t i = 0; i < f.size(); ++i) {
        n[y[i] - 1] += 1;
        mu[y[i] - 1] += f[i];
    }
    for (std::uint32_t c = 0; c < k; ++c) mu[c] /= n[c];
    for (std::size_t i = 0; i < f.size(); ++i) var[y[i] - 1] += (f[i] - mu[y[i] - 1]) * (f[i] - mu[y[i] - 1]);
    for (std::uint32_t c = 0; c < k; ++c) var[c] /= n[c];
    double lo = 1e300, hi = -1e300, hc = 0.0;
    for (std::uint32_t c = 0; c < k; ++c) {
        lo = std::min(lo, mu[c] - 12.0 * std::sqrt(var[c]));
        hi = std::max(hi, mu[c] + 12.0 * std::sqrt(var[c]));
        hc += n[c] / static_cast<double>(f.size()) * 0.5 * std::log2(2 * std::numbers::pi * std::numbers::e * var[c]);
    }
    const int steps = 200000;
    const double dx = (hi - lo) / steps;
    double hm = 0.0;
    for (int s = 0; s <= steps; ++s) {
        const double x = lo + s * dx;
        double p = 0.0;
        for (std::uint32_t c = 0; c < k; ++c)
            p += n[c] / static_cast<double>(f.size()) * std::exp(-(x - mu[c]) * (x - mu[c]) / (2 * var[c])) /
                 std::sqrt(2 * std::numbers::pi * var[c]);
        if (p > 0.0) hm -= (s == 0 || s == steps ? 0.5 : 1.0) * p * std::log2(p) * dx;
    }
    return hm - hc;
}

}  // namespace

TEST_CASE("two-class CSP diagonalizes both classes with complementary eigenvalues") {
    std::mt19937_64 rng(12);
    for (int rep = 0; rep < 40; ++rep) {
        const Eigen::Index n = 3 + rep % 20;
        Matrix c1 = testing::random_spd(n, rng), c2 = testing::random_spd(n, rng);
        c1 /= c1.trace();
        c2 /= c2.trace();
        const auto bank = csp_two_class(c1, c2);
        const Matrix l1 = bank.W * c1 * bank.W.transpose();
        const Matrix l2 = bank.W * c2 * bank.W.transpose();
        CHECK(testing::max_offdiag(l1) < 1e-8);
        CHECK(testing::max_offdiag(l2) < 1e-8);
        CHECK(((l1 + l2).diagonal().array() - 1.0).abs().maxCoeff() < 1e-8);
        for (Eigen::Index i = 1; i < n; ++i) CHECK(l1(i, i) <= l1(i - 1, i - 1) + 1e-12);
    }
}

TEST_CASE("two-class CSP hand cases") {
    const Matrix same = Matrix::Identity(4, 4) / 4.0;
    const auto eq = csp_two_class(same, same);
    const Matrix l1 = eq.W * same * eq.W.transpose();
    CHECK(testing::max_offdiag(l1) < 1e-10);
    CHECK((l1.diagonal().array() - 0.5).abs().maxCoeff() < 1e-10);

    Matrix a = Matrix::Zero(2, 2), b = Matrix::Zero(2, 2);
    a.diagonal() << 0.8, 0.2;
    b.diagonal() << 0.2, 0.8;
    const auto bank = csp_two_class(a, b);
    CHECK(bank.W.cwiseAbs().isApprox(Matrix::Identity(2, 2), 1e-12));
    CHECK(bank.eigvals_per_class[0](0) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(bank.eigvals_per_class[0](1) == doctest::Approx(0.2).epsilon(1e-12));

    Matrix singular = Matrix::Zero(3, 3);
    singular(0, 0) = 1.0;
    CHECK_THROWS_AS(csp_two_class(singular, singular), NumericalError);
}

TEST_CASE("median scores") {
    SynthSpec spec;
    spec.n_channels = 4;
    spec.n_classes = 2;
    spec.trials_per_class = 30;
    spec.samples_per_trial = 300;
    spec.mixing = Matrix::Identity(4, 4);
    spec.class_gain = 100.0;
    spec.noise_variance = 0.0;
    const auto data = generate(spec).trials;
    const auto s = median_score(Matrix::Identity(4, 4), data);
    CHECK(s[0] > 0.9);  // passes only the class-1 source
    CHECK(s[1] < 0.1);
    for (double v : s) CHECK((v >= 0.0 && v <= 1.0));

    // Identical class statistics: every class gets about 1/n.
    SynthSpec flat = spec;
    flat.n_classes = 4;
    flat.class_gain = 1.0;
    flat.trials_per_class = 200;
    const auto same = generate(flat).trials;
    const Matrix ratios = median_ratios(Matrix::Identity(4, 4), same);
    CHECK((ratios.array() - 0.25).abs().maxCoeff() < 0.03);
    for (double v : median_discriminability(ratios)) CHECK(v < 0.03);

    // Columns of the rotated ratios sum to one.
    std::mt19937_64 rng(3);
    const Matrix w = testing::random_matrix(6, 4, rng);
    const Matrix r = median_ratios(w, same);
    CHECK((r.colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);

    TrialSet missing = same;
    missing.trials.erase(std::remove_if(missing.trials.begin(), missing.trials.end(),
                                        [](const Trial& t) { return t.label == 3; }),
                         missing.trials.end());
    CHECK_THROWS_AS(median_score(Matrix::Identity(4, 4), missing), ValidationError);
}

TEST_CASE("select_by_median takes the m highest then the m lowest") {
    SynthSpec spec;
    spec.n_channels = 8;
    spec.n_classes = 2;
    spec.trials_per_class = 40;
    spec.samples_per_trial = 300;
    const auto data = generate(spec).trials;
    const auto ccs = class_average(data, std::vector<bool>(data.size(), false));
    auto bank = csp_two_class(ccs.per_class[0].average.matrix, ccs.per_class[1].average.matrix);
    select_by_median(bank, data, 3);
    REQUIRE(bank.selected.size() == 6);
    std::vector<std::size_t> order(bank.scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return bank.scores[a] > bank.scores[b]; });
    CHECK(std::vector<std::size_t>(bank.selected.begin(), bank.selected.begin() + 3) ==
          std::vector<std::size_t>(order.begin(), order.begin() + 3));
    std::set<std::size_t> bottom(order.end() - 3, order.end());
    for (std::size_t i = 3; i < 6; ++i) CHECK(bottom.contains(bank.selected[i]));
    CHECK_THROWS_AS(select_by_median(bank, data, 5), ValidationError);
}

TEST_CASE("log-variance features") {
    // Equal row variances give log(1/2m).
    Trial t{0, 1, 100.0, Matrix(6, 4)};
    for (Eigen::Index r = 0; r < 6; ++r) t.data.row(r) << 1, -1, 1, -1;
    const std::vector<std::size_t> all{0, 1, 2, 3, 4, 5};
    const auto f = extract_features(t, Matrix::Identity(6, 6), all);
    for (double v : f.values) CHECK(std::abs(v - std::log(1.0 / 6.0)) < 1e-12);

    // Variances (3, 1).
    Trial two{0, 1, 100.0, Matrix(2, 2)};
    two.data << std::sqrt(3.0), -std::sqrt(3.0), 1, -1;
    const std::vector<std::size_t> pair{0, 1};
    const auto g = extract_features(two, Matrix::Identity(2, 2), pair);
    CHECK(g.values(0) == doctest::Approx(std::log(0.75)).epsilon(1e-12));
    CHECK(g.values(1) == doctest::Approx(std::log(0.25)).epsilon(1e-12));

    // Biased variance: the row mean is removed.
    Trial offset = two;
    offset.data.row(0).array() += 5.0;
    CHECK(extract_features(offset, Matrix::Identity(2, 2), pair).values.isApprox(g.values, 1e-12));

    std::mt19937_64 rng(2);
    for (int rep = 0; rep < 100; ++rep) {
        Trial r{0, 1, 100.0, testing::random_matrix(8, 50, rng)};
        const auto h = extract_features(r, testing::random_matrix(8, 8, rng), std::vector<std::size_t>{1, 3, 4, 7});
        CHECK(std::abs(h.values.array().exp().sum() - 1.0) < 1e-9);
        CHECK((h.values.array() <= 0.0).all());
    }

    Trial flat{0, 1, 100.0, Matrix::Ones(2, 10)};
    CHECK_THROWS_AS(extract_features(flat, Matrix::Identity(2, 2), pair), NumericalError);
    const std::vector<std::size_t> one{0};
    CHECK_THROWS_AS(extract_features(two, Matrix::Identity(2, 2), one), ValidationError);
}

TEST_CASE("ffdiag on diagonal inputs is a fixed point") {
    std::vector<Matrix> covs;
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.1, 2.0);
    for (int c = 0; c < 4; ++c) {
        Matrix d = Matrix::Zero(5, 5);
        for (int i = 0; i < 5; ++i) d(i, i) = u(rng);
        covs.push_back(d);
    }
    const auto res = ffdiag(covs, {100, 1e-12});
    CHECK(res.converged);
    CHECK(off_diagonality(res.W, covs) < 1e-20);
    const auto [idx, ratio] = dominance(res.W);
    CHECK(ratio < 1e-8);
    CHECK(std::set<Eigen::Index>(idx.begin(), idx.end()).size() == 5);
}

TEST_CASE("ffdiag recovers a planted orthogonal mixing") {
    std::mt19937_64 rng(33);
    std::uniform_real_distribution<double> u(0.1, 2.0);
    for (int rep = 0; rep < 10; ++rep) {
        const Matrix a = testing::random_orthogonal(5, rng);
        std::vector<Matrix> covs;
        for (int c = 0; c < 4; ++c) {
            Vector d(5);
            for (int i = 0; i < 5; ++i) d(i) = u(rng);
            covs.push_back(a * d.asDiagonal() * a.transpose());
        }
        const auto res = ffdiag(covs, {200, 1e-12});
        const auto [idx, ratio] = dominance(res.W * a);
        CHECK(ratio < 1e-3);
        CHECK(std::set<Eigen::Index>(idx.begin(), idx.end()).size() == 5);
        for (std::size_t i = 1; i < res.objective.size(); ++i)
            CHECK(res.objective[i] <= res.objective[i - 1] + 1e-12);
        for (Eigen::Index r = 0; r < res.W.rows(); ++r) CHECK(std::abs(res.W.row(r).norm() - 1.0) < 1e-12);
    }
}

TEST_CASE("ffdiag agrees with two-class CSP up to filter scale") {
    std::mt19937_64 rng(4);
    for (int rep = 0; rep < 5; ++rep) {
        Matrix c1 = testing::random_spd(6, rng), c2 = testing::random_spd(6, rng);
        c1 /= c1.trace();
        c2 /= c2.trace();
        const auto csp = csp_two_class(c1, c2);
        const std::vector<Matrix> covs{c1, c2};
        const auto jd = ffdiag(covs, {500, 1e-14});
        for (Eigen::Index r = 0; r < csp.W.rows(); ++r) {
            const Vector w = csp.W.row(r).normalized();
            double best = 0.0;
            for (Eigen::Index q = 0; q < jd.W.rows(); ++q) best = std::max(best, std::abs(jd.W.row(q).dot(w)));
            CHECK(std::acos(std::min(best, 1.0)) < 1e-3);
        }
    }
}

TEST_CASE("ffdiag input validation") {
    const std::vector<Matrix> one{Matrix::Identity(3, 3)};
    CHECK_THROWS_AS(ffdiag(one), ValidationError);
    const std::vector<Matrix> mixed{Matrix::Identity(3, 3), Matrix::Identity(4, 4)};
    CHECK_THROWS_AS(ffdiag(mixed), ValidationError);
    const std::vector<Matrix> zero{Matrix::Zero(3, 3), Matrix::Zero(3, 3)};
    CHECK_THROWS_AS(ffdiag(zero), NumericalError);
}

TEST_CASE("Gaussian mutual information") {
    std::mt19937_64 rng(10);
    std::normal_distribution<double> g;
    std::vector<double> f;
    std::vector<std::uint32_t> y;
    for (int i = 0; i < 200; ++i) {
        f.push_back(g(rng));
        y.push_back(static_cast<std::uint32_t>(i % 4 + 1));
    }
    CHECK(mutual_information_gaussian(f, y, 4) < 0.02);

    std::vector<double> sharp;
    for (std::size_t i = 0; i < y.size(); ++i) sharp.push_back(y[i] + 1e-3 * g(rng));
    CHECK(mutual_information_gaussian(sharp, y, 4) == doctest::Approx(2.0).epsilon(0.10));

    // Overlapping classes: agree with brute-force integration, less the
    // small-sample correction.
    std::vector<double> mid;
    for (std::size_t i = 0; i < y.size(); ++i) mid.push_back(0.8 * y[i] + (0.5 + 0.2 * y[i]) * g(rng));
    const double bias = 2.0 * 3.0 / (2.0 * 200.0 * std::numbers::ln2);
    CHECK(mutual_information_gaussian(mid, y, 4) ==
          doctest::Approx(reference_gaussian_mi(mid, y, 4) - bias).epsilon(1e-4));

    // Relabeling invariance.
    std::vector<std::uint32_t> perm;
    for (auto l : y) perm.push_back(l % 4 + 1);
    CHECK(mutual_information_gaussian(mid, perm, 4) == doctest::Approx(mutual_information_gaussian(mid, y, 4)));

    std::vector<double> hist_sharp = sharp;
    CHECK(mutual_information_histogram(hist_sharp, y, 4) == doctest::Approx(2.0).epsilon(0.10));
    CHECK(mutual_information_histogram(f, y, 4) < 0.1);
}

TEST_CASE("itfe flags degenerate features") {
    Matrix features(8, 2);
    std::vector<std::uint32_t> y{1, 2, 1, 2, 1, 2, 1, 2};
    for (Eigen::Index i = 0; i < 8; ++i) {
        features(i, 0) = 3.0;
        features(i, 1) = static_cast<double>(y[static_cast<std::size_t>(i)]) + 0.01 * static_cast<double>(i);
    }
    const auto s = itfe_scores(features, y, 2);
    CHECK(s.degenerate[0]);
    CHECK(s.scores[0] == 0.0);
    CHECK_FALSE(s.degenerate[1]);
    CHECK(s.scores[1] > 0.5);
}

TEST_CASE("Fano and exponential bounds") {
    const std::vector<double> four(4, 0.25);
    CHECK(entropy_bits(four) == doctest::Approx(2.0).epsilon(1e-15));
    auto b = fano_bounds(0.0, four);
    CHECK(std::abs(b.lower - 0.5) < 1e-12);
    b = fano_bounds(2.0, four);
    CHECK(std::abs(b.upper) < 1e-12);
    b = fano_bounds(1.0, four);
    CHECK(std::abs(b.upper - 0.5) < 1e-12);
    CHECK(b.lower == 0.0);  // (2 - 1 - 1)/2
    const std::vector<double> skew{0.7, 0.1, 0.1, 0.1};
    b = fano_bounds(0.0, skew);
    CHECK((b.lower >= 0.0 && b.lower <= 1.0 && b.upper >= 0.0 && b.upper <= 1.0));
}

TEST_CASE("multiclass CSP selects the planted sources") {
    SynthSpec spec;
    spec.n_channels = 10;
    spec.n_classes = 4;
    spec.trials_per_class = 40;
    spec.samples_per_trial = 400;
    spec.seed = 5;
    const auto data = generate(spec);
    const auto ccs = class_average(data.trials, std::vector<bool>(data.trials.size(), false));
    FfdiagResult diag;
    const auto bank = multiclass_csp(ccs, data.trials, 6, {}, MiEstimator::gaussian, &diag);
    REQUIRE(bank.selected.size() == 6);
    const Matrix wa = bank.W * data.truth.mixing;
    std::set<Eigen::Index> sources;
    for (auto s : bank.selected) {
        Eigen::Index j = 0;
        wa.row(static_cast<Eigen::Index>(s)).cwiseAbs().maxCoeff(&j);
        sources.insert(j);
    }
    for (Eigen::Index planted = 0; planted < 4; ++planted) CHECK(sources.contains(planted));
    for (std::size_t i = 1; i < diag.objective.size(); ++i) CHECK(diag.objective[i] <= diag.objective[i - 1] + 1e-12);

    // k = N keeps every filter.
    const auto full = multiclass_csp(ccs, data.trials, 10);
    CHECK(std::set<std::size_t>(full.selected.begin(), full.selected.end()).size() == 10);

    // Common scaling leaves the selection unchanged.
    TrialSet scaled = data.trials;
    for (auto& t : scaled.trials) t.data *= 7.0;
    const auto sccs = class_average(scaled, std::vector<bool>(scaled.size(), false));
    CHECK(multiclass_csp(sccs, scaled, 6).selected == bank.selected);

    CHECK_THROWS_AS(multiclass_csp(ccs, data.trials, 11), ValidationError);
}

TEST_CASE("two-class multiclass path matches median ranking on the same data") {
    SynthSpec spec;
    spec.n_channels = 6;
    spec.n_classes = 2;
    spec.trials_per_class = 60;
    spec.samples_per_trial = 400;
    const auto data = generate(spec).trials;
    const auto ccs = class_average(data, std::vector<bool>(data.size(), false));
    auto csp = csp_two_class(ccs.per_class[0].average.matrix, ccs.per_class[1].average.matrix);
    select_by_median(csp, data, 1);
    const auto jd = multiclass_csp(ccs, data, 2, {500, 1e-14});
    // The two most informative joint-diagonalization filters span the same
    // directions as the extreme CSP filters.
    for (auto s : csp.selected) {
        const Vector w = csp.W.row(static_cast<Eigen::Index>(s)).normalized();
        double best = 0.0;
        for (auto q : jd.selected) best = std::max(best, std::abs(jd.W.row(static_cast<Eigen::Index>(q)).dot(w)));
        CHECK(std::acos(std::min(best, 1.0)) < 1e-3);
    }
}
