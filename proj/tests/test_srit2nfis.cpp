#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "cspkit/error.hpp"
#include "cspkit/srit2nfis.hpp"
#include "helpers.hpp"

using namespace cspkit;

namespace {

Rule make_rule(const Vector& center, double sigma, std::uint32_t label, std::uint32_t n_classes, double spread = 0.0) {
    Rule r;
    r.class_assoc = label;
    r.weights = encode_target(label, n_classes);
    for (Eigen::Index i = 0; i < center.size(); ++i)
        r.mfs.push_back({center(i) - spread, center(i) + spread, sigma});
    return r;
}

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

// Plain type-1 TSK: product of Gaussians, normalized weighted sum.
Vector type1_output(const std::vector<Rule>& rules, const Vector& x) {
    Vector num = Vector::Zero(rules.front().weights.size());
    double den = 0.0;
    for (const auto& r : rules) {
        double h = 1.0;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double d = x(i) - r.mfs[static_cast<std::size_t>(i)].mean_lo;
            const double s = r.mfs[static_cast<std::size_t>(i)].sigma;
            h *= std::exp(-d * d / (2.0 * s * s));
        }
        num += h * r.weights;
        den += h;
    }
    return num / den;
}

std::vector<Sample> blobs(std::size_t n, double separation, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 0.5);
    std::vector<Sample> s;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t label = static_cast<std::uint32_t>(i % 2 + 1);
        const double c = label == 1 ? -separation / 2 : separation / 2;
        s.push_back({vec({c + g(rng), c + g(rng)}), label});
    }
    return s;
}

}  // namespace

TEST_CASE("target encoding") {
    CHECK(encode_target(2, 4) == vec({-1, 1, -1, -1}));
    CHECK(encode_target(1, 1) == vec({1}));
    CHECK_THROWS_AS(encode_target(5, 4), ValidationError);
    CHECK_THROWS_AS(encode_target(0, 4), ValidationError);
}

TEST_CASE("hinge error") {
    const Vector t = vec({1, -1, -1, -1});
    auto e = hinge_error(t, t);
    CHECK(e.error.isZero());
    CHECK(e.abs_max == 0.0);
    e = hinge_error(Vector::Zero(4), t);
    CHECK(e.error == t);
    CHECK(e.abs_max == 1.0);
    e = hinge_error(1.5 * t, t);
    CHECK(e.error.isZero());
    e = hinge_error(vec({0.5, 0.2, -3.0, -1.0}), t);
    CHECK(e.error == vec({0.5, -1.2, 0.0, 0.0}));
    CHECK(e.abs_max == doctest::Approx(1.2));
}

TEST_CASE("interval memberships bracket each other") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int i = 0; i < 1000; ++i) {
        const double a = u(rng), b = u(rng);
        IT2GaussianMF mf{std::min(a, b), std::max(a, b), 0.2 + std::abs(u(rng))};
        const double x = u(rng);
        CHECK(mf.lower(x) <= mf.upper(x));
        CHECK(mf.upper(x) <= 1.0);
        CHECK(mf.lower(x) >= 0.0);
    }
    IT2GaussianMF mf{-1.0, 1.0, 1.0};
    CHECK(mf.upper(0.3) == 1.0);
    CHECK(mf.lower(0.0) == doctest::Approx(std::exp(-0.5)));
}

TEST_CASE("prediction layers") {
    Srit2nfis empty(4, 2);
    CHECK_THROWS_AS(empty.predict(vec({0, 0})), ValidationError);

    Srit2nfis one(4, 2);
    one.add_rule(make_rule(vec({0.3, -0.2}), 1.0, 2, 4));
    const auto p = one.predict(vec({0.3, -0.2}));
    CHECK(p.label == 2);
    CHECK(p.output.isApprox(vec({-1, 1, -1, -1})));

    // Two symmetric rules, input in the middle.
    Srit2nfis two(4, 1);
    two.add_rule(make_rule(vec({-1.0}), 0.7, 1, 4, 0.1));
    two.add_rule(make_rule(vec({1.0}), 0.7, 3, 4, 0.1));
    const auto q = two.predict(vec({0.0}));
    CHECK(q.output.isApprox(0.5 * (encode_target(1, 4) + encode_target(3, 4)), 1e-14));
    CHECK(q.label == 1);  // tie goes to the lowest class
    for (std::size_t r = 0; r < 2; ++r) {
        CHECK(q.reduced_firing[r] >= q.lower_firing[r]);
        CHECK(q.reduced_firing[r] <= q.upper_firing[r]);
        CHECK(q.reduced_firing[r] == doctest::Approx(0.5 * (q.lower_firing[r] + q.upper_firing[r])));
    }

    const auto far = two.predict(vec({1e4}));
    CHECK(far.no_rule_fired);
    CHECK(far.label == 1);
    CHECK(far.output.isZero());
}

TEST_CASE("collapsed intervals reduce to a type-1 system") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    Srit2nfis model(3, 4);
    for (int r = 0; r < 6; ++r) {
        Rule rule = make_rule(vec({u(rng), u(rng), u(rng), u(rng)}), 0.8 + 0.1 * r, static_cast<std::uint32_t>(r % 3 + 1), 3);
        for (Eigen::Index j = 0; j < 3; ++j) rule.weights(j) = u(rng);
        model.add_rule(rule);
    }
    for (int i = 0; i < 1000; ++i) {
        const Vector x = vec({u(rng), u(rng), u(rng), u(rng)});
        const Vector ref = type1_output(model.rules(), x);
        CHECK((model.predict(x).output - ref).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("spherical potential") {
    Srit2nfis model(2, 2);
    CHECK(model.spherical_potential(vec({0, 0}), 1) == 0.0);
    model.add_rule(make_rule(vec({1.0, 2.0}), 0.5, 1, 2, 0.02));
    CHECK(model.spherical_potential(vec({1.0, 2.0}), 1) == doctest::Approx(1.0));
    CHECK(model.spherical_potential(vec({1.0, 2.0}), 2) == 0.0);
    CHECK(model.spherical_potential(vec({1.0 + 7 * 0.5, 2.0}), 1) < 1e-6);
}

TEST_CASE("hyperparameter ranges and fixed constants") {
    HyperParams hp;
    CHECK_NOTHROW(hp.validate());
    auto bad = [](auto mutate) {
        HyperParams h;
        mutate(h);
        return h;
    };
    CHECK_THROWS_AS(bad([](HyperParams& h) { h.add_threshold_init = 1.0; }).validate(), ValidationError);
    CHECK_THROWS_AS(bad([](HyperParams& h) { h.add_threshold_init = 1.21; }).validate(), ValidationError);
    CHECK_THROWS_AS(bad([](HyperParams& h) { h.novelty_threshold = 0.61; }).validate(), ValidationError);
    CHECK_THROWS_AS(bad([](HyperParams& h) { h.inter_overlap = 0.05; }).validate(), ValidationError);
    CHECK_THROWS_AS(bad([](HyperParams& h) { h.update_threshold_init = 0.03; }).validate(), ValidationError);
    CHECK_THROWS_AS(bad([](HyperParams& h) { h.gamma = 0.9; }).validate(), ValidationError);
    CHECK_THROWS_AS(bad([](HyperParams& h) { h.prune_threshold = 0.02; }).validate(), ValidationError);
    CHECK_THROWS_AS(bad([](HyperParams& h) { h.prune_window = 5; }).validate(), ValidationError);
    CHECK_THROWS_AS(bad([](HyperParams& h) { h.delete_threshold = 0.1; }).validate(), ValidationError);
    CHECK_THROWS_AS(bad([](HyperParams& h) { h.regularization = 0.1; }).validate(), ValidationError);
    CHECK_THROWS_AS(bad([](HyperParams& h) { h.alpha = 0.3; }).validate(), ValidationError);
    CHECK_THROWS_AS(bad([](HyperParams& h) { h.intra_overlap = 0.9; }).validate(), ValidationError);
    CHECK_THROWS_AS(Srit2nfis(2, 2, bad([](HyperParams& h) { h.gamma = 0.5; })), ValidationError);
    CHECK_NOTHROW(bad([](HyperParams& h) {
                      h.add_threshold_init = 1.01;
                      h.novelty_threshold = 0.60;
                      h.inter_overlap = 0.4;
                      h.update_threshold_init = 0.04;
                  }).validate());
}

TEST_CASE("cold start grows, exact duplicate is deleted") {
    Srit2nfis model(2, 2);
    const auto first = model.learn_sample(vec({0.5, 0.5}), 1);
    CHECK(first.action == Action::grew_rule);
    CHECK(first.prediction.no_rule_fired);
    REQUIRE(model.rules().size() == 1);
    CHECK(model.rules()[0].center().isApprox(vec({0.5, 0.5})));
    CHECK(model.rules()[0].weights == encode_target(1, 2));
    // Threshold adapted with the cold-start error of 1, then clamped.
    CHECK(model.add_threshold() == doctest::Approx(std::max(1.01, 0.99 * 1.05 + 0.01 * 1.0)));

    const auto dup = model.learn_sample(vec({0.5, 0.5}), 1);
    CHECK(dup.action == Action::deleted_sample);
    CHECK(dup.abs_max_hinge < 0.05);
    CHECK(model.rules().size() == 1);
}

TEST_CASE("wrong prediction of a novel sample grows a rule sized by its neighbours") {
    Srit2nfis model(2, 1);
    model.learn_sample(vec({0.0}), 1);
    const auto o = model.learn_sample(vec({4.0}), 2);
    CHECK(o.action == Action::grew_rule);
    REQUIRE(model.rules().size() == 2);
    // No other class-2 rule: the spread-based width is capped by 0.25 * distance.
    CHECK(model.rules()[1].mfs[0].sigma <= 0.25 * 4.0 + 1e-12);
    CHECK(model.rules()[1].mfs[0].mean_hi - model.rules()[1].mfs[0].mean_lo ==
          doctest::Approx(0.1 * model.rules()[1].mfs[0].sigma));

    // Second class-1 rule uses 0.95 * distance to the nearest class-1 rule,
    // or 0.25 * distance to the class-2 rule if smaller.
    const auto o2 = model.learn_sample(vec({2.9}), 1);
    REQUIRE(o2.action == Action::grew_rule);
    CHECK(model.rules().back().mfs[0].sigma == doctest::Approx(std::min(0.95 * 2.9, 0.25 * 1.1)));
}

TEST_CASE("correct prediction with a large error updates weights by projection") {
    Srit2nfis model(2, 1);
    model.add_rule(make_rule(vec({0.0}), 1.0, 1, 2, 0.05));
    model.add_rule(make_rule(vec({2.0}), 1.0, 2, 2, 0.05));
    const Vector x = vec({0.7});
    const auto before = model.predict(x);
    REQUIRE(before.label == 1);
    const auto err = hinge_error(before.output, encode_target(1, 2));
    REQUIRE(err.abs_max >= model.update_threshold());

    std::vector<Vector> expected;
    double energy = 0.0;
    std::vector<double> hbar;
    for (std::size_t r = 0; r < 2; ++r) {
        hbar.push_back(before.reduced_firing[r] / before.total_firing);
        if (hbar[r] > 0.01) energy += hbar[r] * hbar[r];
    }
    for (std::size_t r = 0; r < 2; ++r)
        expected.push_back(model.rules()[r].weights + (hbar[r] > 0.01 ? hbar[r] / (energy + 0.01) : 0.0) * err.error);

    const double thr = model.update_threshold();
    const auto o = model.learn_sample(x, 1);
    CHECK(o.action == Action::updated_params);
    for (std::size_t r = 0; r < 2; ++r) CHECK(model.rules()[r].weights.isApprox(expected[r], 1e-14));
    CHECK(model.update_threshold() == doctest::Approx(std::clamp(0.99 * thr + 0.01 * err.abs_max, 0.04, 0.2)));
    // The update moved the output toward the target.
    CHECK(hinge_error(model.predict(x).output, encode_target(1, 2)).abs_max < err.abs_max);
}

TEST_CASE("wrong but familiar sample with moderate error is reserved") {
    Srit2nfis model(2, 1);
    model.add_rule(make_rule(vec({0.0}), 1.0, 1, 2, 0.05));
    model.add_rule(make_rule(vec({0.1}), 1.0, 2, 2, 0.05));
    const auto o = model.learn_sample(vec({0.0}), 2);
    CHECK(o.prediction.label == 1);
    CHECK(o.abs_max_hinge < 1.05);
    CHECK(o.action == Action::reserved_sample);
    REQUIRE(model.reserve_queue().size() == 1);
    CHECK(model.reserve_queue()[0].label == 2);
}

TEST_CASE("a starved rule is pruned after exactly ten same-class samples") {
    Srit2nfis model(2, 1);
    model.add_rule(make_rule(vec({0.0}), 1.0, 1, 2));
    model.add_rule(make_rule(vec({10.0}), 1.0, 1, 2));
    model.add_rule(make_rule(vec({-10.0}), 1.0, 2, 2));
    const auto starved_id = model.rules()[1].id;
    for (int i = 1; i <= 10; ++i) {
        // Other-class samples do not enter the window.
        model.learn_sample(vec({-10.0}), 2);
        const auto o = model.learn_sample(vec({0.0}), 1);
        if (i < 10) {
            CHECK(o.pruned.empty());
            CHECK(model.rules().size() == 3);
        } else {
            CHECK(o.pruned == std::vector<std::uint64_t>{starved_id});
            CHECK(model.rules().size() == 2);
        }
    }
}

TEST_CASE("contribution window") {
    ContributionWindow w(3);
    w.push(true);
    w.push(true);
    CHECK_FALSE(w.all_starved());
    w.push(true);
    CHECK(w.all_starved());
    w.push(false);
    CHECK_FALSE(w.all_starved());
    CHECK(w.contents() == std::vector<bool>{true, true, false});
    w.push(true);
    w.push(true);
    CHECK_FALSE(w.all_starved());
    w.push(true);
    CHECK(w.all_starved());
}

TEST_CASE("random streams keep thresholds clamped and every seen class represented") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> g;
    for (int rep = 0; rep < 5; ++rep) {
        Srit2nfis model(3, 3);
        std::set<std::uint32_t> seen;
        for (int i = 0; i < 400; ++i) {
            const auto label = static_cast<std::uint32_t>(rng() % 3 + 1);
            Vector x(3);
            for (Eigen::Index j = 0; j < 3; ++j) x(j) = g(rng) * (1 + rep) + (label == static_cast<std::uint32_t>(j + 1) ? 1.0 : 0.0);
            const auto before = model.rules().size();
            model.learn_sample(x, label);
            seen.insert(label);
            CHECK(model.rules().size() <= before + 1);
            CHECK((model.add_threshold() >= 1.01 && model.add_threshold() <= 1.20));
            CHECK((model.update_threshold() >= 0.04 && model.update_threshold() <= 0.2));
            for (auto c : seen)
                CHECK(std::any_of(model.rules().begin(), model.rules().end(),
                                  [c](const Rule& r) { return r.class_assoc == c; }));
        }
    }
}

TEST_CASE("separable blobs: accurate, compact, and saturated on replay") {
    const auto samples = blobs(100, 4.0, 3);
    // Nearest-centroid oracle confirms the data are separable.
    Vector m1 = Vector::Zero(2), m2 = Vector::Zero(2);
    for (const auto& s : samples) (s.label == 1 ? m1 : m2) += s.x / 50.0;
    int oracle = 0;
    for (const auto& s : samples)
        oracle += ((s.x - m1).norm() < (s.x - m2).norm() ? 1u : 2u) == s.label;
    REQUIRE(oracle >= 95);

    Srit2nfis model(2, 2);
    const auto rep = model.train(samples, 3);
    CHECK(evaluate(model, samples).accuracy >= 0.95);
    CHECK(model.rules().size() <= 10);
    CHECK(rep.final_rules == model.rules().size());
    CHECK(rep.grew + rep.updated + rep.deleted + rep.reserved >= samples.size());
    CHECK(rep.add_threshold_trace.size() == rep.update_threshold_trace.size());

    const auto again = model.train(samples, 1);
    CHECK(again.grew == 0);
}

TEST_CASE("reserve queue is reported when passes run out") {
    Srit2nfis model(2, 1);
    model.add_rule(make_rule(vec({0.0}), 1.0, 1, 2, 0.05));
    model.add_rule(make_rule(vec({0.1}), 1.0, 2, 2, 0.05));
    const std::vector<Sample> s{{vec({0.0}), 2}};
    const auto rep = model.train(s, 1);
    CHECK(rep.passes == 1);
    CHECK(rep.reserved == 1);
    REQUIRE(rep.reserve_remaining.size() == 1);
    CHECK(rep.reserve_remaining[0].label == 2);
}

TEST_CASE("evaluation and confusion") {
    Srit2nfis model(4, 1);
    model.add_rule(make_rule(vec({0.0}), 1.0, 1, 4));
    std::vector<Sample> s;
    for (std::uint32_t i = 0; i < 40; ++i) s.push_back({vec({0.1 * i}), i % 4 + 1});
    const auto ev = evaluate(model, s);
    CHECK(ev.accuracy == doctest::Approx(0.25));
    CHECK(ev.confusion.col(0).sum() == 40);
    CHECK(ev.confusion.rows() == 4);

    Srit2nfis exact(2, 1);
    exact.add_rule(make_rule(vec({-1.0}), 0.5, 1, 2));
    exact.add_rule(make_rule(vec({1.0}), 0.5, 2, 2));
    const std::vector<Sample> two{{vec({-1.0}), 1}, {vec({1.0}), 2}, {vec({-0.8}), 1}};
    const auto e2 = evaluate(exact, two);
    CHECK(e2.accuracy == 1.0);
    CHECK(e2.confusion(0, 0) == 2);
    CHECK(e2.confusion(1, 1) == 1);
    CHECK(e2.confusion(0, 1) == 0);
}

TEST_CASE("model save and load round trip") {
    testing::TempDir dir("model");
    Srit2nfis model(3, 2);
    model.train(blobs(60, 3.0, 8), 2);
    model.save(dir / "m.srit2");
    const auto back = Srit2nfis::load(dir / "m.srit2");
    CHECK(back.rules().size() == model.rules().size());
    CHECK(back.add_threshold() == model.add_threshold());
    CHECK(back.update_threshold() == model.update_threshold());
    CHECK(back.reserve_queue().size() == model.reserve_queue().size());
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    for (int i = 0; i < 50; ++i) {
        const Vector x = vec({g(rng), g(rng)});
        CHECK(back.predict(x).output == model.predict(x).output);
    }
    // Continued training is identical too.
    auto a = model;
    auto b = back;
    for (const auto& s : blobs(30, 1.0, 9)) CHECK(a.learn_sample(s.x, s.label).action == b.learn_sample(s.x, s.label).action);

    {
        std::ofstream out(dir / "junk.srit2", std::ios::binary);
        out << "nope";
    }
    CHECK_THROWS_AS(Srit2nfis::load(dir / "junk.srit2"), ValidationError);
}
