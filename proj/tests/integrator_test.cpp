#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "polybal/integrator.hpp"

using namespace polybal;

namespace {

DecompositionPtr make_dec(ToricPolarization pol, int m, SubtorusAction act = {}) {
    auto basis = std::make_shared<const SectionBasis>(enumerate_basis(pol, m));
    return std::make_shared<const CharacterDecomposition>(decompose_by_characters(basis, act));
}

DecompositionPtr segment_dec(int m, bool full_torus = false) {
    auto pol = ToricPolarization::from_vertices({{0}, {1}});
    return make_dec(pol, m, full_torus ? SubtorusAction{{{1}}} : SubtorusAction{});
}

DecompositionPtr square_dec(int m, bool diag_torus = false) {
    auto pol = ToricPolarization::from_vertices({{0, 0}, {1, 0}, {0, 1}, {1, 1}});
    return make_dec(pol, m, diag_torus ? SubtorusAction{{{1, 1}}} : SubtorusAction{});
}

double binom(int m, int i) {
    double b = 1;
    for (int t = 0; t < i; ++t) b = b * (m - t) / (t + 1);
    return b;
}

std::vector<double> binomial_scales(int m) {
    std::vector<double> c(m + 1);
    for (int i = 0; i <= m; ++i) c[i] = std::sqrt(binom(m, i));
    return c;
}

}  // namespace

TEST_CASE("potential values and overflow safety") {
    auto state1 = MetricState::ones(segment_dec(1));
    CHECK(state1.potential({0.0}) == doctest::Approx(std::log(2.0)).epsilon(1e-14));

    auto state2 = MetricState::from_scales(segment_dec(2), {1.0, std::sqrt(2.0), 1.0});
    CHECK(state2.potential({0.0}) == doctest::Approx(std::log(4.0)).epsilon(1e-14));

    // far along the axis the slope approaches twice the supporting value
    auto state5 = MetricState::ones(segment_dec(5));
    const double far = 40.0;
    CHECK(state5.potential({far}) - state5.potential({far - 1.0}) ==
          doctest::Approx(2.0 * 5.0).epsilon(1e-9));
    CHECK(state5.potential({-far}) - state5.potential({-far + 1.0}) ==
          doctest::Approx(0.0).epsilon(1e-9));
    CHECK(std::isfinite(state5.potential({1e4})));
}

TEST_CASE("hessian of the potential matches finite differences") {
    auto dec = square_dec(3);
    std::mt19937_64 rng(11);
    std::vector<double> d(dec->section_count());
    for (auto& v : d) v = std::uniform_real_distribution<double>(-0.4, 0.4)(rng);
    auto state = MetricState::from_log_scales(dec, d).gauged();

    const std::vector<double> x = {0.31, -0.77};
    auto data = state.evaluate(x);
    const double h = 1e-4;
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
            auto shift = [&](double sa, double sb) {
                std::vector<double> y = x;
                y[a] += sa;
                y[b] += sb;
                return state.potential(y);
            };
            const double fd =
                (shift(h, h) - shift(h, -h) - shift(-h, h) + shift(-h, -h)) / (4 * h * h);
            CHECK(4.0 * data.cov[a * 2 + b] == doctest::Approx(fd).epsilon(1e-6));
        }
}

TEST_CASE("gram integrals on the balanced segment states") {
    QuadratureSpec quad;
    // all-ones at level 1: the two half masses
    {
        auto report = gram_integrals(MetricState::ones(segment_dec(1)), quad);
        REQUIRE(report.diagonal.size() == 2);
        CHECK(report.diagonal[0] == doctest::Approx(0.5).epsilon(1e-11));
        CHECK(report.diagonal[1] == doctest::Approx(0.5).epsilon(1e-11));
        CHECK(report.total_mass == doctest::Approx(1.0).epsilon(1e-12));
    }
    // binomial squared scalings: every diagonal equals m/(m+1)
    for (int m : {2, 3, 5}) {
        auto state = MetricState::from_scales(segment_dec(m), binomial_scales(m));
        auto report = gram_integrals(state, quad);
        for (double g : report.diagonal)
            CHECK(g == doctest::Approx(static_cast<double>(m) / (m + 1)).epsilon(1e-11));
        CHECK(report.total_mass == doctest::Approx(m).epsilon(1e-12));
        CHECK(report.rel_mass_defect < quad.target_rel_error);
    }
}

TEST_CASE("gram integrals against the adaptive-simpson reference") {
    QuadratureSpec quad;
    std::mt19937_64 rng(2024);
    for (int m : {3, 6}) {
        auto dec = segment_dec(m);
        std::vector<double> c2(m + 1);
        for (auto& v : c2) v = std::exp(std::uniform_real_distribution<double>(-1.5, 1.5)(rng));
        std::vector<double> c(m + 1);
        for (int i = 0; i <= m; ++i) c[i] = std::sqrt(c2[i]);
        auto report = gram_integrals(MetricState::from_scales(dec, c), quad);
        std::vector<long long> pts(m + 1);
        for (int i = 0; i <= m; ++i) pts[i] = i;
        auto reference = oracles::segment_gram_reference(pts, c2);
        for (int i = 0; i <= m; ++i)
            CHECK(report.diagonal[i] == doctest::Approx(reference[i]).epsilon(1e-9));
    }
}

TEST_CASE("gram integrals on the symmetric square") {
    QuadratureSpec quad;
    auto report = gram_integrals(MetricState::ones(square_dec(1)), quad);
    REQUIRE(report.diagonal.size() == 4);
    // total mass is m^n * degree = 2; symmetry forces equal quarters
    CHECK(report.total_mass == doctest::Approx(2.0).epsilon(1e-12));
    for (double g : report.diagonal) CHECK(g == doctest::Approx(0.5).epsilon(1e-11));
}

TEST_CASE("mass identity holds for arbitrary states") {
    QuadratureSpec quad;
    std::mt19937_64 rng(99);
    auto dec = square_dec(2);
    for (int trial = 0; trial < 3; ++trial) {
        std::vector<double> d(dec->section_count());
        for (auto& v : d) v = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
        auto report = gram_integrals(MetricState::from_log_scales(dec, d), quad);
        CHECK(report.rel_mass_defect < quad.target_rel_error);
        CHECK(report.expected_mass == doctest::Approx(8.0));
    }
}

TEST_CASE("gauge invariance of the diagonal integrals") {
    QuadratureSpec quad;
    auto dec = square_dec(2);
    std::mt19937_64 rng(5);
    std::vector<double> d(dec->section_count());
    for (auto& v : d) v = std::uniform_real_distribution<double>(-0.7, 0.7)(rng);
    auto base = gram_integrals(MetricState::from_log_scales(dec, d), quad);
    std::vector<double> shifted(d);
    for (auto& v : shifted) v += 0.83;  // common positive factor on all scalings
    auto moved = gram_integrals(MetricState::from_log_scales(dec, shifted), quad);
    for (size_t j = 0; j < d.size(); ++j)
        CHECK(std::fabs(base.diagonal[j] - moved.diagonal[j]) <= 1e-12);
}

TEST_CASE("torus direction invariance of the diagonal integrals") {
    QuadratureSpec quad;
    auto dec = square_dec(2);
    std::mt19937_64 rng(6);
    std::vector<double> d(dec->section_count());
    for (auto& v : d) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    auto base = gram_integrals(MetricState::from_log_scales(dec, d), quad);
    // scale by exp(<v, p>) for a covector v: a pure translation of the picture
    const std::vector<double> v = {0.6, -0.35};
    std::vector<double> shifted(d);
    for (int j = 0; j < dec->section_count(); ++j) {
        const auto& p = dec->point_of_flat(j);
        shifted[j] += v[0] * p[0] + v[1] * p[1];
    }
    auto moved = gram_integrals(MetricState::from_log_scales(dec, shifted), quad);
    for (size_t j = 0; j < d.size(); ++j)
        CHECK(base.diagonal[j] == doctest::Approx(moved.diagonal[j]).epsilon(1e-9));
}

TEST_CASE("off-diagonal residuals vanish to quadrature noise") {
    QuadratureSpec quad;
    auto dec = square_dec(2);
    std::mt19937_64 rng(31);
    std::vector<double> d(dec->section_count());
    for (auto& v : d) v = std::uniform_real_distribution<double>(-0.8, 0.8)(rng);
    auto state = MetricState::from_log_scales(dec, d);
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < 10; ++i) {
        int a = static_cast<int>(rng() % dec->section_count());
        int b = static_cast<int>(rng() % dec->section_count());
        if (a == b) b = (b + 1) % dec->section_count();
        pairs.emplace_back(a, b);
    }
    auto report = offdiagonal_check(state, pairs, quad);
    CHECK(report.checked == 10);
    CHECK(report.not_applicable == 0);  // every lattice point appears once
    CHECK(report.max_residual <= 1e-10);
    CHECK_THROWS_AS(offdiagonal_check(state, {{2, 2}}, quad), std::invalid_argument);
}

TEST_CASE("bergman sums on the balanced segment") {
    auto dec = segment_dec(2, true);
    auto state = MetricState::from_scales(dec, binomial_scales(2));
    auto weights = BlockWeights::from_beta(*dec, {2.0 / 3, 2.0 / 3, 2.0 / 3});
    CHECK(weights.beta0 == doctest::Approx(2.0 / 3).epsilon(1e-14));
    for (double g : weights.gamma) CHECK(g == doctest::Approx(1.0).epsilon(1e-14));

    TruncationBox box{{-6.0}, {6.0}};
    auto pts = sample_points(box, 50, 42);
    auto sample = bergman_pointwise(state, weights, pts);
    for (size_t i = 0; i < pts.size(); ++i) {
        CHECK(sample.plain[i] == doctest::Approx(3.0).epsilon(1e-8));     // N'_m
        CHECK(sample.weighted[i] == doctest::Approx(3.0).epsilon(1e-8));  // m^n / beta0
    }
}

TEST_CASE("level scaling of the balanced potentials") {
    // binomial scalings collapse to powers of the level-one potential, so the
    // hessians scale exactly with the level
    auto s1 = MetricState::ones(segment_dec(1));
    for (int m : {2, 4, 7}) {
        auto sm = MetricState::from_scales(segment_dec(m), binomial_scales(m));
        for (double x = -3.0; x <= 3.0; x += 0.5) {
            auto h1 = s1.evaluate({x});
            auto hm = sm.evaluate({x});
            CHECK(4.0 * hm.cov[0] == doctest::Approx(m * 4.0 * h1.cov[0]).epsilon(1e-12));
        }
    }
}

TEST_CASE("truncation box covers the active region") {
    auto state = MetricState::ones(square_dec(3));
    auto box = truncation_box(state, 1e-16);
    REQUIRE(box.lo.size() == 2);
    for (int a = 0; a < 2; ++a) {
        CHECK(box.lo[a] < -2.0);
        CHECK(box.hi[a] > 2.0);
        CHECK(box.hi[a] - box.lo[a] < 120.0);
    }
    // density at the box corners is negligible compared to the center
    auto center = state.evaluate({0.0, 0.0});
    auto corner = state.evaluate({box.lo[0], box.lo[1]});
    CHECK(corner.density <= 1e-12 * center.density);
}

TEST_CASE("quadrature spec validation") {
    QuadratureSpec bad;
    bad.nodes_per_axis = 4;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = QuadratureSpec{};
    bad.target_rel_error = 1e-3;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = QuadratureSpec{};
    bad.truncation_threshold = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    CHECK_NOTHROW(QuadratureSpec{}.validate());
}

TEST_CASE("metric state validation") {
    auto dec = segment_dec(2);
    CHECK_THROWS_AS(MetricState::from_scales(dec, {1.0, -1.0, 1.0}), std::invalid_argument);
    CHECK_THROWS_AS(MetricState::from_log_scales(dec, {0.0, 0.0}), std::invalid_argument);
    auto g = MetricState::from_log_scales(dec, {1.0, 2.0, 3.0}).gauged();
    double sum = 0;
    for (double v : g.log_scales()) sum += v;
    CHECK(sum == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("adaptive scheme reaches the mass target") {
    QuadratureSpec quad;
    quad.scheme = QuadratureSpec::Scheme::AdaptivePanels;
    quad.nodes_per_axis = 16;
    auto report = gram_integrals(MetricState::ones(segment_dec(4)), quad);
    CHECK(report.rel_mass_defect < quad.target_rel_error);
}

TEST_CASE("deterministic reduction independent of thread count") {
    QuadratureSpec quad;
    auto dec = square_dec(3);
    std::mt19937_64 rng(17);
    std::vector<double> d(dec->section_count());
    for (auto& v : d) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    auto state = MetricState::from_log_scales(dec, d);
    auto one = gram_integrals(state, quad, 1);
    auto four = gram_integrals(state, quad, 4);
    for (size_t j = 0; j < d.size(); ++j) CHECK(one.diagonal[j] == four.diagonal[j]);
    CHECK(one.total_mass == four.total_mass);
}
