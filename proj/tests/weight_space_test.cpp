#include <doctest.h>

#include <cmath>
#include <random>

#include "polybal/weight_space.hpp"

using namespace polybal;

namespace {

DecompositionPtr p1_full_torus(int m) {
    auto pol = ToricPolarization::from_vertices({{0}, {1}});
    auto basis = std::make_shared<const SectionBasis>(enumerate_basis(pol, m));
    return std::make_shared<const CharacterDecomposition>(
        decompose_by_characters(basis, SubtorusAction{{{1}}}));
}

DecompositionPtr square_diag(int m) {
    auto pol = ToricPolarization::from_vertices({{0, 0}, {1, 0}, {0, 1}, {1, 1}});
    auto basis = std::make_shared<const SectionBasis>(enumerate_basis(pol, m));
    return std::make_shared<const CharacterDecomposition>(
        decompose_by_characters(basis, SubtorusAction{{{1, 1}}}));
}

}  // namespace

TEST_CASE("pairing on the segment at level 2") {
    auto dec = p1_full_torus(2);
    WeightVector lam(dec, {-1.0, 0.0, 1.0});
    CHECK(pairing_m(lam, lam) == doctest::Approx(0.25).epsilon(1e-14));
    auto zero = WeightVector::zero(dec);
    CHECK(pairing_m(zero, zero) == 0.0);
    CHECK(pairing_m(lam, zero) == 0.0);
}

TEST_CASE("pairing closed form for centered segment weights") {
    // lambda_k = k - m/2 gives m(m+1)(m+2)/(12 m^3), decreasing toward 1/12
    double prev = 1.0;
    for (int m = 2; m <= 50; ++m) {
        auto dec = p1_full_torus(m);
        std::vector<double> raw(dec->block_count());
        for (int k = 0; k <= m; ++k) raw[k] = static_cast<double>(k);
        auto lam = center(dec, raw);
        const double value = pairing_m(lam, lam);
        // brute-force reference
        double brute = 0;
        for (int k = 0; k <= m; ++k) brute += (k - m / 2.0) * (k - m / 2.0);
        brute /= std::pow(m, 3);
        CHECK(value == doctest::Approx(brute).epsilon(1e-13));
        const double closed = static_cast<double>(m) * (m + 1) * (m + 2) / (12.0 * m * m * m);
        CHECK(std::fabs(value - closed) < 1e-12);
        CHECK(value < prev + 1e-15);  // monotone decreasing
        CHECK(std::fabs(value - 1.0 / 12.0) <= 10.0 / m * (1.0 / 12.0));
        prev = value;
    }
}

TEST_CASE("positive definiteness on nonzero vectors") {
    auto dec = square_diag(2);
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> raw(dec->block_count());
        for (auto& v : raw) v = std::uniform_real_distribution<double>(-1, 1)(rng);
        auto lam = center(dec, raw);
        double norm = 0;
        for (int k = 0; k < lam.size(); ++k) norm = std::max(norm, std::fabs(lam.entry(k)));
        if (norm < 1e-12) continue;
        CHECK(pairing_m(lam, lam) > 0.0);
    }
}

TEST_CASE("center examples") {
    auto dec = square_diag(1);  // multiplicities (1,2,1)
    REQUIRE(dec->block_count() == 3);
    auto c1 = center(dec, {1.0, 1.0, 1.0});
    for (int k = 0; k < 3; ++k) CHECK(c1.entry(k) == doctest::Approx(0.0));
    auto c2 = center(dec, {2.0, 0.0, 0.0});
    CHECK(c2.entry(0) == doctest::Approx(1.5));
    CHECK(c2.entry(1) == doctest::Approx(-0.5));
    CHECK(c2.entry(2) == doctest::Approx(-0.5));

    auto dec1 = p1_full_torus(2);  // multiplicities (1,1,1)
    auto c3 = center(dec1, {0.0, 1.0, 2.0});
    CHECK(c3.entry(0) == doctest::Approx(-1.0));
    CHECK(c3.entry(1) == doctest::Approx(0.0));
    CHECK(c3.entry(2) == doctest::Approx(1.0));
}

TEST_CASE("trace-free validation") {
    auto dec = p1_full_torus(2);
    CHECK_THROWS_AS(WeightVector(dec, {1.0, 0.0, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(WeightVector(dec, {1.0, 0.0}), std::invalid_argument);
}

TEST_CASE("projection onto the torus subspace") {
    auto dec = p1_full_torus(2);
    auto sub = TorusSubspace::build(dec);
    REQUIRE(sub.dim() == 1);

    // symmetric vector is orthogonal to the antisymmetric torus direction
    WeightVector beta(dec, {0.1, -0.2, 0.1});
    auto split = sub.split(beta);
    for (int k = 0; k < 3; ++k) {
        CHECK(split.torus_part.entry(k) == doctest::Approx(0.0).epsilon(1e-14));
        CHECK(split.perp_part.entry(k) == doctest::Approx(beta.entry(k)));
    }

    // multiples of a basis vector project onto themselves
    WeightVector t = 0.7 * sub.basis()[0];
    auto split2 = sub.split(t);
    for (int k = 0; k < 3; ++k)
        CHECK(split2.perp_part.entry(k) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("projection properties against a gram-schmidt oracle") {
    auto dec = square_diag(3);
    auto sub = TorusSubspace::build(dec);
    REQUIRE(sub.dim() == 1);

    // orthonormality of the subspace basis
    for (int a = 0; a < sub.dim(); ++a)
        for (int b = 0; b < sub.dim(); ++b)
            CHECK(pairing_m(sub.basis()[a], sub.basis()[b]) ==
                  doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-12));

    std::mt19937_64 rng(12345);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<double> raw(dec->block_count());
        for (auto& v : raw) v = std::uniform_real_distribution<double>(-2, 2)(rng);
        auto beta = center(dec, raw);
        auto split = sub.split(beta);
        // reconstruction
        for (int k = 0; k < beta.size(); ++k)
            CHECK(std::fabs(split.torus_part.entry(k) + split.perp_part.entry(k) -
                            beta.entry(k)) < 1e-12);
        // cross pairing vanishes
        for (const auto& e : sub.basis())
            CHECK(std::fabs(pairing_m(split.perp_part, e)) < 1e-12);
        // hand-rolled oracle: project onto the centered character column
        std::vector<double> col(dec->block_count());
        for (int k = 0; k < dec->block_count(); ++k)
            col[k] = static_cast<double>(dec->character(k)[0]);
        auto tchar = center(dec, col);
        const double coeff = pairing_m(beta, tchar) / pairing_m(tchar, tchar);
        for (int k = 0; k < beta.size(); ++k)
            CHECK(std::fabs(split.torus_part.entry(k) - coeff * tchar.entry(k)) < 1e-12);
    }
}

TEST_CASE("generator coefficients recover the covector") {
    auto dec = square_diag(2);
    auto sub = TorusSubspace::build(dec);
    // lambda built from the generator: coefficients must come back as the scale
    std::vector<double> col(dec->block_count());
    for (int k = 0; k < dec->block_count(); ++k)
        col[k] = 0.37 * static_cast<double>(dec->character(k)[0]);
    auto lam = center(dec, col);
    auto coeffs = sub.generator_coefficients(lam);
    REQUIRE(coeffs.size() == 1);
    CHECK(coeffs[0] == doctest::Approx(0.37).epsilon(1e-12));
    auto v = sub.effective_covector(coeffs);
    CHECK(v[0] == doctest::Approx(0.37).epsilon(1e-12));
    CHECK(v[1] == doctest::Approx(0.37).epsilon(1e-12));
    // lambda_k == <v, p> + c0 on every block
    const double c0 = sub.centering_constant(coeffs);
    for (int k = 0; k < dec->block_count(); ++k)
        CHECK(lam.entry(k) ==
              doctest::Approx(0.37 * static_cast<double>(dec->character(k)[0]) + c0)
                  .epsilon(1e-12));
}

TEST_CASE("mismatched decompositions are rejected") {
    auto d1 = p1_full_torus(2);
    auto d2 = p1_full_torus(2);
    WeightVector a(d1, {-1, 0, 1});
    WeightVector b(d2, {-1, 0, 1});
    CHECK_THROWS_AS(pairing_m(a, b), std::invalid_argument);
}
