#include <doctest.h>

#include <algorithm>
#include <set>

#include "polybal/toric_geometry.hpp"

using namespace polybal;

namespace {

ToricPolarization segment() { return ToricPolarization::from_vertices({{0}, {1}}); }

ToricPolarization unit_square() {
    return ToricPolarization::from_vertices({{0, 0}, {1, 0}, {0, 1}, {1, 1}});
}

ToricPolarization hirzebruch() {
    return ToricPolarization::from_vertices({{0, 0}, {2, 0}, {1, 1}, {0, 1}});
}

ToricPolarization unit_cube() {
    std::vector<LatticePoint> verts;
    for (int x = 0; x <= 1; ++x)
        for (int y = 0; y <= 1; ++y)
            for (int z = 0; z <= 1; ++z) verts.push_back({x, y, z});
    std::vector<Inequality> ineqs = {
        {{1, 0, 0}, 0}, {{-1, 0, 0}, -1}, {{0, 1, 0}, 0},
        {{0, -1, 0}, -1}, {{0, 0, 1}, 0}, {{0, 0, -1}, -1}};
    return ToricPolarization::from_vertices_and_inequalities(verts, ineqs);
}

}  // namespace

TEST_CASE("segment basis enumeration") {
    auto pol = segment();
    auto basis = enumerate_basis(pol, 3);
    REQUIRE(basis.count() == 4);
    for (long long i = 0; i < 4; ++i) CHECK(basis.points[i] == LatticePoint{i});
    CHECK(pol.degree() == Rational(1));
    CHECK(to_double(basis.n_prime) == doctest::Approx(4.0));
}

TEST_CASE("unit square basis enumeration") {
    auto pol = unit_square();
    auto b1 = enumerate_basis(pol, 1);
    REQUIRE(b1.count() == 4);
    // lexicographic order
    CHECK(b1.points[0] == LatticePoint{0, 0});
    CHECK(b1.points[1] == LatticePoint{0, 1});
    CHECK(b1.points[2] == LatticePoint{1, 0});
    CHECK(b1.points[3] == LatticePoint{1, 1});
    CHECK(std::is_sorted(b1.points.begin(), b1.points.end()));

    // brute-force scan of the 3x3 grid
    auto b2 = enumerate_basis(pol, 2);
    CHECK(b2.count() == 9);
}

TEST_CASE("enumeration rejects bad input") {
    auto pol = segment();
    CHECK_THROWS_AS(enumerate_basis(pol, 0), std::invalid_argument);
    CHECK_THROWS_AS(ToricPolarization::from_vertices({{0}, {0}}), std::invalid_argument);
    CHECK_THROWS_AS(ToricPolarization::from_vertices({{0, 0}, {1, 0}, {2, 0}}),
                    std::invalid_argument);
    // interior point listed as a vertex
    CHECK_THROWS_AS(ToricPolarization::from_vertices({{0, 0}, {2, 0}, {0, 2}, {1, 1}}),
                    std::invalid_argument);
}

TEST_CASE("degrees and volumes") {
    CHECK(unit_square().degree() == Rational(2));
    CHECK(unit_square().volume() == Rational(1));
    CHECK(hirzebruch().degree() == Rational(3));
    CHECK(hirzebruch().volume() == Rational(3, 2));
    CHECK(unit_cube().degree() == Rational(6));
    CHECK(unit_cube().volume() == Rational(1));
}

TEST_CASE("ehrhart counts on cubes") {
    // (m+1)^n for the unit n-cube
    auto sq = unit_square();
    auto cu = unit_cube();
    for (int m = 1; m <= 6; ++m) {
        CHECK(sq.lattice_point_count(m) == (m + 1) * (m + 1));
        CHECK(cu.lattice_point_count(m) == (m + 1) * (m + 1) * (m + 1));
    }
}

TEST_CASE("ehrhart polynomial consistency on the hirzebruch polytope") {
    auto pol = hirzebruch();
    // N_m = (3/2) m^2 + (5/2) m + 1, interpolated from the volume data
    for (int m = 1; m <= 8; ++m) {
        const long long expected = (3 * m * m + 5 * m + 2) / 2;
        CHECK(pol.lattice_point_count(m) == expected);
        CHECK(enumerate_basis(pol, m).count() == expected);
    }
}

TEST_CASE("character decomposition on the square") {
    auto basis = std::make_shared<const SectionBasis>(enumerate_basis(unit_square(), 1));
    SubtorusAction act{{{1, 1}}};
    auto dec = decompose_by_characters(basis, act);
    REQUIRE(dec.block_count() == 3);
    CHECK(dec.character(0) == std::vector<long long>{0});
    CHECK(dec.character(1) == std::vector<long long>{1});
    CHECK(dec.character(2) == std::vector<long long>{2});
    CHECK(dec.multiplicity(0) == 1);
    CHECK(dec.multiplicity(1) == 2);
    CHECK(dec.multiplicity(2) == 1);
}

TEST_CASE("character decomposition on the segment") {
    auto basis = std::make_shared<const SectionBasis>(enumerate_basis(segment(), 2));
    auto dec = decompose_by_characters(basis, SubtorusAction{{{1}}});
    REQUIRE(dec.block_count() == 3);
    for (int k = 0; k < 3; ++k) CHECK(dec.multiplicity(k) == 1);
}

TEST_CASE("trivial torus gives a single block") {
    auto basis = std::make_shared<const SectionBasis>(enumerate_basis(unit_square(), 2));
    auto dec = decompose_by_characters(basis, SubtorusAction{});
    REQUIRE(dec.block_count() == 1);
    CHECK(dec.multiplicity(0) == 9);
}

TEST_CASE("flat index contract") {
    auto basis = std::make_shared<const SectionBasis>(enumerate_basis(hirzebruch(), 1));
    auto dec = decompose_by_characters(basis, SubtorusAction{{{0, 1}}});
    // points: (0,0),(0,1),(1,0),(1,1),(2,0); characters by y: 0 -> {0,2,4}, 1 -> {1,3}
    REQUIRE(dec.block_count() == 2);
    REQUIRE(dec.multiplicity(0) == 3);
    REQUIRE(dec.multiplicity(1) == 2);
    CHECK(dec.flat_index(1, 1) == 1);
    CHECK(dec.flat_index(1, 3) == 3);
    CHECK(dec.flat_index(2, 1) == 4);
    CHECK(dec.flat_index(2, 2) == 5);
    CHECK_THROWS_AS(dec.flat_index(0, 1), std::out_of_range);
    CHECK_THROWS_AS(dec.flat_index(1, 4), std::out_of_range);
    CHECK_THROWS_AS(dec.flat_index(3, 1), std::out_of_range);

    // the contract on multiplicities (2,3,1)
    struct Case {
        std::vector<int> mult;
        int k, i, expect;
    };
    for (const auto& c : {Case{{2, 3, 1}, 2, 2, 4}, Case{{2, 3, 1}, 1, 1, 1},
                          Case{{2, 3, 1}, 3, 1, 6}}) {
        int offset = 0;
        for (int l = 0; l < c.k - 1; ++l) offset += c.mult[l];
        CHECK(offset + c.i == c.expect);
    }
}

TEST_CASE("blocks partition the basis and flat order is block-contiguous") {
    auto basis = std::make_shared<const SectionBasis>(enumerate_basis(hirzebruch(), 3));
    auto dec = decompose_by_characters(basis, SubtorusAction{{{0, 1}}});
    long long total = 0;
    std::set<int> seen;
    for (int k = 0; k < dec.block_count(); ++k) {
        total += dec.multiplicity(k);
        for (int i = 1; i <= dec.multiplicity(k); ++i) {
            const int flat = dec.flat_index(k + 1, i);
            CHECK(dec.block_of_flat(flat - 1) == k);
            seen.insert(dec.basis_index_of_flat(flat - 1));
        }
        for (int idx : dec.block_members(k)) {
            long long chi = basis->points[idx][1];
            CHECK(chi == dec.character(k)[0]);
        }
    }
    CHECK(total == dec.section_count());
    CHECK(static_cast<long long>(seen.size()) == dec.section_count());
}

TEST_CASE("character linearity on lattice points") {
    auto pol = hirzebruch();
    SubtorusAction act{{{0, 1}}};
    auto chi = [&](const LatticePoint& p) {
        return act.generators[0][0] * p[0] + act.generators[0][1] * p[1];
    };
    auto b1 = enumerate_basis(pol, 1);
    for (const auto& p : b1.points)
        for (const auto& q : b1.points) {
            LatticePoint s = {p[0] + q[0], p[1] + q[1]};
            if (!pol.contains_dilated(s, 2)) continue;
            CHECK(chi(s) == chi(p) + chi(q));
        }
}

TEST_CASE("subtorus validation") {
    SubtorusAction dependent{{{1, 1}, {2, 2}}};
    CHECK_THROWS_AS(dependent.validate(2), std::invalid_argument);
    SubtorusAction wrong_dim{{{1, 0, 0}}};
    CHECK_THROWS_AS(wrong_dim.validate(2), std::invalid_argument);
    SubtorusAction ok{{{1, 0}, {0, 1}}};
    CHECK_NOTHROW(ok.validate(2));
}

TEST_CASE("exact boundary and interior moments") {
    auto pol = hirzebruch();
    // facets: y=0 (len 2), x=0 (len 1), y=1 (len 1), x+y=2 (lattice len 1)
    CHECK(pol.boundary_measure() == Rational(5));
    CHECK(pol.boundary_coordinate_integral(1) == Rational(2));
    CHECK(pol.boundary_coordinate_integral(0) == Rational(4));
    CHECK(pol.interior_coordinate_integral(1) == Rational(2, 3));
    CHECK(pol.interior_coordinate_integral(0) == Rational(7, 6));

    auto sq = unit_square();
    CHECK(sq.boundary_measure() == Rational(4));
    CHECK(sq.boundary_coordinate_integral(0) == Rational(2));
    CHECK(sq.interior_coordinate_integral(0) == Rational(1, 2));
}
