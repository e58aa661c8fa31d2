#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/rational.hpp>

namespace polybal {

using Rational = boost::rational<long long>;
using LatticePoint = std::vector<long long>;

inline double to_double(const Rational& q) {
    return static_cast<double>(q.numerator()) / static_cast<double>(q.denominator());
}

// Half-space constraint <normal, y> >= offset with a primitive integer normal.
struct Inequality {
    std::vector<long long> normal;
    long long offset = 0;
};

/**
 * Lattice polytope model of a polarized toric pair.
 *
 * The polytope is carried both as its vertex list and as an irredundant
 * inequality system.  For dimensions 1 and 2 the inequalities are derived
 * from the vertices; in dimension 3 they must be supplied and are
 * cross-checked against the vertex list.  The degree n!*vol(P) is computed
 * once by exact lattice-count interpolation and verified against a fan
 * triangulation.
 */
class ToricPolarization {
public:
    static ToricPolarization from_vertices(std::vector<LatticePoint> vertices);
    static ToricPolarization from_vertices_and_inequalities(std::vector<LatticePoint> vertices,
                                                            std::vector<Inequality> inequalities);

    int dimension() const { return n_; }
    const std::vector<LatticePoint>& vertices() const { return vertices_; }
    const std::vector<Inequality>& inequalities() const { return inequalities_; }

    Rational volume() const { return volume_; }
    // n! * vol(P); always an integer for a lattice polytope.
    Rational degree() const { return degree_; }

    // Membership of an integer point in the dilation m*P.
    bool contains_dilated(const LatticePoint& p, long long dilation) const;
    long long lattice_point_count(long long dilation) const;

    // Exact linear moments, used by the boundary-vs-interior functional.
    // The boundary measure is the lattice-normalized one (facet Lebesgue
    // divided by the Euclidean length of the primitive facet normal).
    Rational interior_coordinate_integral(int axis) const;  // \int_P y_axis dy
    Rational boundary_coordinate_integral(int axis) const;  // \int_{dP} y_axis dsigma
    Rational boundary_measure() const;                      // sigma(dP)

    LatticePoint box_lo() const;
    LatticePoint box_hi() const;

private:
    ToricPolarization() = default;
    void finalize();

    int n_ = 0;
    std::vector<LatticePoint> vertices_;
    std::vector<Inequality> inequalities_;
    Rational volume_;
    Rational degree_;
};

// A sub-torus of the big torus, given by integer covectors acting on lattice
// points; the covectors must be linearly independent over the rationals.
struct SubtorusAction {
    std::vector<std::vector<long long>> generators;

    int rank() const { return static_cast<int>(generators.size()); }
    void validate(int ambient_dimension) const;
};

// Monomial basis of the sections at level m: all lattice points of m*P in
// lexicographic order.
struct SectionBasis {
    int dimension = 0;
    int level = 0;
    std::vector<LatticePoint> points;
    Rational degree;   // copy of the polarization degree
    Rational n_prime;  // N_m / degree
    std::shared_ptr<const ToricPolarization> polytope;

    long long count() const { return static_cast<long long>(points.size()); }
};

SectionBasis enumerate_basis(const ToricPolarization& pol, int level);

/**
 * Partition of the section basis into character blocks of the sub-torus
 * action.  Blocks are ordered by character tuple (lexicographic); within a
 * block, sections keep their basis order.  "Flat" indices refer to the
 * block-contiguous ordering: block k occupies flat positions
 * offset_k+1 .. offset_k+n_k.
 */
class CharacterDecomposition {
public:
    int block_count() const { return static_cast<int>(members_.size()); }
    long long section_count() const { return basis_->count(); }
    int level() const { return basis_->level; }
    int dimension() const { return basis_->dimension; }

    const std::vector<long long>& character(int block) const { return characters_.at(block); }
    int multiplicity(int block) const { return static_cast<int>(members_.at(block).size()); }
    const std::vector<int>& block_members(int block) const { return members_.at(block); }

    // 1-based contract: flat_index(k, i) = i + sum_{l<k} n_l.
    int flat_index(int block1, int member1) const;

    int flat_offset(int block) const { return offsets_.at(block); }           // 0-based
    int block_of_flat(int flat0) const { return block_of_flat_.at(flat0); }   // 0-based
    int basis_index_of_flat(int flat0) const { return flat_to_basis_.at(flat0); }
    const LatticePoint& point_of_flat(int flat0) const {
        return basis_->points[flat_to_basis_.at(flat0)];
    }

    const SectionBasis& basis() const { return *basis_; }
    const std::shared_ptr<const SectionBasis>& basis_ptr() const { return basis_; }
    const SubtorusAction& action() const { return action_; }

    friend CharacterDecomposition decompose_by_characters(
        std::shared_ptr<const SectionBasis> basis, const SubtorusAction& action);

private:
    std::shared_ptr<const SectionBasis> basis_;
    SubtorusAction action_;
    std::vector<std::vector<long long>> characters_;
    std::vector<std::vector<int>> members_;
    std::vector<int> offsets_;
    std::vector<int> flat_to_basis_;
    std::vector<int> block_of_flat_;
};

using DecompositionPtr = std::shared_ptr<const CharacterDecomposition>;

CharacterDecomposition decompose_by_characters(std::shared_ptr<const SectionBasis> basis,
                                               const SubtorusAction& action);

}  // namespace polybal
