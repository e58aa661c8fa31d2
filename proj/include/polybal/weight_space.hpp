#pragma once

#include <vector>

#include "polybal/toric_geometry.hpp"

namespace polybal {

// Element of the weight lattice of diagonal directions: one real entry per
// character block, trace-free in the multiplicity-weighted sense
// (sum_k n_k lambda_k = 0).
class WeightVector {
public:
    WeightVector() = default;  // empty; usable only as a placeholder
    WeightVector(DecompositionPtr dec, std::vector<double> entries);
    static WeightVector zero(DecompositionPtr dec);

    double entry(int block) const { return entries_.at(block); }
    const std::vector<double>& entries() const { return entries_; }
    const DecompositionPtr& decomposition() const { return dec_; }
    int size() const { return static_cast<int>(entries_.size()); }

    double trace() const;  // sum_k n_k lambda_k

    WeightVector& operator+=(const WeightVector& other);
    WeightVector& operator-=(const WeightVector& other);
    WeightVector& operator*=(double s);
    friend WeightVector operator+(WeightVector a, const WeightVector& b) { return a += b; }
    friend WeightVector operator-(WeightVector a, const WeightVector& b) { return a -= b; }
    friend WeightVector operator*(double s, WeightVector a) { return a *= s; }

private:
    DecompositionPtr dec_;
    std::vector<double> entries_;
};

// sum_k n_k lambda_k mu_k / m^(n+2)
double pairing_m(const WeightVector& x, const WeightVector& y);

// Subtract the multiplicity-weighted mean so the result is trace-free.
WeightVector center(DecompositionPtr dec, const std::vector<double>& raw);

// The subspace of block weights spanned by the (centered) sub-torus
// characters, with an orthonormal basis under the block pairing.
class TorusSubspace {
public:
    static TorusSubspace build(DecompositionPtr dec);

    int dim() const { return static_cast<int>(basis_.size()); }
    const std::vector<WeightVector>& basis() const { return basis_; }
    const DecompositionPtr& decomposition() const { return dec_; }

    struct Split {
        WeightVector torus_part;
        WeightVector perp_part;
    };
    Split split(const WeightVector& v) const;

    // For lambda in the torus subspace: coefficients v_a over the centered
    // generator characters, the matching covector sum_a v_a * l_a on the
    // ambient lattice, and the additive centering constant c0 such that
    // lambda_k = <v_eff, p> + c0 on block k.
    std::vector<double> generator_coefficients(const WeightVector& lambda) const;
    std::vector<double> effective_covector(const std::vector<double>& coeffs) const;
    double centering_constant(const std::vector<double>& coeffs) const;

private:
    DecompositionPtr dec_;
    std::vector<WeightVector> basis_;
    std::vector<std::vector<double>> mix_;  // basis_[a] = sum_b mix_[a][b] * centered_char_b
    std::vector<double> char_mean_;         // weighted mean removed from each generator column
};

}  // namespace polybal
