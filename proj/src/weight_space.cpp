#include "polybal/weight_space.hpp"

#include <cmath>
#include <stdexcept>

namespace polybal {

namespace {

void require_same(const DecompositionPtr& a, const DecompositionPtr& b) {
    if (!a || !b) throw std::invalid_argument("weight vector without a decomposition");
    if (a.get() != b.get())
        throw std::invalid_argument("weight vectors over different decompositions");
}

double pow_int(double base, int e) {
    double r = 1;
    for (int i = 0; i < e; ++i) r *= base;
    return r;
}

}  // namespace

WeightVector::WeightVector(DecompositionPtr dec, std::vector<double> entries)
    : dec_(std::move(dec)), entries_(std::move(entries)) {
    if (!dec_) throw std::invalid_argument("weight vector: null decomposition");
    if (static_cast<int>(entries_.size()) != dec_->block_count())
        throw std::invalid_argument("weight vector: entry count != block count");
    double scale = 0;
    for (int k = 0; k < size(); ++k) scale = std::max(scale, std::fabs(entries_[k]));
    if (std::fabs(trace()) > 1e-12 * std::max(1.0, scale * dec_->section_count()))
        throw std::invalid_argument("weight vector: not trace-free");
}

WeightVector WeightVector::zero(DecompositionPtr dec) {
    std::vector<double> e(dec->block_count(), 0.0);
    return WeightVector(std::move(dec), std::move(e));
}

double WeightVector::trace() const {
    double s = 0;
    for (int k = 0; k < size(); ++k) s += dec_->multiplicity(k) * entries_[k];
    return s;
}

WeightVector& WeightVector::operator+=(const WeightVector& other) {
    require_same(dec_, other.dec_);
    for (int k = 0; k < size(); ++k) entries_[k] += other.entries_[k];
    return *this;
}

WeightVector& WeightVector::operator-=(const WeightVector& other) {
    require_same(dec_, other.dec_);
    for (int k = 0; k < size(); ++k) entries_[k] -= other.entries_[k];
    return *this;
}

WeightVector& WeightVector::operator*=(double s) {
    for (auto& e : entries_) e *= s;
    return *this;
}

double pairing_m(const WeightVector& x, const WeightVector& y) {
    require_same(x.decomposition(), y.decomposition());
    const auto& dec = *x.decomposition();
    double s = 0;
    for (int k = 0; k < dec.block_count(); ++k)
        s += dec.multiplicity(k) * x.entry(k) * y.entry(k);
    return s / pow_int(static_cast<double>(dec.level()), dec.dimension() + 2);
}

WeightVector center(DecompositionPtr dec, const std::vector<double>& raw) {
    if (static_cast<int>(raw.size()) != dec->block_count())
        throw std::invalid_argument("center: entry count != block count");
    double mean = 0;
    for (int k = 0; k < dec->block_count(); ++k) mean += dec->multiplicity(k) * raw[k];
    mean /= static_cast<double>(dec->section_count());
    std::vector<double> out(raw);
    for (auto& e : out) e -= mean;
    return WeightVector(std::move(dec), std::move(out));
}

TorusSubspace TorusSubspace::build(DecompositionPtr dec) {
    TorusSubspace sub;
    sub.dec_ = dec;
    const auto& action = dec->action();
    const int r = action.rank();

    std::vector<WeightVector> centered;
    for (int a = 0; a < r; ++a) {
        std::vector<double> col(dec->block_count());
        for (int k = 0; k < dec->block_count(); ++k)
            col[k] = static_cast<double>(dec->character(k)[a]);
        double mean = 0;
        for (int k = 0; k < dec->block_count(); ++k) mean += dec->multiplicity(k) * col[k];
        mean /= static_cast<double>(dec->section_count());
        sub.char_mean_.push_back(mean);
        for (auto& e : col) e -= mean;
        centered.emplace_back(dec, std::move(col));
    }

    // Gram-Schmidt under the block pairing; drop numerically null columns.
    for (int a = 0; a < r; ++a) {
        WeightVector v = centered[a];
        std::vector<double> coeffs(r, 0.0);
        coeffs[a] = 1.0;
        for (size_t b = 0; b < sub.basis_.size(); ++b) {
            double proj = pairing_m(v, sub.basis_[b]);
            v -= proj * sub.basis_[b];
            for (int c = 0; c < r; ++c) coeffs[c] -= proj * sub.mix_[b][c];
        }
        double norm2 = pairing_m(v, v);
        double orig2 = pairing_m(centered[a], centered[a]);
        if (norm2 <= 1e-24 * std::max(1.0, orig2)) continue;  // centered character vanished
        double inv = 1.0 / std::sqrt(norm2);
        v *= inv;
        for (auto& c : coeffs) c *= inv;
        sub.basis_.push_back(std::move(v));
        sub.mix_.push_back(std::move(coeffs));
    }
    return sub;
}

TorusSubspace::Split TorusSubspace::split(const WeightVector& v) const {
    require_same(dec_, v.decomposition());
    WeightVector t = WeightVector::zero(dec_);
    for (const auto& e : basis_) {
        double c = pairing_m(v, e);
        t += c * e;
    }
    WeightVector perp = v;
    perp -= t;
    return {std::move(t), std::move(perp)};
}

std::vector<double> TorusSubspace::generator_coefficients(const WeightVector& lambda) const {
    require_same(dec_, lambda.decomposition());
    const int r = dec_->action().rank();
    std::vector<double> v(r, 0.0);
    for (size_t a = 0; a < basis_.size(); ++a) {
        double alpha = pairing_m(lambda, basis_[a]);
        for (int b = 0; b < r; ++b) v[b] += alpha * mix_[a][b];
    }
    return v;
}

std::vector<double> TorusSubspace::effective_covector(const std::vector<double>& coeffs) const {
    const auto& gens = dec_->action().generators;
    if (coeffs.size() != gens.size())
        throw std::invalid_argument("effective_covector: coefficient count mismatch");
    std::vector<double> v(dec_->dimension(), 0.0);
    for (size_t a = 0; a < gens.size(); ++a)
        for (int c = 0; c < dec_->dimension(); ++c)
            v[c] += coeffs[a] * static_cast<double>(gens[a][c]);
    return v;
}

double TorusSubspace::centering_constant(const std::vector<double>& coeffs) const {
    if (coeffs.size() != char_mean_.size())
        throw std::invalid_argument("centering_constant: coefficient count mismatch");
    double c0 = 0;
    for (size_t a = 0; a < coeffs.size(); ++a) c0 -= coeffs[a] * char_mean_[a];
    return c0;
}

}  // namespace polybal
