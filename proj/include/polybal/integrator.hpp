#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "polybal/toric_geometry.hpp"

namespace polybal {

struct QuadratureError : std::runtime_error {
    double achieved_rel_error;
    QuadratureError(const std::string& msg, double achieved)
        : std::runtime_error(msg), achieved_rel_error(achieved) {}
};

struct QuadratureSpec {
    enum class Scheme { TensorGaussLegendre, AdaptivePanels };
    Scheme scheme = Scheme::TensorGaussLegendre;
    // Governs the interior panel count per axis (12-node panels); the graded
    // boundary panels come on top of it.
    int nodes_per_axis = 64;
    double target_rel_error = 1e-10;
    double truncation_threshold = 1e-16;  // relative density cutoff for sampling boxes
    void validate() const;
};

/**
 * Diagonal metric data: one positive scaling per section, stored as log
 * values in flat (block-contiguous) order.
 *
 * All pointwise quantities live in real log coordinates x of the open torus
 * orbit.  The potential is
 *
 *     phi(x) = log sum_j c_j^2 exp(2 <p_j, x>),
 *
 * the section weights rho_j(x) form the softmax of those exponents, the
 * moment map is mu = grad(phi/2) = sum_j rho_j p_j, and the volume density
 * of the pulled-back ambient form is
 *
 *     n! * det(2 Cov_rho(p)) = n! * det(Hess(phi/2)),
 *
 * whose total integral over R^n is m^n times the polarization degree.
 *
 * Section integrals are evaluated in moment coordinates u = mu(x): the
 * density cancels against the Jacobian, leaving n! * rho_j(x(u)) over the
 * dilated polytope m*P.  That integrand stays uniformly smooth in the level,
 * while the same integrands in x develop near-axis poles as the section
 * count grows.  The inversion is a warm-started Newton solve per node.
 *
 * The determinant-one gauge (sum of logs = 0) is a solver policy, not
 * enforced here; several invariants are only meaningful modulo that gauge.
 */
class MetricState {
public:
    static MetricState ones(DecompositionPtr dec);
    static MetricState from_log_scales(DecompositionPtr dec, std::vector<double> log_scales);
    static MetricState from_scales(DecompositionPtr dec, const std::vector<double>& scales);

    int section_count() const { return static_cast<int>(log_scales_.size()); }
    int level() const { return dec_->level(); }
    int dimension() const { return dec_->dimension(); }
    const DecompositionPtr& decomposition() const { return dec_; }

    const std::vector<double>& log_scales() const { return log_scales_; }
    double scale(int flat0) const;
    MetricState gauged() const;  // determinant-one slice

    double potential(const std::vector<double>& x) const;

    struct PointData {
        double phi = 0;
        double density = 0;
        std::vector<double> rho;  // per section, flat order
        std::vector<double> mu;   // moment map, dimension n
        std::vector<double> cov;  // row-major n x n covariance of the section points
    };
    PointData evaluate(const std::vector<double>& x) const;

    // Flattened lattice coordinates of section j at coords()[j*n + c].
    const std::vector<double>& coords() const { return coords_; }

private:
    MetricState(DecompositionPtr dec, std::vector<double> log_scales);
    DecompositionPtr dec_;
    std::vector<double> log_scales_;
    std::vector<double> coords_;
};

struct TruncationBox {
    std::vector<double> lo, hi;
};

// Axis-aligned box outside which the volume density falls below the given
// fraction of its peak; found by probing from the moment-map center.
TruncationBox truncation_box(const MetricState& state, double threshold);

struct GramReport {
    std::vector<double> diagonal;  // flat order; integrals of rho_j against the volume density
    double total_mass = 0;
    double expected_mass = 0;      // m^n * degree, exact
    double rel_mass_defect = 0;    // quadrature self-check
};

GramReport gram_integrals(const MetricState& state, const QuadratureSpec& spec, int threads = 1);

struct OffDiagonalReport {
    double max_residual = 0;
    int checked = 0;
    int not_applicable = 0;  // pairs sharing a lattice point (cannot occur here)
};

// Numerical residual of the off-diagonal pairings, torus-fiber average
// included.  For distinct lattice characters the fiber average vanishes
// identically, so this measures pure quadrature noise.
OffDiagonalReport offdiagonal_check(const MetricState& state,
                                    const std::vector<std::pair<int, int>>& flat_pairs,
                                    const QuadratureSpec& spec);

// Per-block weights of a critical state and derived quantities.
struct BlockWeights {
    std::vector<double> beta;
    double beta0 = 0;
    std::vector<double> gamma;

    static BlockWeights from_beta(const CharacterDecomposition& dec, std::vector<double> beta);
};

struct PointSample {
    std::vector<std::vector<double>> points;
    std::vector<double> weighted;                 // weighted Bergman sum per point
    std::vector<double> plain;                    // plain Bergman sum per point
    std::vector<std::vector<double>> block_sums;  // per point, per block
};

// Pointwise Bergman sums of the L2-normalized sections (distinct lattice
// characters are orthogonal, so orthonormalization is a per-section
// rescale).  `section_norms` are the diagonal integrals; when empty, every
// section uses its block value from `weights`, which is the same thing at a
// critical state.
PointSample bergman_pointwise(const MetricState& state, const BlockWeights& weights,
                              const std::vector<std::vector<double>>& points,
                              const std::vector<double>& section_norms = {});

std::vector<std::vector<double>> sample_points(const TruncationBox& box, int count, uint64_t seed);

}  // namespace polybal
