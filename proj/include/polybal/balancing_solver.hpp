#pragma once

#include <optional>
#include <string>
#include <vector>

#include "polybal/integrator.hpp"
#include "polybal/weight_space.hpp"

namespace polybal {

struct SolverSpec {
    enum class Method { FixedPoint, Descent };
    Method method = Method::FixedPoint;
    double step = 1.0;         // damping for fixed-point steps, initial step for descent
    int max_iterations = 4000; // budget of diagonal-integral evaluations
    double tolerance = 1e-10;  // relative sup-norm of the projected defect
    bool accelerate = true;    // finish with a truncated Newton-Krylov phase
    double divergence_norm = 60.0;  // sup-norm of log scales treated as a runaway
    void validate() const;
};

// Per-section balancing defect restricted to the directions the group orbit
// actually moves: within-block fluctuations plus the part of the centered
// block means orthogonal to the torus subspace.
struct SectionDefect {
    std::vector<double> projected;  // flat order
    double sup_norm = 0;            // relative to mass / N
    std::vector<double> block_means;
    WeightVector centered_means;
    WeightVector torus_component;
    WeightVector perp_component;
};

SectionDefect balancing_defect(const MetricState& state, const TorusSubspace& sub,
                               const GramReport& gram);

struct BalanceResult {
    MetricState state;  // determinant-one gauge
    GramReport gram;
    std::vector<double> beta;   // common in-block value of the diagonal integrals
    double beta0 = 0;           // multiplicity-weighted mean of beta
    std::vector<double> gamma;  // beta / beta0
    WeightVector beta_centered;
    double residual = 0;                 // relative projected-defect sup-norm at exit
    double block_uniformity = 0;         // max_j |G_j / beta_k - 1|
    double perp_norm = 0;                // block-pairing norm of the perp part of beta_centered
    int iterations = 0;
    bool converged = false;
    bool diverged = false;
    std::vector<double> divergence_direction;  // unit log-direction when diverged
    std::vector<double> energy_increments;     // trapezoid energy change per accepted step
};

BalanceResult solve(const MetricState& initial, const TorusSubspace& sub, const SolverSpec& spec,
                    const QuadratureSpec& quad, int threads = 1);

struct NormalizedSections {
    std::vector<double> scale;      // multiplier per flat section
    double max_diag_deviation = 0;  // |integral of |sigma_j|^2 - 1|
    double offdiag_residual = 0;
};

// Scalings turning the metric-weighted sections into an L2-orthonormal
// basis; orthonormality is re-verified by quadrature.
NormalizedSections normalized_sections(const BalanceResult& result, const QuadratureSpec& quad,
                                       int offdiag_pairs = 10, uint64_t seed = 1);

// Sup deviation of the weighted Bergman sum from its constant value m^n/beta0.
double polybalanced_identity_check(const BalanceResult& result,
                                   const std::vector<std::vector<double>>& points);

}  // namespace polybal
