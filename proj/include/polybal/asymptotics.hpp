#pragma once

#include <string>
#include <vector>

#include "polybal/balancing_solver.hpp"

namespace polybal {

// One row of an m-sweep.
struct SweepRecord {
    int m = 0;
    long long sections = 0;  // N_m
    int blocks = 0;          // nu_m
    double beta0 = 0;
    double max_gamma_dev = 0;      // max_k |gamma_k - 1|
    double r_m_inv = 0;            // block-pairing norm of centered beta
    double generator_pairing = 0;  // <X,X>_m for the centered first generator character
    double futaki_hat = 0;
    double futaki_oracle = 0;
    double sup_f_m = 0;
    double sup_remainder = 0;  // sup |B - N' - f_m m^(n-1)| over the sample points
    bool converged = false;
    bool degenerate = false;  // centered beta vanishes within tolerance
};

// Centered beta below this relative size counts as exactly balanced.
constexpr double kDegenerateGammaDev = 1e-8;

struct SlopeFit {
    double slope = 0;
    double intercept = 0;
    double residual = 0;  // rms deviation in log space
    int points = 0;
    bool degenerate = false;
    std::string note;
};

// Least-squares slope of log(q) against log(m).
SlopeFit fit_log_slope(const std::vector<double>& m, const std::vector<double>& q);

// Exponent criteria fit the trailing window of a sweep (the smallest levels
// carry the strongest preasymptotic corrections); this trims both arrays to
// the last kSlopeWindow entries.
constexpr int kSlopeWindow = 5;
void keep_tail(std::vector<double>& m, std::vector<double>& q);

SlopeFit weight_decay(const std::vector<SweepRecord>& sweep);
SlopeFit corollary_b_decay(const std::vector<SweepRecord>& sweep, bool futaki_vanishes);
SlopeFit r_m_scaling(const std::vector<SweepRecord>& sweep);

// Hamiltonian function of a block weight: the weight average of the
// normalized section masses divided by the level.
std::vector<double> hamiltonian(const BalanceResult& result, const WeightVector& lambda,
                                const std::vector<std::vector<double>>& points);

// Independent route to the same function: contraction of the moment map
// with the covector matching lambda, plus its centering constant.
std::vector<double> moment_map_oracle(const MetricState& state, const std::vector<double>& v_eff,
                                      double c0, const std::vector<std::vector<double>>& points);

struct BergmanExpansion {
    std::vector<double> f_m;      // per point
    double sup_f_m = 0;
    double sup_remainder = 0;     // sup |B - N' - f_m m^(n-1)|
    double identity_residual = 0; // two-route check of B - B_weighted
    bool degenerate = false;
};

BergmanExpansion bergman_expansion(const BalanceResult& result,
                                   const std::vector<std::vector<double>>& points);

// Boundary-vs-interior linear functional on the moment polytope:
//   L(v) = \int_{dP} <v,y> dsigma - (sigma(dP)/vol(P)) \int_P <v,y> dy,
// normalized so it matches the scaled norm-derivative limit:
//   oracle(v) = -L(v) / (2 (n+1)! vol(P)).
double toric_futaki_oracle(const ToricPolarization& pol, const std::vector<double>& covector);

struct FutakiLink {
    double f_hat = 0;             // scaled norm derivative at the critical state
    double oracle = 0;            // toric_futaki_oracle at the recovered covector
    double identity_residual = 0; // bookkeeping: sum n_k lambda_k beta_k vs r_m^{-1} sum n_k lambda_k^2
    bool degenerate = false;
    std::vector<double> covector; // recovered effective covector
};

FutakiLink futaki_link(const BalanceResult& result, const TorusSubspace& sub,
                       const ToricPolarization& pol);

// Exact value of sum_j w_j G_j for w_j = <v, p_j> - mean, valid for every
// state: n! m^{n+1} \int_P <v,y> dy - mean * m^n * deg.
double exact_weighted_gram_sum(const ToricPolarization& pol, const SectionBasis& basis,
                               const std::vector<double>& covector);

}  // namespace polybal
