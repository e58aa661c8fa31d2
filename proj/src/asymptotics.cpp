#include "polybal/asymptotics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace polybal {

namespace {

double pow_int(double base, int e) {
    double r = 1;
    for (int i = 0; i < e; ++i) r *= base;
    return r;
}

double factorial(int n) {
    double f = 1;
    for (int i = 2; i <= n; ++i) f *= i;
    return f;
}

std::vector<const SweepRecord*> usable(const std::vector<SweepRecord>& sweep) {
    std::vector<const SweepRecord*> out;
    for (const auto& r : sweep)
        if (r.converged && !r.degenerate) out.push_back(&r);
    return out;
}

}  // namespace

void keep_tail(std::vector<double>& m, std::vector<double>& q) {
    if (static_cast<int>(m.size()) <= kSlopeWindow) return;
    m.erase(m.begin(), m.end() - kSlopeWindow);
    q.erase(q.begin(), q.end() - kSlopeWindow);
}

SlopeFit fit_log_slope(const std::vector<double>& m, const std::vector<double>& q) {
    if (m.size() != q.size()) throw std::invalid_argument("fit_log_slope: size mismatch");
    if (m.size() < 3) throw std::invalid_argument("fit_log_slope: need at least 3 points");
    SlopeFit fit;
    fit.points = static_cast<int>(m.size());
    std::vector<double> lx(m.size()), ly(m.size());
    for (size_t i = 0; i < m.size(); ++i) {
        if (!(m[i] > 0) || !(q[i] > 0))
            throw std::invalid_argument("fit_log_slope: values must be positive");
        lx[i] = std::log(m[i]);
        ly[i] = std::log(q[i]);
    }
    const double n = static_cast<double>(m.size());
    const double sx = std::accumulate(lx.begin(), lx.end(), 0.0);
    const double sy = std::accumulate(ly.begin(), ly.end(), 0.0);
    double sxx = 0, sxy = 0;
    for (size_t i = 0; i < m.size(); ++i) {
        sxx += lx[i] * lx[i];
        sxy += lx[i] * ly[i];
    }
    const double denom = n * sxx - sx * sx;
    fit.slope = (n * sxy - sx * sy) / denom;
    fit.intercept = (sy - fit.slope * sx) / n;
    double ss = 0;
    for (size_t i = 0; i < m.size(); ++i) {
        const double r = ly[i] - (fit.intercept + fit.slope * lx[i]);
        ss += r * r;
    }
    fit.residual = std::sqrt(ss / n);
    return fit;
}

SlopeFit weight_decay(const std::vector<SweepRecord>& sweep) {
    auto rows = usable(sweep);
    if (rows.size() < 3) {
        SlopeFit fit;
        fit.degenerate = true;
        fit.note = "exactly balanced family";
        for (const auto& r : sweep)
            if (r.converged && !r.degenerate) fit.note = "fewer than 3 usable points";
        return fit;
    }
    std::vector<double> m, q;
    for (auto* r : rows) {
        m.push_back(r->m);
        q.push_back(r->max_gamma_dev);
    }
    keep_tail(m, q);
    return fit_log_slope(m, q);
}

SlopeFit corollary_b_decay(const std::vector<SweepRecord>& sweep, bool futaki_vanishes) {
    if (!futaki_vanishes) {
        SlopeFit fit;
        fit.degenerate = true;
        fit.note = "futaki character does not vanish on the torus";
        return fit;
    }
    return weight_decay(sweep);
}

SlopeFit r_m_scaling(const std::vector<SweepRecord>& sweep) {
    auto rows = usable(sweep);
    if (rows.size() < 3) {
        SlopeFit fit;
        fit.degenerate = true;
        fit.note = "exactly balanced family";
        return fit;
    }
    std::vector<double> m, q;
    for (auto* r : rows) {
        m.push_back(r->m);
        q.push_back(r->r_m_inv);
    }
    keep_tail(m, q);
    return fit_log_slope(m, q);
}

std::vector<double> hamiltonian(const BalanceResult& result, const WeightVector& lambda,
                                const std::vector<std::vector<double>>& points) {
    if (!result.converged) throw std::invalid_argument("hamiltonian: result did not converge");
    const auto& dec = *result.state.decomposition();
    if (lambda.decomposition().get() != &dec)
        throw std::invalid_argument("hamiltonian: weight over a different decomposition");
    const double m = static_cast<double>(dec.level());

    BlockWeights weights = BlockWeights::from_beta(dec, result.beta);
    PointSample sample = bergman_pointwise(result.state, weights, points, result.gram.diagonal);

    // f = sum_k lambda_k gamma_k S_k / (m sum_k gamma_k S_k); the weights
    // cancel against the block normalization, leaving the softmax average
    // of lambda over the section masses.
    std::vector<double> out(points.size());
    double bound = 0;
    for (int k = 0; k < dec.block_count(); ++k) bound = std::max(bound, std::fabs(lambda.entry(k)));
    for (size_t i = 0; i < points.size(); ++i) {
        double num = 0, den = 0;
        for (int k = 0; k < dec.block_count(); ++k) {
            const double t = weights.gamma[k] * sample.block_sums[i][k];
            num += lambda.entry(k) * t;
            den += t;
        }
        out[i] = num / (m * den);
        if (std::fabs(out[i]) > bound / m + 1e-12)
            throw std::logic_error("hamiltonian: value exceeds the weight bound");
    }
    return out;
}

std::vector<double> moment_map_oracle(const MetricState& state, const std::vector<double>& v_eff,
                                      double c0, const std::vector<std::vector<double>>& points) {
    const int n = state.dimension();
    if (static_cast<int>(v_eff.size()) != n)
        throw std::invalid_argument("moment_map_oracle: covector dimension mismatch");
    const double m = static_cast<double>(state.level());
    std::vector<double> out(points.size());
    for (size_t i = 0; i < points.size(); ++i) {
        auto data = state.evaluate(points[i]);
        double s = c0;
        for (int c = 0; c < n; ++c) s += v_eff[c] * data.mu[c];
        out[i] = s / m;
    }
    return out;
}

BergmanExpansion bergman_expansion(const BalanceResult& result,
                                   const std::vector<std::vector<double>>& points) {
    if (!result.converged)
        throw std::invalid_argument("bergman_expansion: result did not converge");
    const auto& dec = *result.state.decomposition();
    const int n = dec.dimension();
    const double m = static_cast<double>(dec.level());
    const double n_prime = to_double(dec.basis().n_prime);

    BergmanExpansion out;
    BlockWeights weights = BlockWeights::from_beta(dec, result.beta);
    PointSample sample = bergman_pointwise(result.state, weights, points, result.gram.diagonal);

    // Two-route identity: plain minus weighted sum against the block form.
    for (size_t i = 0; i < points.size(); ++i) {
        double rhs = 0;
        for (int k = 0; k < dec.block_count(); ++k)
            rhs += (1.0 - weights.gamma[k]) * sample.block_sums[i][k];
        out.identity_residual = std::max(
            out.identity_residual,
            std::fabs((sample.plain[i] - sample.weighted[i]) - rhs));
    }

    double maxdev = 0;
    for (double g : weights.gamma) maxdev = std::max(maxdev, std::fabs(g - 1.0));
    out.degenerate = maxdev <= kDegenerateGammaDev;
    if (out.degenerate) {
        out.f_m.assign(points.size(), 0.0);
        for (size_t i = 0; i < points.size(); ++i)
            out.sup_remainder = std::max(out.sup_remainder, std::fabs(sample.plain[i] - n_prime));
        return out;
    }

    const double rm_inv = std::sqrt(std::max(0.0, pairing_m(result.beta_centered, result.beta_centered)));
    WeightVector lambda = (1.0 / rm_inv) * result.beta_centered;
    std::vector<double> f_lambda = hamiltonian(result, lambda, points);

    const double coeff = -(rm_inv * m * m) / (result.beta0 * result.beta0);
    out.f_m.resize(points.size());
    for (size_t i = 0; i < points.size(); ++i) {
        out.f_m[i] = coeff * f_lambda[i];
        out.sup_f_m = std::max(out.sup_f_m, std::fabs(out.f_m[i]));
        const double remainder = sample.plain[i] - n_prime - out.f_m[i] * pow_int(m, n - 1);
        out.sup_remainder = std::max(out.sup_remainder, std::fabs(remainder));
    }
    return out;
}

double toric_futaki_oracle(const ToricPolarization& pol, const std::vector<double>& covector) {
    const int n = pol.dimension();
    if (static_cast<int>(covector.size()) != n)
        throw std::invalid_argument("futaki oracle: covector dimension mismatch");
    const double vol = to_double(pol.volume());
    const double sigma = to_double(pol.boundary_measure());
    double L = 0;
    for (int a = 0; a < n; ++a) {
        const double boundary = to_double(pol.boundary_coordinate_integral(a));
        const double interior = to_double(pol.interior_coordinate_integral(a));
        L += covector[a] * (boundary - sigma / vol * interior);
    }
    return -L / (2.0 * factorial(n + 1) * vol);
}

double exact_weighted_gram_sum(const ToricPolarization& pol, const SectionBasis& basis,
                               const std::vector<double>& covector) {
    const int n = pol.dimension();
    const double m = static_cast<double>(basis.level);
    double interior = 0;
    for (int a = 0; a < n; ++a)
        interior += covector[a] * to_double(pol.interior_coordinate_integral(a));
    double lattice_sum = 0;
    for (const auto& p : basis.points) {
        double s = 0;
        for (int c = 0; c < n; ++c) s += covector[c] * static_cast<double>(p[c]);
        lattice_sum += s;
    }
    const double mean = lattice_sum / static_cast<double>(basis.count());
    const double mass = pow_int(m, n) * to_double(pol.degree());
    return factorial(n) * pow_int(m, n + 1) * interior - mean * mass;
}

FutakiLink futaki_link(const BalanceResult& result, const TorusSubspace& sub,
                       const ToricPolarization& pol) {
    if (!result.converged) throw std::invalid_argument("futaki_link: result did not converge");
    const auto& dec = *result.state.decomposition();
    const int n = dec.dimension();
    const double m = static_cast<double>(dec.level());

    FutakiLink link;
    double maxdev = 0;
    for (double g : result.gamma) maxdev = std::max(maxdev, std::fabs(g - 1.0));
    if (maxdev <= kDegenerateGammaDev) {
        link.degenerate = true;
        return link;
    }

    const double rm_inv =
        std::sqrt(std::max(0.0, pairing_m(result.beta_centered, result.beta_centered)));
    WeightVector lambda = (1.0 / rm_inv) * result.beta_centered;

    // Norm-derivative value at the critical state.
    double dot_beta = 0, dot_sq = 0;
    for (int k = 0; k < dec.block_count(); ++k) {
        dot_beta += dec.multiplicity(k) * lambda.entry(k) * result.beta[k];
        dot_sq += dec.multiplicity(k) * lambda.entry(k) * lambda.entry(k);
    }
    link.identity_residual = std::fabs(dot_beta - rm_inv * dot_sq) / std::max(1.0, std::fabs(dot_beta));

    const double c4 = factorial(n + 1) * to_double(pol.degree());
    link.f_hat = dot_beta / (c4 * pow_int(m, n));

    auto coeffs = sub.generator_coefficients(lambda);
    link.covector = sub.effective_covector(coeffs);
    link.oracle = toric_futaki_oracle(pol, link.covector);
    return link;
}

}  // namespace polybal
