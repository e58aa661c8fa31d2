#include "polybal/integrator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <mutex>
#include <random>
#include <thread>

namespace polybal {

namespace {

constexpr double kExpCutoff = -46.0;  // exp below this cannot move double sums
constexpr double kProbeMargin = 2.0;
constexpr double kMaxProbeRadius = 120.0;
constexpr int kPanelNodes = 12;
constexpr int kGradeLevels = 6;

double factorial(int n) {
    double f = 1;
    for (int i = 2; i <= n; ++i) f *= i;
    return f;
}

// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
void gauss_legendre(int k, std::vector<double>& xs, std::vector<double>& ws) {
    xs.assign(k, 0.0);
    ws.assign(k, 0.0);
    const int half = (k + 1) / 2;
    for (int i = 0; i < half; ++i) {
        double x = std::cos(M_PI * (i + 0.75) / (k + 0.5));
        double dp = 0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int l = 2; l <= k; ++l) {
                double p2 = ((2 * l - 1) * x * p1 - (l - 1) * p0) / l;
                p0 = p1;
                p1 = p2;
            }
            dp = k * (x * p1 - p0) / (x * x - 1.0);
            double dx = p1 / dp;
            x -= dx;
            if (std::fabs(dx) < 1e-15) break;
        }
        xs[i] = -x;
        xs[k - 1 - i] = x;
        double w = 2.0 / ((1.0 - x * x) * dp * dp);
        ws[i] = w;
        ws[k - 1 - i] = w;
    }
}

struct EvalScratch {
    std::vector<double> e, w;
    std::vector<int> touched;
};

struct MomentData {
    double phi = 0, S = 0, emax = 0, density = 0;
    double mu[3] = {0, 0, 0};
    double cov[9] = {0};
};

void evaluate_point(int n, int N, const double* coords, const double* logs, double nfact,
                    const double* x, EvalScratch& sc, MomentData& md) {
    sc.e.resize(N);
    sc.w.resize(N);
    sc.touched.clear();
    double emax = -HUGE_VAL;
    if (n == 1) {
        const double x0 = x[0];
        for (int j = 0; j < N; ++j) {
            double e = 2.0 * (coords[j] * x0 + logs[j]);
            sc.e[j] = e;
            if (e > emax) emax = e;
        }
    } else if (n == 2) {
        const double x0 = x[0], x1 = x[1];
        for (int j = 0; j < N; ++j) {
            double e = 2.0 * (coords[2 * j] * x0 + coords[2 * j + 1] * x1 + logs[j]);
            sc.e[j] = e;
            if (e > emax) emax = e;
        }
    } else {
        for (int j = 0; j < N; ++j) {
            double s = 0;
            for (int c = 0; c < n; ++c) s += coords[j * n + c] * x[c];
            double e = 2.0 * (s + logs[j]);
            sc.e[j] = e;
            if (e > emax) emax = e;
        }
    }
    double S = 0;
    for (int j = 0; j < N; ++j) {
        const double t = sc.e[j] - emax;
        if (t < kExpCutoff) {
            sc.w[j] = 0.0;
            continue;
        }
        const double w = std::exp(t);
        sc.w[j] = w;
        S += w;
        sc.touched.push_back(j);
    }
    double m1[3] = {0, 0, 0};
    for (int j : sc.touched) {
        const double w = sc.w[j];
        const double* p = coords + j * n;
        for (int a = 0; a < n; ++a) m1[a] += w * p[a];
    }
    md.S = S;
    md.emax = emax;
    md.phi = emax + std::log(S);
    for (int a = 0; a < n; ++a) md.mu[a] = m1[a] / S;
    // centered second pass; the raw-moment form cancels catastrophically
    // near the polytope corners where the covariance degenerates
    double m2[9] = {0};
    for (int j : sc.touched) {
        const double w = sc.w[j];
        const double* p = coords + j * n;
        double dp[3];
        for (int a = 0; a < n; ++a) dp[a] = p[a] - md.mu[a];
        for (int a = 0; a < n; ++a)
            for (int b = a; b < n; ++b) m2[a * n + b] += w * dp[a] * dp[b];
    }
    for (int a = 0; a < n; ++a)
        for (int b = a; b < n; ++b) {
            const double c = m2[a * n + b] / S;
            md.cov[a * n + b] = c;
            md.cov[b * n + a] = c;
        }
    double det = 0;
    if (n == 1) {
        det = 2.0 * md.cov[0];
    } else if (n == 2) {
        det = 4.0 * (md.cov[0] * md.cov[3] - md.cov[1] * md.cov[1]);
    } else {
        const double* c = md.cov;
        det = 8.0 * (c[0] * (c[4] * c[8] - c[5] * c[7]) - c[1] * (c[3] * c[8] - c[5] * c[6]) +
                     c[2] * (c[3] * c[7] - c[4] * c[6]));
    }
    md.density = nfact * std::max(det, 0.0);
}

// Solve (2 cov) dx = r for n <= 2.
bool solve_hessian(int n, const double* cov, const double* r, double* dx) {
    if (n == 1) {
        const double a = 2.0 * cov[0];
        if (std::fabs(a) < 1e-300) return false;
        dx[0] = r[0] / a;
        return true;
    }
    const double a = 2 * cov[0], b = 2 * cov[1], c = 2 * cov[2], d = 2 * cov[3];
    const double det = a * d - b * c;
    if (std::fabs(det) < 1e-300) return false;
    dx[0] = (d * r[0] - b * r[1]) / det;
    dx[1] = (a * r[1] - c * r[0]) / det;
    return true;
}

struct StateView {
    int n = 0, N = 0;
    const double* coords = nullptr;
    const double* logs = nullptr;
    double nfact = 1;
};

StateView view_of(const MetricState& state) {
    return {state.dimension(), state.section_count(), state.coords().data(),
            state.log_scales().data(), factorial(state.dimension())};
}

// Newton inversion of the moment map: find x with grad(phi/2)(x) = u.  The
// equation is the stationarity condition of the strictly convex function
// g(x) = phi(x)/2 - <u, x>, so damped Newton with a backtracking decrease
// test on g converges from any start.
bool invert_moment(const StateView& sv, const double* u, double* x, EvalScratch& sc,
                   MomentData& md, double tol, double* achieved = nullptr,
                   const char** reason = nullptr) {
    if (reason) *reason = "iteration cap";
    evaluate_point(sv.n, sv.N, sv.coords, sv.logs, sv.nfact, x, sc, md);
    double g = 0.5 * md.phi;
    for (int c = 0; c < sv.n; ++c) g -= u[c] * x[c];
    for (int it = 0; it < 200; ++it) {
        double r[2], err = 0;
        for (int c = 0; c < sv.n; ++c) {
            r[c] = u[c] - md.mu[c];
            err = std::max(err, std::fabs(r[c]));
        }
        if (achieved) *achieved = err;
        if (err <= tol) return true;
        double dx[2];
        if (!solve_hessian(sv.n, md.cov, r, dx)) {
            // collapsed covariance (single surviving section): fall back to
            // the gradient direction of g, which is u - mu
            double rs = 0;
            for (int c = 0; c < sv.n; ++c) rs = std::max(rs, std::fabs(r[c]));
            if (!(rs > 0)) {
                if (reason) *reason = "singular hessian";
                return false;
            }
            for (int c = 0; c < sv.n; ++c) dx[c] = r[c] / rs;
        }
        double scale = 0;
        for (int c = 0; c < sv.n; ++c) scale = std::max(scale, std::fabs(dx[c]));
        if (scale > 50.0)
            for (int c = 0; c < sv.n; ++c) dx[c] *= 50.0 / scale;
        if (scale <= 0.25) {
            // short steps are safe for a log-sum-exp potential, and near the
            // floor the Armijo decrease drowns in the rounding of g
            for (int c = 0; c < sv.n; ++c) x[c] += dx[c];
            evaluate_point(sv.n, sv.N, sv.coords, sv.logs, sv.nfact, x, sc, md);
            continue;
        }
        // descent rate of g along dx is -<r, dx>
        double slope = 0;
        for (int c = 0; c < sv.n; ++c) slope -= r[c] * dx[c];
        double alpha = 1.0;
        bool moved = false;
        double xt[2];
        for (int bt = 0; bt < 40; ++bt) {
            for (int c = 0; c < sv.n; ++c) xt[c] = x[c] + alpha * dx[c];
            evaluate_point(sv.n, sv.N, sv.coords, sv.logs, sv.nfact, xt, sc, md);
            double gt = 0.5 * md.phi;
            for (int c = 0; c < sv.n; ++c) gt -= u[c] * xt[c];
            if (gt <= g + 1e-4 * alpha * slope) {
                for (int c = 0; c < sv.n; ++c) x[c] = xt[c];
                g = gt;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!moved) {
            if (reason) *reason = "line search floor";
            return false;
        }
    }
    return false;
}

// Panel edges for [a, b]: near-uniform interior pieces of width <= w_target,
// split at the given interior breakpoints, with geometric grading toward
// both ends (the inverse moment map degenerates logarithmically there).
std::vector<double> panel_edges(double a, double b, double w_target, int levels,
                                const std::vector<double>& breaks) {
    std::vector<double> edges;
    if (!(b > a)) return edges;
    const double range = b - a;
    const double w = std::min(w_target, range / 4.0);
    edges.push_back(a);
    edges.push_back(b);
    for (int l = 0; l <= levels; ++l) {
        edges.push_back(a + w * std::pow(0.5, l));
        edges.push_back(b - w * std::pow(0.5, l));
    }
    for (double t : breaks)
        if (t > a && t < b) edges.push_back(t);
    std::sort(edges.begin(), edges.end());
    // fill long gaps with uniform pieces
    std::vector<double> full;
    const double sep = w * std::pow(0.5, levels + 2);
    for (size_t i = 0; i < edges.size(); ++i) {
        if (!full.empty() && edges[i] - full.back() < sep) continue;
        if (!full.empty()) {
            const double gap = edges[i] - full.back();
            const int pieces = static_cast<int>(std::ceil(gap / w - 1e-12));
            for (int p = 1; p < pieces; ++p) full.push_back(full.back() + gap / pieces);
        }
        full.push_back(edges[i]);
    }
    if (full.size() < 2) full = {a, b};
    full.front() = a;
    full.back() = b;
    return full;
}

struct QuadResolution {
    int nodes_per_panel = kPanelNodes;
    int grade_levels = kGradeLevels;
    double width_scale = 1.0;  // multiplies the interior panel width
};

// Iterated Gauss-Legendre sweep over the dilated moment polytope.  The
// integrand callback sees the softmax data at the inverted point; axis 0 is
// the outer loop, its panels are farmed to threads and reduced in panel
// order, so results do not depend on the thread count.
template <typename Fn>
std::vector<double> sweep_moment_nodes(const MetricState& state, const QuadratureSpec& spec,
                                       const QuadResolution& res, int threads, int width,
                                       Fn&& fn) {
    const auto& basis = state.decomposition()->basis();
    if (!basis.polytope)
        throw std::invalid_argument("moment quadrature: basis without polytope data");
    const ToricPolarization& pol = *basis.polytope;
    const int n = state.dimension();
    if (n > 2)
        throw std::invalid_argument("moment quadrature: implemented for dimension <= 2");
    const double m = static_cast<double>(state.level());
    const StateView sv = view_of(state);
    const double newton_tol = 1e-11 * std::max(1.0, m);

    std::vector<double> gx, gw;
    gauss_legendre(res.nodes_per_panel, gx, gw);

    double lo0 = HUGE_VAL, hi0 = -HUGE_VAL;
    std::vector<double> breaks;
    for (const auto& v : pol.vertices()) {
        const double t = m * static_cast<double>(v[0]);
        lo0 = std::min(lo0, t);
        hi0 = std::max(hi0, t);
        breaks.push_back(t);
    }
    const double w_target =
        res.width_scale * (hi0 - lo0) / std::max(6.0, spec.nodes_per_axis / 12.0);
    const auto outer = panel_edges(lo0, hi0, w_target, res.grade_levels, breaks);
    const size_t npanels = outer.size() - 1;

    // inner interval of the slice at fixed u0 from the inequality system
    const auto& ineqs = pol.inequalities();
    auto slice = [&](double u0, double& lo, double& hi) {
        lo = -HUGE_VAL;
        hi = HUGE_VAL;
        for (const auto& iq : ineqs) {
            const double a0 = static_cast<double>(iq.normal[0]);
            const double a1 = static_cast<double>(iq.normal[1]);
            const double rhs = m * static_cast<double>(iq.offset) - a0 * u0;
            if (a1 > 0)
                lo = std::max(lo, rhs / a1);
            else if (a1 < 0)
                hi = std::min(hi, rhs / a1);
        }
        return hi > lo;
    };

    std::vector<std::vector<double>> partial(npanels);
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        EvalScratch sc;
        MomentData md;
        while (true) {
            const size_t pi = next.fetch_add(1);
            if (pi >= npanels) break;
            auto& acc = partial[pi];
            acc.assign(width, 0.0);
            const double pa = outer[pi], pb = outer[pi + 1];
            for (int q = 0; q < res.nodes_per_panel; ++q) {
                const double u0 = pa + 0.5 * (pb - pa) * (gx[q] + 1.0);
                const double w0 = 0.5 * (pb - pa) * gw[q];
                double x[2] = {0.0, 0.0};
                if (n == 1) {
                    double achieved = 0;
                    if (!invert_moment(sv, &u0, x, sc, md, newton_tol, &achieved))
                        throw QuadratureError(
                            "moment inversion failed at u=" + std::to_string(u0) +
                                " (err " + std::to_string(achieved) + ")",
                            achieved);
                    fn(md, sc, w0, acc.data());
                    continue;
                }
                double lo1, hi1;
                if (!slice(u0, lo1, hi1)) continue;
                const double w_inner = res.width_scale * (hi1 - lo1) /
                                       std::max(4.0, spec.nodes_per_axis / 12.0);
                const auto inner = panel_edges(lo1, hi1, w_inner, res.grade_levels, {});
                bool warm = false;
                for (size_t qi = 0; qi + 1 < inner.size(); ++qi) {
                    const double qa = inner[qi], qb = inner[qi + 1];
                    for (int r = 0; r < res.nodes_per_panel; ++r) {
                        const double u1 = qa + 0.5 * (qb - qa) * (gx[r] + 1.0);
                        const double w1 = 0.5 * (qb - qa) * gw[r];
                        const double u[2] = {u0, u1};
                        if (!warm) {
                            x[0] = x[1] = 0.0;
                            warm = true;
                        }
                        double achieved = 0;
                        const char* reason = "";
                        if (!invert_moment(sv, u, x, sc, md, newton_tol, &achieved, &reason)) {
                            char buf[160];
                            std::snprintf(buf, sizeof buf,
                                          "moment inversion failed at u=(%.6f,%.6f) err %.3e (%s)",
                                          u[0], u[1], achieved, reason);
                            throw QuadratureError(buf, achieved);
                        }
                        fn(md, sc, w0 * w1, acc.data());
                    }
                }
            }
        }
    };

    const int nthreads = std::max(1, std::min<int>(threads, static_cast<int>(npanels)));
    std::exception_ptr error;
    if (nthreads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        std::mutex guard;
        for (int t = 0; t < nthreads; ++t)
            pool.emplace_back([&]() {
                try {
                    worker();
                } catch (...) {
                    std::lock_guard<std::mutex> lock(guard);
                    if (!error) error = std::current_exception();
                }
            });
        for (auto& th : pool) th.join();
        if (error) std::rethrow_exception(error);
    }

    std::vector<double> total(width, 0.0);
    for (size_t i = 0; i < npanels; ++i)
        if (!partial[i].empty())
            for (int c = 0; c < width; ++c) total[c] += partial[i][c];
    return total;
}

double density_at(const MetricState& state, const std::vector<double>& x, EvalScratch& sc) {
    MomentData md;
    const StateView sv = view_of(state);
    evaluate_point(sv.n, sv.N, sv.coords, sv.logs, sv.nfact, x.data(), sc, md);
    return md.density;
}

double probe_radius(const MetricState& state, const std::vector<double>& center,
                    const std::vector<double>& dir, double cut, EvalScratch& sc) {
    int consec = 0;
    std::vector<double> x(center.size());
    for (double t = 1.0; t <= kMaxProbeRadius; t += 1.0) {
        for (size_t i = 0; i < x.size(); ++i) x[i] = center[i] + t * dir[i];
        if (density_at(state, x, sc) < cut) {
            if (++consec == 2) return t;
        } else {
            consec = 0;
        }
    }
    return kMaxProbeRadius;
}

}  // namespace

void QuadratureSpec::validate() const {
    if (nodes_per_axis < 8)
        throw std::invalid_argument("quadrature: nodes_per_axis must be >= 8");
    if (!(target_rel_error > 0.0) || target_rel_error > 1e-4)
        throw std::invalid_argument("quadrature: target_rel_error must be in (0, 1e-4]");
    if (!(truncation_threshold > 0.0) || truncation_threshold > 1e-8)
        throw std::invalid_argument("quadrature: truncation_threshold must be in (0, 1e-8]");
}

MetricState::MetricState(DecompositionPtr dec, std::vector<double> log_scales)
    : dec_(std::move(dec)), log_scales_(std::move(log_scales)) {
    if (!dec_) throw std::invalid_argument("metric state: null decomposition");
    if (static_cast<long long>(log_scales_.size()) != dec_->section_count())
        throw std::invalid_argument("metric state: scale count != section count");
    for (double d : log_scales_)
        if (!std::isfinite(d)) throw std::invalid_argument("metric state: non-finite log scale");
    const int n = dec_->dimension();
    coords_.resize(log_scales_.size() * n);
    for (int j = 0; j < section_count(); ++j) {
        const auto& p = dec_->point_of_flat(j);
        for (int c = 0; c < n; ++c) coords_[j * n + c] = static_cast<double>(p[c]);
    }
}

MetricState MetricState::ones(DecompositionPtr dec) {
    std::vector<double> d(dec->section_count(), 0.0);
    return MetricState(std::move(dec), std::move(d));
}

MetricState MetricState::from_log_scales(DecompositionPtr dec, std::vector<double> log_scales) {
    return MetricState(std::move(dec), std::move(log_scales));
}

MetricState MetricState::from_scales(DecompositionPtr dec, const std::vector<double>& scales) {
    std::vector<double> d(scales.size());
    for (size_t j = 0; j < scales.size(); ++j) {
        if (!(scales[j] > 0.0))
            throw std::invalid_argument("metric state: scales must be positive");
        d[j] = std::log(scales[j]);
    }
    return MetricState(std::move(dec), std::move(d));
}

double MetricState::scale(int flat0) const { return std::exp(log_scales_.at(flat0)); }

MetricState MetricState::gauged() const {
    double mean = 0;
    for (double d : log_scales_) mean += d;
    mean /= static_cast<double>(log_scales_.size());
    std::vector<double> d(log_scales_);
    for (auto& v : d) v -= mean;
    return MetricState(dec_, std::move(d));
}

double MetricState::potential(const std::vector<double>& x) const {
    EvalScratch sc;
    MomentData md;
    const StateView sv = view_of(*this);
    evaluate_point(sv.n, sv.N, sv.coords, sv.logs, sv.nfact, x.data(), sc, md);
    return md.phi;
}

MetricState::PointData MetricState::evaluate(const std::vector<double>& x) const {
    EvalScratch sc;
    MomentData md;
    const int n = dimension();
    const StateView sv = view_of(*this);
    evaluate_point(sv.n, sv.N, sv.coords, sv.logs, sv.nfact, x.data(), sc, md);
    PointData out;
    out.phi = md.phi;
    out.density = md.density;
    out.rho.resize(section_count());
    for (int j = 0; j < section_count(); ++j) out.rho[j] = sc.w[j] / md.S;
    out.mu.assign(md.mu, md.mu + n);
    out.cov.assign(n * n, 0.0);
    for (int i = 0; i < n * n; ++i) out.cov[i] = md.cov[i];
    return out;
}

TruncationBox truncation_box(const MetricState& state, double threshold) {
    const int n = state.dimension();
    const int N = state.section_count();
    EvalScratch sc;
    MomentData md;
    const StateView sv = view_of(state);

    // Center the probe where the moment map hits the mean lattice point.
    std::vector<double> target(n, 0.0);
    for (int j = 0; j < N; ++j)
        for (int c = 0; c < n; ++c) target[c] += state.coords()[j * n + c];
    for (auto& t : target) t /= static_cast<double>(N);

    std::vector<double> x(n, 0.0);
    invert_moment(sv, target.data(), x.data(), sc, md, 1e-9 * std::max(1.0, static_cast<double>(state.level())));

    const double peak = density_at(state, x, sc);
    if (!(peak > 0))
        throw QuadratureError("truncation: vanishing density at the moment-map center", 1.0);
    const double cut = peak * threshold * 1e-2;

    TruncationBox box;
    box.lo.resize(n);
    box.hi.resize(n);
    std::vector<double> dir(n, 0.0);
    for (int a = 0; a < n; ++a) {
        dir.assign(n, 0.0);
        dir[a] = 1.0;
        box.hi[a] = x[a] + probe_radius(state, x, dir, cut, sc) + kProbeMargin;
        dir[a] = -1.0;
        box.lo[a] = x[a] - probe_radius(state, x, dir, cut, sc) - kProbeMargin;
    }
    if (n >= 2) {
        const double inv = 1.0 / std::sqrt(static_cast<double>(n));
        for (int mask = 0; mask < (1 << n); ++mask) {
            for (int a = 0; a < n; ++a) dir[a] = ((mask >> a) & 1) ? inv : -inv;
            const double t = probe_radius(state, x, dir, cut, sc) + kProbeMargin;
            for (int a = 0; a < n; ++a) {
                const double edge = x[a] + dir[a] * t;
                box.lo[a] = std::min(box.lo[a], edge);
                box.hi[a] = std::max(box.hi[a], edge);
            }
        }
    }
    return box;
}

GramReport gram_integrals(const MetricState& state, const QuadratureSpec& spec, int threads) {
    spec.validate();
    const int N = state.section_count();
    const int n = state.dimension();
    const double nfact = factorial(n);

    GramReport report;
    report.expected_mass = std::pow(static_cast<double>(state.level()), n) *
                           to_double(state.decomposition()->basis().degree);

    auto run = [&](const QuadResolution& res) {
        auto total = sweep_moment_nodes(
            state, spec, res, threads, N + 1,
            [N, nfact](const MomentData& md, const EvalScratch& sc, double w, double* acc) {
                const double f = nfact * w / md.S;
                acc[N] += nfact * w;
                for (int j : sc.touched) acc[j] += f * sc.w[j];
            });
        return total;
    };

    QuadResolution base;
    auto total = run(base);
    report.diagonal.assign(total.begin(), total.begin() + N);
    report.total_mass = total[N];
    report.rel_mass_defect =
        std::fabs(report.total_mass - report.expected_mass) / report.expected_mass;

    if (spec.scheme == QuadratureSpec::Scheme::AdaptivePanels) {
        // Verified mode: refine until two resolutions agree on every entry.
        const double unit = report.expected_mass / static_cast<double>(N);
        QuadResolution fine{kPanelNodes + 6, kGradeLevels + 2, 1.0};
        for (int round = 0; round < 3; ++round) {
            auto check = run(fine);
            double diff = 0;
            for (int j = 0; j < N; ++j)
                diff = std::max(diff, std::fabs(check[j] - report.diagonal[j]) / unit);
            report.diagonal.assign(check.begin(), check.begin() + N);
            report.total_mass = check[N];
            report.rel_mass_defect =
                std::fabs(report.total_mass - report.expected_mass) / report.expected_mass;
            if (diff <= spec.target_rel_error) return report;
            fine.nodes_per_panel += 6;
            fine.grade_levels += 1;
            fine.width_scale *= 0.5;
        }
        throw QuadratureError("gram integrals: refinement does not stabilize",
                              report.rel_mass_defect);
    }

    if (report.rel_mass_defect > spec.target_rel_error)
        throw QuadratureError("gram integrals: mass self-check misses the target",
                              report.rel_mass_defect);
    return report;
}

OffDiagonalReport offdiagonal_check(const MetricState& state,
                                    const std::vector<std::pair<int, int>>& flat_pairs,
                                    const QuadratureSpec& spec) {
    spec.validate();
    const int n = state.dimension();
    const double nfact = factorial(n);
    OffDiagonalReport report;

    std::vector<std::pair<int, int>> live;
    std::vector<double> fiber;
    for (auto [j1, j2] : flat_pairs) {
        if (j1 == j2) throw std::invalid_argument("offdiagonal_check: pair of equal indices");
        const double* p1 = state.coords().data() + j1 * n;
        const double* p2 = state.coords().data() + j2 * n;
        bool same = true;
        for (int c = 0; c < n; ++c)
            if (p1[c] != p2[c]) same = false;
        if (same) {
            ++report.not_applicable;
            continue;
        }
        // Torus-fiber average of the character difference; exactly zero in
        // closed form, evaluated here by trapezoid as a noise floor.
        double mag = 1.0;
        for (int c = 0; c < n; ++c) {
            const long long d = static_cast<long long>(p1[c] - p2[c]);
            if (d == 0) continue;
            const int K = static_cast<int>(2 * std::llabs(d) + 3);
            double re = 0, im = 0;
            for (int t = 0; t < K; ++t) {
                const double ang = 2.0 * M_PI * static_cast<double>(d) * t / K;
                re += std::cos(ang);
                im += std::sin(ang);
            }
            mag *= std::hypot(re / K, im / K);
        }
        live.emplace_back(j1, j2);
        fiber.push_back(mag);
    }
    report.checked = static_cast<int>(live.size());
    if (live.empty()) return report;

    auto radial = sweep_moment_nodes(
        state, spec, QuadResolution{}, 1, static_cast<int>(live.size()),
        [&live, nfact](const MomentData& md, const EvalScratch& sc, double w, double* acc) {
            const double f = nfact * w / md.S;
            for (size_t i = 0; i < live.size(); ++i)
                acc[i] += f * std::sqrt(sc.w[live[i].first] * sc.w[live[i].second]);
        });
    for (size_t i = 0; i < live.size(); ++i)
        report.max_residual = std::max(report.max_residual, fiber[i] * radial[i]);
    return report;
}

BlockWeights BlockWeights::from_beta(const CharacterDecomposition& dec, std::vector<double> beta) {
    if (static_cast<int>(beta.size()) != dec.block_count())
        throw std::invalid_argument("block weights: size != block count");
    BlockWeights w;
    w.beta = std::move(beta);
    double sum = 0;
    for (int k = 0; k < dec.block_count(); ++k) {
        if (!(w.beta[k] > 0)) throw std::invalid_argument("block weights: beta must be positive");
        sum += dec.multiplicity(k) * w.beta[k];
    }
    w.beta0 = sum / static_cast<double>(dec.section_count());
    w.gamma.resize(w.beta.size());
    for (size_t k = 0; k < w.beta.size(); ++k) w.gamma[k] = w.beta[k] / w.beta0;
    return w;
}

PointSample bergman_pointwise(const MetricState& state, const BlockWeights& weights,
                              const std::vector<std::vector<double>>& points,
                              const std::vector<double>& section_norms) {
    const auto& dec = *state.decomposition();
    const int N = state.section_count();
    if (static_cast<int>(weights.beta.size()) != dec.block_count())
        throw std::invalid_argument("bergman: weight count != block count");
    if (points.empty()) throw std::invalid_argument("bergman: empty point set");
    if (!section_norms.empty()) {
        if (static_cast<int>(section_norms.size()) != N)
            throw std::invalid_argument("bergman: section norm count != section count");
        for (double g : section_norms)
            if (!(g > 0)) throw std::invalid_argument("bergman: section norms must be positive");
    }
    const double mn = std::pow(static_cast<double>(state.level()), state.dimension());

    PointSample sample;
    sample.points = points;
    for (const auto& x : points) {
        auto data = state.evaluate(x);
        std::vector<double> blocks(dec.block_count(), 0.0);
        for (int j = 0; j < N; ++j) {
            const double norm =
                section_norms.empty() ? weights.beta[dec.block_of_flat(j)] : section_norms[j];
            blocks[dec.block_of_flat(j)] += mn * data.rho[j] / norm;
        }
        double plain = 0, weighted = 0;
        for (int k = 0; k < dec.block_count(); ++k) {
            plain += blocks[k];
            weighted += weights.gamma[k] * blocks[k];
        }
        sample.block_sums.push_back(std::move(blocks));
        sample.plain.push_back(plain);
        sample.weighted.push_back(weighted);
        if (!std::isfinite(plain) || !std::isfinite(weighted))
            throw std::runtime_error("bergman: non-finite sample value");
    }
    return sample;
}

std::vector<std::vector<double>> sample_points(const TruncationBox& box, int count,
                                               uint64_t seed) {
    if (count < 1) throw std::invalid_argument("sample_points: count must be >= 1");
    std::mt19937_64 rng(seed);
    const int n = static_cast<int>(box.lo.size());
    std::vector<std::vector<double>> pts(count, std::vector<double>(n));
    for (auto& p : pts)
        for (int a = 0; a < n; ++a) {
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            p[a] = box.lo[a] + u * (box.hi[a] - box.lo[a]);
        }
    return pts;
}

}  // namespace polybal
