#include "polybal/cli_runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace polybal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kKnownChecks = {
    "balanced_oracle",  "mass_beta0",   "polybalanced_identities",
    "weight_decay",     "r_m_scaling",  "corollary_b",
    "bergman_expansion", "futaki_link", "hamiltonian"};

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12e", v);
    return buf;
}

std::string format_short(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

std::string format_hash(uint64_t h) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(h));
    return buf;
}

json json_double(double v) {
    if (std::isnan(v)) return nullptr;
    return v;
}

double double_from(const json& j) {
    if (j.is_null()) return std::nan("");
    return j.get<double>();
}

const json& require_field(const json& j, const std::string& field) {
    auto it = j.find(field);
    if (it == j.end()) throw ConfigError(field, "config: missing field '" + field + "'");
    return *it;
}

double factorial(int n) {
    double f = 1;
    for (int i = 2; i <= n; ++i) f *= i;
    return f;
}

double pow_int(double b, int e) {
    double r = 1;
    for (int i = 0; i < e; ++i) r *= b;
    return r;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    if (n == 0) return std::nan("");
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

uint64_t fnv1a64(const std::string& text) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

ToricPolarization ExperimentConfig::polytope() const {
    try {
        if (inequalities.empty()) return ToricPolarization::from_vertices(vertices);
        return ToricPolarization::from_vertices_and_inequalities(vertices, inequalities);
    } catch (const std::invalid_argument& e) {
        throw ConfigError("polytope", std::string("config: ") + e.what());
    }
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "config: cannot read '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("config", std::string("config: invalid JSON: ") + e.what());
    }

    ExperimentConfig cfg;
    cfg.name = require_field(j, "name").get<std::string>();
    if (cfg.name.empty()) throw ConfigError("name", "config: empty field 'name'");

    const json& poly = require_field(j, "polytope");
    const json& verts = require_field(poly, "vertices");
    if (!verts.is_array() || verts.empty())
        throw ConfigError("polytope.vertices", "config: 'polytope.vertices' must be a nonempty array");
    for (const auto& v : verts) {
        LatticePoint p;
        for (const auto& c : v) p.push_back(c.get<long long>());
        cfg.vertices.push_back(std::move(p));
    }
    if (poly.contains("inequalities")) {
        for (const auto& iq : poly["inequalities"]) {
            Inequality ineq;
            for (const auto& c : iq.at(0)) ineq.normal.push_back(c.get<long long>());
            ineq.offset = iq.at(1).get<long long>();
            cfg.inequalities.push_back(std::move(ineq));
        }
    }

    const json& torus = require_field(j, "subtorus");
    if (!torus.is_array()) throw ConfigError("subtorus", "config: 'subtorus' must be an array");
    for (const auto& g : torus) {
        std::vector<long long> gen;
        for (const auto& c : g) gen.push_back(c.get<long long>());
        cfg.subtorus.generators.push_back(std::move(gen));
    }

    const json& mlist = require_field(j, "m_list");
    if (!mlist.is_array() || mlist.empty())
        throw ConfigError("m_list", "config: 'm_list' must be a nonempty array");
    for (const auto& m : mlist) cfg.m_list.push_back(m.get<int>());
    for (size_t i = 0; i < cfg.m_list.size(); ++i) {
        if (cfg.m_list[i] < 1)
            throw ConfigError("m_list", "config: 'm_list' entries must be >= 1");
        if (i > 0 && cfg.m_list[i] <= cfg.m_list[i - 1])
            throw ConfigError("m_list", "config: 'm_list' must be strictly increasing");
    }

    if (j.contains("solver")) {
        const json& s = j["solver"];
        if (s.contains("method")) {
            const std::string m = s["method"].get<std::string>();
            if (m == "fixed_point")
                cfg.solver.method = SolverSpec::Method::FixedPoint;
            else if (m == "descent")
                cfg.solver.method = SolverSpec::Method::Descent;
            else
                throw ConfigError("solver.method", "config: unknown solver method '" + m + "'");
        }
        if (s.contains("step")) cfg.solver.step = s["step"].get<double>();
        if (s.contains("max_iterations")) cfg.solver.max_iterations = s["max_iterations"].get<int>();
        if (s.contains("tolerance")) cfg.solver.tolerance = s["tolerance"].get<double>();
        if (s.contains("accelerate")) cfg.solver.accelerate = s["accelerate"].get<bool>();
    }
    try {
        cfg.solver.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("solver", std::string("config: ") + e.what());
    }

    if (j.contains("quadrature")) {
        const json& q = j["quadrature"];
        if (q.contains("scheme")) {
            const std::string s = q["scheme"].get<std::string>();
            if (s == "tensor_gl")
                cfg.quadrature.scheme = QuadratureSpec::Scheme::TensorGaussLegendre;
            else if (s == "adaptive")
                cfg.quadrature.scheme = QuadratureSpec::Scheme::AdaptivePanels;
            else
                throw ConfigError("quadrature.scheme", "config: unknown quadrature scheme '" + s + "'");
        }
        if (q.contains("nodes_per_axis")) cfg.quadrature.nodes_per_axis = q["nodes_per_axis"].get<int>();
        if (q.contains("target_rel_error"))
            cfg.quadrature.target_rel_error = q["target_rel_error"].get<double>();
        if (q.contains("truncation_threshold"))
            cfg.quadrature.truncation_threshold = q["truncation_threshold"].get<double>();
    }
    try {
        cfg.quadrature.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("quadrature", std::string("config: ") + e.what());
    }

    const json& samples = require_field(j, "samples");
    cfg.samples.seed = require_field(samples, "seed").get<uint64_t>();
    cfg.samples.count = require_field(samples, "count").get<int>();
    if (cfg.samples.count < 1)
        throw ConfigError("samples.count", "config: 'samples.count' must be >= 1");

    if (j.contains("checks")) {
        for (const auto& c : j["checks"]) {
            const std::string name = c.get<std::string>();
            if (std::find(kKnownChecks.begin(), kKnownChecks.end(), name) == kKnownChecks.end())
                throw ConfigError("checks", "config: unknown name '" + name + "' in 'checks'");
            cfg.checks.push_back(name);
        }
    }

    // Canonical hash: nlohmann orders object keys, so the dump is stable
    // under reordering of the input fields.
    cfg.hash = fnv1a64(j.dump());
    return cfg;
}

SweepRecord CellScalars::record() const {
    SweepRecord r;
    r.m = m;
    r.sections = sections;
    r.blocks = blocks;
    r.beta0 = beta0;
    r.max_gamma_dev = max_gamma_dev;
    r.r_m_inv = r_m_inv;
    r.generator_pairing = generator_pairing;
    r.futaki_hat = futaki_hat;
    r.futaki_oracle = futaki_oracle;
    r.sup_f_m = sup_f_m;
    r.sup_remainder = sup_remainder;
    r.converged = converged;
    r.degenerate = degenerate;
    return r;
}

namespace {

json cell_to_json(const CellScalars& c, uint64_t config_hash) {
    json j;
    j["config_hash"] = format_hash(config_hash);
    j["m"] = c.m;
    j["sections"] = c.sections;
    j["blocks"] = c.blocks;
    j["converged"] = c.converged;
    j["diverged"] = c.diverged;
    j["iterations"] = c.iterations;
    j["residual"] = json_double(c.residual);
    j["block_uniformity"] = json_double(c.block_uniformity);
    j["perp_norm"] = json_double(c.perp_norm);
    j["beta0"] = json_double(c.beta0);
    j["beta0_exact"] = json_double(c.beta0_exact);
    j["max_gamma_dev"] = json_double(c.max_gamma_dev);
    j["r_m_inv"] = json_double(c.r_m_inv);
    j["generator_pairing"] = json_double(c.generator_pairing);
    j["mass_rel_defect"] = json_double(c.mass_rel_defect);
    j["futaki_hat"] = json_double(c.futaki_hat);
    j["futaki_oracle"] = json_double(c.futaki_oracle);
    j["futaki_identity_residual"] = json_double(c.futaki_identity_residual);
    j["sup_f_m"] = json_double(c.sup_f_m);
    j["sup_remainder"] = json_double(c.sup_remainder);
    j["polybalanced_sup"] = json_double(c.polybalanced_sup);
    j["bergman_identity_residual"] = json_double(c.bergman_identity_residual);
    j["hamiltonian_dev"] = json_double(c.hamiltonian_dev);
    j["balanced_c_dev"] = json_double(c.balanced_c_dev);
    j["plain_const_dev"] = json_double(c.plain_const_dev);
    j["degenerate"] = c.degenerate;
    j["log_scales"] = c.log_scales;
    j["beta"] = c.beta;
    j["gamma"] = c.gamma;
    return j;
}

bool cell_from_json(const json& j, uint64_t config_hash, CellScalars& c) {
    if (!j.contains("config_hash") || j["config_hash"] != format_hash(config_hash)) return false;
    c.m = j.at("m").get<int>();
    c.sections = j.at("sections").get<long long>();
    c.blocks = j.at("blocks").get<int>();
    c.converged = j.at("converged").get<bool>();
    c.diverged = j.at("diverged").get<bool>();
    c.iterations = j.at("iterations").get<int>();
    c.residual = double_from(j.at("residual"));
    c.block_uniformity = double_from(j.at("block_uniformity"));
    c.perp_norm = double_from(j.at("perp_norm"));
    c.beta0 = double_from(j.at("beta0"));
    c.beta0_exact = double_from(j.at("beta0_exact"));
    c.max_gamma_dev = double_from(j.at("max_gamma_dev"));
    c.r_m_inv = double_from(j.at("r_m_inv"));
    c.generator_pairing = double_from(j.at("generator_pairing"));
    c.mass_rel_defect = double_from(j.at("mass_rel_defect"));
    c.futaki_hat = double_from(j.at("futaki_hat"));
    c.futaki_oracle = double_from(j.at("futaki_oracle"));
    c.futaki_identity_residual = double_from(j.at("futaki_identity_residual"));
    c.sup_f_m = double_from(j.at("sup_f_m"));
    c.sup_remainder = double_from(j.at("sup_remainder"));
    c.polybalanced_sup = double_from(j.at("polybalanced_sup"));
    c.bergman_identity_residual = double_from(j.at("bergman_identity_residual"));
    c.hamiltonian_dev = double_from(j.at("hamiltonian_dev"));
    c.balanced_c_dev = double_from(j.at("balanced_c_dev"));
    c.plain_const_dev = double_from(j.at("plain_const_dev"));
    c.degenerate = j.at("degenerate").get<bool>();
    c.log_scales = j.at("log_scales").get<std::vector<double>>();
    c.beta = j.at("beta").get<std::vector<double>>();
    c.gamma = j.at("gamma").get<std::vector<double>>();
    return true;
}

CellScalars compute_cell(const ExperimentConfig& cfg, const ToricPolarization& pol, int m) {
    auto basis = std::make_shared<const SectionBasis>(enumerate_basis(pol, m));
    auto dec = std::make_shared<const CharacterDecomposition>(
        decompose_by_characters(basis, cfg.subtorus));
    TorusSubspace sub = TorusSubspace::build(dec);
    const int n = pol.dimension();

    CellScalars cell;
    cell.m = m;
    cell.sections = dec->section_count();
    cell.blocks = dec->block_count();
    cell.beta0_exact =
        pow_int(static_cast<double>(m), n) * to_double(pol.degree()) / static_cast<double>(cell.sections);
    cell.generator_pairing = std::nan("");
    cell.futaki_hat = cell.futaki_oracle = cell.futaki_identity_residual = std::nan("");
    cell.hamiltonian_dev = cell.balanced_c_dev = std::nan("");

    if (cfg.subtorus.rank() >= 1) {
        std::vector<double> col(dec->block_count());
        for (int k = 0; k < dec->block_count(); ++k)
            col[k] = static_cast<double>(dec->character(k)[0]);
        WeightVector g = center(dec, col);
        cell.generator_pairing = pairing_m(g, g);
    }

    BalanceResult result = solve(MetricState::ones(dec), sub, cfg.solver, cfg.quadrature, 1);
    cell.converged = result.converged;
    cell.diverged = result.diverged;
    cell.iterations = result.iterations;
    cell.residual = result.residual;
    cell.block_uniformity = result.block_uniformity;
    cell.perp_norm = result.perp_norm;
    cell.log_scales = result.state.log_scales();
    cell.beta = result.beta;
    cell.gamma = result.gamma;
    cell.beta0 = result.beta0;
    cell.mass_rel_defect = result.gram.rel_mass_defect;
    if (!cell.converged) return cell;

    for (double g : result.gamma)
        cell.max_gamma_dev = std::max(cell.max_gamma_dev, std::fabs(g - 1.0));
    cell.degenerate = cell.max_gamma_dev <= kDegenerateGammaDev;
    cell.r_m_inv =
        std::sqrt(std::max(0.0, pairing_m(result.beta_centered, result.beta_centered)));

    auto box = truncation_box(result.state, cfg.quadrature.truncation_threshold);
    auto points = sample_points(box, cfg.samples.count, cfg.samples.seed + static_cast<uint64_t>(m));

    cell.polybalanced_sup = polybalanced_identity_check(result, points);

    BergmanExpansion be = bergman_expansion(result, points);
    cell.sup_f_m = be.sup_f_m;
    cell.sup_remainder = be.sup_remainder;
    cell.bergman_identity_residual = be.identity_residual;

    {
        BlockWeights weights = BlockWeights::from_beta(*dec, result.beta);
        PointSample sample =
            bergman_pointwise(result.state, weights, points, result.gram.diagonal);
        const double n_prime = to_double(dec->basis().n_prime);
        for (double v : sample.plain)
            cell.plain_const_dev = std::max(cell.plain_const_dev, std::fabs(v - n_prime));
    }

    if (cfg.subtorus.rank() >= 1 && !cell.degenerate) {
        FutakiLink link = futaki_link(result, sub, pol);
        cell.futaki_hat = link.f_hat;
        cell.futaki_oracle = link.oracle;
        cell.futaki_identity_residual = link.identity_residual;
    }

    if (cfg.subtorus.rank() >= 1) {
        // Hamiltonian two-route comparison on a fixed grid.
        std::vector<double> col(dec->block_count());
        for (int k = 0; k < dec->block_count(); ++k)
            col[k] = static_cast<double>(dec->character(k)[0]);
        WeightVector lambda = center(dec, col);
        double mean = 0;
        for (int k = 0; k < dec->block_count(); ++k)
            mean += dec->multiplicity(k) * col[k];
        mean /= static_cast<double>(dec->section_count());
        std::vector<double> v_eff(n);
        for (int c = 0; c < n; ++c) v_eff[c] = static_cast<double>(cfg.subtorus.generators[0][c]);

        std::vector<std::vector<double>> grid;
        const int per_axis = 20;
        std::vector<int> idx(n, 0);
        while (true) {
            std::vector<double> x(n);
            for (int a = 0; a < n; ++a)
                x[a] = -3.0 + 6.0 * (idx[a] + 0.5) / per_axis;
            grid.push_back(std::move(x));
            int a = n - 1;
            while (a >= 0) {
                if (++idx[a] < per_axis) break;
                idx[a] = 0;
                --a;
            }
            if (a < 0) break;
        }
        auto f = hamiltonian(result, lambda, grid);
        auto oracle = moment_map_oracle(result.state, v_eff, -mean, grid);
        cell.hamiltonian_dev = 0;
        for (size_t i = 0; i < grid.size(); ++i)
            cell.hamiltonian_dev = std::max(cell.hamiltonian_dev, std::fabs(f[i] - oracle[i]));
    }

    if (n == 1 && cfg.subtorus.rank() == 0) {
        // Deviation of c^2 from the binomial profile, modulo the overall gauge.
        std::vector<double> log_binom(cell.sections);
        for (int j = 0; j < cell.sections; ++j) {
            const long long p = dec->point_of_flat(j)[0];
            double lb = 0;
            for (long long i = 0; i < p; ++i)
                lb += std::log(static_cast<double>(m - i)) - std::log(static_cast<double>(i + 1));
            log_binom[j] = lb;
        }
        std::vector<double> r(cell.sections);
        double mean = 0;
        for (int j = 0; j < cell.sections; ++j) {
            r[j] = 2.0 * cell.log_scales[j] - log_binom[j];
            mean += r[j];
        }
        mean /= static_cast<double>(cell.sections);
        cell.balanced_c_dev = 0;
        for (int j = 0; j < cell.sections; ++j)
            cell.balanced_c_dev =
                std::max(cell.balanced_c_dev, std::fabs(std::expm1(r[j] - mean)));
    }

    return cell;
}

void write_csv(const std::string& path, const std::vector<CellScalars>& cells) {
    std::ofstream out(path, std::ios::binary);
    out << "m,N_m,nu_m,beta0,max_gamma_dev,r_m_inv,pairing_m,futaki_hat,futaki_oracle,"
           "sup_f_m,sup_R_m,converged\n";
    for (const auto& c : cells) {
        out << c.m << ',' << c.sections << ',' << c.blocks << ',' << format_double(c.beta0)
            << ',' << format_double(c.max_gamma_dev) << ',' << format_double(c.r_m_inv) << ','
            << format_double(c.generator_pairing) << ',' << format_double(c.futaki_hat) << ','
            << format_double(c.futaki_oracle) << ',' << format_double(c.sup_f_m) << ','
            << format_double(c.sup_remainder) << ',' << (c.converged ? 1 : 0) << '\n';
    }
}

json fit_to_json(const SlopeFit& fit) {
    json j;
    j["slope"] = json_double(fit.slope);
    j["intercept"] = json_double(fit.intercept);
    j["residual"] = json_double(fit.residual);
    j["points"] = fit.points;
    j["degenerate"] = fit.degenerate;
    j["note"] = fit.note;
    return j;
}

struct SweepAnalysis {
    SlopeFit weight_fit;
    SlopeFit rm_fit;
    SlopeFit bergman_fit;
    SlopeFit futaki_fit;
    bool any_usable = false;
};

SweepAnalysis analyze(const std::vector<CellScalars>& cells) {
    std::vector<SweepRecord> records;
    for (const auto& c : cells) records.push_back(c.record());

    SweepAnalysis a;
    a.weight_fit = weight_decay(records);
    a.rm_fit = r_m_scaling(records);

    std::vector<double> ms, rem, gap;
    for (const auto& c : cells) {
        if (!c.converged || c.degenerate) continue;
        a.any_usable = true;
        ms.push_back(c.m);
        rem.push_back(std::max(c.sup_remainder, 1e-300));
        if (!std::isnan(c.futaki_hat))
            gap.push_back(std::max(std::fabs(c.futaki_hat - c.futaki_oracle), 1e-15));
    }
    if (ms.size() >= 3) {
        std::vector<double> mb = ms, qb = rem;
        keep_tail(mb, qb);
        a.bergman_fit = fit_log_slope(mb, qb);
        if (gap.size() == ms.size()) {
            std::vector<double> mf = ms, qf = gap;
            keep_tail(mf, qf);
            a.futaki_fit = fit_log_slope(mf, qf);
        } else {
            a.futaki_fit.degenerate = true;
            a.futaki_fit.note = "missing futaki values";
        }
    } else {
        a.bergman_fit.degenerate = a.futaki_fit.degenerate = true;
        a.bergman_fit.note = a.futaki_fit.note = "fewer than 3 usable points";
    }
    return a;
}

CriterionOutcome evaluate_check(const std::string& name, const ExperimentConfig& cfg,
                                const ToricPolarization& pol,
                                const std::vector<CellScalars>& cells, const SweepAnalysis& a) {
    auto pass = [&](const std::string& d) { return CriterionOutcome{name, "pass", d}; };
    auto fail = [&](const std::string& d) { return CriterionOutcome{name, "fail", d}; };
    auto skip = [&](const std::string& d) { return CriterionOutcome{name, "skip", d}; };
    const int n = pol.dimension();

    auto fit_gate = [&](const SlopeFit& fit, CriterionOutcome* out) {
        if (fit.degenerate) {
            *out = skip(fit.note.empty() ? "degenerate branch" : fit.note);
            return false;
        }
        if (fit.residual >= 0.5) {
            *out = skip("inconclusive fit (log residual " + format_short(fit.residual) + ")");
            return false;
        }
        return true;
    };

    if (name == "mass_beta0") {
        const double nfact = factorial(n);
        for (const auto& c : cells) {
            if (!c.converged) continue;
            if (c.mass_rel_defect > cfg.quadrature.target_rel_error)
                return fail("m=" + std::to_string(c.m) + ": mass defect " +
                            format_short(c.mass_rel_defect));
            const double dev = std::fabs(c.beta0 - c.beta0_exact) / c.beta0_exact;
            if (dev > 10 * cfg.quadrature.target_rel_error)
                return fail("m=" + std::to_string(c.m) + ": beta0 deviates from m^n deg/N by " +
                            format_short(dev));
            if (c.m >= 4 && std::fabs(c.beta0 - nfact) > 3.0 * nfact * n / c.m)
                return fail("m=" + std::to_string(c.m) + ": beta0 " + format_short(c.beta0) +
                            " misses n! bound");
        }
        return pass("mass and beta0 identities hold on all converged cells");
    }
    if (name == "balanced_oracle") {
        for (const auto& c : cells) {
            if (!c.converged) return fail("m=" + std::to_string(c.m) + " did not converge");
            if (std::isnan(c.balanced_c_dev))
                return fail("not a segment/trivial-torus instance");
            if (c.balanced_c_dev > 1e-6)
                return fail("m=" + std::to_string(c.m) + ": c^2 deviates from binomial by " +
                            format_short(c.balanced_c_dev));
            if (c.max_gamma_dev > 1e-12)
                return fail("m=" + std::to_string(c.m) + ": gamma != 1");
            if (c.plain_const_dev > 1e-6)
                return fail("m=" + std::to_string(c.m) + ": Bergman sum deviates from N' by " +
                            format_short(c.plain_const_dev));
        }
        return pass("binomial fixed point, unit weights and constant Bergman sum verified");
    }
    if (name == "polybalanced_identities") {
        for (const auto& c : cells) {
            if (!c.converged) return fail("m=" + std::to_string(c.m) + " did not converge");
            if (c.block_uniformity > 1e-6)
                return fail("m=" + std::to_string(c.m) + ": block uniformity " +
                            format_short(c.block_uniformity));
            if (c.perp_norm > 1e-6)
                return fail("m=" + std::to_string(c.m) + ": perp component " +
                            format_short(c.perp_norm));
            if (c.polybalanced_sup > 1e-5)
                return fail("m=" + std::to_string(c.m) + ": weighted Bergman sum deviates by " +
                            format_short(c.polybalanced_sup));
        }
        return pass("block uniformity, torus membership and constancy hold");
    }
    if (name == "weight_decay") {
        CriterionOutcome out{name, "", ""};
        if (!fit_gate(a.weight_fit, &out)) return out;
        if (a.weight_fit.slope >= -1.4 && a.weight_fit.slope <= -0.6)
            return pass("slope " + format_short(a.weight_fit.slope) + " within [-1.4, -0.6]");
        return fail("slope " + format_short(a.weight_fit.slope) + " outside [-1.4, -0.6]");
    }
    if (name == "r_m_scaling") {
        CriterionOutcome out{name, "", ""};
        if (!fit_gate(a.rm_fit, &out)) return out;
        if (a.rm_fit.slope <= -1.6)
            return pass("slope " + format_short(a.rm_fit.slope) + " <= -1.6");
        return fail("slope " + format_short(a.rm_fit.slope) + " > -1.6");
    }
    if (name == "corollary_b") {
        double worst = 0;
        for (const auto& g : cfg.subtorus.generators) {
            std::vector<double> v(g.begin(), g.end());
            worst = std::max(worst, std::fabs(toric_futaki_oracle(pol, v)));
        }
        if (worst > 1e-8)
            return skip("futaki character does not vanish on the torus (oracle " +
                        format_short(worst) + ")");
        CriterionOutcome out{name, "", ""};
        if (!fit_gate(a.weight_fit, &out)) return out;
        if (!fit_gate(a.rm_fit, &out)) return out;
        if (a.weight_fit.slope > -1.6)
            return fail("weight slope " + format_short(a.weight_fit.slope) + " > -1.6");
        if (a.rm_fit.slope > -2.5)
            return fail("r_m slope " + format_short(a.rm_fit.slope) + " > -2.5");
        return pass("weight slope " + format_short(a.weight_fit.slope) + ", r_m slope " +
                    format_short(a.rm_fit.slope));
    }
    if (name == "bergman_expansion") {
        for (const auto& c : cells)
            if (c.converged && c.bergman_identity_residual > 1e-8)
                return fail("m=" + std::to_string(c.m) + ": two-route identity residual " +
                            format_short(c.bergman_identity_residual));
        CriterionOutcome out{name, "", ""};
        if (!fit_gate(a.bergman_fit, &out)) return out;
        const double limit = n - 2 + 0.4;
        if (a.bergman_fit.slope > limit)
            return fail("remainder slope " + format_short(a.bergman_fit.slope) + " > " +
                        format_short(limit));
        std::vector<double> sups;
        for (const auto& c : cells)
            if (c.converged && !c.degenerate) sups.push_back(c.sup_f_m);
        const double med = median(sups);
        double worst = 0;
        for (double s : sups) worst = std::max(worst, s);
        if (med > 0 && worst >= 2.0 * med)
            return fail("sup f_m spread " + format_short(worst / med) + " >= 2");
        return pass("remainder slope " + format_short(a.bergman_fit.slope) + ", f_m spread " +
                    format_short(med > 0 ? worst / med : 1.0));
    }
    if (name == "futaki_link") {
        bool all_degenerate = true;
        for (const auto& c : cells)
            if (c.converged && !c.degenerate) all_degenerate = false;
        if (all_degenerate) {
            double worst = 0;
            for (const auto& g : cfg.subtorus.generators) {
                std::vector<double> v(g.begin(), g.end());
                worst = std::max(worst, std::fabs(toric_futaki_oracle(pol, v)));
            }
            if (worst > 1e-8)
                return fail("degenerate sweep but oracle " + format_short(worst) + " != 0");
            for (const auto& c : cells)
                if (c.converged && c.max_gamma_dev > 1e-8)
                    return fail("m=" + std::to_string(c.m) + ": centered beta not ~0");
            return pass("degenerate branch consistent: oracle 0 and centered beta ~0");
        }
        for (const auto& c : cells)
            if (c.converged && !c.degenerate && c.futaki_identity_residual > 1e-10)
                return fail("m=" + std::to_string(c.m) + ": bookkeeping identity residual " +
                            format_short(c.futaki_identity_residual));
        CriterionOutcome out{name, "", ""};
        if (!fit_gate(a.futaki_fit, &out)) return out;
        if (a.futaki_fit.slope <= -0.6)
            return pass("gap slope " + format_short(a.futaki_fit.slope) + " <= -0.6");
        return fail("gap slope " + format_short(a.futaki_fit.slope) + " > -0.6");
    }
    if (name == "hamiltonian") {
        if (cfg.subtorus.rank() == 0) return skip("no torus direction");
        for (const auto& c : cells) {
            if (!c.converged) continue;
            if (std::isnan(c.hamiltonian_dev) || c.hamiltonian_dev > 1e-6)
                return fail("m=" + std::to_string(c.m) + ": section/moment-map gap " +
                            format_short(c.hamiltonian_dev));
        }
        return pass("section formula matches the moment-map contraction");
    }
    return fail("unknown check");
}

}  // namespace

bool RunManifest::all_passed() const {
    for (const auto& c : criteria)
        if (c.status == "fail") return false;
    return true;
}

RunManifest run_experiment(const ExperimentConfig& config, const RunOptions& options) {
    const std::string out_dir = options.out_dir.empty() ? ("out_" + config.name) : options.out_dir;
    fs::create_directories(out_dir);
    ToricPolarization pol = config.polytope();
    config.subtorus.validate(pol.dimension());

    const size_t ncells = config.m_list.size();
    std::vector<CellScalars> cells(ncells);
    std::vector<double> wall_ms(ncells, 0.0);
    std::vector<std::string> cell_files(ncells);
    std::vector<std::exception_ptr> errors(ncells);

    std::atomic<size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= ncells) break;
            const int m = config.m_list[i];
            const std::string path =
                (fs::path(out_dir) / (config.name + "_m" + std::to_string(m) + ".json")).string();
            cell_files[i] = path;
            try {
                const auto t0 = std::chrono::steady_clock::now();
                bool reused = false;
                if (options.resume && fs::exists(path)) {
                    std::ifstream in(path);
                    json j = json::parse(in, nullptr, false);
                    if (!j.is_discarded() && cell_from_json(j, config.hash, cells[i]))
                        reused = true;
                }
                if (!reused) {
                    cells[i] = compute_cell(config, pol, m);
                    std::ofstream out(path, std::ios::binary);
                    out << cell_to_json(cells[i], config.hash).dump(2) << '\n';
                }
                const auto t1 = std::chrono::steady_clock::now();
                wall_ms[i] = std::chrono::duration<double, std::milli>(t1 - t0).count();
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };

    const int nworkers = std::max(1, std::min<int>(options.workers, static_cast<int>(ncells)));
    if (nworkers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < nworkers; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    RunManifest manifest;
    manifest.config_name = config.name;
    manifest.config_hash = config.hash;
    manifest.tool_version = kToolVersion;
    manifest.cells = cells;
    manifest.cell_files = cell_files;
    manifest.wall_ms = wall_ms;

    manifest.csv_path = (fs::path(out_dir) / (config.name + "_sweep.csv")).string();
    write_csv(manifest.csv_path, cells);

    SweepAnalysis analysis = analyze(cells);

    manifest.criteria.push_back([&] {
        for (const auto& c : cells) {
            if (c.diverged)
                return CriterionOutcome{"converged", "fail",
                                        "m=" + std::to_string(c.m) +
                                            " diverged (destabilizing direction found)"};
            if (!c.converged)
                return CriterionOutcome{"converged", "fail",
                                        "m=" + std::to_string(c.m) + " residual " +
                                            format_short(c.residual)};
        }
        return CriterionOutcome{"converged", "pass", "all cells converged"};
    }());
    for (const auto& name : config.checks)
        manifest.criteria.push_back(evaluate_check(name, config, pol, cells, analysis));

    json summary;
    summary["config_name"] = config.name;
    summary["config_hash"] = format_hash(config.hash);
    summary["fits"]["weight_decay"] = fit_to_json(analysis.weight_fit);
    summary["fits"]["r_m_scaling"] = fit_to_json(analysis.rm_fit);
    summary["fits"]["bergman_remainder"] = fit_to_json(analysis.bergman_fit);
    summary["fits"]["futaki_gap"] = fit_to_json(analysis.futaki_fit);
    json jc = json::array();
    for (const auto& c : manifest.criteria)
        jc.push_back({{"name", c.name}, {"status", c.status}, {"detail", c.detail}});
    summary["criteria"] = jc;
    manifest.summary_path = (fs::path(out_dir) / (config.name + "_summary.json")).string();
    {
        std::ofstream out(manifest.summary_path, std::ios::binary);
        out << summary.dump(2) << '\n';
    }

    json jm;
    jm["config_name"] = manifest.config_name;
    jm["config_hash"] = format_hash(manifest.config_hash);
    jm["tool_version"] = manifest.tool_version;
    json jcells = json::array();
    for (size_t i = 0; i < ncells; ++i)
        jcells.push_back({{"m", config.m_list[i]},
                          {"result_file", cell_files[i]},
                          {"wall_ms", wall_ms[i]}});
    jm["cells"] = jcells;
    jm["csv"] = manifest.csv_path;
    jm["summary"] = manifest.summary_path;
    jm["criteria"] = jc;
    manifest.manifest_path = (fs::path(out_dir) / (config.name + "_manifest.json")).string();
    {
        std::ofstream out(manifest.manifest_path, std::ios::binary);
        out << jm.dump(2) << '\n';
    }
    return manifest;
}

RunManifest RunManifest::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("manifest: cannot read '" + path + "'");
    json j = json::parse(in);
    RunManifest m;
    m.manifest_path = path;
    m.config_name = j.at("config_name").get<std::string>();
    m.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
    m.tool_version = j.at("tool_version").get<std::string>();
    for (const auto& c : j.at("cells")) {
        m.cell_files.push_back(c.at("result_file").get<std::string>());
        m.wall_ms.push_back(c.at("wall_ms").get<double>());
    }
    m.csv_path = j.at("csv").get<std::string>();
    m.summary_path = j.at("summary").get<std::string>();
    for (const auto& c : j.at("criteria"))
        m.criteria.push_back({c.at("name").get<std::string>(), c.at("status").get<std::string>(),
                              c.at("detail").get<std::string>()});
    for (const auto& f : m.cell_files) {
        std::ifstream cin(f);
        if (!cin) continue;
        json cj = json::parse(cin, nullptr, false);
        if (cj.is_discarded()) continue;
        CellScalars cs;
        if (cell_from_json(cj, m.config_hash, cs)) m.cells.push_back(cs);
    }
    return m;
}

int write_report(const std::string& manifest_path, std::ostream& out) {
    if (!fs::exists(manifest_path)) {
        out << "report: manifest not found: " << manifest_path << "\n";
        return 4;
    }
    RunManifest manifest;
    try {
        manifest = RunManifest::load(manifest_path);
    } catch (const std::exception& e) {
        out << "report: " << e.what() << "\n";
        return 4;
    }
    if (!fs::exists(manifest.csv_path) || !fs::exists(manifest.summary_path)) {
        out << "report: missing result files for manifest " << manifest_path << "\n";
        return 4;
    }

    out << "# polybal report: " << manifest.config_name << "\n";
    out << "config_hash: " << format_hash(manifest.config_hash) << "\n";
    out << "tool_version: " << manifest.tool_version << "\n\n";

    {
        std::ifstream csv(manifest.csv_path, std::ios::binary);
        out << csv.rdbuf();
    }

    std::ifstream sin(manifest.summary_path);
    json summary = json::parse(sin);
    out << "\nfits:\n";
    for (const auto& [key, fit] : summary.at("fits").items()) {
        out << "  " << key << ": ";
        if (fit.at("degenerate").get<bool>()) {
            out << "degenerate (" << fit.at("note").get<std::string>() << ")\n";
        } else {
            out << "slope=" << format_double(double_from(fit.at("slope")))
                << " intercept=" << format_double(double_from(fit.at("intercept")))
                << " residual=" << format_double(double_from(fit.at("residual")))
                << " points=" << fit.at("points").get<int>() << "\n";
        }
    }

    if (!manifest.criteria.empty()) {
        out << "\ncriteria:\n";
        for (const auto& c : manifest.criteria) {
            std::string tag = c.status == "pass" ? "PASS" : (c.status == "fail" ? "FAIL" : "SKIP");
            out << "  " << tag << ": " << c.name << " -- " << c.detail << "\n";
        }
    }
    return 0;
}

}  // namespace polybal
