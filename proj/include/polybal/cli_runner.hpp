#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "polybal/asymptotics.hpp"

namespace polybal {

inline constexpr const char* kToolVersion = "polybal 0.1.0";

// Schema violation; `field` names the offending config entry.
struct ConfigError : std::runtime_error {
    std::string field;
    ConfigError(std::string field_name, const std::string& msg)
        : std::runtime_error(msg), field(std::move(field_name)) {}
};

struct SampleSpec {
    uint64_t seed = 1;
    int count = 100;
};

struct ExperimentConfig {
    std::string name;
    std::vector<LatticePoint> vertices;
    std::vector<Inequality> inequalities;  // optional; required for dimension 3
    SubtorusAction subtorus;
    std::vector<int> m_list;
    SolverSpec solver;
    QuadratureSpec quadrature;
    SampleSpec samples;
    std::vector<std::string> checks;
    uint64_t hash = 0;  // canonical hash, stable under key reordering

    ToricPolarization polytope() const;
    static ExperimentConfig load(const std::string& path);
    static ExperimentConfig from_json_text(const std::string& text);
};

// Everything a criterion needs from one m-cell, flat scalars only so cells
// can be reloaded without re-solving.
struct CellScalars {
    int m = 0;
    long long sections = 0;
    int blocks = 0;
    bool converged = false;
    bool diverged = false;
    int iterations = 0;
    double residual = 0;
    double block_uniformity = 0;
    double perp_norm = 0;
    double beta0 = 0;
    double beta0_exact = 0;  // m^n deg / N_m
    double max_gamma_dev = 0;
    double r_m_inv = 0;
    double generator_pairing = 0;
    double mass_rel_defect = 0;
    double futaki_hat = 0;
    double futaki_oracle = 0;
    double futaki_identity_residual = 0;
    double sup_f_m = 0;
    double sup_remainder = 0;
    double polybalanced_sup = 0;
    double bergman_identity_residual = 0;
    double hamiltonian_dev = 0;
    double balanced_c_dev = 0;    // segment instances only
    double plain_const_dev = 0;   // sup |B - N'_m| over the sample points
    bool degenerate = false;
    std::vector<double> log_scales;
    std::vector<double> beta;
    std::vector<double> gamma;

    SweepRecord record() const;
};

struct CriterionOutcome {
    std::string name;
    std::string status;  // "pass" | "fail" | "skip"
    std::string detail;
};

struct RunManifest {
    std::string config_name;
    uint64_t config_hash = 0;
    std::string tool_version;
    std::vector<std::string> cell_files;
    std::vector<double> wall_ms;
    std::vector<CellScalars> cells;
    std::string csv_path;
    std::string summary_path;
    std::string manifest_path;
    std::vector<CriterionOutcome> criteria;

    bool all_passed() const;
    static RunManifest load(const std::string& path);
};

struct RunOptions {
    std::string out_dir;
    int workers = 1;
    bool resume = false;
};

RunManifest run_experiment(const ExperimentConfig& config, const RunOptions& options);

// Deterministic text report from a saved manifest; returns 0 or 4 when
// referenced files are missing.
int write_report(const std::string& manifest_path, std::ostream& out);

uint64_t fnv1a64(const std::string& text);

}  // namespace polybal
