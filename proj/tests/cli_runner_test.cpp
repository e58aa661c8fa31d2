#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "polybal/cli_runner.hpp"

using namespace polybal;
namespace fs = std::filesystem;

namespace {

std::string config_dir() {
    if (const char* env = std::getenv("POLYBAL_CONFIG_DIR")) return env;
    return "configs";
}

std::string scratch_dir(const std::string& tag) {
    auto d = fs::temp_directory_path() / ("polybal_test_" + tag);
    fs::remove_all(d);
    fs::create_directories(d);
    return d.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const char* kMiniConfig = R"({
  "name": "mini_segment",
  "polytope": { "vertices": [[0], [1]] },
  "subtorus": [],
  "m_list": [1, 2, 3],
  "solver": { "tolerance": 1e-10 },
  "samples": { "seed": 11, "count": 20 },
  "checks": ["balanced_oracle", "mass_beta0", "polybalanced_identities"]
})";

}  // namespace

TEST_CASE("config parsing reports the offending field") {
    auto expect_field = [](const std::string& text, const std::string& field) {
        try {
            ExperimentConfig::from_json_text(text);
            FAIL_CHECK("expected a config error for field " << field);
        } catch (const ConfigError& e) {
            CHECK(e.field == field);
            CHECK(std::string(e.what()).find(field) != std::string::npos);
        }
    };
    expect_field(R"({"polytope":{"vertices":[[0],[1]]},"subtorus":[],"m_list":[1],"samples":{"seed":1,"count":1}})",
                 "name");
    expect_field(R"({"name":"x","polytope":{"vertices":[[0],[1]]},"subtorus":[],"samples":{"seed":1,"count":1}})",
                 "m_list");
    expect_field(R"({"name":"x","polytope":{"vertices":[[0],[1]]},"subtorus":[],"m_list":[2,2],"samples":{"seed":1,"count":1}})",
                 "m_list");
    expect_field(R"({"name":"x","polytope":{"vertices":[[0],[1]]},"subtorus":[],"m_list":[1],"samples":{"count":1}})",
                 "seed");
    expect_field(R"({"name":"x","polytope":{"vertices":[[0],[1]]},"subtorus":[],"m_list":[1],"samples":{"seed":1,"count":1},"checks":["bogus"]})",
                 "checks");
    expect_field("{not json", "config");
}

TEST_CASE("config hash is stable under key reordering") {
    const char* a = R"({"name":"x","polytope":{"vertices":[[0],[1]]},"subtorus":[],"m_list":[1,2],"samples":{"seed":3,"count":5}})";
    const char* b = R"({"samples":{"count":5,"seed":3},"m_list":[1,2],"subtorus":[],"polytope":{"vertices":[[0],[1]]},"name":"x"})";
    CHECK(ExperimentConfig::from_json_text(a).hash == ExperimentConfig::from_json_text(b).hash);
    // different content, different hash
    const char* c = R"({"name":"x","polytope":{"vertices":[[0],[1]]},"subtorus":[],"m_list":[1,3],"samples":{"seed":3,"count":5}})";
    CHECK(ExperimentConfig::from_json_text(a).hash != ExperimentConfig::from_json_text(c).hash);
}

TEST_CASE("mini experiment run, determinism, and resume") {
    auto cfg = ExperimentConfig::from_json_text(kMiniConfig);
    const auto out1 = scratch_dir("run1");
    const auto out2 = scratch_dir("run2");

    auto manifest1 = run_experiment(cfg, {out1, 1, false});
    CHECK(manifest1.all_passed());
    REQUIRE(manifest1.cells.size() == 3);
    for (const auto& c : manifest1.cells) {
        CHECK(c.converged);
        CHECK(c.balanced_c_dev <= 1e-6);
        CHECK(c.max_gamma_dev <= 1e-12);
    }
    for (const auto& f : manifest1.cell_files) CHECK(fs::exists(f));
    CHECK(fs::exists(manifest1.csv_path));
    CHECK(fs::exists(manifest1.summary_path));
    CHECK(fs::exists(manifest1.manifest_path));

    auto manifest2 = run_experiment(cfg, {out2, 1, false});
    CHECK(slurp(manifest1.csv_path) == slurp(manifest2.csv_path));
    CHECK(slurp(manifest1.summary_path) == slurp(manifest2.summary_path));

    // resume keeps the outputs bit-identical without re-solving
    const std::string csv_before = slurp(manifest1.csv_path);
    auto resumed = run_experiment(cfg, {out1, 1, true});
    CHECK(slurp(manifest1.csv_path) == csv_before);
    CHECK(resumed.all_passed());

    // a stale cell file from another config hash is recomputed, not reused
    auto other = ExperimentConfig::from_json_text(kMiniConfig);
    other.hash ^= 0x1234;
    CHECK_NOTHROW(run_experiment(other, {out1, 1, true}));
}

TEST_CASE("manifest reload round-trips the cells") {
    auto cfg = ExperimentConfig::from_json_text(kMiniConfig);
    const auto out = scratch_dir("reload");
    auto manifest = run_experiment(cfg, {out, 1, false});
    auto loaded = RunManifest::load(manifest.manifest_path);
    CHECK(loaded.config_name == manifest.config_name);
    CHECK(loaded.config_hash == manifest.config_hash);
    REQUIRE(loaded.cells.size() == manifest.cells.size());
    for (size_t i = 0; i < loaded.cells.size(); ++i) {
        CHECK(loaded.cells[i].m == manifest.cells[i].m);
        CHECK(loaded.cells[i].beta0 == manifest.cells[i].beta0);
    }
    CHECK(loaded.criteria.size() == manifest.criteria.size());
}

TEST_CASE("report output is deterministic and flags failures") {
    auto cfg = ExperimentConfig::from_json_text(kMiniConfig);
    const auto out = scratch_dir("report");
    auto manifest = run_experiment(cfg, {out, 1, false});

    std::ostringstream a, b;
    CHECK(write_report(manifest.manifest_path, a) == 0);
    CHECK(write_report(manifest.manifest_path, b) == 0);
    CHECK(a.str() == b.str());
    CHECK(a.str().find("# polybal report: mini_segment") != std::string::npos);
    CHECK(a.str().find("PASS: balanced_oracle") != std::string::npos);

    // missing manifest -> exit code 4
    std::ostringstream c;
    CHECK(write_report((fs::path(out) / "nope.json").string(), c) == 4);

    // craft a manifest with one failed criterion and an empty table
    nlohmann::json jm;
    jm["config_name"] = "crafted";
    jm["config_hash"] = "0x0000000000000001";
    jm["tool_version"] = kToolVersion;
    jm["cells"] = nlohmann::json::array();
    const std::string csv = (fs::path(out) / "crafted.csv").string();
    {
        std::ofstream f(csv, std::ios::binary);
        f << "m,N_m,nu_m,beta0,max_gamma_dev,r_m_inv,pairing_m,futaki_hat,futaki_oracle,"
             "sup_f_m,sup_R_m,converged\n";
    }
    const std::string summary = (fs::path(out) / "crafted_summary.json").string();
    {
        nlohmann::json js;
        js["fits"] = nlohmann::json::object();
        std::ofstream f(summary, std::ios::binary);
        f << js.dump(2) << "\n";
    }
    jm["csv"] = csv;
    jm["summary"] = summary;
    jm["criteria"] = nlohmann::json::array(
        {{{"name", "weight_decay"}, {"status", "fail"}, {"detail", "slope out of range"}}});
    const std::string path = (fs::path(out) / "crafted_manifest.json").string();
    {
        std::ofstream f(path, std::ios::binary);
        f << jm.dump(2) << "\n";
    }
    std::ostringstream d;
    CHECK(write_report(path, d) == 0);
    CHECK(d.str().find("FAIL: weight_decay") != std::string::npos);
    // header-only table survives
    CHECK(d.str().find("m,N_m,nu_m") != std::string::npos);
}

TEST_CASE("bundled configs parse") {
    for (const char* name : {"p1_trivial.json", "p1_full_torus.json", "square_sym.json",
                             "hirzebruch_f1.json", "pentagon_futaki_null.json"}) {
        auto path = fs::path(config_dir()) / name;
        REQUIRE_MESSAGE(fs::exists(path), "missing " << path.string());
        CHECK_NOTHROW(ExperimentConfig::load(path.string()));
    }
}
