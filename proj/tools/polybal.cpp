#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "polybal/cli_runner.hpp"

int main(int argc, char** argv) {
    CLI::App app{"polybal: weighted balanced metrics on toric polarizations"};
    app.require_subcommand(1);

    std::string config_path, out_dir, manifest_path;
    int workers = 1;
    bool resume = false;
    if (const char* env = std::getenv("POLYBAL_WORKERS")) workers = std::max(1, std::atoi(env));

    auto* run = app.add_subcommand("run", "run the experiment described by a config file");
    run->add_option("config", config_path, "experiment config (JSON)")->required();
    run->add_option("--out", out_dir, "output directory (default: out_<name>)");
    run->add_option("--workers", workers, "worker threads for the m-cells");
    run->add_flag("--resume", resume, "reuse cell results whose config hash matches");

    auto* report = app.add_subcommand("report", "print the sweep table and fits for a manifest");
    report->add_option("manifest", manifest_path, "manifest file from a previous run")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            auto config = polybal::ExperimentConfig::load(config_path);
            auto manifest = polybal::run_experiment(config, {out_dir, workers, resume});
            for (const auto& c : manifest.criteria) {
                std::string tag = c.status == "pass" ? "PASS" : (c.status == "fail" ? "FAIL" : "SKIP");
                std::cout << tag << ": " << c.name << " -- " << c.detail << "\n";
            }
            std::cout << "manifest: " << manifest.manifest_path << "\n";
            return manifest.all_passed() ? 0 : 1;
        }
        return polybal::write_report(manifest_path, std::cout);
    } catch (const polybal::ConfigError& e) {
        std::cerr << "config error (" << e.field << "): " << e.what() << "\n";
        return 2;
    } catch (const polybal::QuadratureError& e) {
        std::cerr << "quadrature error: " << e.what()
                  << " (achieved " << e.achieved_rel_error << ")\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
