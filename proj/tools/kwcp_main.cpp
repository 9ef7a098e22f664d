#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "kwcp/commands.hpp"
#include "kwcp/parallel.hpp"

int main(int argc, char** argv)
{
    CLI::App app{"Sparse reduced-rank kernel-weighted regression for spatially misaligned data"};
    app.set_version_flag("--version", kwcp::kVersion);
    app.require_subcommand(1);

    int threads = 0;
    app.add_option("--threads", threads, "Worker threads for independent jobs (default: all cores)")
        ->check(CLI::NonNegativeNumber);

    std::string data, config, out, estimate, truth, batch;

    auto* fit = app.add_subcommand("fit", "Fit the model over the (L, lambda) grid");
    fit->add_option("--data", data, "Dataset directory")->required();
    fit->add_option("--config", config, "key = value config file");
    fit->add_option("--out", out, "Output directory")->required();

    auto* sim = app.add_subcommand("simulate", "Write simulated replicate datasets");
    sim->add_option("--config", config, "key = value config file");
    sim->add_option("--out", out, "Output directory")->required();

    auto* eval = app.add_subcommand("evaluate", "Score an estimate against a simulation truth");
    eval->add_option("--estimate", estimate, "model.json path or 'paired-lasso'");
    eval->add_option("--truth", truth, "truth.json path");
    eval->add_option("--batch", batch, "Simulation grid directory; aggregates every replicate");
    eval->add_option("--config", config, "key = value config file");
    eval->add_option("--out", out, "Output directory")->required();

    auto* scan = app.add_subcommand("bandwidth-scan", "Normalized loss against the neighborhood size L");
    scan->add_option("--data", data, "Dataset directory")->required();
    scan->add_option("--config", config, "key = value config file");
    scan->add_option("--out", out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kwcp::kExitInput;
    }

    kwcp::par::set_threads(threads);

    if (fit->parsed()) return kwcp::cmd_fit(data, config, out, std::cerr);
    if (sim->parsed()) return kwcp::cmd_simulate(config, out, std::cerr);
    if (scan->parsed()) return kwcp::cmd_bandwidth_scan(data, config, out, std::cerr);
    if (!batch.empty()) {
        if (!estimate.empty() || !truth.empty()) {
            std::cerr << "error: --batch excludes --estimate and --truth\n";
            return kwcp::kExitInput;
        }
        return kwcp::cmd_evaluate_batch(batch, config, out, std::cerr);
    }
    if (estimate.empty() || truth.empty()) {
        std::cerr << "error: evaluate needs --estimate and --truth, or --batch\n";
        return kwcp::kExitInput;
    }
    return kwcp::cmd_evaluate(estimate, truth, config, out, std::cerr);
}
