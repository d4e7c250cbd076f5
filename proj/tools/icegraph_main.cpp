#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "icegraph/commands.hpp"
#include "icegraph/errors.hpp"
#include "icegraph/runconfig.hpp"

namespace {

// Collects the config JSON from --config plus flag overrides (flags win).
icegraph::cli::RunConfig resolve_config(const std::string& config_path, bool seed_set,
                                        std::uint64_t seed, const std::string& out_dir,
                                        int threads, const std::string& model,
                                        const std::string& scenario) {
    nlohmann::json j = nlohmann::json::object();
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw icegraph::ValidationError("cannot open config file: " + config_path);
        j = nlohmann::json::parse(in, nullptr, false);
        if (j.is_discarded())
            throw icegraph::ValidationError("config file " + config_path + " is not valid JSON");
    }
    if (!scenario.empty()) j["scenario"] = scenario;
    if (seed_set) j["seed"] = seed;
    if (!out_dir.empty()) j["out_dir"] = out_dir;
    if (threads > 0) j["threads"] = threads;
    if (!model.empty()) j["model"]["kind"] = model;
    return icegraph::cli::RunConfig::from_json(j.dump());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Graph-network emulators for transient ice-flow simulation"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, out_dir, model, scenario;
    std::uint64_t seed = 0;
    int threads = 0;
    app.add_option("--config", config_path, "JSON run configuration file");
    CLI::Option* seed_opt = app.add_option("--seed", seed, "Master seed override");
    app.add_option("--out", out_dir, "Output directory override");
    app.add_option("--threads", threads, "BLAS worker threads (1 = bitwise reproducible)");
    app.add_option("--model", model, "Emulator kind override")
        ->check(CLI::IsMember({"egcn", "gcn", "fcn"}));
    app.add_option("--scenario", scenario, "Scenario preset override")
        ->check(CLI::IsMember({"helheim", "pig"}));

    CLI::App* generate =
        app.add_subcommand("generate", "Run the oracle sweep and build the training dataset");
    CLI::App* train = app.add_subcommand("train", "Train an emulator on a generated dataset");
    CLI::App* evaluate =
        app.add_subcommand("evaluate", "Score a trained emulator on the held-out split");
    CLI::App* benchmark =
        app.add_subcommand("benchmark", "Time the oracle sweep against trained emulators");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e); // prints help, exit 0
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }

    try {
        const icegraph::cli::RunConfig cfg = resolve_config(
            config_path, seed_opt->count() > 0, seed, out_dir, threads, model, scenario);
        if (generate->parsed()) icegraph::cli::cmd_generate(cfg);
        if (train->parsed()) icegraph::cli::cmd_train(cfg);
        if (evaluate->parsed()) icegraph::cli::cmd_evaluate(cfg);
        if (benchmark->parsed()) icegraph::cli::cmd_benchmark(cfg);
        return 0;
    } catch (const icegraph::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const icegraph::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
