#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "icegraph/commands.hpp"
#include "icegraph/errors.hpp"
#include "icegraph/pipeline.hpp"
#include "icegraph/runconfig.hpp"

using namespace icegraph;
using namespace icegraph::cli;
namespace fs = std::filesystem;

namespace {

// Three-parameter calving sweep on a small ice tongue; every command
// completes in well under a second.
RunConfig tiny_run_config(const std::string& out_dir) {
    RunConfig cfg = RunConfig::from_json(R"({
      "scenario": "helheim",
      "seed": 3,
      "sim": {
        "domain_x": 10000.0, "domain_y": 5000.0,
        "edge_fine": 1200.0, "edge_coarse": 2000.0,
        "front_x": 8000.0, "n_steps": 20, "save_every": 5
      },
      "params": [700000.0, 800000.0, 900000.0],
      "model": {"kind": "egcn", "width": 8, "n_hidden": 2},
      "train": {"epochs": 25, "lr": 0.005},
      "split": {"test_params": [800000.0], "train_fraction": 0.7}
    })");
    cfg.out_dir = out_dir;
    return cfg;
}

struct OutDirGuard {
    std::string dir;
    explicit OutDirGuard(std::string d) : dir(std::move(d)) { fs::remove_all(dir); }
    ~OutDirGuard() { fs::remove_all(dir); }
};

} // namespace

TEST_CASE("config round-trip: parse(serialize(c)) is identical") {
    for (const std::string kind : {"helheim", "pig"}) {
        const RunConfig a = RunConfig::preset(kind);
        const std::string ja = a.to_json();
        const RunConfig b = RunConfig::from_json(ja);
        CHECK(b.to_json() == ja);
    }

    // A config with overrides everywhere round-trips too.
    const RunConfig c = tiny_run_config("round_trip_out");
    const std::string jc = c.to_json();
    CHECK(RunConfig::from_json(jc).to_json() == jc);
}

TEST_CASE("scenario presets carry the published sweep protocols") {
    const RunConfig hel = RunConfig::preset("helheim");
    REQUIRE(hel.param_grid.size() == 7);
    CHECK(hel.param_grid.front() == 0.70e6);
    CHECK(hel.param_grid.back() == 1.00e6);
    CHECK(hel.split.test_params == std::vector<double>{0.75e6, 0.95e6});
    CHECK(hel.split.val_params.empty()); // fraction mode
    CHECK(hel.split.train_fraction == 0.7);
    CHECK(hel.sim.scenario == "calving");
    CHECK(hel.model.in_features == pipeline::kNumInputs);
    CHECK(hel.model.out_features == pipeline::kNumTargets);

    const RunConfig pig = RunConfig::preset("pig");
    REQUIRE(pig.param_grid.size() == 36);
    CHECK(pig.param_grid.front() == 0.0);
    CHECK(pig.param_grid.back() == 70.0);
    CHECK(pig.split.val_params == std::vector<double>{10.0, 30.0, 50.0, 70.0});
    CHECK(pig.split.test_params == std::vector<double>{0.0, 20.0, 40.0, 60.0});
    CHECK(pig.sim.scenario == "melt");

    CHECK_THROWS_AS(RunConfig::preset("mars"), ValidationError);
}

TEST_CASE("param grids parse from arrays and from/to/step ranges") {
    const RunConfig a =
        RunConfig::from_json(R"({"scenario":"pig","params":{"from":0,"to":70,"step":2}})");
    REQUIRE(a.param_grid.size() == 36);
    for (int k = 0; k < 36; ++k) CHECK(a.param_grid[static_cast<std::size_t>(k)] == 2.0 * k);

    // Fractional steps include the endpoint despite accumulation round-off.
    const RunConfig b = RunConfig::from_json(
        R"({"params":{"from":700000.0,"to":1000000.0,"step":50000.0}})");
    CHECK(b.param_grid.size() == 7);

    const RunConfig c = RunConfig::from_json(R"({"params":[1.0,2.0]})");
    CHECK(c.param_grid == std::vector<double>{1.0, 2.0});

    CHECK_THROWS_AS(RunConfig::from_json(R"({"params":{"from":1,"to":0,"step":1}})"),
                    ValidationError);
    CHECK_THROWS_AS(RunConfig::from_json(R"({"params":{"from":0,"to":1,"step":0}})"),
                    ValidationError);
    CHECK_THROWS_AS(RunConfig::from_json(R"({"params":[]})"), ValidationError);
}

TEST_CASE("unknown config keys are rejected at every level") {
    CHECK_THROWS_AS(RunConfig::from_json(R"({"epochs": 5})"), ValidationError);
    CHECK_THROWS_AS(RunConfig::from_json(R"({"sim": {"dx": 1.0}})"), ValidationError);
    CHECK_THROWS_AS(RunConfig::from_json(R"({"model": {"layers": 3}})"), ValidationError);
    CHECK_THROWS_AS(RunConfig::from_json(R"({"train": {"learning_rate": 0.1}})"),
                    ValidationError);
    CHECK_THROWS_AS(RunConfig::from_json(R"({"split": {"test": [1.0]}})"), ValidationError);
    CHECK_THROWS_AS(RunConfig::from_json("not json at all"), ValidationError);
    CHECK_THROWS_AS(RunConfig::from_json("[1,2,3]"), ValidationError);
}

TEST_CASE("config validation catches out-of-range fields") {
    CHECK_THROWS_AS(RunConfig::from_json(R"({"scenario":"alps"})"), ValidationError);
    CHECK_THROWS_AS(RunConfig::from_json(R"({"threads": 0})"), ValidationError);
    CHECK_THROWS_AS(RunConfig::from_json(R"({"out_dir": ""})"), ValidationError);
    CHECK_THROWS_AS(RunConfig::from_json(R"({"model": {"kind": "mlp"}})"), ValidationError);
    CHECK_THROWS_AS(RunConfig::from_json(R"({"train": {"epochs": 0}})"), ValidationError);
    CHECK_THROWS_AS(RunConfig::from_json(R"({"train": {"lr": 0.0}})"), ValidationError);
    CHECK_THROWS_AS(RunConfig::from_json(R"({"split": {"train_fraction": 1.5}})"),
                    ValidationError);
    CHECK_THROWS_AS(RunConfig::from_json(R"({"fcn_grid_spacing": 0.0})"), ValidationError);
    CHECK_THROWS_AS(RunConfig::from_json(R"({"benchmark_repetitions": 0})"), ValidationError);
}

TEST_CASE("model width override carries companion widths unless explicit") {
    const RunConfig a = RunConfig::from_json(R"({"model": {"width": 24}})");
    CHECK(a.model.width == 24);
    CHECK(a.model.msg_width == 24);
    CHECK(a.model.mlp_hidden == 24);

    const RunConfig b = RunConfig::from_json(R"({"model": {"width": 24, "msg_width": 16}})");
    CHECK(b.model.width == 24);
    CHECK(b.model.msg_width == 16);
    CHECK(b.model.mlp_hidden == 24);

    // Kind-only override keeps the preset architecture.
    const RunConfig c = RunConfig::from_json(R"({"model": {"kind": "gcn"}})");
    CHECK(c.model.kind == "gcn");
    CHECK(c.model.width == 128);
}

TEST_CASE("seeds cascade from the master seed unless overridden") {
    const RunConfig a = RunConfig::from_json(R"({"seed": 99})");
    CHECK(a.seed == 99);
    CHECK(a.train.seed == 99);
    CHECK(a.split.seed == 99);

    const RunConfig b =
        RunConfig::from_json(R"({"seed": 99, "train": {"seed": 7}, "split": {"seed": 8}})");
    CHECK(b.train.seed == 7);
    CHECK(b.split.seed == 8);
}

TEST_CASE("config files load and save") {
    const RunConfig a = tiny_run_config("cfg_file_out");
    const std::string path = "tcli_config.json";
    a.save(path);
    const RunConfig b = RunConfig::load(path);
    CHECK(b.to_json() == a.to_json());
    std::remove(path.c_str());
    CHECK_THROWS_AS(RunConfig::load("no_such_config.json"), ValidationError);
}

TEST_CASE("generate/train/evaluate/benchmark write their artifacts") {
    const OutDirGuard guard("tcli_out");
    const RunConfig cfg = tiny_run_config(guard.dir);

    cmd_generate(cfg);
    CHECK(fs::exists(mesh_path(cfg)));
    CHECK(fs::exists(dataset_path(cfg)));
    CHECK(fs::exists(cfg.out_dir + "/config.json"));
    for (int k = 0; k < 3; ++k) CHECK(fs::exists(trajectory_path(cfg, k)));

    const pipeline::Dataset ds = pipeline::load_dataset(dataset_path(cfg));
    CHECK(ds.samples.size() == 15); // 3 trajectories x 5 saved states
    CHECK(ds.scenario_params == cfg.param_grid);

    // The saved config reloads to an identical configuration.
    CHECK(RunConfig::load(cfg.out_dir + "/config.json").to_json() == cfg.to_json());

    cmd_train(cfg);
    CHECK(fs::exists(model_path(cfg, "egcn")));
    std::ifstream hist(history_path(cfg, "egcn"));
    std::string line;
    std::size_t lines = 0;
    while (std::getline(hist, line))
        if (!line.empty()) ++lines;
    CHECK(lines == 26); // header + one row per epoch

    cmd_evaluate(cfg);
    std::ifstream metrics(metrics_path(cfg, "egcn"));
    REQUIRE(metrics.good());
    std::getline(metrics, line);
    CHECK(line == "model,scenario_param,variable,rmse,r,n");
    std::size_t rows = 0;
    while (std::getline(metrics, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 10); // (1 test param + mean) x 5 variables

    cmd_benchmark(cfg);
    std::ifstream timing(timing_path(cfg));
    const nlohmann::json j = nlohmann::json::parse(timing);
    REQUIRE(j["engines"].size() == 2); // oracle + the one trained model
    CHECK(j["engines"][0]["engine"] == "oracle");
    CHECK(j["engines"][1]["engine"] == "egcn");
    CHECK(j["engines"][0]["seconds"].get<double>() > 0.0);
}

TEST_CASE("generate and train are bitwise deterministic") {
    const OutDirGuard guard("tcli_det");
    RunConfig cfg = tiny_run_config(guard.dir);
    cfg.train.epochs = 8;

    cmd_generate(cfg);
    cmd_train(cfg);
    const std::uint64_t ds1 = pipeline::file_hash(dataset_path(cfg));
    const std::uint64_t ck1 = pipeline::file_hash(model_path(cfg, "egcn"));

    fs::remove_all(guard.dir);
    cmd_generate(cfg);
    cmd_train(cfg);
    CHECK(pipeline::file_hash(dataset_path(cfg)) == ds1);
    CHECK(pipeline::file_hash(model_path(cfg, "egcn")) == ck1);

    // A different seed changes the dataset.
    RunConfig other = cfg;
    other.seed = 4;
    fs::remove_all(guard.dir);
    cmd_generate(other);
    CHECK(pipeline::file_hash(dataset_path(other)) != ds1);
}

TEST_CASE("commands fail cleanly on missing artifacts") {
    const OutDirGuard guard("tcli_missing");
    const RunConfig cfg = tiny_run_config(guard.dir);
    CHECK_THROWS_AS(cmd_train(cfg), ValidationError);
    CHECK_THROWS_AS(cmd_evaluate(cfg), ValidationError);
    CHECK_THROWS_AS(cmd_benchmark(cfg), ValidationError);

    // evaluate also requires the trained checkpoint, not just the dataset.
    cmd_generate(cfg);
    CHECK_THROWS_AS(cmd_evaluate(cfg), ValidationError);
}
