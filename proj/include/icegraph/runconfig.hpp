#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icegraph/gnn.hpp"
#include "icegraph/icesim.hpp"
#include "icegraph/pipeline.hpp"

namespace icegraph::cli {

/// One structured configuration for the whole workflow. A scenario kind
/// ("helheim" or "pig") selects preset physics, parameter grid, and split
/// protocol; every field can then be overridden from JSON.
///
/// JSON schema (all keys optional except none; unknown keys rejected):
///   {
///     "scenario": "helheim" | "pig",
///     "seed": 0, "out_dir": "out", "threads": 1,
///     "sim": { <sim::SimConfig field overrides by name> },
///     "params": [v, ...] | {"from": a, "to": b, "step": s},
///     "model": { <gnn::ModelConfig field overrides> },
///     "train": {"epochs","lr","seed","restore_best","log_every"},
///     "split": {"trainval_params","val_params","test_params",
///               "train_fraction","seed"},
///     "eval_masked": true, "benchmark_repetitions": 3,
///     "fcn_grid_spacing": 500.0
///   }
struct RunConfig {
    std::string scenario = "helheim"; // selects presets below
    std::uint64_t seed = 0;           // master seed (mesh, fields, defaults)
    std::string out_dir = "out";
    int threads = 1;

    sim::SimConfig sim;              // preset for `scenario`, then overridden
    std::vector<double> param_grid;  // oracle sweep values (non-empty)
    gnn::ModelConfig model;          // kind selects the emulator
    pipeline::TrainConfig train;     // train.seed defaults to `seed`
    pipeline::SplitSpec split;       // split.seed defaults to `seed`
    bool eval_masked = true;
    int benchmark_repetitions = 3;
    double fcn_grid_spacing = pipeline::kFcnGridSpacing;

    /// Preset-complete config for a scenario kind ("helheim" or "pig").
    static RunConfig preset(const std::string& scenario_kind);

    /// Canonical full serialization; parse(serialize(c)) == c field for field.
    std::string to_json() const;
    static RunConfig from_json(const std::string& text);

    static RunConfig load(const std::string& path);
    void save(const std::string& path) const;

    /// Throws ValidationError on out-of-range fields.
    void validate() const;
};

/// Artifact file names under RunConfig::out_dir.
std::string mesh_path(const RunConfig& cfg);
std::string trajectory_path(const RunConfig& cfg, int index);
std::string dataset_path(const RunConfig& cfg);
std::string model_path(const RunConfig& cfg, const std::string& kind);
std::string history_path(const RunConfig& cfg, const std::string& kind);
std::string metrics_path(const RunConfig& cfg, const std::string& kind);
std::string timing_path(const RunConfig& cfg);

} // namespace icegraph::cli
