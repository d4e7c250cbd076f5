#pragma once

#include "icegraph/runconfig.hpp"

namespace icegraph::cli {

/// Runs the oracle sweep over cfg.param_grid on one generated mesh, then
/// writes per-scenario trajectory files, the assembled dataset, the mesh, and
/// the resolved config under cfg.out_dir. Prints a summary of the counts.
/// Deterministic: identical config + seed produce bitwise-identical files.
void cmd_generate(const RunConfig& cfg);

/// Trains cfg.model on the generated dataset with the configured split and
/// writes the checkpoint and the per-epoch history CSV. Deterministic at
/// threads = 1.
void cmd_train(const RunConfig& cfg);

/// Scores the trained cfg.model checkpoint on the test split and writes the
/// metrics CSV. Prints the per-variable summary table.
void cmd_evaluate(const RunConfig& cfg);

/// Times the oracle sweep against every trained emulator found in
/// cfg.out_dir and writes the timing JSON. Missing model checkpoints are
/// skipped (oracle-only benchmarks are valid).
void cmd_benchmark(const RunConfig& cfg);

} // namespace icegraph::cli
