#include "icegraph/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "icegraph/binio.hpp"
#include "icegraph/errors.hpp"
#include "icegraph/matrix.hpp"
#include "icegraph/pipeline.hpp"

namespace icegraph::cli {

namespace {

namespace fs = std::filesystem;

struct LoadedWorld {
    mesh::TriMesh m;
    mesh::GraphTopology topo;
    pipeline::Dataset ds;
};

void prepare(const RunConfig& cfg) {
    cfg.validate();
    set_blas_threads(cfg.threads);
}

LoadedWorld load_world(const RunConfig& cfg) {
    LoadedWorld w;
    w.m = mesh::load_mesh_json(mesh_path(cfg));
    w.topo = mesh::build_topology(w.m);
    w.ds = pipeline::load_dataset(dataset_path(cfg));
    if (w.ds.mesh_fingerprint != mesh::mesh_hash(w.m))
        throw ValidationError("dataset " + dataset_path(cfg) +
                              " was built on a different mesh than " + mesh_path(cfg) +
                              " (regenerate with `generate`)");
    return w;
}

std::string param_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

} // namespace

void cmd_generate(const RunConfig& cfg) {
    prepare(cfg);
    fs::create_directories(cfg.out_dir);

    const mesh::TriMesh m = sim::generate_mesh(cfg.sim, cfg.seed);
    const mesh::GraphTopology topo = mesh::build_topology(m);
    const sim::MeshGeometry geom(m, topo);
    const sim::SimState initial = sim::initial_state(m, geom, cfg.sim, derive_seed(cfg.seed, 1));
    const std::uint64_t fingerprint = mesh::mesh_hash(m);

    std::vector<sim::TrajectoryFile> trajectories;
    for (std::size_t k = 0; k < cfg.param_grid.size(); ++k) {
        const double p = cfg.param_grid[k];
        const sim::ScenarioParams sp{cfg.sim.scenario, p};
        sim::TrajectoryFile tf;
        try {
            tf.result = sim::run_transient_on_mesh(m, topo, geom, initial, cfg.sim, sp);
        } catch (const NumericError& e) {
            throw NumericError("oracle run for " + cfg.sim.scenario + " parameter " +
                               param_label(p) + " failed: " + e.what());
        }
        sim::save_trajectory(trajectory_path(cfg, static_cast<int>(k)), tf.result, sp, cfg.sim,
                             cfg.seed, fingerprint);
        tf.params = sp;
        tf.seed = cfg.seed;
        tf.mesh_fingerprint = fingerprint;
        tf.dt = cfg.sim.dt;
        tf.n_steps = cfg.sim.n_steps;
        tf.save_every = cfg.sim.save_every;
        trajectories.push_back(std::move(tf));
    }

    const pipeline::Dataset ds = pipeline::build_dataset(m, topo, trajectories, cfg.sim);
    pipeline::save_dataset(ds, dataset_path(cfg));
    mesh::save_mesh_json(m, mesh_path(cfg));
    cfg.save(cfg.out_dir + "/config.json");

    const std::size_t n_states = trajectories.empty() ? 0 : trajectories[0].result.states.size();
    std::printf("scenario      %s (%s sweep, %zu values)\n", cfg.scenario.c_str(),
                cfg.sim.scenario.c_str(), cfg.param_grid.size());
    std::printf("mesh          %d nodes, %d directed edges, %d triangles\n", m.n_nodes(),
                topo.n_directed_edges(), m.n_triangles());
    std::printf("trajectories  %zu x %zu saved states\n", trajectories.size(), n_states);
    std::printf("dataset       %zu samples (%d x %d inputs, %d x %d targets each)\n",
                ds.samples.size(), ds.n_nodes, pipeline::kNumInputs, ds.n_nodes,
                pipeline::kNumTargets);
    std::printf("artifacts     %s\n", cfg.out_dir.c_str());
}

void cmd_train(const RunConfig& cfg) {
    prepare(cfg);
    const LoadedWorld w = load_world(cfg);
    const pipeline::SplitResult split = pipeline::split_dataset(w.ds, cfg.split);
    if (split.train.empty())
        throw ValidationError("the configured split leaves no training samples");

    Rng init_rng(derive_seed(cfg.train.seed, fnv1a64_str(cfg.model.kind)));
    auto em = pipeline::make_emulator(cfg.model, w.m, w.topo, init_rng, cfg.fcn_grid_spacing);

    std::printf("model         %s (width %d, %d hidden layers)\n", cfg.model.kind.c_str(),
                cfg.model.width, cfg.model.n_hidden);
    std::printf("split         %zu train / %zu val / %zu test samples\n", split.train.size(),
                split.val.size(), split.test.size());
    std::printf("training      %d epochs, lr %g, seed %llu\n", cfg.train.epochs, cfg.train.lr,
                static_cast<unsigned long long>(cfg.train.seed));

    const pipeline::TrainHistory hist =
        pipeline::train_emulator(*em, w.ds, split.train, split.val, cfg.train);

    pipeline::save_model(model_path(cfg, cfg.model.kind), *em, w.ds.bounds);
    pipeline::save_history_csv(hist, history_path(cfg, cfg.model.kind));

    std::printf("result        best epoch %d, best val mse %.6e, final train mse %.6e\n",
                hist.best_epoch, hist.best_val_mse, hist.epochs.back().train_mse);
    std::printf("artifacts     %s, %s\n", model_path(cfg, cfg.model.kind).c_str(),
                history_path(cfg, cfg.model.kind).c_str());
}

void cmd_evaluate(const RunConfig& cfg) {
    prepare(cfg);
    const LoadedWorld w = load_world(cfg);
    const pipeline::SplitResult split = pipeline::split_dataset(w.ds, cfg.split);

    auto em = pipeline::load_model(model_path(cfg, cfg.model.kind), w.ds, w.m, w.topo,
                                   cfg.fcn_grid_spacing);
    const pipeline::MetricsReport report =
        pipeline::evaluate_emulator(*em, w.ds, split.test, cfg.eval_masked);
    pipeline::write_metrics_csv(report, metrics_path(cfg, cfg.model.kind));

    std::printf("model         %s (%s scoring, %zu test samples)\n", report.model.c_str(),
                report.masked ? "masked" : "all-node", split.test.size());
    std::printf("%-14s %-10s %14s %10s %10s\n", "param", "variable", "rmse", "r", "n");
    for (const auto& row : report.rows)
        std::printf("%-14s %-10s %14.6g %10.4f %10ld\n", row.scenario_param.c_str(),
                    row.variable.c_str(), row.rmse, row.r, row.n);
    std::printf("mask accuracy %.4f (threshold 0.5, all nodes)\n", report.mask_accuracy);
    std::printf("artifacts     %s\n", metrics_path(cfg, cfg.model.kind).c_str());
}

void cmd_benchmark(const RunConfig& cfg) {
    prepare(cfg);
    const LoadedWorld w = load_world(cfg);
    const sim::MeshGeometry geom(w.m, w.topo);
    const sim::SimState initial =
        sim::initial_state(w.m, geom, cfg.sim, derive_seed(cfg.seed, 1));

    std::vector<std::unique_ptr<pipeline::Emulator>> loaded;
    std::vector<pipeline::Emulator*> engines;
    for (const std::string kind : {"egcn", "gcn", "fcn"}) {
        const std::string path = model_path(cfg, kind);
        if (!fs::exists(path)) continue;
        loaded.push_back(pipeline::load_model(path, w.ds, w.m, w.topo, cfg.fcn_grid_spacing));
        engines.push_back(loaded.back().get());
    }

    const pipeline::TimingReport report =
        pipeline::run_benchmark(w.m, w.topo, geom, initial, cfg.sim, cfg.param_grid, w.ds,
                                engines, cfg.benchmark_repetitions);
    pipeline::write_timing_json(report, timing_path(cfg));

    std::printf("hardware      %s\n", report.hardware.c_str());
    std::printf("sweep         %d scenarios x %d states, best of %d runs\n", report.n_scenarios,
                report.n_states, report.repetitions);
    std::printf("%-10s %14s %12s\n", "engine", "seconds", "speedup");
    for (const auto& e : report.engines)
        std::printf("%-10s %14.6f %12.2fx\n", e.engine.c_str(), e.seconds, e.speedup);
    std::printf("artifacts     %s\n", timing_path(cfg).c_str());
}

} // namespace icegraph::cli
