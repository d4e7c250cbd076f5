#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "icegraph/gnn.hpp"
#include "icegraph/icesim.hpp"
#include "icegraph/matrix.hpp"
#include "icegraph/mesh.hpp"
#include "icegraph/ndnn.hpp"
#include "icegraph/rng.hpp"

namespace icegraph::pipeline {

// ---------------------------------------------------------------------------
// Normalization
//
// Every model input and output is an affine map of the physical value into
// [-1, 1] using fixed nominal bounds derived from the simulation
// configuration (not from dataset min/max), so train and test use identical
// scaling. Values outside the nominal range are clamped defensively.
// ---------------------------------------------------------------------------

struct VarBounds {
    double lo = 0.0;
    double hi = 1.0;
};

inline double normalize_value(double v, VarBounds b) {
    const double c = v < b.lo ? b.lo : (v > b.hi ? b.hi : v);
    return 2.0 * (c - b.lo) / (b.hi - b.lo) - 1.0;
}

inline double denormalize_value(double u, VarBounds b) {
    return b.lo + 0.5 * (u + 1.0) * (b.hi - b.lo);
}

/// Node input feature columns (N x 10).
enum InputCol {
    kInParam = 0, // scenario parameter (calving threshold or melt rate)
    kInTime,      // physical time of the target state
    kInSmb,       // surface mass balance (static field)
    kInVx0,       // initial x velocity
    kInVy0,       // initial y velocity
    kInSurface0,  // initial surface elevation
    kInBed,       // bed elevation (static)
    kInThickness0,
    kInMask0,
    kInExtra, // configurable tenth channel: constant 1 or initial front distance
    kNumInputs
};

/// Node target columns (N x 4).
enum TargetCol { kOutVx = 0, kOutVy, kOutThickness, kOutMask, kNumTargets };

struct NormBounds {
    std::array<VarBounds, kNumInputs> input;
    std::array<VarBounds, kNumTargets> target;
    std::array<VarBounds, 5> edge_attr; // aligned with mesh::EdgeAttributes columns

    /// Nominal physical ranges from the configuration plus the swept
    /// parameter values (with headroom for seeded noise and drift).
    static NormBounds from_config(const sim::SimConfig& cfg, const std::vector<double>& params);

    /// Fingerprint of all bounds; embedded in checkpoints so evaluation can
    /// prove it uses the same scaling as training.
    std::uint64_t hash() const;
};

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// One supervised pair: node inputs built from the t = 0 state plus the
/// scenario parameter and target time; node targets from the saved state at
/// that time. Everything normalized to [-1, 1].
struct GraphSample {
    int scenario_index = 0; // row into Dataset::scenario_params
    double param = 0.0;     // physical scenario value
    int time_index = 0;     // saved-state index within the trajectory
    int attr_index = 0;     // row into Dataset::edge_attr_sets
    Matrix inputs;          // N x kNumInputs
    Matrix targets;         // N x kNumTargets
};

/// A full training corpus tied to one mesh: samples, shared edge-attribute
/// sets (normalized), the scenario parameter list, and the normalization
/// bounds used to build everything.
struct Dataset {
    std::string scenario;                // "calving" or "melt"
    std::uint64_t mesh_fingerprint = 0;
    int n_nodes = 0;
    NormBounds bounds;
    std::vector<double> scenario_params; // one per trajectory, build order
    std::string edge_attr_mode;          // "initial" or "per_step"
    std::string extra_feature = "constant"; // "constant" or "front_distance"
    std::vector<Matrix> edge_attr_sets;  // each n_directed_edges x 5
    std::vector<GraphSample> samples;
};

/// Builds the corpus from transient trajectories that share `m`. Inputs use
/// each trajectory's initial state; targets its saved states; edge attributes
/// follow cfg.edge_attr_mode. Throws ValidationError on mesh mismatch or
/// non-finite fields (naming the scenario value and step).
Dataset build_dataset(const mesh::TriMesh& m, const mesh::GraphTopology& topo,
                      const std::vector<sim::TrajectoryFile>& trajectories,
                      const sim::SimConfig& cfg);

/// Binary dataset container (magic "IGDS"); bitwise round-trip.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

/// FNV-1a of a file's bytes (determinism checks on written artifacts).
std::uint64_t file_hash(const std::string& path);

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

/// Parameter-stratified split. Two modes:
///  - fraction mode (val_params empty): test = samples whose param is in
///    test_params; the rest are shuffled with `seed` and cut at
///    floor(train_fraction * n) into train / val.
///  - by-parameter mode (val_params non-empty): val and test are selected by
///    parameter value and the rest is train (train_fraction unused).
struct SplitSpec {
    std::vector<double> trainval_params;
    std::vector<double> val_params;
    std::vector<double> test_params;
    double train_fraction = 0.7;
    std::uint64_t seed = 0;
};

struct SplitResult {
    std::vector<int> train, val, test; // indices into Dataset::samples
};

/// Throws ValidationError if any sample's parameter is missing from the spec
/// or a spec list overlaps another.
SplitResult split_dataset(const Dataset& ds, const SplitSpec& spec);

// ---------------------------------------------------------------------------
// Emulator adapter: one train/predict interface over the three model kinds
// ---------------------------------------------------------------------------

class Emulator {
public:
    virtual ~Emulator() = default;
    virtual const gnn::ModelConfig& config() const = 0;
    /// Normalized N x 4 prediction at mesh nodes (grid models are mapped back).
    virtual Matrix predict(const Dataset& ds, const GraphSample& s) = 0;
    /// One gradient step on one sample; returns the sample's pre-update MSE.
    virtual double train_step(const Dataset& ds, const GraphSample& s,
                              const ndnn::AdamConfig& adam) = 0;
    /// Forward-only MSE of one sample in the model's native space.
    virtual double sample_mse(const Dataset& ds, const GraphSample& s) = 0;
    /// Optional input pre-assembly (the benchmark calls this outside its
    /// timed region; the grid model caches its rasterized inputs here).
    virtual void precompute_inputs(const Dataset& ds) { (void)ds; }
    virtual std::vector<ndnn::ParamTensor*> params() = 0;
};

/// Grid resolution for the convolutional baseline [m]; divides both preset
/// domains exactly so every grid point lies inside the mesh hull.
inline constexpr double kFcnGridSpacing = 500.0;

/// Builds the right emulator for cfg.kind. Graph models bind to `topo`; the
/// grid model precomputes mesh<->grid interpolation from `m`.
std::unique_ptr<Emulator> make_emulator(const gnn::ModelConfig& cfg, const mesh::TriMesh& m,
                                        const mesh::GraphTopology& topo, Rng& init_rng,
                                        double grid_spacing = kFcnGridSpacing);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    int epochs = 400;
    double lr = 0.001;
    std::uint64_t seed = 0;
    bool restore_best = true; // reload the best-validation parameters at the end
    int log_every = 0;        // print progress every k epochs (0 = silent)
};

struct EpochRecord {
    double train_mse = 0.0;
    double val_mse = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = -1; // epoch with the lowest validation MSE (0-based)
    double best_val_mse = 0.0;
};

/// Adam, batch size 1, seeded shuffle each epoch; deterministic given the
/// seed. Throws NumericError naming the epoch if the loss goes non-finite.
TrainHistory train_emulator(Emulator& em, const Dataset& ds, const std::vector<int>& train_idx,
                            const std::vector<int>& val_idx, const TrainConfig& cfg);

/// History CSV: epoch,train_mse,val_mse.
void save_history_csv(const TrainHistory& h, const std::string& path);

/// Checkpoint wrappers that embed the model config and the normalization-
/// bounds hash in the architecture descriptor.
void save_model(const std::string& path, Emulator& em, const NormBounds& bounds);
/// Loads a checkpoint; verifies the stored bounds hash matches `ds.bounds`
/// and the mesh still fits, then returns a ready emulator.
std::unique_ptr<Emulator> load_model(const std::string& path, const Dataset& ds,
                                     const mesh::TriMesh& m, const mesh::GraphTopology& topo,
                                     double grid_spacing = kFcnGridSpacing);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct MetricsRow {
    std::string scenario_param; // numeric string, or "mean" for the average row
    std::string variable;       // vx, vy, velocity, thickness, mask
    double rmse = 0.0;          // physical units
    double r = 0.0;             // Pearson correlation
    long n = 0;                 // point pairs scored
};

struct MetricsReport {
    std::string model;
    std::vector<MetricsRow> rows;
    double mask_accuracy = 0.0; // fraction correct at 0.5 threshold, all nodes
    bool masked = true;         // scored on target-mask nodes only
};

/// Denormalized, per-test-parameter metrics plus averaged rows. Scoring pools
/// nodes across all samples of a parameter; the "velocity" variable pools vx
/// and vy; `masked` restricts scoring to nodes with target mask = 1.
/// Throws ValidationError on an empty test set.
MetricsReport evaluate_emulator(Emulator& em, const Dataset& ds,
                                const std::vector<int>& test_idx, bool masked = true);

/// CSV with header model,scenario_param,variable,rmse,r,n.
void write_metrics_csv(const MetricsReport& report, const std::string& path);

/// Scalar-loop RMSE / Pearson R (also the reference the tests compare against).
double rmse_of(const std::vector<double>& pred, const std::vector<double>& target);
double pearson_r(const std::vector<double>& pred, const std::vector<double>& target);

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

struct EngineTiming {
    std::string engine; // "oracle", "egcn", "gcn", "fcn"
    double seconds = 0.0;
    double speedup = 0.0; // oracle seconds / engine seconds
};

struct TimingReport {
    std::vector<EngineTiming> engines;
    std::string hardware;
    int repetitions = 3;
    int n_scenarios = 0;
    int n_states = 0; // saved states per scenario
};

/// Wall-clock comparison over an identical scenario sweep: the oracle
/// re-solves every transient; each emulator predicts every saved state. Each
/// engine's time is the minimum over `repetitions` runs. Model inputs are
/// assembled once outside the timed region; an engine's timed loop covers
/// inference plus (for the grid model) mapping back to mesh nodes.
TimingReport run_benchmark(const mesh::TriMesh& m, const mesh::GraphTopology& topo,
                           const sim::MeshGeometry& geom, const sim::SimState& initial,
                           const sim::SimConfig& cfg, const std::vector<double>& params,
                           const Dataset& ds,
                           const std::vector<Emulator*>& emulators, int repetitions = 3);

/// CPU model / core count from /proc/cpuinfo (best effort).
std::string hardware_string();

void write_timing_json(const TimingReport& report, const std::string& path);

} // namespace icegraph::pipeline
