#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icegraph/mesh.hpp"

namespace icegraph::sim {

/// Physical constants, domain layout, and time stepping for one simulation
/// family. Distances in meters, time in years, stresses in Pa.
struct SimConfig {
    // Domain and mesh sizing.
    double domain_x = 40000.0;        // along-flow extent [m]
    double domain_y = 16000.0;        // across-flow extent [m]
    double edge_fine = 600.0;         // target edge length near the front [m]
    double edge_coarse = 1800.0;      // target edge length inland [m]
    double grade_start_frac = 0.30;   // x/domain_x where grading begins
    double grade_end_frac = 0.62;     // x/domain_x where the fine zone starts
    double jitter_frac = 0.12;        // node jitter as a fraction of local spacing

    // Time stepping.
    double dt = 0.05;                 // [yr]
    int n_steps = 260;
    int save_every = 1;

    // Material and sliding parameters.
    double rho_ice = 917.0;           // [kg/m^3]
    double rho_water = 1023.0;        // [kg/m^3]
    double gravity = 9.81;            // [m/s^2]
    double c_slide = 5.0e-3;          // sliding coefficient [m/yr/Pa at m_slide=1]
    double m_slide = 1.0;             // sliding exponent
    double v_cap = 4000.0;            // sliding speed cap (regularization) [m/yr]
    double rate_factor = 1.2e6;       // viscosity parameter B [Pa yr^(1/n)]
    double glen_n = 3.0;              // flow-law exponent

    // Initial geometry.
    double front_x = 34000.0;         // initial ice front position [m]
    double thickness_inland = 900.0;  // [m]
    double thickness_front = 260.0;   // [m]
    double bed_inland = 280.0;        // [m]
    double bed_front = -420.0;        // [m]
    double channel_depth = 160.0;     // extra bed deepening along the centerline [m]
    double channel_width_frac = 0.28; // channel half-width / domain_y

    // Surface mass balance field [m/yr ice equivalent].
    double smb_inland = 1.6;
    double smb_front = -2.2;

    // Amplitudes of the smooth random perturbations added per seed.
    double bed_noise = 45.0;          // [m]
    double thickness_noise = 30.0;    // [m]
    double smb_noise = 0.25;          // [m/yr]

    std::string scenario = "calving"; // "calving" or "melt"
    // Edge attributes fed to the graph models: "initial" derives them once
    // from the t=0 state (the standard one-shot protocol); "per_step" derives
    // them from the previous saved state (autoregressive-style ablation).
    std::string edge_attr_mode = "initial";
    // Tenth node-input channel: "constant" fills it with 1 (a bias channel);
    // "front_distance" fills it with the signed Euclidean distance to the
    // initial calving front (positive under ice, negative in open water) —
    // invariant under rigid motions, so graph-model equivariance is kept.
    std::string extra_feature = "constant";
};

/// Tidewater-glacier-like setup: 13 years at dt = 0.05 yr, calving scenario.
SimConfig helheim_preset();
/// Shelf-melt setup: ~20 years at monthly steps, basal-melt scenario.
SimConfig pig_preset();

/// The single swept parameter of one transient run.
struct ScenarioParams {
    std::string scenario;  // "calving" or "melt"
    double value = 0.0;    // calving: stress threshold [Pa]; melt: rate [m/yr]
};

/// All nodal fields at one instant.
struct SimState {
    double time = 0.0;                  // [yr]
    std::vector<double> thickness;      // H [m], >= 0
    std::vector<double> vx, vy;         // [m/yr]
    std::vector<double> surface;        // s [m]
    std::vector<double> bed;            // b [m], static
    std::vector<double> smb;            // [m/yr], static
    std::vector<std::uint8_t> ice_mask; // 1 = ice present

    int n_nodes() const { return static_cast<int>(thickness.size()); }
};

/// Precomputed finite-volume machinery for a mesh: median-dual node areas,
/// per-triangle P1 gradient coefficients, and per-undirected-edge dual-face
/// normals (oriented from the lower to the higher node index, length = face
/// length, so flux(i->j) = v_face . normal).
struct MeshGeometry {
    std::vector<double> node_area;                       // [m^2]
    std::vector<double> tri_area;                        // [m^2]
    std::vector<std::vector<int>> node_triangles;        // incidence lists
    std::vector<std::array<mesh::Vec2, 3>> grad_coeff;   // P1 basis gradients
    std::vector<mesh::Vec2> edge_normal;                 // per entry of topo.edge_list
    double min_edge_length = 0.0;                        // [m]
    double total_area = 0.0;                             // [m^2]

    MeshGeometry(const mesh::TriMesh& m, const mesh::GraphTopology& topo);
};

/// Area-weighted nodal gradient of a P1 field.
void nodal_gradient(const mesh::TriMesh& m, const MeshGeometry& geom,
                    std::span<const double> field, std::vector<double>& out_gx,
                    std::vector<double>& out_gy);

/// Same, but averaging only over triangles whose three vertices all carry the
/// mask. Nodes without any fully-masked triangle get a zero gradient. The flow
/// model differentiates fields over ice this way, so the step discontinuity at
/// the calving face does not leak into slopes or strain rates.
void masked_nodal_gradient(const mesh::TriMesh& m, const MeshGeometry& geom,
                           std::span<const double> field,
                           std::span<const std::uint8_t> mask, std::vector<double>& out_gx,
                           std::vector<double>& out_gy);

/// Sliding-law diagnostic velocity from the current surface gradient; zero on
/// ice-free nodes.
void compute_velocity(SimState& st, const mesh::TriMesh& m, const MeshGeometry& geom,
                      const SimConfig& cfg);

/// Effective tensile (von Mises) stress [Pa] from the velocity field.
std::vector<double> von_mises_stress(const SimState& st, const mesh::TriMesh& m,
                                     const MeshGeometry& geom, const SimConfig& cfg);

/// Removes front-adjacent ice nodes whose effective stress exceeds sigma_max.
/// Returns the calved ice volume [m^3].
double apply_calving(SimState& st, std::span<const double> stress, double sigma_max,
                     const mesh::TriMesh& m, const mesh::GraphTopology& topo,
                     const MeshGeometry& geom, const SimConfig& cfg);

/// Thins floating nodes by melt_rate*dt (clamped at zero thickness). Returns
/// the melted volume [m^3].
double apply_basal_melt(SimState& st, double melt_rate, const MeshGeometry& geom,
                        const SimConfig& cfg);

struct AdvanceResult {
    double smb_volume = 0.0;     // net surface mass balance actually applied [m^3]
    double outflow_volume = 0.0; // volume fluxed into ice-free nodes [m^3]
};

/// One explicit upwind finite-volume transport step of dt years: applies SMB on
/// ice-covered nodes, then exchanges volume along edges with donor-cell
/// limiting so thickness never goes negative and every internal transfer is
/// exactly conservative. Throws NumericError on CFL violation.
AdvanceResult advance_thickness(SimState& st, const mesh::TriMesh& m,
                                const mesh::GraphTopology& topo, const MeshGeometry& geom,
                                const SimConfig& cfg);

/// Rebuilds surface elevation and the ice mask from thickness, bed, and the
/// flotation criterion.
void update_surface(SimState& st, const SimConfig& cfg);

/// Per-step mass accounting. All entries in m^3 of ice.
struct BudgetEntry {
    double volume_before = 0.0;
    double volume_after = 0.0;
    double smb_volume = 0.0;     // net applied surface mass balance
    double melt_volume = 0.0;    // removed by basal melt
    double calving_volume = 0.0; // removed by calving
    double outflow_volume = 0.0; // advected into ice-free nodes

    /// volume_after - volume_before - smb + melt + calving + outflow; zero for
    /// a closed budget.
    double residual() const {
        return volume_after - volume_before - smb_volume + melt_volume + calving_volume +
               outflow_volume;
    }
};

double total_ice_volume(const SimState& st, const MeshGeometry& geom);

struct TransientResult {
    std::vector<SimState> states;     // saved states, including t = 0
    std::vector<BudgetEntry> budget;  // one entry per executed step
};

/// Graded strip mesh of the rectangular domain, deterministic per seed.
mesh::TriMesh generate_mesh(const SimConfig& cfg, std::uint64_t seed);

/// Initial bed/thickness/SMB fields (smooth trends plus seeded perturbations),
/// surface, mask, and diagnostic velocity.
SimState initial_state(const mesh::TriMesh& m, const MeshGeometry& geom, const SimConfig& cfg,
                       std::uint64_t seed);

/// Runs n_steps of the per-step sequence (velocity, scenario removal, transport,
/// surface update) and records every floor(n_steps/save_every)-th state plus the
/// initial one.
TransientResult run_transient_on_mesh(const mesh::TriMesh& m, const mesh::GraphTopology& topo,
                                      const MeshGeometry& geom, SimState initial,
                                      const SimConfig& cfg, const ScenarioParams& params);

/// Convenience wrapper: generate_mesh + initial_state + run_transient_on_mesh.
TransientResult run_transient(const SimConfig& cfg, const ScenarioParams& params,
                              std::uint64_t seed);

/// Binary trajectory files (magic "IGTR").
void save_trajectory(const std::string& path, const TransientResult& result,
                     const ScenarioParams& params, const SimConfig& cfg, std::uint64_t seed,
                     std::uint64_t mesh_fingerprint);
struct TrajectoryFile {
    TransientResult result;
    ScenarioParams params;
    std::uint64_t seed = 0;
    std::uint64_t mesh_fingerprint = 0;
    double dt = 0.0;
    int n_steps = 0;
    int save_every = 1;
};
TrajectoryFile load_trajectory(const std::string& path);

} // namespace icegraph::sim
