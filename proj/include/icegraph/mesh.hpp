#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "icegraph/matrix.hpp"

namespace icegraph::mesh {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::sqrt(a.x * a.x + a.y * a.y); }

/// Per-node boundary markers carried by mesh files.
enum class BoundaryFlag : std::uint8_t { Interior = 0, Lateral = 1, IceFront = 2 };

/// Unstructured triangular mesh: node coordinates in meters plus triangle
/// connectivity. Triangles are counter-clockwise after validation.
struct TriMesh {
    std::vector<Vec2> nodes;
    std::vector<std::array<int, 3>> triangles;
    std::vector<std::uint8_t> boundary_flags; // values of BoundaryFlag

    int n_nodes() const { return static_cast<int>(nodes.size()); }
    int n_triangles() const { return static_cast<int>(triangles.size()); }
};

/// Signed (positive = CCW) area of triangle t.
double triangle_signed_area(const TriMesh& m, int t);

/// Checks all TriMesh invariants: index ranges, non-degenerate CCW triangles,
/// no orphan nodes, no duplicate nodes closer than 1e-6 m. Throws
/// ValidationError naming the offending triangle or node.
void validate_mesh(const TriMesh& m);

/// Flips clockwise triangles in place, then validates.
void normalize_and_validate(TriMesh& m);

/// JSON mesh file: {"nodes": [[x,y],...], "triangles": [[a,b,c],...],
/// "boundary": [flag,...]}. "boundary" may be omitted (all interior).
TriMesh load_mesh_json(const std::string& path);
void save_mesh_json(const TriMesh& m, const std::string& path);

/// Fingerprint of the mesh geometry + connectivity (used to tie datasets and
/// trajectories to the mesh they were built on).
std::uint64_t mesh_hash(const TriMesh& m);

// ---------------------------------------------------------------------------
// Graph topology
// ---------------------------------------------------------------------------

/// Node adjacency extracted from shared triangle edges, plus a canonical
/// directed-edge enumeration (CSR by source node, neighbors ascending) that
/// edge attributes and message passing index into.
struct GraphTopology {
    int n_nodes = 0;
    std::vector<std::vector<int>> neighbor_lists;    // sorted, no self entries
    std::vector<std::pair<int, int>> edge_list;      // undirected, i<j, lexicographic
    std::vector<int> degrees;
    std::vector<double> norm_c;                      // 1/degree (0 for isolated nodes)

    std::vector<int> edge_src, edge_dst;             // directed edges, size 2*|edge_list|
    std::vector<int> node_offset;                    // CSR offsets, size n_nodes+1

    int n_directed_edges() const { return static_cast<int>(edge_src.size()); }
    /// Index of directed edge (i -> j); -1 when j is not a neighbor of i.
    int directed_index(int i, int j) const;
};

GraphTopology build_topology(const TriMesh& m);

// ---------------------------------------------------------------------------
// Edge attributes
// ---------------------------------------------------------------------------

/// Node fields an edge-attribute pass reads (all sized n_nodes).
struct NodeFields {
    std::span<const double> surface;
    std::span<const double> bed;
    std::span<const double> vx;
    std::span<const double> vy;
};

/// Five attributes per directed edge (i -> j), aligned with the topology's
/// directed-edge enumeration:
///   0 distance [m]        |pos_j - pos_i|
///   1 surface_slope [-]   (s_j - s_i) / distance
///   2 base_slope [-]      (b_j - b_i) / distance
///   3 accel_x [m/yr]      ((vx_j - vx_i) - (vx_j_prev - vx_i_prev)) / dt
///   4 accel_y [m/yr]      analogous
struct EdgeAttributes {
    Matrix values; // n_directed_edges x 5

    enum Column { kDistance = 0, kSurfaceSlope, kBaseSlope, kAccelX, kAccelY };
};

EdgeAttributes compute_edge_attributes(const TriMesh& m, const GraphTopology& topo,
                                       const NodeFields& state, const NodeFields& prev_state,
                                       double dt_years);

// ---------------------------------------------------------------------------
// Regular grid resampling
// ---------------------------------------------------------------------------

struct GridSpec {
    double x0 = 0.0, y0 = 0.0; // origin (cell centers start here)
    double spacing = 1000.0;   // meters
    int nx = 0, ny = 0;
};

/// Smallest grid of the given spacing whose points cover the mesh bounding box.
GridSpec grid_covering(const TriMesh& m, double spacing);

/// One scalar field sampled on a regular grid. `valid` marks points inside the
/// mesh hull; values outside are 0.
struct RegularGrid {
    GridSpec spec;
    std::vector<double> values;       // row-major, index iy*nx + ix
    std::vector<std::uint8_t> valid;

    double x_at(int ix) const { return spec.x0 + ix * spec.spacing; }
    double y_at(int iy) const { return spec.y0 + iy * spec.spacing; }
    std::size_t idx(int ix, int iy) const {
        return static_cast<std::size_t>(iy) * spec.nx + ix;
    }
};

/// Precomputed triangle/barycentric assignment of grid points, so many fields
/// can be resampled on one mesh without repeating point location.
class MeshGridInterp {
public:
    MeshGridInterp(const TriMesh& m, const GridSpec& spec);

    RegularGrid apply(std::span<const double> nodal_values) const;
    const GridSpec& spec() const { return spec_; }

private:
    GridSpec spec_;
    std::vector<int> tri_of_point_;                 // -1 outside hull
    std::vector<std::array<double, 3>> barycentric_;
    std::vector<std::array<int, 3>> corner_nodes_;
};

/// Barycentric-linear interpolation of nodal values onto a regular grid.
RegularGrid mesh_to_grid(const TriMesh& m, std::span<const double> nodal_values,
                         const GridSpec& spec);

/// Bilinear interpolation from the 4 surrounding grid points to each mesh
/// node. Throws ValidationError naming the first node outside the grid.
std::vector<double> grid_to_mesh(const RegularGrid& grid, const TriMesh& m);

/// CSV export with header row "x,y,value,valid".
void save_grid_csv(const RegularGrid& grid, const std::string& path);

} // namespace icegraph::mesh
