#include "icegraph/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "icegraph/binio.hpp"
#include "icegraph/errors.hpp"

namespace icegraph::mesh {

double triangle_signed_area(const TriMesh& m, int t) {
    const auto& tri = m.triangles[static_cast<std::size_t>(t)];
    Vec2 a = m.nodes[static_cast<std::size_t>(tri[0])];
    Vec2 b = m.nodes[static_cast<std::size_t>(tri[1])];
    Vec2 c = m.nodes[static_cast<std::size_t>(tri[2])];
    return 0.5 * cross(b - a, c - a);
}

void validate_mesh(const TriMesh& m) {
    if (m.n_nodes() < 3)
        throw ValidationError("mesh has " + std::to_string(m.n_nodes()) +
                              " nodes; at least 3 required");
    if (m.triangles.empty())
        throw ValidationError("mesh has no triangles");
    if (m.boundary_flags.size() != m.nodes.size())
        throw ValidationError("mesh boundary flags size " + std::to_string(m.boundary_flags.size()) +
                              " does not match node count " + std::to_string(m.nodes.size()));
    for (std::uint8_t f : m.boundary_flags)
        if (f > 2)
            throw ValidationError("invalid boundary flag value " + std::to_string(int(f)));

    std::vector<char> referenced(m.nodes.size(), 0);
    for (int t = 0; t < m.n_triangles(); ++t) {
        const auto& tri = m.triangles[static_cast<std::size_t>(t)];
        for (int k = 0; k < 3; ++k) {
            if (tri[k] < 0 || tri[k] >= m.n_nodes())
                throw ValidationError("triangle " + std::to_string(t) + " references node " +
                                      std::to_string(tri[k]) + " outside [0, " +
                                      std::to_string(m.n_nodes()) + ")");
            referenced[static_cast<std::size_t>(tri[k])] = 1;
        }
        if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2])
            throw ValidationError("triangle " + std::to_string(t) + " has repeated node indices");
        double area = triangle_signed_area(m, t);
        if (area <= 0.0)
            throw ValidationError("triangle " + std::to_string(t) +
                                  (area == 0.0 ? " is degenerate (zero area)"
                                               : " has clockwise orientation"));
    }
    for (std::size_t i = 0; i < referenced.size(); ++i)
        if (!referenced[i])
            throw ValidationError("node " + std::to_string(i) + " is not part of any triangle");

    // Duplicate-node check via a spatial hash on a 1e-6 m lattice.
    const double cell = 1e-6;
    std::map<std::pair<long long, long long>, std::vector<int>> buckets;
    for (int i = 0; i < m.n_nodes(); ++i) {
        auto key = std::make_pair(static_cast<long long>(std::floor(m.nodes[static_cast<std::size_t>(i)].x / cell)),
                                  static_cast<long long>(std::floor(m.nodes[static_cast<std::size_t>(i)].y / cell)));
        for (long long dx = -1; dx <= 1; ++dx)
            for (long long dy = -1; dy <= 1; ++dy) {
                auto it = buckets.find({key.first + dx, key.second + dy});
                if (it == buckets.end()) continue;
                for (int j : it->second) {
                    if (norm(m.nodes[static_cast<std::size_t>(i)] - m.nodes[static_cast<std::size_t>(j)]) < 1e-6)
                        throw ValidationError("nodes " + std::to_string(j) + " and " +
                                              std::to_string(i) + " are closer than 1e-6 m");
                }
            }
        buckets[key].push_back(i);
    }
}

void normalize_and_validate(TriMesh& m) {
    for (auto& tri : m.triangles) {
        Vec2 a = m.nodes[static_cast<std::size_t>(tri[0])];
        Vec2 b = m.nodes[static_cast<std::size_t>(tri[1])];
        Vec2 c = m.nodes[static_cast<std::size_t>(tri[2])];
        if (cross(b - a, c - a) < 0.0) std::swap(tri[1], tri[2]);
    }
    validate_mesh(m);
}

TriMesh load_mesh_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open mesh file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("mesh file " + path + " is not valid JSON: " + e.what());
    }
    if (!j.contains("nodes") || !j.contains("triangles"))
        throw ValidationError("mesh file " + path + " missing \"nodes\" or \"triangles\"");

    TriMesh m;
    try {
        for (const auto& n : j.at("nodes")) {
            if (!n.is_array() || n.size() != 2)
                throw ValidationError("mesh node entries must be [x, y] pairs");
            m.nodes.push_back({n[0].get<double>(), n[1].get<double>()});
        }
        for (const auto& t : j.at("triangles")) {
            if (!t.is_array() || t.size() != 3)
                throw ValidationError("mesh triangle entries must be [a, b, c] index triples");
            m.triangles.push_back({t[0].get<int>(), t[1].get<int>(), t[2].get<int>()});
        }
        if (j.contains("boundary"))
            for (const auto& f : j.at("boundary"))
                m.boundary_flags.push_back(f.get<std::uint8_t>());
        else
            m.boundary_flags.assign(m.nodes.size(), 0);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("mesh file " + path + " has malformed fields: " + e.what());
    }
    normalize_and_validate(m);
    return m;
}

void save_mesh_json(const TriMesh& m, const std::string& path) {
    nlohmann::json j;
    j["nodes"] = nlohmann::json::array();
    for (const auto& n : m.nodes) j["nodes"].push_back({n.x, n.y});
    j["triangles"] = nlohmann::json::array();
    for (const auto& t : m.triangles) j["triangles"].push_back({t[0], t[1], t[2]});
    j["boundary"] = m.boundary_flags;
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open mesh file for writing: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw ValidationError("failed writing mesh file: " + path);
}

std::uint64_t mesh_hash(const TriMesh& m) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    h = fnv1a64(m.nodes.data(), m.nodes.size() * sizeof(Vec2), h);
    h = fnv1a64(m.triangles.data(), m.triangles.size() * sizeof(std::array<int, 3>), h);
    if (!m.boundary_flags.empty())
        h = fnv1a64(m.boundary_flags.data(), m.boundary_flags.size(), h);
    return h;
}

// ---------------------------------------------------------------------------
// Topology
// ---------------------------------------------------------------------------

int GraphTopology::directed_index(int i, int j) const {
    const auto& nb = neighbor_lists[static_cast<std::size_t>(i)];
    auto it = std::lower_bound(nb.begin(), nb.end(), j);
    if (it == nb.end() || *it != j) return -1;
    return node_offset[static_cast<std::size_t>(i)] + static_cast<int>(it - nb.begin());
}

GraphTopology build_topology(const TriMesh& m) {
    GraphTopology topo;
    topo.n_nodes = m.n_nodes();
    topo.neighbor_lists.assign(m.nodes.size(), {});

    std::vector<std::set<int>> nb(m.nodes.size());
    for (int t = 0; t < m.n_triangles(); ++t) {
        const auto& tri = m.triangles[static_cast<std::size_t>(t)];
        for (int k = 0; k < 3; ++k) {
            int a = tri[k], b = tri[(k + 1) % 3];
            if (a < 0 || a >= m.n_nodes() || b < 0 || b >= m.n_nodes())
                throw ValidationError("triangle " + std::to_string(t) +
                                      " references a node outside [0, " +
                                      std::to_string(m.n_nodes()) + ")");
            if (a == b)
                throw ValidationError("triangle " + std::to_string(t) + " has repeated node indices");
            nb[static_cast<std::size_t>(a)].insert(b);
            nb[static_cast<std::size_t>(b)].insert(a);
        }
        if (triangle_signed_area(m, t) == 0.0)
            throw ValidationError("triangle " + std::to_string(t) + " is degenerate (zero area)");
    }

    topo.degrees.resize(m.nodes.size());
    topo.norm_c.resize(m.nodes.size());
    topo.node_offset.assign(m.nodes.size() + 1, 0);
    for (int i = 0; i < m.n_nodes(); ++i) {
        auto& lst = topo.neighbor_lists[static_cast<std::size_t>(i)];
        lst.assign(nb[static_cast<std::size_t>(i)].begin(), nb[static_cast<std::size_t>(i)].end());
        topo.degrees[static_cast<std::size_t>(i)] = static_cast<int>(lst.size());
        topo.norm_c[static_cast<std::size_t>(i)] =
            lst.empty() ? 0.0 : 1.0 / static_cast<double>(lst.size());
        topo.node_offset[static_cast<std::size_t>(i) + 1] =
            topo.node_offset[static_cast<std::size_t>(i)] + static_cast<int>(lst.size());
        for (int j : lst) {
            topo.edge_src.push_back(i);
            topo.edge_dst.push_back(j);
            if (i < j) topo.edge_list.emplace_back(i, j);
        }
    }
    return topo;
}

// ---------------------------------------------------------------------------
// Edge attributes
// ---------------------------------------------------------------------------

EdgeAttributes compute_edge_attributes(const TriMesh& m, const GraphTopology& topo,
                                       const NodeFields& state, const NodeFields& prev_state,
                                       double dt_years) {
    auto check_span = [&](std::span<const double> s, const char* name) {
        if (static_cast<int>(s.size()) != topo.n_nodes)
            throw ValidationError(std::string("edge attributes: field '") + name + "' has " +
                                  std::to_string(s.size()) + " entries, expected " +
                                  std::to_string(topo.n_nodes));
    };
    check_span(state.surface, "surface");
    check_span(state.bed, "bed");
    check_span(state.vx, "vx");
    check_span(state.vy, "vy");
    check_span(prev_state.vx, "prev vx");
    check_span(prev_state.vy, "prev vy");
    if (dt_years <= 0.0)
        throw ValidationError("edge attributes: dt must be positive, got " + std::to_string(dt_years));

    EdgeAttributes attrs;
    attrs.values = Matrix(topo.n_directed_edges(), 5);
    for (int e = 0; e < topo.n_directed_edges(); ++e) {
        int i = topo.edge_src[static_cast<std::size_t>(e)];
        int j = topo.edge_dst[static_cast<std::size_t>(e)];
        double dist = norm(m.nodes[static_cast<std::size_t>(j)] - m.nodes[static_cast<std::size_t>(i)]);
        if (dist <= 0.0)
            throw ValidationError("edge attributes: nodes " + std::to_string(i) + " and " +
                                  std::to_string(j) + " are coincident (distance 0)");
        auto si = static_cast<std::size_t>(i);
        auto sj = static_cast<std::size_t>(j);
        attrs.values(e, EdgeAttributes::kDistance) = dist;
        attrs.values(e, EdgeAttributes::kSurfaceSlope) = (state.surface[sj] - state.surface[si]) / dist;
        attrs.values(e, EdgeAttributes::kBaseSlope) = (state.bed[sj] - state.bed[si]) / dist;
        attrs.values(e, EdgeAttributes::kAccelX) =
            ((state.vx[sj] - state.vx[si]) - (prev_state.vx[sj] - prev_state.vx[si])) / dt_years;
        attrs.values(e, EdgeAttributes::kAccelY) =
            ((state.vy[sj] - state.vy[si]) - (prev_state.vy[sj] - prev_state.vy[si])) / dt_years;
    }
    return attrs;
}

// ---------------------------------------------------------------------------
// Regular grid resampling
// ---------------------------------------------------------------------------

GridSpec grid_covering(const TriMesh& m, double spacing) {
    if (spacing <= 0.0)
        throw ValidationError("grid spacing must be positive, got " + std::to_string(spacing));
    if (m.nodes.empty()) throw ValidationError("grid_covering: mesh has no nodes");
    double xmin = m.nodes[0].x, xmax = m.nodes[0].x;
    double ymin = m.nodes[0].y, ymax = m.nodes[0].y;
    for (const auto& n : m.nodes) {
        xmin = std::min(xmin, n.x);
        xmax = std::max(xmax, n.x);
        ymin = std::min(ymin, n.y);
        ymax = std::max(ymax, n.y);
    }
    GridSpec spec;
    spec.spacing = spacing;
    spec.x0 = xmin;
    spec.y0 = ymin;
    spec.nx = static_cast<int>(std::ceil((xmax - xmin) / spacing - 1e-12)) + 1;
    spec.ny = static_cast<int>(std::ceil((ymax - ymin) / spacing - 1e-12)) + 1;
    return spec;
}

MeshGridInterp::MeshGridInterp(const TriMesh& m, const GridSpec& spec) : spec_(spec) {
    if (spec.nx <= 0 || spec.ny <= 0 || spec.spacing <= 0.0)
        throw ValidationError("invalid grid spec: nx=" + std::to_string(spec.nx) +
                              " ny=" + std::to_string(spec.ny) +
                              " spacing=" + std::to_string(spec.spacing));
    std::size_t n_pts = static_cast<std::size_t>(spec.nx) * static_cast<std::size_t>(spec.ny);
    tri_of_point_.assign(n_pts, -1);
    barycentric_.assign(n_pts, {0.0, 0.0, 0.0});
    corner_nodes_.assign(n_pts, {0, 0, 0});

    const double eps = 1e-10; // barycentric slack for points on triangle edges
    for (int t = 0; t < m.n_triangles(); ++t) {
        const auto& tri = m.triangles[static_cast<std::size_t>(t)];
        Vec2 a = m.nodes[static_cast<std::size_t>(tri[0])];
        Vec2 b = m.nodes[static_cast<std::size_t>(tri[1])];
        Vec2 c = m.nodes[static_cast<std::size_t>(tri[2])];
        double denom = cross(b - a, c - a);
        if (denom <= 0.0)
            throw ValidationError("triangle " + std::to_string(t) +
                                  " is degenerate or clockwise; validate the mesh first");
        double xmin = std::min({a.x, b.x, c.x}), xmax = std::max({a.x, b.x, c.x});
        double ymin = std::min({a.y, b.y, c.y}), ymax = std::max({a.y, b.y, c.y});
        int ix0 = std::max(0, static_cast<int>(std::ceil((xmin - spec.x0) / spec.spacing - eps)));
        int ix1 = std::min(spec.nx - 1, static_cast<int>(std::floor((xmax - spec.x0) / spec.spacing + eps)));
        int iy0 = std::max(0, static_cast<int>(std::ceil((ymin - spec.y0) / spec.spacing - eps)));
        int iy1 = std::min(spec.ny - 1, static_cast<int>(std::floor((ymax - spec.y0) / spec.spacing + eps)));
        for (int iy = iy0; iy <= iy1; ++iy) {
            for (int ix = ix0; ix <= ix1; ++ix) {
                std::size_t p = static_cast<std::size_t>(iy) * spec.nx + ix;
                if (tri_of_point_[p] >= 0) continue;
                Vec2 q{spec.x0 + ix * spec.spacing, spec.y0 + iy * spec.spacing};
                double la = cross(b - q, c - q) / denom;
                double lb = cross(c - q, a - q) / denom;
                double lc = cross(a - q, b - q) / denom;
                if (la < -eps || lb < -eps || lc < -eps) continue;
                tri_of_point_[p] = t;
                barycentric_[p] = {la, lb, lc};
                corner_nodes_[p] = tri;
            }
        }
    }
}

RegularGrid MeshGridInterp::apply(std::span<const double> nodal_values) const {
    RegularGrid g;
    g.spec = spec_;
    g.values.assign(tri_of_point_.size(), 0.0);
    g.valid.assign(tri_of_point_.size(), 0);
    for (std::size_t p = 0; p < tri_of_point_.size(); ++p) {
        if (tri_of_point_[p] < 0) continue;
        const auto& bc = barycentric_[p];
        const auto& cn = corner_nodes_[p];
        for (int k = 0; k < 3; ++k) {
            if (cn[k] < 0 || static_cast<std::size_t>(cn[k]) >= nodal_values.size())
                throw ValidationError("mesh_to_grid: nodal field has " +
                                      std::to_string(nodal_values.size()) +
                                      " entries but triangle references node " +
                                      std::to_string(cn[k]));
        }
        g.values[p] = bc[0] * nodal_values[static_cast<std::size_t>(cn[0])] +
                      bc[1] * nodal_values[static_cast<std::size_t>(cn[1])] +
                      bc[2] * nodal_values[static_cast<std::size_t>(cn[2])];
        g.valid[p] = 1;
    }
    return g;
}

RegularGrid mesh_to_grid(const TriMesh& m, std::span<const double> nodal_values,
                         const GridSpec& spec) {
    if (static_cast<int>(nodal_values.size()) != m.n_nodes())
        throw ValidationError("mesh_to_grid: field has " + std::to_string(nodal_values.size()) +
                              " entries, mesh has " + std::to_string(m.n_nodes()) + " nodes");
    return MeshGridInterp(m, spec).apply(nodal_values);
}

std::vector<double> grid_to_mesh(const RegularGrid& grid, const TriMesh& m) {
    const GridSpec& s = grid.spec;
    if (s.nx < 2 || s.ny < 2)
        throw ValidationError("grid_to_mesh requires at least a 2x2 grid, got nx=" +
                              std::to_string(s.nx) + " ny=" + std::to_string(s.ny));
    const double tol = 1e-9 * s.spacing;
    std::vector<double> out(m.nodes.size(), 0.0);
    for (int i = 0; i < m.n_nodes(); ++i) {
        Vec2 p = m.nodes[static_cast<std::size_t>(i)];
        double fx = (p.x - s.x0) / s.spacing;
        double fy = (p.y - s.y0) / s.spacing;
        if (fx < -tol || fx > s.nx - 1 + tol || fy < -tol || fy > s.ny - 1 + tol)
            throw ValidationError("grid_to_mesh: node " + std::to_string(i) + " at (" +
                                  std::to_string(p.x) + ", " + std::to_string(p.y) +
                                  ") lies outside the grid extent");
        int ix = std::clamp(static_cast<int>(std::floor(fx)), 0, s.nx - 2);
        int iy = std::clamp(static_cast<int>(std::floor(fy)), 0, s.ny - 2);
        double tx = std::clamp(fx - ix, 0.0, 1.0);
        double ty = std::clamp(fy - iy, 0.0, 1.0);
        double v00 = grid.values[grid.idx(ix, iy)];
        double v10 = grid.values[grid.idx(ix + 1, iy)];
        double v01 = grid.values[grid.idx(ix, iy + 1)];
        double v11 = grid.values[grid.idx(ix + 1, iy + 1)];
        out[static_cast<std::size_t>(i)] = (1 - tx) * (1 - ty) * v00 + tx * (1 - ty) * v10 +
                                           (1 - tx) * ty * v01 + tx * ty * v11;
    }
    return out;
}

void save_grid_csv(const RegularGrid& grid, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open grid CSV for writing: " + path);
    out << "x,y,value,valid\n";
    char buf[96];
    for (int iy = 0; iy < grid.spec.ny; ++iy) {
        for (int ix = 0; ix < grid.spec.nx; ++ix) {
            std::size_t p = grid.idx(ix, iy);
            std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%.17g,%d\n", grid.x_at(ix),
                          grid.y_at(iy), grid.values[p], int(grid.valid[p]));
            out << buf;
        }
    }
    if (!out) throw ValidationError("failed writing grid CSV: " + path);
}

} // namespace icegraph::mesh
