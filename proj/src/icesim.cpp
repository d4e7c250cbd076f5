#include "icegraph/icesim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <json.hpp>

#include "icegraph/binio.hpp"
#include "icegraph/errors.hpp"
#include "icegraph/rng.hpp"

namespace icegraph::sim {

SimConfig helheim_preset() {
    SimConfig cfg; // defaults are the tidewater setup
    cfg.scenario = "calving";
    cfg.dt = 0.05;
    cfg.n_steps = 260;
    cfg.save_every = 1;
    return cfg;
}

SimConfig pig_preset() {
    SimConfig cfg;
    cfg.scenario = "melt";
    cfg.dt = 1.0 / 12.0;
    cfg.n_steps = 239;
    cfg.save_every = 1;
    // Wider, flatter embayment with a deep bed so a floating tongue forms.
    cfg.domain_x = 50000.0;
    cfg.domain_y = 20000.0;
    cfg.edge_fine = 800.0;
    cfg.edge_coarse = 2200.0;
    cfg.front_x = 42000.0;
    cfg.thickness_inland = 1100.0;
    cfg.thickness_front = 300.0;
    cfg.bed_inland = 150.0;
    cfg.bed_front = -650.0;
    cfg.channel_depth = 220.0;
    cfg.smb_inland = 1.0;
    cfg.smb_front = -1.0;
    cfg.c_slide = 3.2e-3;
    cfg.v_cap = 2600.0;
    return cfg;
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

MeshGeometry::MeshGeometry(const mesh::TriMesh& m, const mesh::GraphTopology& topo) {
    const int nn = m.n_nodes();
    const int nt = m.n_triangles();
    node_area.assign(static_cast<std::size_t>(nn), 0.0);
    tri_area.resize(static_cast<std::size_t>(nt));
    node_triangles.assign(static_cast<std::size_t>(nn), {});
    grad_coeff.resize(static_cast<std::size_t>(nt));

    for (int t = 0; t < nt; ++t) {
        const auto& tri = m.triangles[static_cast<std::size_t>(t)];
        double area = mesh::triangle_signed_area(m, t);
        if (area <= 0.0)
            throw ValidationError("triangle " + std::to_string(t) +
                                  " is degenerate or clockwise; validate the mesh first");
        tri_area[static_cast<std::size_t>(t)] = area;
        total_area += area;
        for (int k = 0; k < 3; ++k) {
            node_area[static_cast<std::size_t>(tri[k])] += area / 3.0;
            node_triangles[static_cast<std::size_t>(tri[k])].push_back(t);
            // gradient of the P1 basis of vertex k: perp of the opposite edge
            mesh::Vec2 q = m.nodes[static_cast<std::size_t>(tri[(k + 1) % 3])];
            mesh::Vec2 r = m.nodes[static_cast<std::size_t>(tri[(k + 2) % 3])];
            grad_coeff[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] = {
                (q.y - r.y) / (2.0 * area), (r.x - q.x) / (2.0 * area)};
        }
    }

    // Median-dual face normals per undirected edge (i < j), oriented i -> j.
    edge_normal.assign(topo.edge_list.size(), {0.0, 0.0});
    std::vector<std::pair<std::pair<int, int>, int>> edge_index;
    edge_index.reserve(topo.edge_list.size());
    for (std::size_t e = 0; e < topo.edge_list.size(); ++e)
        edge_index.push_back({topo.edge_list[e], static_cast<int>(e)});
    std::sort(edge_index.begin(), edge_index.end());
    auto find_edge = [&](int a, int b) {
        if (a > b) std::swap(a, b);
        auto it = std::lower_bound(edge_index.begin(), edge_index.end(),
                                   std::make_pair(std::make_pair(a, b), -1));
        return (it != edge_index.end() && it->first == std::make_pair(a, b)) ? it->second : -1;
    };
    for (int t = 0; t < nt; ++t) {
        const auto& tri = m.triangles[static_cast<std::size_t>(t)];
        mesh::Vec2 a = m.nodes[static_cast<std::size_t>(tri[0])];
        mesh::Vec2 b = m.nodes[static_cast<std::size_t>(tri[1])];
        mesh::Vec2 c = m.nodes[static_cast<std::size_t>(tri[2])];
        mesh::Vec2 bary = (1.0 / 3.0) * (a + b + c);
        for (int k = 0; k < 3; ++k) {
            int i = tri[k], j = tri[(k + 1) % 3];
            int e = find_edge(i, j);
            if (e < 0)
                throw ValidationError("triangle edge (" + std::to_string(i) + ", " +
                                      std::to_string(j) + ") missing from topology");
            mesh::Vec2 pi = m.nodes[static_cast<std::size_t>(i)];
            mesh::Vec2 pj = m.nodes[static_cast<std::size_t>(j)];
            mesh::Vec2 mid = 0.5 * (pi + pj);
            mesh::Vec2 seg = bary - mid;
            mesh::Vec2 n{seg.y, -seg.x}; // one of the two perpendiculars
            mesh::Vec2 along = pj - pi;
            if (dot(n, along) < 0.0) n = {-n.x, -n.y};
            // the stored normal points from the lower to the higher node index
            double sgn = i < j ? 1.0 : -1.0;
            auto& acc = edge_normal[static_cast<std::size_t>(e)];
            acc = acc + sgn * n;
        }
    }

    min_edge_length = std::numeric_limits<double>::infinity();
    for (const auto& [i, j] : topo.edge_list)
        min_edge_length = std::min(
            min_edge_length,
            norm(m.nodes[static_cast<std::size_t>(j)] - m.nodes[static_cast<std::size_t>(i)]));
    if (!std::isfinite(min_edge_length))
        throw ValidationError("mesh has no edges; cannot build finite-volume geometry");
}

namespace {

void nodal_gradient_impl(const mesh::TriMesh& m, const MeshGeometry& geom,
                         std::span<const double> field, const std::uint8_t* mask,
                         std::vector<double>& out_gx, std::vector<double>& out_gy) {
    const int nn = m.n_nodes();
    if (static_cast<int>(field.size()) != nn)
        throw ValidationError("nodal_gradient: field has " + std::to_string(field.size()) +
                              " entries, mesh has " + std::to_string(nn) + " nodes");
    out_gx.assign(static_cast<std::size_t>(nn), 0.0);
    out_gy.assign(static_cast<std::size_t>(nn), 0.0);
    for (int i = 0; i < nn; ++i) {
        double gx = 0.0, gy = 0.0, wsum = 0.0;
        for (int t : geom.node_triangles[static_cast<std::size_t>(i)]) {
            const auto& tri = m.triangles[static_cast<std::size_t>(t)];
            if (mask && !(mask[tri[0]] && mask[tri[1]] && mask[tri[2]])) continue;
            double tgx = 0.0, tgy = 0.0;
            for (int k = 0; k < 3; ++k) {
                double f = field[static_cast<std::size_t>(tri[k])];
                tgx += f * geom.grad_coeff[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)].x;
                tgy += f * geom.grad_coeff[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)].y;
            }
            double w = geom.tri_area[static_cast<std::size_t>(t)];
            gx += w * tgx;
            gy += w * tgy;
            wsum += w;
        }
        if (wsum > 0.0) {
            out_gx[static_cast<std::size_t>(i)] = gx / wsum;
            out_gy[static_cast<std::size_t>(i)] = gy / wsum;
        }
    }
}

} // namespace

void nodal_gradient(const mesh::TriMesh& m, const MeshGeometry& geom,
                    std::span<const double> field, std::vector<double>& out_gx,
                    std::vector<double>& out_gy) {
    nodal_gradient_impl(m, geom, field, nullptr, out_gx, out_gy);
}

void masked_nodal_gradient(const mesh::TriMesh& m, const MeshGeometry& geom,
                           std::span<const double> field,
                           std::span<const std::uint8_t> mask, std::vector<double>& out_gx,
                           std::vector<double>& out_gy) {
    if (mask.size() != static_cast<std::size_t>(m.n_nodes()))
        throw ValidationError("masked_nodal_gradient: mask has " + std::to_string(mask.size()) +
                              " entries, mesh has " + std::to_string(m.n_nodes()) + " nodes");
    nodal_gradient_impl(m, geom, field, mask.data(), out_gx, out_gy);
}

// ---------------------------------------------------------------------------
// Physics operators
// ---------------------------------------------------------------------------

void compute_velocity(SimState& st, const mesh::TriMesh& m, const MeshGeometry& geom,
                      const SimConfig& cfg) {
    const int nn = m.n_nodes();
    if (st.n_nodes() != nn)
        throw ValidationError("compute_velocity: state has " + std::to_string(st.n_nodes()) +
                              " nodes, mesh has " + std::to_string(nn));
    std::vector<double> gx, gy;
    masked_nodal_gradient(m, geom, st.surface, st.ice_mask, gx, gy);
    st.vx.assign(static_cast<std::size_t>(nn), 0.0);
    st.vy.assign(static_cast<std::size_t>(nn), 0.0);
    for (int i = 0; i < nn; ++i) {
        auto si = static_cast<std::size_t>(i);
        if (!st.ice_mask[si] || st.thickness[si] <= 0.0) continue;
        double slope = std::hypot(gx[si], gy[si]);
        if (slope < 1e-14) continue;
        double tau_d = cfg.rho_ice * cfg.gravity * st.thickness[si] * slope;
        double speed = cfg.c_slide * (cfg.m_slide == 1.0 ? tau_d : std::pow(tau_d, cfg.m_slide));
        speed = std::min(speed, cfg.v_cap);
        st.vx[si] = -speed * gx[si] / slope;
        st.vy[si] = -speed * gy[si] / slope;
    }
}

std::vector<double> von_mises_stress(const SimState& st, const mesh::TriMesh& m,
                                     const MeshGeometry& geom, const SimConfig& cfg) {
    std::vector<double> dvx_dx, dvx_dy, dvy_dx, dvy_dy;
    masked_nodal_gradient(m, geom, st.vx, st.ice_mask, dvx_dx, dvx_dy);
    masked_nodal_gradient(m, geom, st.vy, st.ice_mask, dvy_dx, dvy_dy);
    const int nn = m.n_nodes();
    std::vector<double> stress(static_cast<std::size_t>(nn), 0.0);
    for (int i = 0; i < nn; ++i) {
        auto si = static_cast<std::size_t>(i);
        double exx = dvx_dx[si];
        double eyy = dvy_dy[si];
        double exy = 0.5 * (dvx_dy[si] + dvy_dx[si]);
        double mean = 0.5 * (exx + eyy);
        double radius = std::sqrt(0.25 * (exx - eyy) * (exx - eyy) + exy * exy);
        double l1 = std::max(0.0, mean + radius);
        double l2 = std::max(0.0, mean - radius);
        double eff = std::sqrt(0.5 * (l1 * l1 + l2 * l2));
        stress[si] = std::sqrt(3.0) * cfg.rate_factor * std::pow(eff, 1.0 / cfg.glen_n);
    }
    return stress;
}

double apply_calving(SimState& st, std::span<const double> stress, double sigma_max,
                     const mesh::TriMesh& m, const mesh::GraphTopology& topo,
                     const MeshGeometry& geom, const SimConfig& cfg) {
    if (sigma_max <= 0.0)
        throw ValidationError("calving threshold must be positive, got " +
                              std::to_string(sigma_max));
    if (static_cast<int>(stress.size()) != st.n_nodes())
        throw ValidationError("apply_calving: stress field has " + std::to_string(stress.size()) +
                              " entries, state has " + std::to_string(st.n_nodes()) + " nodes");
    const int nn = st.n_nodes();
    // Front set on the incoming mask: ice nodes touching open water or the
    // domain's ice-front boundary.
    std::vector<char> at_front(static_cast<std::size_t>(nn), 0);
    for (int i = 0; i < nn; ++i) {
        auto si = static_cast<std::size_t>(i);
        if (!st.ice_mask[si]) continue;
        if (m.boundary_flags[si] == static_cast<std::uint8_t>(mesh::BoundaryFlag::IceFront)) {
            at_front[si] = 1;
            continue;
        }
        for (int j : topo.neighbor_lists[si])
            if (!st.ice_mask[static_cast<std::size_t>(j)]) {
                at_front[si] = 1;
                break;
            }
    }
    double calved = 0.0;
    for (int i = 0; i < nn; ++i) {
        auto si = static_cast<std::size_t>(i);
        if (!at_front[si] || stress[si] <= sigma_max) continue;
        calved += st.thickness[si] * geom.node_area[si];
        st.thickness[si] = 0.0;
    }
    update_surface(st, cfg);
    return calved;
}

double apply_basal_melt(SimState& st, double melt_rate, const MeshGeometry& geom,
                        const SimConfig& cfg) {
    if (melt_rate < 0.0)
        throw ValidationError("melt rate must be non-negative, got " + std::to_string(melt_rate));
    double melted = 0.0;
    for (int i = 0; i < st.n_nodes(); ++i) {
        auto si = static_cast<std::size_t>(i);
        if (!st.ice_mask[si] || st.thickness[si] <= 0.0) continue;
        bool floating = st.bed[si] < 0.0 &&
                        cfg.rho_ice * st.thickness[si] < cfg.rho_water * (-st.bed[si]);
        if (!floating) continue;
        double dh = std::min(st.thickness[si], melt_rate * cfg.dt);
        st.thickness[si] -= dh;
        melted += dh * geom.node_area[si];
    }
    update_surface(st, cfg);
    return melted;
}

AdvanceResult advance_thickness(SimState& st, const mesh::TriMesh& m,
                                const mesh::GraphTopology& topo, const MeshGeometry& geom,
                                const SimConfig& cfg) {
    const int nn = st.n_nodes();
    if (nn != m.n_nodes())
        throw ValidationError("advance_thickness: state has " + std::to_string(nn) +
                              " nodes, mesh has " + std::to_string(m.n_nodes()));
    double vmax = 0.0;
    for (int i = 0; i < nn; ++i)
        vmax = std::max(vmax, std::hypot(st.vx[static_cast<std::size_t>(i)],
                                         st.vy[static_cast<std::size_t>(i)]));
    double cfl = cfg.dt * vmax / geom.min_edge_length;
    if (cfl > 0.5)
        throw NumericError("CFL violation: dt=" + std::to_string(cfg.dt) + " yr, max speed=" +
                           std::to_string(vmax) + " m/yr, min edge=" +
                           std::to_string(geom.min_edge_length) + " m gives CFL=" +
                           std::to_string(cfl) + " > 0.5");

    AdvanceResult res;
    // Surface mass balance on ice-covered nodes, clamped so thickness stays
    // non-negative; only the applied amount enters the budget.
    for (int i = 0; i < nn; ++i) {
        auto si = static_cast<std::size_t>(i);
        if (!st.ice_mask[si]) continue;
        double dh = st.smb[si] * cfg.dt;
        if (st.thickness[si] + dh < 0.0) dh = -st.thickness[si];
        st.thickness[si] += dh;
        res.smb_volume += dh * geom.node_area[si];
    }

    // Upwind volume fluxes across median-dual faces.
    const std::size_t ne = topo.edge_list.size();
    std::vector<double> flux_out(ne, 0.0); // planned |volume| leaving the donor
    std::vector<int> donor(ne, -1);
    std::vector<double> planned(static_cast<std::size_t>(nn), 0.0);
    for (std::size_t e = 0; e < ne; ++e) {
        auto [i, j] = topo.edge_list[e];
        auto si = static_cast<std::size_t>(i), sj = static_cast<std::size_t>(j);
        const mesh::Vec2& nrm = geom.edge_normal[e];
        double phi = 0.5 * ((st.vx[si] + st.vx[sj]) * nrm.x + (st.vy[si] + st.vy[sj]) * nrm.y);
        if (phi == 0.0) continue;
        int d = phi > 0.0 ? i : j;
        auto sd = static_cast<std::size_t>(d);
        if (st.thickness[sd] <= 0.0) continue;
        donor[e] = d;
        flux_out[e] = std::abs(phi) * st.thickness[sd] * cfg.dt;
        planned[sd] += flux_out[e];
    }
    std::vector<double> scale(static_cast<std::size_t>(nn), 1.0);
    for (int i = 0; i < nn; ++i) {
        auto si = static_cast<std::size_t>(i);
        double avail = st.thickness[si] * geom.node_area[si];
        if (planned[si] > avail && planned[si] > 0.0) scale[si] = avail / planned[si];
    }
    for (std::size_t e = 0; e < ne; ++e) {
        if (donor[e] < 0) continue;
        auto [i, j] = topo.edge_list[e];
        int d = donor[e];
        int r = (d == i) ? j : i;
        auto sd = static_cast<std::size_t>(d), sr = static_cast<std::size_t>(r);
        double dv = flux_out[e] * scale[sd];
        if (dv == 0.0) continue;
        st.thickness[sd] -= dv / geom.node_area[sd];
        if (st.ice_mask[sr])
            st.thickness[sr] += dv / geom.node_area[sr];
        else
            res.outflow_volume += dv;
    }
    // Donor limiting guarantees non-negativity up to rounding; clear the dust.
    for (int i = 0; i < nn; ++i) {
        auto si = static_cast<std::size_t>(i);
        if (st.thickness[si] < 0.0) {
            if (st.thickness[si] < -1e-9)
                throw NumericError("thickness went negative (" +
                                   std::to_string(st.thickness[si]) + " m) at node " +
                                   std::to_string(i));
            st.thickness[si] = 0.0;
        }
    }
    update_surface(st, cfg);
    return res;
}

void update_surface(SimState& st, const SimConfig& cfg) {
    for (int i = 0; i < st.n_nodes(); ++i) {
        auto si = static_cast<std::size_t>(i);
        double h = st.thickness[si];
        double b = st.bed[si];
        if (h > 0.0) {
            st.ice_mask[si] = 1;
            bool grounded = b >= 0.0 || cfg.rho_ice * h >= cfg.rho_water * (-b);
            st.surface[si] = grounded ? b + h : h * (1.0 - cfg.rho_ice / cfg.rho_water);
        } else {
            st.ice_mask[si] = 0;
            st.surface[si] = std::max(b, 0.0);
        }
    }
}

double total_ice_volume(const SimState& st, const MeshGeometry& geom) {
    double v = 0.0;
    for (int i = 0; i < st.n_nodes(); ++i)
        v += st.thickness[static_cast<std::size_t>(i)] *
             geom.node_area[static_cast<std::size_t>(i)];
    return v;
}

// ---------------------------------------------------------------------------
// Mesh generation and initial state
// ---------------------------------------------------------------------------

namespace {

double graded_spacing(const SimConfig& cfg, double x) {
    double a = cfg.grade_start_frac * cfg.domain_x;
    double b = cfg.grade_end_frac * cfg.domain_x;
    if (x <= a) return cfg.edge_coarse;
    if (x >= b) return cfg.edge_fine;
    double t = (x - a) / (b - a);
    return cfg.edge_coarse + t * (cfg.edge_fine - cfg.edge_coarse);
}

/// Smooth random field: a fixed number of sinusoids with seeded wavelengths,
/// directions, and phases.
struct SinNoise {
    struct Term {
        double kx, ky, phase;
    };
    std::vector<Term> terms;
    double amp = 0.0;

    static SinNoise make(Rng& rng, double amplitude, double lambda_min, double lambda_max) {
        SinNoise n;
        n.amp = amplitude;
        const int k_terms = 6;
        for (int k = 0; k < k_terms; ++k) {
            double lambda = rng.uniform(lambda_min, lambda_max);
            double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
            double mag = 2.0 * std::numbers::pi / lambda;
            n.terms.push_back({mag * std::cos(theta), mag * std::sin(theta),
                               rng.uniform(0.0, 2.0 * std::numbers::pi)});
        }
        return n;
    }

    double eval(double x, double y) const {
        double s = 0.0;
        for (const auto& t : terms) s += std::sin(t.kx * x + t.ky * y + t.phase);
        return amp * s / std::sqrt(static_cast<double>(terms.size()));
    }
};

} // namespace

mesh::TriMesh generate_mesh(const SimConfig& cfg, std::uint64_t seed) {
    if (cfg.domain_x <= 0.0 || cfg.domain_y <= 0.0)
        throw ValidationError("domain extents must be positive");
    if (cfg.edge_fine <= 0.0 || cfg.edge_coarse < cfg.edge_fine)
        throw ValidationError("edge sizing must satisfy 0 < edge_fine <= edge_coarse");
    if (cfg.jitter_frac < 0.0 || cfg.jitter_frac > 0.2)
        throw ValidationError("jitter_frac must lie in [0, 0.2], got " +
                              std::to_string(cfg.jitter_frac));

    // Column positions along x with graded spacing, rescaled to end exactly at
    // domain_x.
    std::vector<double> steps;
    double x = 0.0;
    while (x < cfg.domain_x - 1e-9) {
        double s = graded_spacing(cfg, x);
        steps.push_back(s);
        x += s;
    }
    double rescale = cfg.domain_x / x;
    std::vector<double> xs{0.0};
    for (double s : steps) xs.push_back(xs.back() + s * rescale);
    xs.back() = cfg.domain_x;
    const int n_cols = static_cast<int>(xs.size());

    // Per-column row counts from the local target spacing.
    std::vector<int> n_rows(static_cast<std::size_t>(n_cols));
    for (int k = 0; k < n_cols; ++k) {
        double hy = graded_spacing(cfg, xs[static_cast<std::size_t>(k)]);
        n_rows[static_cast<std::size_t>(k)] =
            std::max(2, static_cast<int>(std::lround(cfg.domain_y / hy)) + 1);
    }

    mesh::TriMesh m;
    Rng rng(derive_seed(seed, 0x6d657368ULL)); // mesh-generation stream
    std::vector<int> col_start(static_cast<std::size_t>(n_cols));
    for (int k = 0; k < n_cols; ++k) {
        col_start[static_cast<std::size_t>(k)] = m.n_nodes();
        int nr = n_rows[static_cast<std::size_t>(k)];
        double dy = cfg.domain_y / (nr - 1);
        double dx_left = k > 0 ? xs[static_cast<std::size_t>(k)] - xs[static_cast<std::size_t>(k - 1)]
                               : 0.0;
        double dx_right = k + 1 < n_cols
                              ? xs[static_cast<std::size_t>(k + 1)] - xs[static_cast<std::size_t>(k)]
                              : 0.0;
        for (int r = 0; r < nr; ++r) {
            double px = xs[static_cast<std::size_t>(k)];
            double py = r * dy;
            bool interior = k > 0 && k + 1 < n_cols && r > 0 && r + 1 < nr;
            if (interior) {
                px += cfg.jitter_frac * std::min(dx_left, dx_right) * rng.uniform(-1.0, 1.0);
                py += cfg.jitter_frac * dy * rng.uniform(-1.0, 1.0);
            }
            m.nodes.push_back({px, py});
            std::uint8_t flag = static_cast<std::uint8_t>(mesh::BoundaryFlag::Interior);
            if (k + 1 == n_cols)
                flag = static_cast<std::uint8_t>(mesh::BoundaryFlag::IceFront);
            else if (k == 0 || r == 0 || r + 1 == nr)
                flag = static_cast<std::uint8_t>(mesh::BoundaryFlag::Lateral);
            m.boundary_flags.push_back(flag);
        }
    }

    // Stitch adjacent columns bottom-up, always closing the shorter diagonal.
    for (int k = 0; k + 1 < n_cols; ++k) {
        int a0 = col_start[static_cast<std::size_t>(k)];
        int b0 = col_start[static_cast<std::size_t>(k + 1)];
        int na = n_rows[static_cast<std::size_t>(k)];
        int nb = n_rows[static_cast<std::size_t>(k + 1)];
        int i = 0, j = 0;
        while (i < na - 1 || j < nb - 1) {
            bool take_a;
            if (j == nb - 1)
                take_a = true;
            else if (i == na - 1)
                take_a = false;
            else
                take_a = norm(m.nodes[static_cast<std::size_t>(a0 + i + 1)] -
                              m.nodes[static_cast<std::size_t>(b0 + j)]) <=
                         norm(m.nodes[static_cast<std::size_t>(b0 + j + 1)] -
                              m.nodes[static_cast<std::size_t>(a0 + i)]);
            if (take_a) {
                m.triangles.push_back({a0 + i, b0 + j, a0 + i + 1});
                ++i;
            } else {
                m.triangles.push_back({a0 + i, b0 + j, b0 + j + 1});
                ++j;
            }
        }
    }

    validate_mesh(m);
    return m;
}

SimState initial_state(const mesh::TriMesh& m, const MeshGeometry& geom, const SimConfig& cfg,
                       std::uint64_t seed) {
    const int nn = m.n_nodes();
    SimState st;
    st.time = 0.0;
    st.thickness.assign(static_cast<std::size_t>(nn), 0.0);
    st.vx.assign(static_cast<std::size_t>(nn), 0.0);
    st.vy.assign(static_cast<std::size_t>(nn), 0.0);
    st.surface.assign(static_cast<std::size_t>(nn), 0.0);
    st.bed.assign(static_cast<std::size_t>(nn), 0.0);
    st.smb.assign(static_cast<std::size_t>(nn), 0.0);
    st.ice_mask.assign(static_cast<std::size_t>(nn), 0);

    Rng rng(derive_seed(seed, 0x696e6974ULL)); // initial-condition stream
    double lmin = 0.25 * cfg.domain_y, lmax = 0.6 * cfg.domain_y;
    SinNoise bed_noise = SinNoise::make(rng, cfg.bed_noise, lmin, lmax);
    SinNoise thick_noise = SinNoise::make(rng, cfg.thickness_noise, lmin, lmax);
    SinNoise smb_noise = SinNoise::make(rng, cfg.smb_noise, lmin, lmax);

    for (int i = 0; i < nn; ++i) {
        auto si = static_cast<std::size_t>(i);
        double px = m.nodes[si].x, py = m.nodes[si].y;
        double tx = px / cfg.domain_x;
        double channel = cfg.channel_depth *
                         std::exp(-std::pow((py - 0.5 * cfg.domain_y) /
                                                (cfg.channel_width_frac * cfg.domain_y),
                                            2.0));
        st.bed[si] = cfg.bed_inland + tx * (cfg.bed_front - cfg.bed_inland) - channel +
                     bed_noise.eval(px, py);
        st.smb[si] = cfg.smb_inland + tx * (cfg.smb_front - cfg.smb_inland) +
                     smb_noise.eval(px, py);
        if (px <= cfg.front_x) {
            double tf = px / cfg.front_x;
            double h = cfg.thickness_inland + tf * (cfg.thickness_front - cfg.thickness_inland) +
                       thick_noise.eval(px, py);
            st.thickness[si] = std::max(0.0, h);
        }
    }
    update_surface(st, cfg);
    compute_velocity(st, m, geom, cfg);
    return st;
}

// ---------------------------------------------------------------------------
// Transient driver
// ---------------------------------------------------------------------------

TransientResult run_transient_on_mesh(const mesh::TriMesh& m, const mesh::GraphTopology& topo,
                                      const MeshGeometry& geom, SimState initial,
                                      const SimConfig& cfg, const ScenarioParams& params) {
    if (params.scenario != "calving" && params.scenario != "melt")
        throw ValidationError("unknown scenario '" + params.scenario +
                              "'; expected \"calving\" or \"melt\"");
    if (cfg.n_steps <= 0)
        throw ValidationError("n_steps must be positive, got " + std::to_string(cfg.n_steps));
    if (cfg.save_every <= 0)
        throw ValidationError("save_every must be positive, got " +
                              std::to_string(cfg.save_every));
    if (cfg.dt <= 0.0)
        throw ValidationError("dt must be positive, got " + std::to_string(cfg.dt));

    TransientResult out;
    SimState st = std::move(initial);
    out.states.reserve(static_cast<std::size_t>(cfg.n_steps / cfg.save_every) + 1);
    out.states.push_back(st);
    out.budget.reserve(static_cast<std::size_t>(cfg.n_steps));

    for (int step = 1; step <= cfg.n_steps; ++step) {
        BudgetEntry be;
        be.volume_before = total_ice_volume(st, geom);
        // Velocity is already diagnostic of the current geometry (computed at
        // the end of the previous step, or by initial_state).
        if (params.scenario == "calving") {
            std::vector<double> stress = von_mises_stress(st, m, geom, cfg);
            be.calving_volume = apply_calving(st, stress, params.value, m, topo, geom, cfg);
        } else {
            be.melt_volume = apply_basal_melt(st, params.value, geom, cfg);
        }
        AdvanceResult adv = advance_thickness(st, m, topo, geom, cfg);
        be.smb_volume = adv.smb_volume;
        be.outflow_volume = adv.outflow_volume;
        st.time = step * cfg.dt;
        compute_velocity(st, m, geom, cfg);
        be.volume_after = total_ice_volume(st, geom);
        out.budget.push_back(be);
        if (step % cfg.save_every == 0) out.states.push_back(st);
    }
    return out;
}

TransientResult run_transient(const SimConfig& cfg, const ScenarioParams& params,
                              std::uint64_t seed) {
    mesh::TriMesh m = generate_mesh(cfg, seed);
    mesh::GraphTopology topo = mesh::build_topology(m);
    MeshGeometry geom(m, topo);
    SimState st = initial_state(m, geom, cfg, seed);
    return run_transient_on_mesh(m, topo, geom, std::move(st), cfg, params);
}

// ---------------------------------------------------------------------------
// Trajectory files
// ---------------------------------------------------------------------------

namespace {
constexpr std::uint32_t kTrajectoryMagic = 0x52544749u; // "IGTR"
constexpr std::uint32_t kTrajectoryVersion = 1;
} // namespace

void save_trajectory(const std::string& path, const TransientResult& result,
                     const ScenarioParams& params, const SimConfig& cfg, std::uint64_t seed,
                     std::uint64_t mesh_fingerprint) {
    BinWriter w(path);
    w.u32(kTrajectoryMagic);
    w.u32(kTrajectoryVersion);
    nlohmann::json hdr;
    hdr["scenario"] = params.scenario;
    hdr["value"] = params.value;
    hdr["seed"] = seed;
    hdr["mesh_fingerprint"] = mesh_fingerprint;
    hdr["dt"] = cfg.dt;
    hdr["n_steps"] = cfg.n_steps;
    hdr["save_every"] = cfg.save_every;
    hdr["n_nodes"] = result.states.empty() ? 0 : result.states.front().n_nodes();
    w.str(hdr.dump());
    w.u64(result.states.size());
    for (const SimState& st : result.states) {
        w.f64(st.time);
        w.f64_vec(st.thickness);
        w.f64_vec(st.vx);
        w.f64_vec(st.vy);
        w.f64_vec(st.surface);
        w.f64_vec(st.bed);
        w.f64_vec(st.smb);
        w.u8_vec(st.ice_mask);
    }
    w.u64(result.budget.size());
    for (const BudgetEntry& be : result.budget) {
        w.f64(be.volume_before);
        w.f64(be.volume_after);
        w.f64(be.smb_volume);
        w.f64(be.melt_volume);
        w.f64(be.calving_volume);
        w.f64(be.outflow_volume);
    }
    w.close();
}

TrajectoryFile load_trajectory(const std::string& path) {
    BinReader r(path);
    if (r.u32() != kTrajectoryMagic)
        throw ValidationError("not a trajectory file (bad magic): " + path);
    std::uint32_t version = r.u32();
    if (version != kTrajectoryVersion)
        throw ValidationError("unsupported trajectory version " + std::to_string(version) +
                              " in " + path);
    TrajectoryFile tf;
    nlohmann::json hdr;
    try {
        hdr = nlohmann::json::parse(r.str());
        tf.params.scenario = hdr.at("scenario").get<std::string>();
        tf.params.value = hdr.at("value").get<double>();
        tf.seed = hdr.at("seed").get<std::uint64_t>();
        tf.mesh_fingerprint = hdr.at("mesh_fingerprint").get<std::uint64_t>();
        tf.dt = hdr.at("dt").get<double>();
        tf.n_steps = hdr.at("n_steps").get<int>();
        tf.save_every = hdr.at("save_every").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("trajectory header in " + path + " is malformed: " + e.what());
    }
    int n_nodes = hdr.value("n_nodes", 0);
    std::uint64_t n_states = r.u64();
    tf.result.states.resize(n_states);
    for (auto& st : tf.result.states) {
        st.time = r.f64();
        st.thickness = r.f64_vec();
        st.vx = r.f64_vec();
        st.vy = r.f64_vec();
        st.surface = r.f64_vec();
        st.bed = r.f64_vec();
        st.smb = r.f64_vec();
        st.ice_mask = r.u8_vec();
        if (st.n_nodes() != n_nodes)
            throw ValidationError("trajectory state in " + path + " has " +
                                  std::to_string(st.n_nodes()) + " nodes, header says " +
                                  std::to_string(n_nodes));
    }
    std::uint64_t n_budget = r.u64();
    tf.result.budget.resize(n_budget);
    for (auto& be : tf.result.budget) {
        be.volume_before = r.f64();
        be.volume_after = r.f64();
        be.smb_volume = r.f64();
        be.melt_volume = r.f64();
        be.calving_volume = r.f64();
        be.outflow_volume = r.f64();
    }
    return tf;
}

} // namespace icegraph::sim
