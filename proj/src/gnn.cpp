#include "icegraph/gnn.hpp"

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "icegraph/errors.hpp"

namespace icegraph::gnn {

namespace {

void check_node_matrix(const char* who, const Matrix& m, int n_nodes, int cols) {
    if (m.rows != n_nodes || m.cols != cols)
        throw ValidationError(std::string(who) + ": expected " + std::to_string(n_nodes) + "x" +
                              std::to_string(cols) + ", got " + std::to_string(m.rows) + "x" +
                              std::to_string(m.cols));
}

Matrix hcat(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows) throw ValidationError("hcat: row mismatch");
    Matrix out(a.rows, a.cols + b.cols);
    for (int r = 0; r < a.rows; ++r) {
        double* o = out.row(r);
        const double* ar = a.row(r);
        const double* br = b.row(r);
        for (int c = 0; c < a.cols; ++c) o[c] = ar[c];
        for (int c = 0; c < b.cols; ++c) o[a.cols + c] = br[c];
    }
    return out;
}

Matrix slice_cols(const Matrix& m, int c0, int c1) {
    Matrix out(m.rows, c1 - c0);
    for (int r = 0; r < m.rows; ++r) {
        const double* src = m.row(r);
        double* dst = out.row(r);
        for (int c = c0; c < c1; ++c) dst[c - c0] = src[c];
    }
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// EgcnLayer
// ---------------------------------------------------------------------------

EgcnLayer::EgcnLayer(const std::string& name, int f_in, int f_msg, int f_out, int hidden,
                     int n_edge_attr)
    : phi_e(name + ".phi_e", 2 * f_in + 1 + n_edge_attr, hidden, f_msg),
      phi_x(name + ".phi_x", f_msg, hidden, 1),
      phi_h(name + ".phi_h", f_in + f_msg, hidden, f_out) {}

void EgcnLayer::init(Rng& rng) {
    phi_e.init(rng);
    phi_x.init(rng);
    phi_h.init(rng);
}

void EgcnLayer::forward(const mesh::GraphTopology& topo, const Matrix& h, const Matrix& x,
                        const Matrix& edge_attr, Matrix& h_out, Matrix& x_out,
                        EgcnCache& cache) const {
    const int n = topo.n_nodes;
    const int f = f_in();
    const int a = n_edge_attr();
    const int ne = topo.n_directed_edges();
    check_node_matrix("EgcnLayer: h", h, n, f);
    check_node_matrix("EgcnLayer: x", x, n, 2);
    if (edge_attr.rows != ne || edge_attr.cols != a)
        throw ValidationError("EgcnLayer: edge attributes are " + std::to_string(edge_attr.rows) +
                              "x" + std::to_string(edge_attr.cols) + ", expected " +
                              std::to_string(ne) + "x" + std::to_string(a));

    cache.h = h;
    cache.x = x;

    // Edge batch: [h_i | h_j | |x_i - x_j|^2 | a_ij] per directed edge.
    cache.edge_in = Matrix(ne, 2 * f + 1 + a);
    for (int e = 0; e < ne; ++e) {
        const int i = topo.edge_src[static_cast<std::size_t>(e)];
        const int j = topo.edge_dst[static_cast<std::size_t>(e)];
        double* row = cache.edge_in.row(e);
        const double* hi = h.row(i);
        const double* hj = h.row(j);
        for (int c = 0; c < f; ++c) row[c] = hi[c];
        for (int c = 0; c < f; ++c) row[f + c] = hj[c];
        const double ddx = x(i, 0) - x(j, 0);
        const double ddy = x(i, 1) - x(j, 1);
        row[2 * f] = ddx * ddx + ddy * ddy;
        const double* ar = edge_attr.row(e);
        for (int c = 0; c < a; ++c) row[2 * f + 1 + c] = ar[c];
    }

    cache.msg = phi_e.forward(cache.edge_in, cache.e_cache);
    cache.coord_w = phi_x.forward(cache.msg, cache.x_cache);

    // Coordinate update and message aggregation, both C_i-normalized.
    x_out = x;
    cache.m_agg = Matrix(n, f_msg());
    for (int e = 0; e < ne; ++e) {
        const int i = topo.edge_src[static_cast<std::size_t>(e)];
        const int j = topo.edge_dst[static_cast<std::size_t>(e)];
        const double ci = topo.norm_c[static_cast<std::size_t>(i)];
        const double w = ci * cache.coord_w(e, 0);
        x_out(i, 0) += w * (x(i, 0) - x(j, 0));
        x_out(i, 1) += w * (x(i, 1) - x(j, 1));
        double* mi = cache.m_agg.row(i);
        const double* me = cache.msg.row(e);
        for (int c = 0; c < f_msg(); ++c) mi[c] += ci * me[c];
    }

    cache.h_in = hcat(h, cache.m_agg);
    h_out = phi_h.forward(cache.h_in, cache.h_cache);
}

void EgcnLayer::backward(const mesh::GraphTopology& topo, const EgcnCache& cache,
                         const Matrix& dh_out, const Matrix& dx_out, Matrix& dh_in,
                         Matrix& dx_in) {
    const int n = topo.n_nodes;
    const int f = f_in();
    const int fm = f_msg();
    const int ne = topo.n_directed_edges();
    check_node_matrix("EgcnLayer backward: dh_out", dh_out, n, f_out());
    check_node_matrix("EgcnLayer backward: dx_out", dx_out, n, 2);

    // h'_i = phi_h([h_i | m_i])
    const Matrix d_hin = phi_h.backward(cache.h_cache, dh_out);
    dh_in = slice_cols(d_hin, 0, f);
    const Matrix dm_agg = slice_cols(d_hin, f, f + fm);

    // m_i = C_i sum_j m_ij
    Matrix dmsg(ne, fm);
    for (int e = 0; e < ne; ++e) {
        const int i = topo.edge_src[static_cast<std::size_t>(e)];
        const double ci = topo.norm_c[static_cast<std::size_t>(i)];
        const double* src = dm_agg.row(i);
        double* dst = dmsg.row(e);
        for (int c = 0; c < fm; ++c) dst[c] = ci * src[c];
    }

    // x'_i = x_i + C_i sum_j (x_i - x_j) w_e
    dx_in = dx_out; // identity path
    Matrix dcoord_w(ne, 1);
    for (int e = 0; e < ne; ++e) {
        const int i = topo.edge_src[static_cast<std::size_t>(e)];
        const int j = topo.edge_dst[static_cast<std::size_t>(e)];
        const double ci = topo.norm_c[static_cast<std::size_t>(i)];
        const double dx = cache.x(i, 0) - cache.x(j, 0);
        const double dy = cache.x(i, 1) - cache.x(j, 1);
        const double gi0 = dx_out(i, 0), gi1 = dx_out(i, 1);
        dcoord_w(e, 0) = ci * (gi0 * dx + gi1 * dy);
        const double w = ci * cache.coord_w(e, 0);
        dx_in(i, 0) += w * gi0;
        dx_in(i, 1) += w * gi1;
        dx_in(j, 0) -= w * gi0;
        dx_in(j, 1) -= w * gi1;
    }

    // Both message consumers feed phi_e.
    const Matrix dmsg_from_x = phi_x.backward(cache.x_cache, dcoord_w);
    for (std::size_t k = 0; k < dmsg.a.size(); ++k) dmsg.a[k] += dmsg_from_x.a[k];

    const Matrix d_edge_in = phi_e.backward(cache.e_cache, dmsg);
    for (int e = 0; e < ne; ++e) {
        const int i = topo.edge_src[static_cast<std::size_t>(e)];
        const int j = topo.edge_dst[static_cast<std::size_t>(e)];
        const double* row = d_edge_in.row(e);
        double* di = dh_in.row(i);
        double* dj = dh_in.row(j);
        for (int c = 0; c < f; ++c) di[c] += row[c];
        for (int c = 0; c < f; ++c) dj[c] += row[f + c];
        // |x_i - x_j|^2 path
        const double ds = row[2 * f];
        const double dx = cache.x(i, 0) - cache.x(j, 0);
        const double dy = cache.x(i, 1) - cache.x(j, 1);
        dx_in(i, 0) += 2.0 * ds * dx;
        dx_in(i, 1) += 2.0 * ds * dy;
        dx_in(j, 0) -= 2.0 * ds * dx;
        dx_in(j, 1) -= 2.0 * ds * dy;
    }
}

std::vector<ndnn::ParamTensor*> EgcnLayer::params() {
    std::vector<ndnn::ParamTensor*> out;
    for (auto* p : phi_e.params()) out.push_back(p);
    for (auto* p : phi_x.params()) out.push_back(p);
    for (auto* p : phi_h.params()) out.push_back(p);
    return out;
}

// ---------------------------------------------------------------------------
// GcnLayer
// ---------------------------------------------------------------------------

Matrix gcn_propagate(const mesh::GraphTopology& topo, const Matrix& h) {
    const int n = topo.n_nodes;
    if (h.rows != n)
        throw ValidationError("gcn_propagate: features have " + std::to_string(h.rows) +
                              " rows, topology has " + std::to_string(n) + " nodes");
    std::vector<double> inv_sqrt(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        inv_sqrt[static_cast<std::size_t>(i)] =
            1.0 / std::sqrt(static_cast<double>(topo.degrees[static_cast<std::size_t>(i)] + 1));
    Matrix out(n, h.cols);
    // self-loop: c_ii = deg~_i
    for (int i = 0; i < n; ++i) {
        const double s = inv_sqrt[static_cast<std::size_t>(i)] * inv_sqrt[static_cast<std::size_t>(i)];
        const double* src = h.row(i);
        double* dst = out.row(i);
        for (int c = 0; c < h.cols; ++c) dst[c] = s * src[c];
    }
    for (int e = 0; e < topo.n_directed_edges(); ++e) {
        const int i = topo.edge_src[static_cast<std::size_t>(e)];
        const int j = topo.edge_dst[static_cast<std::size_t>(e)];
        const double s =
            inv_sqrt[static_cast<std::size_t>(i)] * inv_sqrt[static_cast<std::size_t>(j)];
        const double* src = h.row(j);
        double* dst = out.row(i);
        for (int c = 0; c < h.cols; ++c) dst[c] += s * src[c];
    }
    return out;
}

GcnLayer::GcnLayer(const std::string& name, int f_in, int f_out, bool act)
    : W(name + ".W", {f_in, f_out}), activation(act) {}

void GcnLayer::init(Rng& rng) { ndnn::glorot_init(W, f_in(), f_out(), rng); }

Matrix GcnLayer::forward(const mesh::GraphTopology& topo, const Matrix& h,
                         GcnCache& cache) const {
    if (h.cols != f_in())
        throw ValidationError("GcnLayer " + W.name + ": input has " + std::to_string(h.cols) +
                              " features, expected " + std::to_string(f_in()));
    cache.agg = gcn_propagate(topo, h);
    cache.z = Matrix(h.rows, f_out());
    gemm_raw(h.rows, f_out(), f_in(), cache.agg.a.data(), f_in(), false, W.data.data(), f_out(),
             false, cache.z.a.data(), f_out(), 0.0);
    if (!activation) return cache.z;
    Matrix y;
    ndnn::leaky_relu_forward(cache.z, y, slope);
    return y;
}

Matrix GcnLayer::backward(const mesh::GraphTopology& topo, const GcnCache& cache,
                          const Matrix& dy) {
    Matrix dz;
    if (activation)
        ndnn::leaky_relu_backward(cache.z, dy, dz, slope);
    else
        dz = dy;
    // dW += agg^T dz
    gemm_raw(f_in(), f_out(), cache.agg.rows, cache.agg.a.data(), f_in(), true, dz.a.data(),
             f_out(), false, W.grad.data(), f_out(), 1.0);
    // d agg = dz W^T, then back through the (self-adjoint) propagation
    Matrix dagg(dz.rows, f_in());
    gemm_raw(dz.rows, f_in(), f_out(), dz.a.data(), f_out(), false, W.data.data(), f_out(), true,
             dagg.a.data(), f_in(), 0.0);
    return gcn_propagate(topo, dagg);
}

std::vector<ndnn::ParamTensor*> GcnLayer::params() { return {&W}; }

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

Conv2d::Conv2d(const std::string& name, int c_in, int c_out, int kernel_size)
    : W(name + ".W", {c_in * 9, c_out}), b(name + ".b", {c_out}) {
    if (kernel_size != 3)
        throw ValidationError("Conv2d " + name + ": kernel size must be 3, got " +
                              std::to_string(kernel_size));
}

void Conv2d::init(Rng& rng) {
    ndnn::glorot_init(W, c_in() * 9, c_out() * 9, rng);
    std::fill(b.data.begin(), b.data.end(), 0.0);
}

GridTensor Conv2d::forward(const GridTensor& x, Conv2dCache& cache) const {
    if (x.channels != c_in())
        throw ValidationError("Conv2d " + W.name + ": input has " + std::to_string(x.channels) +
                              " channels, expected " + std::to_string(c_in()));
    const int H = x.height, Wd = x.width;
    cache.height = H;
    cache.width = Wd;
    // im2col: one row per output pixel, columns (ci, ky, kx).
    cache.cols = Matrix(H * Wd, c_in() * 9);
    for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < Wd; ++xx) {
            double* row = cache.cols.row(y * Wd + xx);
            int k = 0;
            for (int ci = 0; ci < c_in(); ++ci)
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx, ++k) {
                        const int iy = y + ky - 1, ix = xx + kx - 1;
                        row[k] = (iy >= 0 && iy < H && ix >= 0 && ix < Wd) ? x.at(ci, iy, ix)
                                                                           : 0.0;
                    }
        }
    Matrix ymat(H * Wd, c_out());
    gemm_raw(H * Wd, c_out(), c_in() * 9, cache.cols.a.data(), c_in() * 9, false, W.data.data(),
             c_out(), false, ymat.a.data(), c_out(), 0.0);
    GridTensor out(c_out(), H, Wd);
    for (int p = 0; p < H * Wd; ++p) {
        const double* row = ymat.row(p);
        for (int co = 0; co < c_out(); ++co)
            out.a[static_cast<std::size_t>(co) * H * Wd + p] = row[co] + b.data[static_cast<std::size_t>(co)];
    }
    return out;
}

GridTensor Conv2d::backward(const Conv2dCache& cache, const GridTensor& dy) {
    const int H = cache.height, Wd = cache.width;
    if (dy.channels != c_out() || dy.height != H || dy.width != Wd)
        throw ValidationError("Conv2d " + W.name + ": bad upstream gradient shape");
    Matrix dymat(H * Wd, c_out());
    for (int p = 0; p < H * Wd; ++p) {
        double* row = dymat.row(p);
        for (int co = 0; co < c_out(); ++co) {
            const double g = dy.a[static_cast<std::size_t>(co) * H * Wd + p];
            row[co] = g;
            b.grad[static_cast<std::size_t>(co)] += g;
        }
    }
    // dW += cols^T dY
    gemm_raw(c_in() * 9, c_out(), H * Wd, cache.cols.a.data(), c_in() * 9, true, dymat.a.data(),
             c_out(), false, W.grad.data(), c_out(), 1.0);
    // d cols = dY W^T, then col2im scatter-add
    Matrix dcols(H * Wd, c_in() * 9);
    gemm_raw(H * Wd, c_in() * 9, c_out(), dymat.a.data(), c_out(), false, W.data.data(), c_out(),
             true, dcols.a.data(), c_in() * 9, 0.0);
    GridTensor dx(c_in(), H, Wd);
    for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < Wd; ++xx) {
            const double* row = dcols.row(y * Wd + xx);
            int k = 0;
            for (int ci = 0; ci < c_in(); ++ci)
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx, ++k) {
                        const int iy = y + ky - 1, ix = xx + kx - 1;
                        if (iy >= 0 && iy < H && ix >= 0 && ix < Wd) dx.at(ci, iy, ix) += row[k];
                    }
        }
    return dx;
}

std::vector<ndnn::ParamTensor*> Conv2d::params() { return {&W, &b}; }

// ---------------------------------------------------------------------------
// ModelConfig
// ---------------------------------------------------------------------------

std::string ModelConfig::to_json() const {
    nlohmann::json j;
    j["kind"] = kind;
    j["in_features"] = in_features;
    j["out_features"] = out_features;
    j["width"] = width;
    j["msg_width"] = msg_width;
    j["mlp_hidden"] = mlp_hidden;
    j["n_hidden"] = n_hidden;
    j["n_edge_attr"] = n_edge_attr;
    j["slope"] = slope;
    j["velocity_from_coords"] = velocity_from_coords;
    j["coord_col_vx"] = coord_col_vx;
    j["coord_col_vy"] = coord_col_vy;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    ModelConfig cfg;
    try {
        nlohmann::json j = nlohmann::json::parse(text);
        cfg.kind = j.at("kind").get<std::string>();
        cfg.in_features = j.at("in_features").get<int>();
        cfg.out_features = j.at("out_features").get<int>();
        cfg.width = j.at("width").get<int>();
        cfg.msg_width = j.value("msg_width", cfg.width);
        cfg.mlp_hidden = j.value("mlp_hidden", cfg.width);
        cfg.n_hidden = j.at("n_hidden").get<int>();
        cfg.n_edge_attr = j.value("n_edge_attr", 5);
        cfg.slope = j.value("slope", 0.01);
        cfg.velocity_from_coords = j.value("velocity_from_coords", true);
        cfg.coord_col_vx = j.value("coord_col_vx", 3);
        cfg.coord_col_vy = j.value("coord_col_vy", 4);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("model architecture descriptor is malformed: ") +
                              e.what());
    }
    if (cfg.kind != "egcn" && cfg.kind != "gcn" && cfg.kind != "fcn")
        throw ValidationError("unknown model kind '" + cfg.kind +
                              "'; expected egcn, gcn, or fcn");
    if (cfg.in_features <= 0 || cfg.out_features <= 0 || cfg.width <= 0 || cfg.n_hidden <= 0)
        throw ValidationError("model dimensions must be positive");
    return cfg;
}

// ---------------------------------------------------------------------------
// EgcnModel
// ---------------------------------------------------------------------------

EgcnModel::EgcnModel(const ModelConfig& cfg)
    : cfg_(cfg), input_("egcn.input", cfg.in_features, cfg.width) {
    if (cfg_.kind != "egcn") throw ValidationError("EgcnModel built from kind " + cfg_.kind);
    if (cfg_.coord_col_vx < 0 || cfg_.coord_col_vx >= cfg_.in_features ||
        cfg_.coord_col_vy < 0 || cfg_.coord_col_vy >= cfg_.in_features)
        throw ValidationError("EgcnModel: coordinate seed columns out of range");
    if (cfg_.velocity_from_coords && cfg_.out_features < 3)
        throw ValidationError("EgcnModel: coordinate output head needs at least 3 outputs");
    layers_.reserve(static_cast<std::size_t>(cfg_.n_hidden));
    for (int l = 0; l < cfg_.n_hidden; ++l)
        layers_.emplace_back("egcn.layer" + std::to_string(l), cfg_.width, cfg_.msg_width,
                             cfg_.width, cfg_.mlp_hidden, cfg_.n_edge_attr);
    for (auto& layer : layers_) {
        layer.phi_e.slope = cfg_.slope;
        layer.phi_x.slope = cfg_.slope;
        layer.phi_h.slope = cfg_.slope;
    }
    const int head_out = cfg_.velocity_from_coords ? cfg_.out_features - 2 : cfg_.out_features;
    head_ = ndnn::Linear("egcn.head", cfg_.width, head_out);
}

void EgcnModel::init(Rng& rng) {
    input_.init(rng);
    for (auto& layer : layers_) layer.init(rng);
    head_.init(rng);
}

Matrix EgcnModel::forward(const mesh::GraphTopology& topo, const Matrix& feats,
                          const Matrix& edge_attr) {
    check_node_matrix("EgcnModel: features", feats, topo.n_nodes, cfg_.in_features);
    feats_ = feats;
    h0_ = input_.forward(feats);

    Matrix x0(topo.n_nodes, 2);
    for (int i = 0; i < topo.n_nodes; ++i) {
        x0(i, 0) = feats(i, cfg_.coord_col_vx);
        x0(i, 1) = feats(i, cfg_.coord_col_vy);
    }

    const std::size_t nl = layers_.size();
    hs_.assign(nl + 1, Matrix());
    xs_.assign(nl + 1, Matrix());
    caches_.assign(nl, EgcnCache());
    hs_[0] = h0_;
    xs_[0] = x0;
    for (std::size_t l = 0; l < nl; ++l)
        layers_[l].forward(topo, hs_[l], xs_[l], edge_attr, hs_[l + 1], xs_[l + 1], caches_[l]);

    const Matrix head_out = head_.forward(hs_[nl]);
    if (!cfg_.velocity_from_coords) return head_out;

    Matrix out(topo.n_nodes, cfg_.out_features);
    for (int i = 0; i < topo.n_nodes; ++i) {
        double* row = out.row(i);
        row[0] = xs_[nl](i, 0);
        row[1] = xs_[nl](i, 1);
        const double* hr = head_out.row(i);
        for (int c = 2; c < cfg_.out_features; ++c) row[c] = hr[c - 2];
    }
    return out;
}

Matrix EgcnModel::backward(const mesh::GraphTopology& topo, const Matrix& dpred) {
    check_node_matrix("EgcnModel backward", dpred, topo.n_nodes, cfg_.out_features);
    const std::size_t nl = layers_.size();

    Matrix dh, dx;
    if (cfg_.velocity_from_coords) {
        Matrix dhead(topo.n_nodes, cfg_.out_features - 2);
        dx = Matrix(topo.n_nodes, 2);
        for (int i = 0; i < topo.n_nodes; ++i) {
            dx(i, 0) = dpred(i, 0);
            dx(i, 1) = dpred(i, 1);
            for (int c = 2; c < cfg_.out_features; ++c) dhead(i, c - 2) = dpred(i, c);
        }
        dh = head_.backward(hs_[nl], dhead);
    } else {
        dh = head_.backward(hs_[nl], dpred);
        dx = Matrix(topo.n_nodes, 2);
    }

    for (std::size_t l = nl; l-- > 0;) {
        Matrix dh_prev, dx_prev;
        layers_[l].backward(topo, caches_[l], dh, dx, dh_prev, dx_prev);
        dh = std::move(dh_prev);
        dx = std::move(dx_prev);
    }

    Matrix dfeats = input_.backward(feats_, dh);
    for (int i = 0; i < topo.n_nodes; ++i) {
        dfeats(i, cfg_.coord_col_vx) += dx(i, 0);
        dfeats(i, cfg_.coord_col_vy) += dx(i, 1);
    }
    return dfeats;
}

std::vector<ndnn::ParamTensor*> EgcnModel::params() {
    std::vector<ndnn::ParamTensor*> out{&input_.W, &input_.b};
    for (auto& layer : layers_)
        for (auto* p : layer.params()) out.push_back(p);
    out.push_back(&head_.W);
    out.push_back(&head_.b);
    return out;
}

// ---------------------------------------------------------------------------
// GcnModel
// ---------------------------------------------------------------------------

GcnModel::GcnModel(const ModelConfig& cfg)
    : cfg_(cfg), input_("gcn.input", cfg.in_features, cfg.width),
      output_("gcn.output", cfg.width, cfg.out_features) {
    if (cfg_.kind != "gcn") throw ValidationError("GcnModel built from kind " + cfg_.kind);
    layers_.reserve(static_cast<std::size_t>(cfg_.n_hidden));
    for (int l = 0; l < cfg_.n_hidden; ++l) {
        layers_.emplace_back("gcn.layer" + std::to_string(l), cfg_.width, cfg_.width, true);
        layers_.back().slope = cfg_.slope;
    }
}

void GcnModel::init(Rng& rng) {
    input_.init(rng);
    for (auto& layer : layers_) layer.init(rng);
    output_.init(rng);
}

Matrix GcnModel::forward(const mesh::GraphTopology& topo, const Matrix& feats) {
    check_node_matrix("GcnModel: features", feats, topo.n_nodes, cfg_.in_features);
    feats_ = feats;
    h0_ = input_.forward(feats);
    const std::size_t nl = layers_.size();
    hs_.assign(nl + 1, Matrix());
    caches_.assign(nl, GcnCache());
    hs_[0] = h0_;
    for (std::size_t l = 0; l < nl; ++l)
        hs_[l + 1] = layers_[l].forward(topo, hs_[l], caches_[l]);
    last_hidden_ = hs_[nl];
    return output_.forward(last_hidden_);
}

Matrix GcnModel::backward(const mesh::GraphTopology& topo, const Matrix& dpred) {
    Matrix dh = output_.backward(last_hidden_, dpred);
    for (std::size_t l = layers_.size(); l-- > 0;)
        dh = layers_[l].backward(topo, caches_[l], dh);
    return input_.backward(feats_, dh);
}

std::vector<ndnn::ParamTensor*> GcnModel::params() {
    std::vector<ndnn::ParamTensor*> out{&input_.W, &input_.b};
    for (auto& layer : layers_)
        for (auto* p : layer.params()) out.push_back(p);
    out.push_back(&output_.W);
    out.push_back(&output_.b);
    return out;
}

// ---------------------------------------------------------------------------
// FcnModel
// ---------------------------------------------------------------------------

namespace {

void lrelu_grid(const GridTensor& z, GridTensor& y, double slope) {
    y = z;
    for (double& v : y.a) v = ndnn::leaky_relu(v, slope);
}

void lrelu_grid_backward(const GridTensor& z, GridTensor& dy, double slope) {
    for (std::size_t k = 0; k < dy.a.size(); ++k)
        dy.a[k] *= ndnn::leaky_relu_deriv(z.a[k], slope);
}

} // namespace

FcnModel::FcnModel(const ModelConfig& cfg)
    : cfg_(cfg), input_("fcn.input", cfg.in_features, cfg.width),
      output_("fcn.output", cfg.width, cfg.out_features) {
    if (cfg_.kind != "fcn") throw ValidationError("FcnModel built from kind " + cfg_.kind);
    hidden_.reserve(static_cast<std::size_t>(cfg_.n_hidden));
    for (int l = 0; l < cfg_.n_hidden; ++l)
        hidden_.emplace_back("fcn.hidden" + std::to_string(l), cfg_.width, cfg_.width);
}

void FcnModel::init(Rng& rng) {
    input_.init(rng);
    for (auto& conv : hidden_) conv.init(rng);
    output_.init(rng);
}

GridTensor FcnModel::forward(const GridTensor& grids) {
    if (grids.channels != cfg_.in_features)
        throw ValidationError("FcnModel: input has " + std::to_string(grids.channels) +
                              " channels, expected " + std::to_string(cfg_.in_features));
    const std::size_t nl = hidden_.size();
    hid_caches_.assign(nl, Conv2dCache());
    pre_act_.assign(nl, GridTensor());
    GridTensor g = input_.forward(grids, in_cache_);
    for (std::size_t l = 0; l < nl; ++l) {
        pre_act_[l] = hidden_[l].forward(g, hid_caches_[l]);
        lrelu_grid(pre_act_[l], g, cfg_.slope);
    }
    return output_.forward(g, out_cache_);
}

GridTensor FcnModel::backward(const GridTensor& dpred) {
    GridTensor dg = output_.backward(out_cache_, dpred);
    for (std::size_t l = hidden_.size(); l-- > 0;) {
        lrelu_grid_backward(pre_act_[l], dg, cfg_.slope);
        dg = hidden_[l].backward(hid_caches_[l], dg);
    }
    return input_.backward(in_cache_, dg);
}

std::vector<ndnn::ParamTensor*> FcnModel::params() {
    std::vector<ndnn::ParamTensor*> out{&input_.W, &input_.b};
    for (auto& conv : hidden_) {
        out.push_back(&conv.W);
        out.push_back(&conv.b);
    }
    out.push_back(&output_.W);
    out.push_back(&output_.b);
    return out;
}

} // namespace icegraph::gnn
