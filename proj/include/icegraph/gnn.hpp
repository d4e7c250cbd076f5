#pragma once

#include <string>
#include <vector>

#include "icegraph/matrix.hpp"
#include "icegraph/mesh.hpp"
#include "icegraph/ndnn.hpp"
#include "icegraph/rng.hpp"

namespace icegraph::gnn {

// ---------------------------------------------------------------------------
// Equivariant graph layer
//
// Message passing over the directed edges of a GraphTopology:
//   m_ij  = phi_e(h_i, h_j, |x_i - x_j|^2, a_ij)
//   x'_i  = x_i + C_i * sum_j (x_i - x_j) * phi_x(m_ij)
//   m_i   = C_i * sum_j m_ij,   C_i = 1 / |N(i)|
//   h'_i  = phi_h(h_i, m_i)
// Isolated nodes (no neighbors) keep x'_i = x_i and aggregate m_i = 0.
// The coordinate update is equivariant under rotations/translations of x.
// ---------------------------------------------------------------------------

struct EgcnCache {
    Matrix h, x;             // layer inputs (N x F, N x 2)
    Matrix edge_in;          // E x (2F + 1 + A): [h_i | h_j | dist2 | a_ij]
    ndnn::MlpCache e_cache;  // phi_e internals
    Matrix msg;              // E x F_msg
    ndnn::MlpCache x_cache;  // phi_x internals
    Matrix coord_w;          // E x 1, scalar coordinate weights
    Matrix m_agg;            // N x F_msg, C-normalized message sums
    Matrix h_in;             // N x (F + F_msg): [h | m_agg]
    ndnn::MlpCache h_cache;  // phi_h internals
};

struct EgcnLayer {
    ndnn::Mlp phi_e; // 2F + 1 + A -> hidden -> F_msg
    ndnn::Mlp phi_x; // F_msg -> hidden -> 1
    ndnn::Mlp phi_h; // F + F_msg -> hidden -> F_out

    EgcnLayer() = default;
    EgcnLayer(const std::string& name, int f_in, int f_msg, int f_out, int hidden,
              int n_edge_attr);
    void init(Rng& rng);

    int f_in() const { return phi_h.in_features() - phi_e.out_features(); }
    int f_msg() const { return phi_e.out_features(); }
    int f_out() const { return phi_h.out_features(); }
    int n_edge_attr() const { return phi_e.in_features() - 2 * f_in() - 1; }

    /// h: N x F_in, x: N x 2, edge_attr: one row per directed edge of `topo`
    /// (aligned with topo.edge_src/edge_dst). Fills h_out (N x F_out),
    /// x_out (N x 2) and the cache for backward.
    void forward(const mesh::GraphTopology& topo, const Matrix& h, const Matrix& x,
                 const Matrix& edge_attr, Matrix& h_out, Matrix& x_out, EgcnCache& cache) const;

    /// Accumulates parameter gradients; writes fresh input gradients.
    void backward(const mesh::GraphTopology& topo, const EgcnCache& cache, const Matrix& dh_out,
                  const Matrix& dx_out, Matrix& dh_in, Matrix& dx_in);

    std::vector<ndnn::ParamTensor*> params();
};

// ---------------------------------------------------------------------------
// Graph convolution with symmetric degree normalization (self-loops included):
//   h'_i = act( sum_{j in N(i) ∪ {i}} h_j W / (sqrt(deg~ i) sqrt(deg~ j)) )
// with deg~ = degree + 1. The output layer of a model runs without activation.
// ---------------------------------------------------------------------------

struct GcnCache {
    Matrix agg; // normalized neighborhood sum of the input (N x F_in)
    Matrix z;   // pre-activation (N x F_out)
};

struct GcnLayer {
    ndnn::ParamTensor W; // {F_in, F_out}, no bias
    bool activation = true;
    double slope = 0.01;

    GcnLayer() = default;
    GcnLayer(const std::string& name, int f_in, int f_out, bool act = true);
    void init(Rng& rng);

    int f_in() const { return W.shape[0]; }
    int f_out() const { return W.shape[1]; }

    Matrix forward(const mesh::GraphTopology& topo, const Matrix& h, GcnCache& cache) const;
    Matrix backward(const mesh::GraphTopology& topo, const GcnCache& cache, const Matrix& dy);

    std::vector<ndnn::ParamTensor*> params();
};

/// The symmetric-normalized propagation sum by itself (self-adjoint).
Matrix gcn_propagate(const mesh::GraphTopology& topo, const Matrix& h);

// ---------------------------------------------------------------------------
// 3x3 same-size convolution (zero padding, cross-correlation) via im2col
// ---------------------------------------------------------------------------

struct Conv2dCache {
    int height = 0, width = 0;
    Matrix cols; // (H*W) x (C_in*9)
};

struct Conv2d {
    ndnn::ParamTensor W; // {C_in*9, C_out}
    ndnn::ParamTensor b; // {C_out}

    Conv2d() = default;
    /// kernel_size must be 3; anything else is a configuration error.
    Conv2d(const std::string& name, int c_in, int c_out, int kernel_size = 3);
    void init(Rng& rng);

    int c_in() const { return W.shape[0] / 9; }
    int c_out() const { return W.shape[1]; }

    GridTensor forward(const GridTensor& x, Conv2dCache& cache) const;
    /// Accumulates dW/db, returns the input gradient.
    GridTensor backward(const Conv2dCache& cache, const GridTensor& dy);

    std::vector<ndnn::ParamTensor*> params();
};

// ---------------------------------------------------------------------------
// Model configuration (embedded in checkpoints as the architecture descriptor)
// ---------------------------------------------------------------------------

struct ModelConfig {
    std::string kind = "egcn"; // "egcn" | "gcn" | "fcn"
    int in_features = 10;
    int out_features = 4;
    int width = 128;      // hidden feature width (all models)
    int msg_width = 128;  // EGCN message width
    int mlp_hidden = 128; // hidden width inside the EGCN phi MLPs
    int n_hidden = 5;     // number of hidden layers
    int n_edge_attr = 5;  // EGCN edge-attribute count
    double slope = 0.01;  // LeakyReLU slope
    // EGCN output head: velocities read from the coordinate embedding
    // (thickness/mask from a linear map on h). When false, all four outputs
    // come from the linear head.
    bool velocity_from_coords = true;
    int coord_col_vx = 3; // input feature columns seeding the coordinates
    int coord_col_vy = 4;

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

// ---------------------------------------------------------------------------
// Emulator models: input layer, n_hidden hidden layers, output layer.
// Graph models map node features N x in_features -> N x out_features;
// the grid model maps in_features x H x W -> out_features x H x W.
// ---------------------------------------------------------------------------

class EgcnModel {
public:
    explicit EgcnModel(const ModelConfig& cfg);
    void init(Rng& rng);

    /// feats: N x in_features; edge_attr: per directed edge of topo.
    Matrix forward(const mesh::GraphTopology& topo, const Matrix& feats, const Matrix& edge_attr);
    /// dpred: gradient w.r.t. the forward output; returns d feats.
    Matrix backward(const mesh::GraphTopology& topo, const Matrix& dpred);

    std::vector<ndnn::ParamTensor*> params();
    const ModelConfig& config() const { return cfg_; }

private:
    ModelConfig cfg_;
    ndnn::Linear input_;
    std::vector<EgcnLayer> layers_;
    ndnn::Linear head_;

    // forward caches for backward
    Matrix feats_, h0_;
    std::vector<Matrix> hs_, xs_; // per-layer outputs (index 0 = input embedding)
    std::vector<EgcnCache> caches_;
};

class GcnModel {
public:
    explicit GcnModel(const ModelConfig& cfg);
    void init(Rng& rng);

    Matrix forward(const mesh::GraphTopology& topo, const Matrix& feats);
    Matrix backward(const mesh::GraphTopology& topo, const Matrix& dpred);

    std::vector<ndnn::ParamTensor*> params();
    const ModelConfig& config() const { return cfg_; }

private:
    ModelConfig cfg_;
    ndnn::Linear input_;
    std::vector<GcnLayer> layers_;
    ndnn::Linear output_;

    Matrix feats_, h0_;
    std::vector<Matrix> hs_;
    std::vector<GcnCache> caches_;
    Matrix last_hidden_;
};

class FcnModel {
public:
    explicit FcnModel(const ModelConfig& cfg);
    void init(Rng& rng);

    GridTensor forward(const GridTensor& grids);
    GridTensor backward(const GridTensor& dpred);

    std::vector<ndnn::ParamTensor*> params();
    const ModelConfig& config() const { return cfg_; }

private:
    ModelConfig cfg_;
    Conv2d input_;
    std::vector<Conv2d> hidden_;
    Conv2d output_;

    Conv2dCache in_cache_;
    std::vector<Conv2dCache> hid_caches_;
    std::vector<GridTensor> pre_act_; // hidden pre-activations for LeakyReLU'
    Conv2dCache out_cache_;
};

} // namespace icegraph::gnn
