#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "icegraph/matrix.hpp"
#include "icegraph/rng.hpp"

namespace icegraph::ndnn {

/// A trainable dense array: value buffer plus gradient and Adam moment
/// buffers, all sharing one shape. `step` is the per-tensor Adam step counter.
struct ParamTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;
    std::vector<double> adam_m;
    std::vector<double> adam_v;
    long step = 0;

    ParamTensor() = default;
    ParamTensor(std::string n, std::vector<int> s);

    std::size_t size() const { return data.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

    /// Rows/cols of a 2-D tensor ({rows, cols}); 1-D tensors are 1 x n.
    int rows() const { return shape.size() == 2 ? shape[0] : 1; }
    int cols() const { return shape.size() == 2 ? shape[1] : static_cast<int>(size()); }
};

/// Glorot-uniform init: entries in +/- sqrt(6 / (fan_in + fan_out)).
void glorot_init(ParamTensor& p, int fan_in, int fan_out, Rng& rng);

// ---------------------------------------------------------------------------
// Elementwise activation
// ---------------------------------------------------------------------------

/// y = x for x >= 0, slope * x otherwise. The subgradient at 0 is taken as 1.
double leaky_relu(double x, double slope = 0.01);
double leaky_relu_deriv(double x, double slope = 0.01);

void leaky_relu_forward(const Matrix& x, Matrix& y, double slope = 0.01);
/// dx = dy .* lrelu'(x_pre), where x_pre is the cached pre-activation.
void leaky_relu_backward(const Matrix& x_pre, const Matrix& dy, Matrix& dx, double slope = 0.01);

// ---------------------------------------------------------------------------
// Linear layer
// ---------------------------------------------------------------------------

/// y = x W + b applied to a batch of row vectors.
struct Linear {
    ParamTensor W; // {in, out}
    ParamTensor b; // {out}

    Linear() = default;
    Linear(const std::string& name, int in, int out);
    void init(Rng& rng);

    int in_features() const { return W.shape[0]; }
    int out_features() const { return W.shape[1]; }

    Matrix forward(const Matrix& x) const;
    /// Accumulates dW, db; returns dx. `x` is the input the forward pass saw.
    Matrix backward(const Matrix& x, const Matrix& dy);
};

// ---------------------------------------------------------------------------
// Two-layer perceptron: in -> hidden -> out, LeakyReLU after the hidden layer
// ---------------------------------------------------------------------------

struct MlpCache {
    Matrix x;  // input batch
    Matrix z1; // hidden pre-activation
    Matrix a1; // hidden activation
};

struct Mlp {
    Linear fc1;
    Linear fc2;
    double slope = 0.01;

    Mlp() = default;
    Mlp(const std::string& name, int in, int hidden, int out);
    void init(Rng& rng);

    int in_features() const { return fc1.in_features(); }
    int hidden_features() const { return fc1.out_features(); }
    int out_features() const { return fc2.out_features(); }
    std::size_t param_count() const;

    Matrix forward(const Matrix& x, MlpCache& cache) const;
    Matrix backward(const MlpCache& cache, const Matrix& dy);

    std::vector<ParamTensor*> params();
};

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Mean of squared differences over all elements.
double mse_loss(const Matrix& pred, const Matrix& target);
/// d loss / d pred = 2 (pred - target) / count.
Matrix mse_backward(const Matrix& pred, const Matrix& target);

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One Adam update with bias correction; increments the tensor's step counter.
/// Throws NumericError if the gradient contains a non-finite value.
void adam_step(ParamTensor& p, const AdamConfig& cfg);
void adam_step(const std::vector<ParamTensor*>& params, const AdamConfig& cfg);

// ---------------------------------------------------------------------------
// Finite-difference gradient verification
// ---------------------------------------------------------------------------

struct GradCheckEntry {
    std::string param;
    int checked = 0;
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    double tol = 0.0;
    bool pass = false;
    std::vector<GradCheckEntry> entries;
};

/// Compares analytic gradients against central finite differences.
///
/// `loss` runs a forward pass and returns the scalar objective; `compute_grads`
/// zeroes all gradients and runs forward + backward. Relative error uses a
/// 1e-4 scale floor so near-zero entries are compared absolutely. When
/// `max_probes_per_tensor` > 0, at most that many entries per tensor are
/// probed (chosen deterministically from `probe_seed`); 0 probes every entry.
GradCheckReport grad_check(const std::vector<ParamTensor*>& params,
                           const std::function<double()>& loss,
                           const std::function<void()>& compute_grads, double tol,
                           double step = 1e-6, int max_probes_per_tensor = 0,
                           std::uint64_t probe_seed = 12345);

// ---------------------------------------------------------------------------
// Checkpoint file format
// ---------------------------------------------------------------------------

struct CheckpointTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<double> data;
};

struct Checkpoint {
    std::uint32_t version = 1;
    std::string arch_json; // architecture descriptor, interpreted by gnn
    std::vector<CheckpointTensor> tensors;
};

void save_checkpoint(const std::string& path, const std::string& arch_json,
                     const std::vector<const ParamTensor*>& params);
Checkpoint load_checkpoint(const std::string& path);
/// Copies checkpoint values into matching ParamTensors (by name; shapes must
/// agree). Throws ValidationError on missing or mismatched tensors.
void apply_checkpoint(const Checkpoint& ck, const std::vector<ParamTensor*>& params);

} // namespace icegraph::ndnn
