#include "icegraph/ndnn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "icegraph/binio.hpp"
#include "icegraph/errors.hpp"

namespace icegraph::ndnn {

ParamTensor::ParamTensor(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
    std::size_t total = 1;
    for (int d : shape) {
        if (d <= 0) throw ValidationError("ParamTensor " + name + ": non-positive extent");
        total *= static_cast<std::size_t>(d);
    }
    data.assign(total, 0.0);
    grad.assign(total, 0.0);
    adam_m.assign(total, 0.0);
    adam_v.assign(total, 0.0);
}

void glorot_init(ParamTensor& p, int fan_in, int fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : p.data) v = rng.uniform(-bound, bound);
}

double leaky_relu(double x, double slope) { return x >= 0.0 ? x : slope * x; }
double leaky_relu_deriv(double x, double slope) { return x >= 0.0 ? 1.0 : slope; }

void leaky_relu_forward(const Matrix& x, Matrix& y, double slope) {
    y = x;
    for (double& v : y.a) v = leaky_relu(v, slope);
}

void leaky_relu_backward(const Matrix& x_pre, const Matrix& dy, Matrix& dx, double slope) {
    if (!x_pre.same_shape(dy))
        throw ValidationError("leaky_relu_backward: shape mismatch");
    dx = dy;
    for (std::size_t i = 0; i < dx.a.size(); ++i) dx.a[i] *= leaky_relu_deriv(x_pre.a[i], slope);
}

Linear::Linear(const std::string& name, int in, int out)
    : W(name + ".W", {in, out}), b(name + ".b", {out}) {}

void Linear::init(Rng& rng) {
    glorot_init(W, in_features(), out_features(), rng);
    std::fill(b.data.begin(), b.data.end(), 0.0);
}

Matrix Linear::forward(const Matrix& x) const {
    if (x.cols != in_features())
        throw ValidationError("Linear " + W.name + ": input has " + std::to_string(x.cols) +
                              " features, expected " + std::to_string(in_features()));
    const int in = in_features(), out = out_features();
    Matrix y(x.rows, out);
    gemm_raw(x.rows, out, in, x.a.data(), in, false, W.data.data(), out, false, y.a.data(), out,
             0.0);
    for (int r = 0; r < y.rows; ++r) {
        double* yr = y.row(r);
        for (int c = 0; c < out; ++c) yr[c] += b.data[c];
    }
    return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy) {
    if (dy.rows != x.rows || dy.cols != out_features())
        throw ValidationError("Linear " + W.name + ": bad upstream gradient shape");
    const int in = in_features(), out = out_features();
    // dW += x^T dy
    gemm_raw(in, out, x.rows, x.a.data(), in, true, dy.a.data(), out, false, W.grad.data(), out,
             1.0);
    // db += column sums of dy
    for (int r = 0; r < dy.rows; ++r) {
        const double* dr = dy.row(r);
        for (int c = 0; c < out; ++c) b.grad[c] += dr[c];
    }
    // dx = dy W^T
    Matrix dx(dy.rows, in);
    gemm_raw(dy.rows, in, out, dy.a.data(), out, false, W.data.data(), out, true, dx.a.data(), in,
             0.0);
    return dx;
}

Mlp::Mlp(const std::string& name, int in, int hidden, int out)
    : fc1(name + ".fc1", in, hidden), fc2(name + ".fc2", hidden, out) {}

void Mlp::init(Rng& rng) {
    fc1.init(rng);
    fc2.init(rng);
}

std::size_t Mlp::param_count() const {
    return fc1.W.size() + fc1.b.size() + fc2.W.size() + fc2.b.size();
}

Matrix Mlp::forward(const Matrix& x, MlpCache& cache) const {
    cache.x = x;
    cache.z1 = fc1.forward(x);
    leaky_relu_forward(cache.z1, cache.a1, slope);
    return fc2.forward(cache.a1);
}

Matrix Mlp::backward(const MlpCache& cache, const Matrix& dy) {
    const Matrix da1 = fc2.backward(cache.a1, dy);
    Matrix dz1;
    leaky_relu_backward(cache.z1, da1, dz1, slope);
    return fc1.backward(cache.x, dz1);
}

std::vector<ParamTensor*> Mlp::params() { return {&fc1.W, &fc1.b, &fc2.W, &fc2.b}; }

double mse_loss(const Matrix& pred, const Matrix& target) {
    if (!pred.same_shape(target))
        throw ValidationError("mse_loss: pred is " + std::to_string(pred.rows) + "x" +
                              std::to_string(pred.cols) + ", target " + std::to_string(target.rows) +
                              "x" + std::to_string(target.cols));
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.a.size(); ++i) {
        const double d = pred.a[i] - target.a[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.a.size());
}

Matrix mse_backward(const Matrix& pred, const Matrix& target) {
    if (!pred.same_shape(target)) throw ValidationError("mse_backward: shape mismatch");
    Matrix g(pred.rows, pred.cols);
    const double scale = 2.0 / static_cast<double>(pred.a.size());
    for (std::size_t i = 0; i < pred.a.size(); ++i) g.a[i] = scale * (pred.a[i] - target.a[i]);
    return g;
}

void adam_step(ParamTensor& p, const AdamConfig& cfg) {
    for (std::size_t i = 0; i < p.grad.size(); ++i) {
        if (!std::isfinite(p.grad[i]))
            throw NumericError("non-finite gradient in parameter " + p.name + " at index " +
                               std::to_string(i));
    }
    p.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.step));
    for (std::size_t i = 0; i < p.data.size(); ++i) {
        const double g = p.grad[i];
        p.adam_m[i] = cfg.beta1 * p.adam_m[i] + (1.0 - cfg.beta1) * g;
        p.adam_v[i] = cfg.beta2 * p.adam_v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = p.adam_m[i] / bc1;
        const double v_hat = p.adam_v[i] / bc2;
        p.data[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

void adam_step(const std::vector<ParamTensor*>& params, const AdamConfig& cfg) {
    for (ParamTensor* p : params) adam_step(*p, cfg);
}

GradCheckReport grad_check(const std::vector<ParamTensor*>& params,
                           const std::function<double()>& loss,
                           const std::function<void()>& compute_grads, double tol, double step,
                           int max_probes_per_tensor, std::uint64_t probe_seed) {
    GradCheckReport report;
    report.tol = tol;

    compute_grads();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (ParamTensor* p : params) analytic.push_back(p->grad);

    Rng rng(probe_seed);
    // Near-zero gradients are compared on an absolute scale instead of blowing
    // up the relative error.
    const double scale_floor = 1e-4;

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        ParamTensor& p = *params[pi];
        GradCheckEntry entry;
        entry.param = p.name;

        std::vector<std::size_t> idx(p.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        if (max_probes_per_tensor > 0 &&
            p.size() > static_cast<std::size_t>(max_probes_per_tensor)) {
            rng.shuffle(idx);
            idx.resize(static_cast<std::size_t>(max_probes_per_tensor));
        }

        for (std::size_t i : idx) {
            const double saved = p.data[i];
            p.data[i] = saved + step;
            const double lp = loss();
            p.data[i] = saved - step;
            const double lm = loss();
            p.data[i] = saved;
            const double numeric = (lp - lm) / (2.0 * step);
            const double a = analytic[pi][i];
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), scale_floor});
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_index = i;
            }
            ++entry.checked;
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    report.pass = report.max_rel_err < tol;
    return report;
}

namespace {
constexpr std::uint32_t kCheckpointMagic = 0x4b43444eu; // "NDCK"
}

void save_checkpoint(const std::string& path, const std::string& arch_json,
                     const std::vector<const ParamTensor*>& params) {
    BinWriter w(path);
    w.u32(kCheckpointMagic);
    w.u32(1); // version
    w.str(arch_json);
    w.u64(params.size());
    for (const ParamTensor* p : params) {
        w.str(p->name);
        w.u32(static_cast<std::uint32_t>(p->shape.size()));
        for (int d : p->shape) w.i64(d);
        w.f64_array(p->data.data(), p->data.size());
    }
    w.close();
}

Checkpoint load_checkpoint(const std::string& path) {
    BinReader r(path);
    if (r.u32() != kCheckpointMagic) throw ValidationError("not a checkpoint file: " + path);
    Checkpoint ck;
    ck.version = r.u32();
    if (ck.version != 1)
        throw ValidationError("unsupported checkpoint version " + std::to_string(ck.version));
    ck.arch_json = r.str();
    const std::uint64_t n = r.u64();
    for (std::uint64_t t = 0; t < n; ++t) {
        CheckpointTensor ct;
        ct.name = r.str();
        const std::uint32_t ndim = r.u32();
        std::size_t total = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            ct.shape.push_back(static_cast<int>(r.i64()));
            total *= static_cast<std::size_t>(ct.shape.back());
        }
        ct.data.resize(total);
        r.f64_array(ct.data.data(), total);
        ck.tensors.push_back(std::move(ct));
    }
    return ck;
}

void apply_checkpoint(const Checkpoint& ck, const std::vector<ParamTensor*>& params) {
    for (ParamTensor* p : params) {
        const CheckpointTensor* found = nullptr;
        for (const auto& ct : ck.tensors) {
            if (ct.name == p->name) {
                found = &ct;
                break;
            }
        }
        if (!found) throw ValidationError("checkpoint is missing tensor " + p->name);
        if (found->shape != p->shape)
            throw ValidationError("checkpoint tensor " + p->name + " has mismatched shape");
        p->data = found->data;
    }
}

} // namespace icegraph::ndnn
