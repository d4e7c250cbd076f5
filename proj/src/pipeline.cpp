#include "icegraph/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "icegraph/binio.hpp"
#include "icegraph/errors.hpp"

namespace icegraph::pipeline {

namespace {

constexpr std::uint32_t kDatasetMagic = 0x53444749; // "IGDS" little-endian
constexpr std::uint32_t kDatasetVersion = 2;

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

bool param_in(const std::vector<double>& list, double v) {
    return std::find(list.begin(), list.end(), v) != list.end();
}

} // namespace

// ---------------------------------------------------------------------------
// Normalization bounds
// ---------------------------------------------------------------------------

NormBounds NormBounds::from_config(const sim::SimConfig& cfg, const std::vector<double>& params) {
    if (params.empty()) throw ValidationError("normalization bounds need at least one parameter");

    NormBounds b;
    const double duration = cfg.n_steps * cfg.dt;
    const double smb_lo = std::min(cfg.smb_inland, cfg.smb_front) - 3.0 * cfg.smb_noise;
    const double smb_hi = std::max(cfg.smb_inland, cfg.smb_front) + 3.0 * cfg.smb_noise;
    const double bed_hi = std::max(cfg.bed_inland, cfg.bed_front) + 3.0 * cfg.bed_noise;
    const double bed_lo =
        std::min(cfg.bed_inland, cfg.bed_front) - cfg.channel_depth - 3.0 * cfg.bed_noise;
    // Thickness headroom: seeded noise plus accumulation over the run plus a
    // 25% allowance for transport pile-up.
    const double thick_hi =
        1.25 * (std::max(cfg.thickness_inland, cfg.thickness_front) + 3.0 * cfg.thickness_noise) +
        std::max(0.0, std::max(cfg.smb_inland, cfg.smb_front)) * duration;
    const double surf_hi = bed_hi + thick_hi;

    double p_lo = params[0], p_hi = params[0];
    for (double p : params) {
        p_lo = std::min(p_lo, p);
        p_hi = std::max(p_hi, p);
    }
    if (p_lo == p_hi) { // a single swept value still needs a non-degenerate range
        const double w = std::max(1.0, 0.05 * std::abs(p_lo));
        p_lo -= w;
        p_hi += w;
    }

    b.input[kInParam] = {p_lo, p_hi};
    b.input[kInTime] = {0.0, duration};
    b.input[kInSmb] = {smb_lo, smb_hi};
    b.input[kInVx0] = {-cfg.v_cap, cfg.v_cap};
    b.input[kInVy0] = {-cfg.v_cap, cfg.v_cap};
    b.input[kInSurface0] = {0.0, surf_hi};
    b.input[kInBed] = {bed_lo, bed_hi};
    b.input[kInThickness0] = {0.0, thick_hi};
    b.input[kInMask0] = {0.0, 1.0};
    if (cfg.extra_feature == "front_distance") {
        // Signed distance to the initial front; bounded by the domain diagonal.
        const double reach = std::hypot(cfg.domain_x, cfg.domain_y);
        b.input[kInExtra] = {-reach, reach};
    } else if (cfg.extra_feature == "constant") {
        b.input[kInExtra] = {0.0, 1.0};
    } else {
        throw ValidationError("unknown extra_feature '" + cfg.extra_feature + "'");
    }

    b.target[kOutVx] = {-cfg.v_cap, cfg.v_cap};
    b.target[kOutVy] = {-cfg.v_cap, cfg.v_cap};
    b.target[kOutThickness] = {0.0, thick_hi};
    b.target[kOutMask] = {0.0, 1.0};

    const double dt_save = cfg.dt * cfg.save_every;
    const double accel_hi = 2.0 * cfg.v_cap / dt_save;
    b.edge_attr[mesh::EdgeAttributes::kDistance] = {0.0, 2.5 * cfg.edge_coarse};
    b.edge_attr[mesh::EdgeAttributes::kSurfaceSlope] = {-2.0, 2.0};
    b.edge_attr[mesh::EdgeAttributes::kBaseSlope] = {-2.0, 2.0};
    b.edge_attr[mesh::EdgeAttributes::kAccelX] = {-accel_hi, accel_hi};
    b.edge_attr[mesh::EdgeAttributes::kAccelY] = {-accel_hi, accel_hi};
    return b;
}

std::uint64_t NormBounds::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const VarBounds& v) {
        h = fnv1a64(&v.lo, sizeof v.lo, h);
        h = fnv1a64(&v.hi, sizeof v.hi, h);
    };
    for (const auto& v : input) mix(v);
    for (const auto& v : target) mix(v);
    for (const auto& v : edge_attr) mix(v);
    return h;
}

// ---------------------------------------------------------------------------
// Dataset construction
// ---------------------------------------------------------------------------

namespace {

sim::SimState const& state_at(const sim::TrajectoryFile& tr, int t) {
    return tr.result.states[static_cast<std::size_t>(t)];
}

mesh::NodeFields fields_of(const sim::SimState& st) {
    return {st.surface, st.bed, st.vx, st.vy};
}

void check_finite(const sim::SimState& st, double param, int t) {
    auto scan = [&](const std::vector<double>& v, const char* name) {
        for (double x : v)
            if (!std::isfinite(x))
                throw ValidationError("trajectory param=" + format_double(param) + " state " +
                                      std::to_string(t) + ": non-finite " + name + " value");
    };
    scan(st.thickness, "thickness");
    scan(st.vx, "vx");
    scan(st.vy, "vy");
    scan(st.surface, "surface");
    scan(st.bed, "bed");
    scan(st.smb, "smb");
}

Matrix normalize_attrs(const Matrix& raw, const NormBounds& b) {
    Matrix out(raw.rows, raw.cols);
    for (int r = 0; r < raw.rows; ++r)
        for (int c = 0; c < raw.cols; ++c)
            out(r, c) = normalize_value(raw(r, c), b.edge_attr[static_cast<std::size_t>(c)]);
    return out;
}

// Signed Euclidean distance from each node to the nearest node of the other
// ice phase: positive under ice, negative in open water. A single-phase mask
// has no front, so every node gets +/-fallback according to its own phase.
std::vector<double> front_distance(const mesh::TriMesh& m, const std::vector<std::uint8_t>& mask,
                                   double fallback) {
    const int n = m.n_nodes();
    std::vector<int> ice, water;
    for (int i = 0; i < n; ++i)
        (mask[static_cast<std::size_t>(i)] ? ice : water).push_back(i);

    std::vector<double> d(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        const bool has_ice = mask[static_cast<std::size_t>(i)] != 0;
        const std::vector<int>& other = has_ice ? water : ice;
        double best = fallback * fallback;
        for (int j : other) {
            const double dx = m.x[static_cast<std::size_t>(i)] - m.x[static_cast<std::size_t>(j)];
            const double dy = m.y[static_cast<std::size_t>(i)] - m.y[static_cast<std::size_t>(j)];
            best = std::min(best, dx * dx + dy * dy);
        }
        d[static_cast<std::size_t>(i)] = (has_ice ? 1.0 : -1.0) * std::sqrt(best);
    }
    return d;
}

} // namespace

Dataset build_dataset(const mesh::TriMesh& m, const mesh::GraphTopology& topo,
                      const std::vector<sim::TrajectoryFile>& trajectories,
                      const sim::SimConfig& cfg) {
    if (trajectories.empty()) throw ValidationError("build_dataset: no trajectories");
    const std::uint64_t fp = mesh_hash(m);
    const std::size_t n_states = trajectories[0].result.states.size();
    std::vector<double> params;
    for (const auto& tr : trajectories) {
        if (tr.mesh_fingerprint != fp)
            throw ValidationError("trajectory param=" + format_double(tr.params.value) +
                                  " was produced on a different mesh");
        if (tr.result.states.size() != n_states)
            throw ValidationError("trajectory param=" + format_double(tr.params.value) +
                                  " has a different number of saved states");
        if (tr.params.scenario != cfg.scenario)
            throw ValidationError("trajectory param=" + format_double(tr.params.value) +
                                  " ran scenario '" + tr.params.scenario +
                                  "', dataset expects '" + cfg.scenario + "'");
        for (const auto& st : tr.result.states)
            if (st.n_nodes() != m.n_nodes())
                throw ValidationError("trajectory node count does not match the mesh");
        params.push_back(tr.params.value);
    }

    Dataset ds;
    ds.scenario = cfg.scenario;
    ds.mesh_fingerprint = fp;
    ds.n_nodes = m.n_nodes();
    ds.bounds = NormBounds::from_config(cfg, params);
    ds.scenario_params = params;
    ds.edge_attr_mode = cfg.edge_attr_mode;
    if (ds.edge_attr_mode != "initial" && ds.edge_attr_mode != "per_step")
        throw ValidationError("unknown edge_attr_mode '" + ds.edge_attr_mode + "'");
    ds.extra_feature = cfg.extra_feature; // from_config above rejected unknown modes

    const double dt_save = cfg.dt * cfg.save_every;
    const int n = m.n_nodes();

    for (std::size_t s = 0; s < trajectories.size(); ++s) {
        const auto& tr = trajectories[s];
        const sim::SimState& init = state_at(tr, 0);
        check_finite(init, tr.params.value, 0);

        // Edge attributes: "initial" shares one set per trajectory (zero
        // accelerations since prev == current); "per_step" derives one set per
        // sample from the previous saved state.
        int traj_attr_index = -1;
        if (ds.edge_attr_mode == "initial") {
            const auto attrs = mesh::compute_edge_attributes(m, topo, fields_of(init),
                                                             fields_of(init), dt_save);
            traj_attr_index = static_cast<int>(ds.edge_attr_sets.size());
            ds.edge_attr_sets.push_back(normalize_attrs(attrs.values, ds.bounds));
        }

        // Input block shared by every sample of this trajectory (columns that
        // do not depend on the target time).
        Matrix base(n, kNumInputs);
        std::vector<double> extra(static_cast<std::size_t>(n), 1.0);
        if (ds.extra_feature == "front_distance")
            extra = front_distance(m, init.ice_mask, ds.bounds.input[kInExtra].hi);
        const double param_n = normalize_value(tr.params.value, ds.bounds.input[kInParam]);
        for (int i = 0; i < n; ++i) {
            double* row = base.row(i);
            row[kInParam] = param_n;
            row[kInTime] = 0.0; // filled per sample
            row[kInSmb] = normalize_value(init.smb[static_cast<std::size_t>(i)],
                                          ds.bounds.input[kInSmb]);
            row[kInVx0] =
                normalize_value(init.vx[static_cast<std::size_t>(i)], ds.bounds.input[kInVx0]);
            row[kInVy0] =
                normalize_value(init.vy[static_cast<std::size_t>(i)], ds.bounds.input[kInVy0]);
            row[kInSurface0] = normalize_value(init.surface[static_cast<std::size_t>(i)],
                                               ds.bounds.input[kInSurface0]);
            row[kInBed] =
                normalize_value(init.bed[static_cast<std::size_t>(i)], ds.bounds.input[kInBed]);
            row[kInThickness0] = normalize_value(init.thickness[static_cast<std::size_t>(i)],
                                                 ds.bounds.input[kInThickness0]);
            row[kInMask0] = normalize_value(init.ice_mask[static_cast<std::size_t>(i)],
                                            ds.bounds.input[kInMask0]);
            row[kInExtra] = normalize_value(extra[static_cast<std::size_t>(i)],
                                            ds.bounds.input[kInExtra]);
        }

        for (std::size_t t = 0; t < n_states; ++t) {
            const sim::SimState& st = state_at(tr, static_cast<int>(t));
            check_finite(st, tr.params.value, static_cast<int>(t));

            GraphSample sample;
            sample.scenario_index = static_cast<int>(s);
            sample.param = tr.params.value;
            sample.time_index = static_cast<int>(t);

            if (ds.edge_attr_mode == "initial") {
                sample.attr_index = traj_attr_index;
            } else {
                const int cur = std::max(0, static_cast<int>(t) - 1);
                const int prev = std::max(0, static_cast<int>(t) - 2);
                const auto attrs = mesh::compute_edge_attributes(
                    m, topo, fields_of(state_at(tr, cur)), fields_of(state_at(tr, prev)),
                    dt_save);
                sample.attr_index = static_cast<int>(ds.edge_attr_sets.size());
                ds.edge_attr_sets.push_back(normalize_attrs(attrs.values, ds.bounds));
            }

            sample.inputs = base;
            const double time_n = normalize_value(st.time, ds.bounds.input[kInTime]);
            for (int i = 0; i < n; ++i) sample.inputs(i, kInTime) = time_n;

            sample.targets = Matrix(n, kNumTargets);
            for (int i = 0; i < n; ++i) {
                double* row = sample.targets.row(i);
                row[kOutVx] =
                    normalize_value(st.vx[static_cast<std::size_t>(i)], ds.bounds.target[kOutVx]);
                row[kOutVy] =
                    normalize_value(st.vy[static_cast<std::size_t>(i)], ds.bounds.target[kOutVy]);
                row[kOutThickness] = normalize_value(st.thickness[static_cast<std::size_t>(i)],
                                                     ds.bounds.target[kOutThickness]);
                row[kOutMask] = normalize_value(st.ice_mask[static_cast<std::size_t>(i)],
                                                ds.bounds.target[kOutMask]);
            }
            ds.samples.push_back(std::move(sample));
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Dataset container file
// ---------------------------------------------------------------------------

namespace {

void write_bounds(BinWriter& w, const NormBounds& b) {
    for (const auto& v : b.input) {
        w.f64(v.lo);
        w.f64(v.hi);
    }
    for (const auto& v : b.target) {
        w.f64(v.lo);
        w.f64(v.hi);
    }
    for (const auto& v : b.edge_attr) {
        w.f64(v.lo);
        w.f64(v.hi);
    }
}

NormBounds read_bounds(BinReader& r) {
    NormBounds b;
    for (auto& v : b.input) {
        v.lo = r.f64();
        v.hi = r.f64();
    }
    for (auto& v : b.target) {
        v.lo = r.f64();
        v.hi = r.f64();
    }
    for (auto& v : b.edge_attr) {
        v.lo = r.f64();
        v.hi = r.f64();
    }
    return b;
}

void write_matrix(BinWriter& w, const Matrix& m) {
    w.i64(m.rows);
    w.i64(m.cols);
    w.f64_array(m.a.data(), m.a.size());
}

Matrix read_matrix(BinReader& r, const std::string& path) {
    const std::int64_t rows = r.i64(), cols = r.i64();
    if (rows < 0 || cols < 0 || rows > (1 << 28) || cols > (1 << 20))
        throw ValidationError("corrupt dataset file (bad matrix shape): " + path);
    Matrix m(static_cast<int>(rows), static_cast<int>(cols));
    r.f64_array(m.a.data(), m.a.size());
    return m;
}

} // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    BinWriter w(path);
    w.u32(kDatasetMagic);
    w.u32(kDatasetVersion);
    w.str(ds.scenario);
    w.u64(ds.mesh_fingerprint);
    w.i64(ds.n_nodes);
    write_bounds(w, ds.bounds);
    w.f64_vec(ds.scenario_params);
    w.str(ds.edge_attr_mode);
    w.str(ds.extra_feature);
    w.u64(ds.edge_attr_sets.size());
    for (const auto& a : ds.edge_attr_sets) write_matrix(w, a);
    w.u64(ds.samples.size());
    for (const auto& s : ds.samples) {
        w.i64(s.scenario_index);
        w.f64(s.param);
        w.i64(s.time_index);
        w.i64(s.attr_index);
        write_matrix(w, s.inputs);
        write_matrix(w, s.targets);
    }
    w.close();
}

Dataset load_dataset(const std::string& path) {
    BinReader r(path);
    if (r.u32() != kDatasetMagic) throw ValidationError("not a dataset file: " + path);
    if (r.u32() != kDatasetVersion)
        throw ValidationError("unsupported dataset version in " + path);
    Dataset ds;
    ds.scenario = r.str(64);
    ds.mesh_fingerprint = r.u64();
    ds.n_nodes = static_cast<int>(r.i64());
    ds.bounds = read_bounds(r);
    ds.scenario_params = r.f64_vec(1 << 20);
    ds.edge_attr_mode = r.str(64);
    ds.extra_feature = r.str(64);
    const std::uint64_t n_attr = r.u64();
    if (n_attr > (1u << 26)) throw ValidationError("corrupt dataset file: " + path);
    for (std::uint64_t k = 0; k < n_attr; ++k) ds.edge_attr_sets.push_back(read_matrix(r, path));
    const std::uint64_t n_samples = r.u64();
    if (n_samples > (1u << 26)) throw ValidationError("corrupt dataset file: " + path);
    for (std::uint64_t k = 0; k < n_samples; ++k) {
        GraphSample s;
        s.scenario_index = static_cast<int>(r.i64());
        s.param = r.f64();
        s.time_index = static_cast<int>(r.i64());
        s.attr_index = static_cast<int>(r.i64());
        s.inputs = read_matrix(r, path);
        s.targets = read_matrix(r, path);
        if (s.inputs.cols != kNumInputs || s.targets.cols != kNumTargets ||
            s.inputs.rows != ds.n_nodes || s.targets.rows != ds.n_nodes)
            throw ValidationError("corrupt dataset file (sample shape): " + path);
        if (s.attr_index < 0 || s.attr_index >= static_cast<int>(ds.edge_attr_sets.size()))
            throw ValidationError("corrupt dataset file (attribute index): " + path);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

std::uint64_t file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open file: " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (in.read(buf, sizeof buf) || in.gcount() > 0)
        h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    return h;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

SplitResult split_dataset(const Dataset& ds, const SplitSpec& spec) {
    for (double p : spec.test_params) {
        if (param_in(spec.trainval_params, p) || param_in(spec.val_params, p))
            throw ValidationError("split spec: test parameter " + format_double(p) +
                                  " also appears in another list");
    }
    for (double p : spec.val_params)
        if (param_in(spec.trainval_params, p))
            throw ValidationError("split spec: validation parameter " + format_double(p) +
                                  " also appears in the train list");

    const bool by_param = !spec.val_params.empty();
    SplitResult out;
    std::vector<int> pool; // fraction mode: samples to shuffle into train/val
    for (int k = 0; k < static_cast<int>(ds.samples.size()); ++k) {
        const double p = ds.samples[static_cast<std::size_t>(k)].param;
        if (param_in(spec.test_params, p)) {
            out.test.push_back(k);
        } else if (by_param && param_in(spec.val_params, p)) {
            out.val.push_back(k);
        } else if (spec.trainval_params.empty() || param_in(spec.trainval_params, p)) {
            if (by_param)
                out.train.push_back(k);
            else
                pool.push_back(k);
        } else {
            throw ValidationError("sample parameter " + format_double(p) +
                                  " does not appear in the split spec");
        }
    }

    if (!by_param) {
        if (spec.train_fraction < 0.0 || spec.train_fraction > 1.0)
            throw ValidationError("train fraction must be in [0, 1]");
        Rng rng(spec.seed);
        rng.shuffle(pool);
        const auto n_train = static_cast<std::size_t>(
            std::floor(spec.train_fraction * static_cast<double>(pool.size())));
        out.train.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_train));
        out.val.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_train), pool.end());
        std::sort(out.train.begin(), out.train.end());
        std::sort(out.val.begin(), out.val.end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Emulator adapters
// ---------------------------------------------------------------------------

namespace {

class GraphEmulator final : public Emulator {
public:
    GraphEmulator(const gnn::ModelConfig& cfg, const mesh::GraphTopology& topo, Rng& rng)
        : cfg_(cfg), topo_(&topo) {
        if (cfg.kind == "egcn") {
            egcn_ = std::make_unique<gnn::EgcnModel>(cfg);
            egcn_->init(rng);
        } else {
            gcn_ = std::make_unique<gnn::GcnModel>(cfg);
            gcn_->init(rng);
        }
    }

    const gnn::ModelConfig& config() const override { return cfg_; }

    Matrix predict(const Dataset& ds, const GraphSample& s) override { return forward(ds, s); }

    double train_step(const Dataset& ds, const GraphSample& s,
                      const ndnn::AdamConfig& adam) override {
        const Matrix pred = forward(ds, s);
        const double loss = ndnn::mse_loss(pred, s.targets);
        const Matrix dpred = ndnn::mse_backward(pred, s.targets);
        for (auto* p : params()) p->zero_grad();
        if (egcn_)
            egcn_->backward(*topo_, dpred);
        else
            gcn_->backward(*topo_, dpred);
        ndnn::adam_step(params(), adam);
        return loss;
    }

    double sample_mse(const Dataset& ds, const GraphSample& s) override {
        return ndnn::mse_loss(forward(ds, s), s.targets);
    }

    std::vector<ndnn::ParamTensor*> params() override {
        return egcn_ ? egcn_->params() : gcn_->params();
    }

private:
    Matrix forward(const Dataset& ds, const GraphSample& s) {
        if (egcn_) {
            const auto idx = static_cast<std::size_t>(s.attr_index);
            if (idx >= ds.edge_attr_sets.size())
                throw ValidationError("sample references a missing edge-attribute set");
            return egcn_->forward(*topo_, s.inputs, ds.edge_attr_sets[idx]);
        }
        return gcn_->forward(*topo_, s.inputs);
    }

    gnn::ModelConfig cfg_;
    const mesh::GraphTopology* topo_;
    std::unique_ptr<gnn::EgcnModel> egcn_;
    std::unique_ptr<gnn::GcnModel> gcn_;
};

class GridEmulator final : public Emulator {
public:
    GridEmulator(const gnn::ModelConfig& cfg, const mesh::TriMesh& m, Rng& rng, double spacing)
        : cfg_(cfg), mesh_(&m), interp_(m, mesh::grid_covering(m, spacing)), model_(cfg) {
        model_.init(rng);
    }

    const gnn::ModelConfig& config() const override { return cfg_; }

    void precompute_inputs(const Dataset& ds) override {
        input_cache_.clear();
        for (const auto& s : ds.samples) input_cache_.emplace(&s, to_grid(s.inputs));
    }

    Matrix predict(const Dataset& ds, const GraphSample& s) override {
        (void)ds;
        GridTensor scratch;
        const auto it = input_cache_.find(&s);
        const GridTensor& in = it != input_cache_.end() ? it->second
                                                        : (scratch = input_grid(s), scratch);
        const GridTensor out = model_.forward(in);
        // Map each predicted channel back to mesh nodes (bilinear).
        const auto& spec = interp_.spec();
        Matrix pred(mesh_->n_nodes(), cfg_.out_features);
        mesh::RegularGrid g;
        g.spec = spec;
        g.valid.assign(static_cast<std::size_t>(spec.nx) * spec.ny, 1);
        for (int c = 0; c < cfg_.out_features; ++c) {
            g.values.assign(out.channel(c), out.channel(c) + static_cast<std::size_t>(spec.nx) * spec.ny);
            const std::vector<double> nodal = mesh::grid_to_mesh(g, *mesh_);
            for (int i = 0; i < pred.rows; ++i) pred(i, c) = nodal[static_cast<std::size_t>(i)];
        }
        return pred;
    }

    double train_step(const Dataset& ds, const GraphSample& s,
                      const ndnn::AdamConfig& adam) override {
        (void)ds;
        const GridTensor pred = model_.forward(input_grid(s));
        const GridTensor target = target_grid(s);
        const double inv_n = 1.0 / static_cast<double>(pred.a.size());
        double loss = 0.0;
        GridTensor dpred(pred.channels, pred.height, pred.width);
        for (std::size_t k = 0; k < pred.a.size(); ++k) {
            const double d = pred.a[k] - target.a[k];
            loss += d * d;
            dpred.a[k] = 2.0 * d * inv_n;
        }
        loss *= inv_n;
        for (auto* p : params()) p->zero_grad();
        model_.backward(dpred);
        ndnn::adam_step(params(), adam);
        return loss;
    }

    double sample_mse(const Dataset& ds, const GraphSample& s) override {
        (void)ds;
        const GridTensor pred = model_.forward(input_grid(s));
        const GridTensor target = target_grid(s);
        double loss = 0.0;
        for (std::size_t k = 0; k < pred.a.size(); ++k) {
            const double d = pred.a[k] - target.a[k];
            loss += d * d;
        }
        return loss / static_cast<double>(pred.a.size());
    }

    std::vector<ndnn::ParamTensor*> params() override { return model_.params(); }

private:
    GridTensor to_grid(const Matrix& node_cols) {
        const auto& spec = interp_.spec();
        GridTensor g(node_cols.cols, spec.ny, spec.nx);
        std::vector<double> column(static_cast<std::size_t>(node_cols.rows));
        for (int c = 0; c < node_cols.cols; ++c) {
            for (int i = 0; i < node_cols.rows; ++i)
                column[static_cast<std::size_t>(i)] = node_cols(i, c);
            const mesh::RegularGrid rg = interp_.apply(column);
            std::copy(rg.values.begin(), rg.values.end(), g.channel(c));
        }
        return g;
    }

    GridTensor input_grid(const GraphSample& s) { return to_grid(s.inputs); }
    GridTensor target_grid(const GraphSample& s) { return to_grid(s.targets); }

    gnn::ModelConfig cfg_;
    const mesh::TriMesh* mesh_;
    mesh::MeshGridInterp interp_;
    gnn::FcnModel model_;
    std::unordered_map<const GraphSample*, GridTensor> input_cache_;
};

} // namespace

std::unique_ptr<Emulator> make_emulator(const gnn::ModelConfig& cfg, const mesh::TriMesh& m,
                                        const mesh::GraphTopology& topo, Rng& init_rng,
                                        double grid_spacing) {
    if (cfg.kind == "fcn") return std::make_unique<GridEmulator>(cfg, m, init_rng, grid_spacing);
    if (cfg.kind == "egcn" || cfg.kind == "gcn")
        return std::make_unique<GraphEmulator>(cfg, topo, init_rng);
    throw ValidationError("unknown model kind '" + cfg.kind + "'");
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TrainHistory train_emulator(Emulator& em, const Dataset& ds, const std::vector<int>& train_idx,
                            const std::vector<int>& val_idx, const TrainConfig& cfg) {
    if (train_idx.empty()) throw ValidationError("training needs at least one sample");
    if (cfg.epochs <= 0) throw ValidationError("epochs must be positive");
    for (int k : train_idx)
        if (k < 0 || k >= static_cast<int>(ds.samples.size()))
            throw ValidationError("train index out of range");
    for (int k : val_idx)
        if (k < 0 || k >= static_cast<int>(ds.samples.size()))
            throw ValidationError("validation index out of range");

    ndnn::AdamConfig adam;
    adam.lr = cfg.lr;
    Rng rng(cfg.seed);
    std::vector<int> order = train_idx;

    TrainHistory hist;
    hist.best_val_mse = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_data;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double train_mse = 0.0;
        try {
            for (int k : order)
                train_mse += em.train_step(ds, ds.samples[static_cast<std::size_t>(k)], adam);
        } catch (const NumericError& e) {
            throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": " +
                               e.what());
        }
        train_mse /= static_cast<double>(order.size());

        double val_mse = 0.0;
        for (int k : val_idx) val_mse += em.sample_mse(ds, ds.samples[static_cast<std::size_t>(k)]);
        if (!val_idx.empty()) val_mse /= static_cast<double>(val_idx.size());

        if (!std::isfinite(train_mse) || !std::isfinite(val_mse))
            throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                               ": non-finite loss");
        hist.epochs.push_back({train_mse, val_mse});

        const double score = val_idx.empty() ? train_mse : val_mse;
        if (score < hist.best_val_mse) {
            hist.best_val_mse = score;
            hist.best_epoch = epoch;
            best_data.clear();
            for (auto* p : em.params()) best_data.push_back(p->data);
        }
        if (cfg.log_every > 0 && (epoch + 1) % cfg.log_every == 0)
            std::printf("epoch %4d  train mse %.6e  val mse %.6e\n", epoch + 1, train_mse,
                        val_mse);
    }

    if (cfg.restore_best && hist.best_epoch >= 0) {
        const auto params = em.params();
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->data = best_data[i];
    }
    return hist;
}

void save_history_csv(const TrainHistory& h, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open history file for writing: " + path);
    out << "epoch,train_mse,val_mse\n";
    for (std::size_t e = 0; e < h.epochs.size(); ++e)
        out << e << ',' << format_double(h.epochs[e].train_mse) << ','
            << format_double(h.epochs[e].val_mse) << '\n';
    if (!out) throw ValidationError("failed writing history file: " + path);
}

void save_model(const std::string& path, Emulator& em, const NormBounds& bounds) {
    nlohmann::json arch = nlohmann::json::parse(em.config().to_json());
    char hex[24];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(bounds.hash()));
    arch["bounds_hash"] = hex;
    std::vector<const ndnn::ParamTensor*> params;
    for (auto* p : em.params()) params.push_back(p);
    ndnn::save_checkpoint(path, arch.dump(), params);
}

std::unique_ptr<Emulator> load_model(const std::string& path, const Dataset& ds,
                                     const mesh::TriMesh& m, const mesh::GraphTopology& topo,
                                     double grid_spacing) {
    const ndnn::Checkpoint ck = ndnn::load_checkpoint(path);
    const gnn::ModelConfig cfg = gnn::ModelConfig::from_json(ck.arch_json);

    nlohmann::json arch = nlohmann::json::parse(ck.arch_json, nullptr, false);
    if (!arch.is_object() || !arch.contains("bounds_hash"))
        throw ValidationError("checkpoint " + path + " lacks the normalization-bounds hash");
    char hex[24];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(ds.bounds.hash()));
    if (arch["bounds_hash"].get<std::string>() != hex)
        throw ValidationError("checkpoint " + path +
                              " was trained with different normalization bounds");

    Rng rng(0); // initialization is immediately overwritten by the checkpoint
    auto em = make_emulator(cfg, m, topo, rng, grid_spacing);
    ndnn::apply_checkpoint(ck, em->params());
    return em;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

double rmse_of(const std::vector<double>& pred, const std::vector<double>& target) {
    if (pred.size() != target.size() || pred.empty())
        throw ValidationError("rmse: vectors must be non-empty and equally sized");
    double acc = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const double d = pred[k] - target[k];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(pred.size()));
}

double pearson_r(const std::vector<double>& pred, const std::vector<double>& target) {
    if (pred.size() != target.size() || pred.empty())
        throw ValidationError("pearson: vectors must be non-empty and equally sized");
    const double n = static_cast<double>(pred.size());
    double mp = 0.0, mt = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        mp += pred[k];
        mt += target[k];
    }
    mp /= n;
    mt /= n;
    double spt = 0.0, spp = 0.0, stt = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const double dp = pred[k] - mp, dt = target[k] - mt;
        spt += dp * dt;
        spp += dp * dp;
        stt += dt * dt;
    }
    const double denom = std::sqrt(spp) * std::sqrt(stt);
    if (denom == 0.0) return 0.0; // a constant series has no defined correlation
    return spt / denom;
}

MetricsReport evaluate_emulator(Emulator& em, const Dataset& ds,
                                const std::vector<int>& test_idx, bool masked) {
    if (test_idx.empty()) throw ValidationError("evaluation needs a non-empty test set");

    MetricsReport report;
    report.model = em.config().kind;
    report.masked = masked;

    std::vector<double> test_params;
    for (int k : test_idx) {
        if (k < 0 || k >= static_cast<int>(ds.samples.size()))
            throw ValidationError("test index out of range");
        const double p = ds.samples[static_cast<std::size_t>(k)].param;
        if (!param_in(test_params, p)) test_params.push_back(p);
    }
    std::sort(test_params.begin(), test_params.end());

    // Pools per variable: vx, vy, velocity (vx+vy), thickness, mask.
    static const char* kVarNames[5] = {"vx", "vy", "velocity", "thickness", "mask"};
    std::vector<std::array<std::vector<double>, 5>> preds(test_params.size());
    std::vector<std::array<std::vector<double>, 5>> targets(test_params.size());
    long mask_hits = 0, mask_total = 0;

    for (int k : test_idx) {
        const GraphSample& s = ds.samples[static_cast<std::size_t>(k)];
        const std::size_t pi = static_cast<std::size_t>(
            std::find(test_params.begin(), test_params.end(), s.param) - test_params.begin());
        const Matrix pred = em.predict(ds, s);
        if (pred.rows != s.targets.rows || pred.cols != kNumTargets)
            throw ValidationError("prediction shape mismatch during evaluation");

        for (int i = 0; i < pred.rows; ++i) {
            auto dn = [&](const Matrix& mtx, int col) {
                return denormalize_value(mtx(i, col),
                                         ds.bounds.target[static_cast<std::size_t>(col)]);
            };
            const double t_mask = dn(s.targets, kOutMask);
            const double p_mask = dn(pred, kOutMask);
            mask_total += 1;
            mask_hits += ((p_mask >= 0.5) == (t_mask >= 0.5)) ? 1 : 0;

            // The mask channel is scored over all nodes (restricting it to
            // ice-covered nodes would leave a constant target).
            preds[pi][4].push_back(p_mask);
            targets[pi][4].push_back(t_mask);

            if (masked && t_mask < 0.5) continue;
            const double pvx = dn(pred, kOutVx), tvx = dn(s.targets, kOutVx);
            const double pvy = dn(pred, kOutVy), tvy = dn(s.targets, kOutVy);
            preds[pi][0].push_back(pvx);
            targets[pi][0].push_back(tvx);
            preds[pi][1].push_back(pvy);
            targets[pi][1].push_back(tvy);
            preds[pi][2].push_back(pvx);
            targets[pi][2].push_back(tvx);
            preds[pi][2].push_back(pvy);
            targets[pi][2].push_back(tvy);
            preds[pi][3].push_back(dn(pred, kOutThickness));
            targets[pi][3].push_back(dn(s.targets, kOutThickness));
        }
    }

    for (int v = 0; v < 5; ++v) {
        double sum_rmse = 0.0, sum_r = 0.0;
        long total_n = 0;
        int counted = 0;
        for (std::size_t pi = 0; pi < test_params.size(); ++pi) {
            if (preds[pi][v].empty()) continue;
            MetricsRow row;
            row.scenario_param = format_double(test_params[pi]);
            row.variable = kVarNames[v];
            row.rmse = rmse_of(preds[pi][v], targets[pi][v]);
            row.r = pearson_r(preds[pi][v], targets[pi][v]);
            row.n = static_cast<long>(preds[pi][v].size());
            report.rows.push_back(row);
            sum_rmse += row.rmse;
            sum_r += row.r;
            total_n += row.n;
            ++counted;
        }
        if (counted > 0) {
            MetricsRow mean;
            mean.scenario_param = "mean";
            mean.variable = kVarNames[v];
            mean.rmse = sum_rmse / counted;
            mean.r = sum_r / counted;
            mean.n = total_n;
            report.rows.push_back(mean);
        }
    }
    report.mask_accuracy =
        mask_total > 0 ? static_cast<double>(mask_hits) / static_cast<double>(mask_total) : 0.0;
    return report;
}

void write_metrics_csv(const MetricsReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open metrics file for writing: " + path);
    out << "model,scenario_param,variable,rmse,r,n\n";
    for (const auto& row : report.rows)
        out << report.model << ',' << row.scenario_param << ',' << row.variable << ','
            << format_double(row.rmse) << ',' << format_double(row.r) << ',' << row.n << '\n';
    if (!out) throw ValidationError("failed writing metrics file: " + path);
}

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

std::string hardware_string() {
    std::ifstream in("/proc/cpuinfo");
    std::string line, model = "unknown cpu";
    int cores = 0;
    while (std::getline(in, line)) {
        if (line.rfind("model name", 0) == 0) {
            const auto pos = line.find(':');
            if (pos != std::string::npos && model == "unknown cpu") {
                model = line.substr(pos + 1);
                const auto first = model.find_first_not_of(" \t");
                model = first == std::string::npos ? "unknown cpu" : model.substr(first);
            }
        }
        if (line.rfind("processor", 0) == 0) ++cores;
    }
    if (cores > 0) model += " (" + std::to_string(cores) + " logical cores)";
    return model;
}

TimingReport run_benchmark(const mesh::TriMesh& m, const mesh::GraphTopology& topo,
                           const sim::MeshGeometry& geom, const sim::SimState& initial,
                           const sim::SimConfig& cfg, const std::vector<double>& params,
                           const Dataset& ds, const std::vector<Emulator*>& emulators,
                           int repetitions) {
    if (params.empty()) throw ValidationError("benchmark needs at least one scenario parameter");
    if (repetitions < 1) throw ValidationError("benchmark needs at least one repetition");

    using clock = std::chrono::steady_clock;
    auto elapsed = [](clock::time_point t0) {
        return std::chrono::duration<double>(clock::now() - t0).count();
    };

    TimingReport report;
    report.hardware = hardware_string();
    report.repetitions = repetitions;
    report.n_scenarios = static_cast<int>(params.size());
    report.n_states =
        ds.scenario_params.empty()
            ? 0
            : static_cast<int>(ds.samples.size() / ds.scenario_params.size());

    // Oracle: re-solve the full sweep.
    double oracle_s = std::numeric_limits<double>::infinity();
    for (int rep = 0; rep < repetitions; ++rep) {
        const auto t0 = clock::now();
        for (double p : params)
            sim::run_transient_on_mesh(m, topo, geom, initial, cfg, {cfg.scenario, p});
        oracle_s = std::min(oracle_s, elapsed(t0));
    }
    report.engines.push_back({"oracle", oracle_s, 1.0});

    // Emulators: inference over every saved state of the same sweep. The
    // dataset holds exactly those samples with inputs already assembled.
    for (Emulator* em : emulators) {
        if (em == nullptr) continue;
        em->precompute_inputs(ds);
        double best = std::numeric_limits<double>::infinity();
        for (int rep = 0; rep < repetitions; ++rep) {
            const auto t0 = clock::now();
            for (const auto& s : ds.samples) em->predict(ds, s);
            best = std::min(best, elapsed(t0));
        }
        report.engines.push_back({em->config().kind, best, oracle_s / best});
    }
    return report;
}

void write_timing_json(const TimingReport& report, const std::string& path) {
    nlohmann::json j;
    j["hardware"] = report.hardware;
    j["repetitions"] = report.repetitions;
    j["n_scenarios"] = report.n_scenarios;
    j["n_states_per_scenario"] = report.n_states;
    j["engines"] = nlohmann::json::array();
    for (const auto& e : report.engines)
        j["engines"].push_back({{"engine", e.engine},
                                {"seconds", e.seconds},
                                {"speedup_vs_oracle", e.speedup}});
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open timing file for writing: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw ValidationError("failed writing timing file: " + path);
}

} // namespace icegraph::pipeline
