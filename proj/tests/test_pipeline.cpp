#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "icegraph/errors.hpp"
#include "icegraph/icesim.hpp"
#include "icegraph/mesh.hpp"
#include "icegraph/pipeline.hpp"

using namespace icegraph;
using namespace icegraph::pipeline;

namespace {

// Small ice tongue: quick to mesh and to integrate, but with a moving front
// so the mask targets have spatial structure.
sim::SimConfig tiny_config() {
    sim::SimConfig cfg = sim::helheim_preset();
    cfg.domain_x = 10000.0;
    cfg.domain_y = 5000.0;
    cfg.edge_fine = 1200.0;
    cfg.edge_coarse = 2000.0;
    cfg.front_x = 8000.0;
    cfg.n_steps = 20;
    cfg.save_every = 5; // 5 saved states: t = 0, 5, 10, 15, 20
    return cfg;
}

struct TinyWorld {
    sim::SimConfig cfg;
    mesh::TriMesh m;
    mesh::GraphTopology topo;
    sim::MeshGeometry geom;
    sim::SimState initial;
    std::vector<sim::TrajectoryFile> trajectories;
    Dataset ds;
};

TinyWorld make_world(const std::vector<double>& params, const std::string& attr_mode = "initial",
                     const std::string& extra_feature = "constant") {
    sim::SimConfig cfg = tiny_config();
    cfg.edge_attr_mode = attr_mode;
    cfg.extra_feature = extra_feature;
    mesh::TriMesh m = sim::generate_mesh(cfg, 7);
    mesh::GraphTopology topo = mesh::build_topology(m);
    sim::MeshGeometry geom(m, topo);
    sim::SimState initial = sim::initial_state(m, geom, cfg, 11);
    std::vector<sim::TrajectoryFile> trajectories;
    for (double p : params) {
        sim::TrajectoryFile tf;
        tf.result = sim::run_transient_on_mesh(m, topo, geom, initial, cfg, {cfg.scenario, p});
        tf.params = {cfg.scenario, p};
        tf.seed = 11;
        tf.mesh_fingerprint = mesh::mesh_hash(m);
        tf.dt = cfg.dt;
        tf.n_steps = cfg.n_steps;
        tf.save_every = cfg.save_every;
        trajectories.push_back(std::move(tf));
    }
    Dataset ds = build_dataset(m, topo, trajectories, cfg);
    return TinyWorld{std::move(cfg), std::move(m),           std::move(topo), std::move(geom),
                     std::move(initial), std::move(trajectories), std::move(ds)};
}

// Synthetic corpus for split tests: split_dataset only inspects the samples'
// parameter values, so metadata can stay empty.
Dataset synthetic_dataset(const std::vector<double>& params, int n_states) {
    Dataset ds;
    ds.scenario = "calving";
    ds.n_nodes = 1;
    ds.edge_attr_mode = "initial";
    ds.edge_attr_sets.emplace_back(0, 5);
    ds.scenario_params = params;
    for (std::size_t s = 0; s < params.size(); ++s) {
        for (int t = 0; t < n_states; ++t) {
            GraphSample g;
            g.scenario_index = static_cast<int>(s);
            g.param = params[s];
            g.time_index = t;
            g.attr_index = 0;
            g.inputs = Matrix(1, kNumInputs);
            g.targets = Matrix(1, kNumTargets);
            ds.samples.push_back(std::move(g));
        }
    }
    return ds;
}

std::vector<double> helheim_sigma_grid() {
    std::vector<double> p;
    for (int k = 0; k <= 6; ++k) p.push_back(0.70e6 + 0.05e6 * k);
    return p;
}

std::vector<double> pig_melt_grid() {
    std::vector<double> p;
    for (int k = 0; k <= 35; ++k) p.push_back(2.0 * k);
    return p;
}

gnn::ModelConfig small_model(const std::string& kind) {
    gnn::ModelConfig cfg;
    cfg.kind = kind;
    cfg.in_features = kNumInputs;
    cfg.out_features = kNumTargets;
    cfg.width = 8;
    cfg.msg_width = 8;
    cfg.mlp_hidden = 8;
    cfg.n_hidden = 2;
    return cfg;
}

// Returns the model's predictions as one flattened vector (for bitwise
// comparisons across save/load).
std::vector<double> flat_predictions(Emulator& em, const Dataset& ds) {
    std::vector<double> out;
    for (const auto& s : ds.samples) {
        const Matrix p = em.predict(ds, s);
        out.insert(out.end(), p.a.begin(), p.a.end());
    }
    return out;
}

// Test double that "predicts" the exact targets: isolates the metric
// plumbing (denormalization, pooling, masking) from any real model.
class PerfectEmulator final : public Emulator {
public:
    PerfectEmulator() { cfg_ = small_model("egcn"); }
    const gnn::ModelConfig& config() const override { return cfg_; }
    Matrix predict(const Dataset&, const GraphSample& s) override { return s.targets; }
    double train_step(const Dataset&, const GraphSample&, const ndnn::AdamConfig&) override {
        return 0.0;
    }
    double sample_mse(const Dataset&, const GraphSample&) override { return 0.0; }
    std::vector<ndnn::ParamTensor*> params() override { return {}; }

private:
    gnn::ModelConfig cfg_;
};

} // namespace

TEST_CASE("normalization round-trips in range and clamps outside") {
    VarBounds b{-250.0, 4000.0};
    Rng rng(3);
    for (int k = 0; k < 200; ++k) {
        const double v = rng.uniform(b.lo, b.hi);
        const double u = normalize_value(v, b);
        CHECK(u >= -1.0);
        CHECK(u <= 1.0);
        CHECK(denormalize_value(u, b) == doctest::Approx(v).epsilon(1e-12));
    }
    CHECK(normalize_value(b.lo, b) == -1.0);
    CHECK(normalize_value(b.hi, b) == 1.0);
    CHECK(normalize_value(b.lo - 123.0, b) == -1.0); // clamped
    CHECK(normalize_value(b.hi + 123.0, b) == 1.0);
    CHECK(denormalize_value(0.0, b) == doctest::Approx(0.5 * (b.lo + b.hi)));
}

TEST_CASE("nominal bounds hash is stable and sensitive") {
    const sim::SimConfig cfg = tiny_config();
    const std::vector<double> params = {0.8e6, 0.9e6};
    const NormBounds a = NormBounds::from_config(cfg, params);
    const NormBounds b = NormBounds::from_config(cfg, params);
    CHECK(a.hash() == b.hash());

    NormBounds c = a;
    c.input[kInTime].hi += 1.0;
    CHECK(c.hash() != a.hash());

    // Degenerate parameter sweeps still get a usable range.
    const NormBounds d = NormBounds::from_config(cfg, {0.8e6});
    CHECK(d.input[kInParam].hi > d.input[kInParam].lo);
    CHECK_THROWS_AS(NormBounds::from_config(cfg, {}), ValidationError);
}

TEST_CASE("split arithmetic: seven-threshold sweep gives 913/392/522") {
    const Dataset ds = synthetic_dataset(helheim_sigma_grid(), 261);
    REQUIRE(ds.samples.size() == 1827);

    SplitSpec spec;
    spec.trainval_params = {0.70e6, 0.80e6, 0.85e6, 0.90e6, 1.00e6};
    spec.test_params = {0.75e6, 0.95e6};
    spec.train_fraction = 0.7;
    spec.seed = 42;
    const SplitResult r = split_dataset(ds, spec);
    CHECK(r.train.size() == 913);
    CHECK(r.val.size() == 392);
    CHECK(r.test.size() == 522);
}

TEST_CASE("split arithmetic: 36-rate sweep gives 6720/960/960") {
    const Dataset ds = synthetic_dataset(pig_melt_grid(), 240);
    REQUIRE(ds.samples.size() == 8640);

    SplitSpec spec;
    spec.val_params = {10.0, 30.0, 50.0, 70.0};
    spec.test_params = {0.0, 20.0, 40.0, 60.0};
    const SplitResult r = split_dataset(ds, spec);
    CHECK(r.train.size() == 6720);
    CHECK(r.val.size() == 960);
    CHECK(r.test.size() == 960);

    // By-parameter mode: every val sample carries a val parameter, etc.
    for (int k : r.val) {
        const double p = ds.samples[static_cast<std::size_t>(k)].param;
        CHECK((p == 10.0 || p == 30.0 || p == 50.0 || p == 70.0));
    }
    for (int k : r.test) {
        const double p = ds.samples[static_cast<std::size_t>(k)].param;
        CHECK((p == 0.0 || p == 20.0 || p == 40.0 || p == 60.0));
    }
}

TEST_CASE("split is a disjoint exact cover and deterministic per seed") {
    const Dataset ds = synthetic_dataset(helheim_sigma_grid(), 261);
    SplitSpec spec;
    spec.test_params = {0.75e6, 0.95e6}; // empty trainval list = everything else
    spec.seed = 1;

    const SplitResult r1 = split_dataset(ds, spec);
    const SplitResult r2 = split_dataset(ds, spec);
    CHECK(r1.train == r2.train);
    CHECK(r1.val == r2.val);
    CHECK(r1.test == r2.test);

    spec.seed = 2;
    const SplitResult r3 = split_dataset(ds, spec);
    CHECK(r3.train != r1.train); // different shuffle

    std::set<int> all;
    for (int k : r1.train) all.insert(k);
    for (int k : r1.val) all.insert(k);
    for (int k : r1.test) all.insert(k);
    CHECK(all.size() == ds.samples.size()); // disjoint and complete
    CHECK(*all.begin() == 0);
    CHECK(*all.rbegin() == static_cast<int>(ds.samples.size()) - 1);
    CHECK(std::is_sorted(r1.train.begin(), r1.train.end()));
    CHECK(std::is_sorted(r1.val.begin(), r1.val.end()));
    CHECK(std::is_sorted(r1.test.begin(), r1.test.end()));

    // No test samples leak into train/val.
    for (int k : r1.train) CHECK(ds.samples[static_cast<std::size_t>(k)].param != 0.75e6);
    for (int k : r1.val) CHECK(ds.samples[static_cast<std::size_t>(k)].param != 0.95e6);
}

TEST_CASE("split spec validation") {
    const Dataset ds = synthetic_dataset({1.0, 2.0, 3.0}, 4);

    SplitSpec overlap;
    overlap.trainval_params = {1.0, 2.0};
    overlap.test_params = {2.0, 3.0};
    CHECK_THROWS_AS(split_dataset(ds, overlap), ValidationError);

    SplitSpec missing;
    missing.trainval_params = {1.0, 2.0}; // 3.0 unassigned
    CHECK_THROWS_AS(split_dataset(ds, missing), ValidationError);

    SplitSpec bad_frac;
    bad_frac.test_params = {3.0};
    bad_frac.train_fraction = 1.5;
    CHECK_THROWS_AS(split_dataset(ds, bad_frac), ValidationError);

    SplitSpec val_overlap;
    val_overlap.trainval_params = {1.0, 2.0};
    val_overlap.val_params = {2.0};
    val_overlap.test_params = {3.0};
    CHECK_THROWS_AS(split_dataset(ds, val_overlap), ValidationError);
}

TEST_CASE("dataset build: shapes, sharing, and normalization") {
    const TinyWorld w = make_world({0.8e6, 0.9e6});
    const std::size_t n_states = w.trajectories[0].result.states.size();
    REQUIRE(n_states == 5);

    CHECK(w.ds.samples.size() == 2 * n_states);
    CHECK(w.ds.n_nodes == w.m.n_nodes());
    CHECK(w.ds.mesh_fingerprint == mesh::mesh_hash(w.m));
    CHECK(w.ds.scenario_params == std::vector<double>{0.8e6, 0.9e6});
    CHECK(w.ds.edge_attr_sets.size() == 2); // one shared set per trajectory

    for (const auto& s : w.ds.samples) {
        CHECK(s.inputs.rows == w.ds.n_nodes);
        CHECK(s.inputs.cols == kNumInputs);
        CHECK(s.targets.cols == kNumTargets);
        CHECK(s.attr_index == s.scenario_index);
        for (double v : s.inputs.a) {
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
        }
        for (double v : s.targets.a) {
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
        }
        // Time channel is constant across nodes and grows with the state index.
        const double t0 = s.inputs(0, kInTime);
        for (int i = 1; i < s.inputs.rows; ++i) CHECK(s.inputs(i, kInTime) == t0);
        const auto& st =
            w.trajectories[static_cast<std::size_t>(s.scenario_index)].result.states;
        const double t_phys = st[static_cast<std::size_t>(s.time_index)].time;
        CHECK(denormalize_value(t0, w.ds.bounds.input[kInTime]) ==
              doctest::Approx(t_phys).epsilon(1e-12));
        // Mask targets sit exactly on the normalized extremes.
        for (int i = 0; i < s.targets.rows; ++i) {
            const double mk = s.targets(i, kOutMask);
            CHECK((mk == -1.0 || mk == 1.0));
        }
    }

    // Shared "initial" attribute sets: acceleration columns are exactly the
    // normalized zero (prev state == current state at build time).
    const double zero_ax =
        normalize_value(0.0, w.ds.bounds.edge_attr[mesh::EdgeAttributes::kAccelX]);
    for (const auto& attrs : w.ds.edge_attr_sets) {
        CHECK(attrs.rows == w.topo.n_directed_edges());
        for (int e = 0; e < attrs.rows; ++e) {
            CHECK(attrs(e, mesh::EdgeAttributes::kAccelX) == zero_ax);
            for (int c = 0; c < attrs.cols; ++c) {
                CHECK(attrs(e, c) >= -1.0);
                CHECK(attrs(e, c) <= 1.0);
            }
        }
    }
}

TEST_CASE("dataset build: per_step ablation and input validation") {
    const TinyWorld w = make_world({0.8e6}, "per_step");
    CHECK(w.ds.edge_attr_sets.size() == w.ds.samples.size()); // one set per sample
    std::set<int> attr_indices;
    for (const auto& s : w.ds.samples) attr_indices.insert(s.attr_index);
    CHECK(attr_indices.size() == w.ds.samples.size());

    // Foreign mesh fingerprint is rejected.
    auto bad = w.trajectories;
    bad[0].mesh_fingerprint ^= 1;
    CHECK_THROWS_AS(build_dataset(w.m, w.topo, bad, w.cfg), ValidationError);

    // Scenario mismatch is rejected.
    auto wrong = w.trajectories;
    wrong[0].params.scenario = "melt";
    CHECK_THROWS_AS(build_dataset(w.m, w.topo, wrong, w.cfg), ValidationError);

    // Non-finite fields are rejected with a descriptive error.
    auto poisoned = w.trajectories;
    poisoned[0].result.states[2].thickness[0] = std::nan("");
    CHECK_THROWS_AS(build_dataset(w.m, w.topo, poisoned, w.cfg), ValidationError);

    CHECK_THROWS_AS(build_dataset(w.m, w.topo, {}, w.cfg), ValidationError);
}

TEST_CASE("dataset container round-trips bitwise") {
    const TinyWorld w = make_world({0.8e6, 0.9e6});
    const std::string p1 = "tp_ds_a.bin", p2 = "tp_ds_b.bin";
    save_dataset(w.ds, p1);
    const Dataset back = load_dataset(p1);
    save_dataset(back, p2);
    CHECK(file_hash(p1) == file_hash(p2)); // lossless container

    CHECK(back.scenario == w.ds.scenario);
    CHECK(back.mesh_fingerprint == w.ds.mesh_fingerprint);
    CHECK(back.n_nodes == w.ds.n_nodes);
    CHECK(back.bounds.hash() == w.ds.bounds.hash());
    CHECK(back.scenario_params == w.ds.scenario_params);
    CHECK(back.edge_attr_mode == w.ds.edge_attr_mode);
    CHECK(back.extra_feature == w.ds.extra_feature);
    REQUIRE(back.samples.size() == w.ds.samples.size());
    for (std::size_t k = 0; k < back.samples.size(); ++k) {
        CHECK(back.samples[k].param == w.ds.samples[k].param);
        CHECK(back.samples[k].inputs.a == w.ds.samples[k].inputs.a);
        CHECK(back.samples[k].targets.a == w.ds.samples[k].targets.a);
    }

    std::ofstream junk("tp_junk.bin", std::ios::binary);
    junk << "not a dataset";
    junk.close();
    CHECK_THROWS_AS(load_dataset("tp_junk.bin"), ValidationError);

    std::remove(p1.c_str());
    std::remove(p2.c_str());
    std::remove("tp_junk.bin");
}

TEST_CASE("rmse and pearson match scalar references") {
    Rng rng(5);
    std::vector<double> a(257), b(257);
    for (std::size_t k = 0; k < a.size(); ++k) {
        a[k] = rng.uniform(-3.0, 3.0);
        b[k] = 0.7 * a[k] + rng.uniform(-0.5, 0.5);
    }

    // Independent plain-loop references.
    double sq = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) sq += (a[k] - b[k]) * (a[k] - b[k]);
    const double ref_rmse = std::sqrt(sq / static_cast<double>(a.size()));
    double ma = 0.0, mb = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        ma += a[k];
        mb += b[k];
    }
    ma /= static_cast<double>(a.size());
    mb /= static_cast<double>(a.size());
    double num = 0.0, da = 0.0, db = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        num += (a[k] - ma) * (b[k] - mb);
        da += (a[k] - ma) * (a[k] - ma);
        db += (b[k] - mb) * (b[k] - mb);
    }
    const double ref_r = num / std::sqrt(da * db);

    CHECK(std::abs(rmse_of(a, b) - ref_rmse) <= 1e-12);
    CHECK(std::abs(pearson_r(a, b) - ref_r) <= 1e-12);

    CHECK(rmse_of(a, a) == 0.0);
    CHECK(std::abs(pearson_r(a, a) - 1.0) <= 1e-12);

    // A constant offset leaves correlation at 1 and RMSE at the offset.
    std::vector<double> shifted = a;
    for (double& v : shifted) v += 10.0;
    CHECK(std::abs(rmse_of(shifted, a) - 10.0) <= 1e-12);
    CHECK(std::abs(pearson_r(shifted, a) - 1.0) <= 1e-12);

    std::vector<double> negated = a;
    for (double& v : negated) v = -v;
    CHECK(std::abs(pearson_r(negated, a) + 1.0) <= 1e-12);

    const std::vector<double> flat(a.size(), 2.0);
    CHECK(pearson_r(flat, a) == 0.0); // zero-variance convention

    CHECK_THROWS_AS(rmse_of({1.0}, {1.0, 2.0}), ValidationError);
    CHECK_THROWS_AS(pearson_r({}, {}), ValidationError);
}

TEST_CASE("perfect predictions score rmse 0, r 1, full mask accuracy") {
    const TinyWorld w = make_world({0.8e6, 0.9e6});
    std::vector<int> all_idx(w.ds.samples.size());
    for (std::size_t k = 0; k < all_idx.size(); ++k) all_idx[k] = static_cast<int>(k);

    PerfectEmulator em;
    const MetricsReport rep = evaluate_emulator(em, w.ds, all_idx, true);
    CHECK(rep.model == "egcn");
    CHECK(rep.masked);
    CHECK(rep.mask_accuracy == 1.0);
    REQUIRE(!rep.rows.empty());

    int mean_rows = 0;
    for (const auto& row : rep.rows) {
        CHECK(row.rmse <= 1e-9); // denormalize(normalize(x)) round-off only
        if (row.scenario_param == "mean") {
            ++mean_rows;
        } else {
            CHECK((row.scenario_param == "800000" || row.scenario_param == "900000"));
        }
        if (row.variable != "mask") CHECK(row.r == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(row.n > 0);
    }
    CHECK(mean_rows == 5); // one per variable

    const std::string csv = "tp_metrics.csv";
    write_metrics_csv(rep, csv);
    std::ifstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "model,scenario_param,variable,rmse,r,n");
    std::size_t rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == rep.rows.size());
    in.close();
    std::remove(csv.c_str());

    CHECK_THROWS_AS(evaluate_emulator(em, w.ds, {}, true), ValidationError);
}

TEST_CASE("training overfits one sample and is seed-deterministic") {
    const TinyWorld w = make_world({0.8e6});
    const gnn::ModelConfig mc = small_model("egcn");

    TrainConfig tc;
    tc.epochs = 600;
    tc.lr = 0.01;
    tc.seed = 17;
    tc.restore_best = false;

    Rng init1(123);
    auto em1 = make_emulator(mc, w.m, w.topo, init1);
    const TrainHistory h1 = train_emulator(*em1, w.ds, {2}, {}, tc);
    REQUIRE(h1.epochs.size() == 600);
    CHECK(h1.epochs.front().train_mse > 0.0);
    CHECK(h1.epochs.back().train_mse * 100.0 <= h1.epochs.front().train_mse);
    CHECK(h1.best_epoch >= 0);

    // Bitwise repeatability: same init and shuffle seeds, same history.
    Rng init2(123);
    auto em2 = make_emulator(mc, w.m, w.topo, init2);
    const TrainHistory h2 = train_emulator(*em2, w.ds, {2}, {}, tc);
    for (std::size_t e = 0; e < h1.epochs.size(); ++e) {
        CHECK(h1.epochs[e].train_mse == h2.epochs[e].train_mse);
        CHECK(h1.epochs[e].val_mse == h2.epochs[e].val_mse);
    }
    CHECK(flat_predictions(*em1, w.ds) == flat_predictions(*em2, w.ds));

    const std::string hp = "tp_history.csv";
    save_history_csv(h1, hp);
    std::ifstream in(hp);
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,train_mse,val_mse");
    std::size_t rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == h1.epochs.size());
    in.close();
    std::remove(hp.c_str());
}

TEST_CASE("zero learning rate leaves parameters untouched") {
    const TinyWorld w = make_world({0.8e6});
    Rng init(9);
    auto em = make_emulator(small_model("gcn"), w.m, w.topo, init);
    std::vector<std::vector<double>> before;
    for (auto* p : em->params()) before.push_back(p->data);

    TrainConfig tc;
    tc.epochs = 3;
    tc.lr = 0.0;
    tc.seed = 1;
    tc.restore_best = false;
    train_emulator(*em, w.ds, {0, 1}, {2}, tc);

    const auto params = em->params();
    for (std::size_t i = 0; i < params.size(); ++i) CHECK(params[i]->data == before[i]);
}

TEST_CASE("validation tracking restores the best parameters") {
    const TinyWorld w = make_world({0.8e6});
    Rng init(31);
    auto em = make_emulator(small_model("egcn"), w.m, w.topo, init);

    TrainConfig tc;
    tc.epochs = 40;
    tc.lr = 0.005;
    tc.seed = 4;
    tc.restore_best = true;
    const TrainHistory h = train_emulator(*em, w.ds, {0, 1, 2}, {3, 4}, tc);
    REQUIRE(h.best_epoch >= 0);
    CHECK(h.best_val_mse == h.epochs[static_cast<std::size_t>(h.best_epoch)].val_mse);
    for (const auto& e : h.epochs) CHECK(e.val_mse >= h.best_val_mse);

    // After restore_best, the model's validation MSE equals the recorded best.
    double val = 0.0;
    for (int k : {3, 4}) val += em->sample_mse(w.ds, w.ds.samples[static_cast<std::size_t>(k)]);
    val /= 2.0;
    CHECK(val == doctest::Approx(h.best_val_mse).epsilon(1e-12));
}

TEST_CASE("model checkpoints round-trip and reject foreign bounds") {
    const TinyWorld w = make_world({0.8e6});
    for (const std::string kind : {"egcn", "gcn", "fcn"}) {
        Rng init(77);
        auto em = make_emulator(small_model(kind), w.m, w.topo, init, 1000.0);

        TrainConfig tc;
        tc.epochs = 2;
        tc.lr = 0.002;
        tc.seed = 5;
        train_emulator(*em, w.ds, {0, 1}, {}, tc);

        const std::string path = "tp_model_" + kind + ".bin";
        save_model(path, *em, w.ds.bounds);
        auto back = load_model(path, w.ds, w.m, w.topo, 1000.0);
        CHECK(back->config().kind == kind);
        CHECK(flat_predictions(*em, w.ds) == flat_predictions(*back, w.ds));

        Dataset foreign = w.ds;
        foreign.bounds.target[kOutThickness].hi *= 2.0;
        CHECK_THROWS_AS(load_model(path, foreign, w.m, w.topo, 1000.0), ValidationError);
        std::remove(path.c_str());
    }
}

TEST_CASE("grid emulator maps predictions back to mesh nodes and learns") {
    const TinyWorld w = make_world({0.8e6});
    Rng init(13);
    auto em = make_emulator(small_model("fcn"), w.m, w.topo, init, 500.0);

    const Matrix pred = em->predict(w.ds, w.ds.samples[0]);
    CHECK(pred.rows == w.ds.n_nodes);
    CHECK(pred.cols == kNumTargets);
    for (double v : pred.a) CHECK(std::isfinite(v));

    TrainConfig tc;
    tc.epochs = 150;
    tc.lr = 0.003;
    tc.seed = 2;
    tc.restore_best = false;
    const TrainHistory h = train_emulator(*em, w.ds, {2}, {}, tc);
    CHECK(h.epochs.back().train_mse * 10.0 <= h.epochs.front().train_mse);

    // The input cache only accelerates prediction; results are identical.
    const Matrix before = em->predict(w.ds, w.ds.samples[1]);
    em->precompute_inputs(w.ds);
    const Matrix after = em->predict(w.ds, w.ds.samples[1]);
    CHECK(before.a == after.a);

    CHECK_THROWS_AS(make_emulator(small_model("transformer"), w.m, w.topo, init),
                    ValidationError);
}

TEST_CASE("benchmark times every engine and writes parseable json") {
    const TinyWorld w = make_world({0.8e6});
    Rng init(21);
    auto egcn = make_emulator(small_model("egcn"), w.m, w.topo, init);
    auto fcn = make_emulator(small_model("fcn"), w.m, w.topo, init, 1000.0);

    const TimingReport rep =
        run_benchmark(w.m, w.topo, w.geom, w.initial, w.cfg, {0.8e6}, w.ds,
                      {egcn.get(), fcn.get()}, 1);
    REQUIRE(rep.engines.size() == 3);
    CHECK(rep.engines[0].engine == "oracle");
    CHECK(rep.engines[1].engine == "egcn");
    CHECK(rep.engines[2].engine == "fcn");
    for (const auto& e : rep.engines) {
        CHECK(e.seconds > 0.0);
        CHECK(e.speedup > 0.0);
    }
    CHECK(rep.n_scenarios == 1);
    CHECK(rep.n_states == 5);
    CHECK(!rep.hardware.empty());

    const std::string jp = "tp_timing.json";
    write_timing_json(rep, jp);
    std::ifstream in(jp);
    nlohmann::json j = nlohmann::json::parse(in);
    CHECK(j["engines"].size() == 3);
    CHECK(j["engines"][0]["engine"] == "oracle");
    CHECK(j["engines"][0]["speedup_vs_oracle"] == 1.0);
    CHECK(j.contains("hardware"));
    in.close();
    std::remove(jp.c_str());

    CHECK_THROWS_AS(
        run_benchmark(w.m, w.topo, w.geom, w.initial, w.cfg, {}, w.ds, {}, 1),
        ValidationError);
}
