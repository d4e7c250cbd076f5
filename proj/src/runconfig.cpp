#include "icegraph/runconfig.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include <json.hpp>

#include "icegraph/errors.hpp"

namespace icegraph::cli {

namespace {

using nlohmann::json;

// SimConfig <-> JSON field tables (names match the struct members).
struct SimDoubleField {
    const char* key;
    double sim::SimConfig::* member;
};
struct SimIntField {
    const char* key;
    int sim::SimConfig::* member;
};
struct SimStringField {
    const char* key;
    std::string sim::SimConfig::* member;
};

constexpr SimDoubleField kSimDoubles[] = {
    {"domain_x", &sim::SimConfig::domain_x},
    {"domain_y", &sim::SimConfig::domain_y},
    {"edge_fine", &sim::SimConfig::edge_fine},
    {"edge_coarse", &sim::SimConfig::edge_coarse},
    {"grade_start_frac", &sim::SimConfig::grade_start_frac},
    {"grade_end_frac", &sim::SimConfig::grade_end_frac},
    {"jitter_frac", &sim::SimConfig::jitter_frac},
    {"dt", &sim::SimConfig::dt},
    {"rho_ice", &sim::SimConfig::rho_ice},
    {"rho_water", &sim::SimConfig::rho_water},
    {"gravity", &sim::SimConfig::gravity},
    {"c_slide", &sim::SimConfig::c_slide},
    {"m_slide", &sim::SimConfig::m_slide},
    {"v_cap", &sim::SimConfig::v_cap},
    {"rate_factor", &sim::SimConfig::rate_factor},
    {"glen_n", &sim::SimConfig::glen_n},
    {"front_x", &sim::SimConfig::front_x},
    {"thickness_inland", &sim::SimConfig::thickness_inland},
    {"thickness_front", &sim::SimConfig::thickness_front},
    {"bed_inland", &sim::SimConfig::bed_inland},
    {"bed_front", &sim::SimConfig::bed_front},
    {"channel_depth", &sim::SimConfig::channel_depth},
    {"channel_width_frac", &sim::SimConfig::channel_width_frac},
    {"smb_inland", &sim::SimConfig::smb_inland},
    {"smb_front", &sim::SimConfig::smb_front},
    {"bed_noise", &sim::SimConfig::bed_noise},
    {"thickness_noise", &sim::SimConfig::thickness_noise},
    {"smb_noise", &sim::SimConfig::smb_noise},
};
constexpr SimIntField kSimInts[] = {
    {"n_steps", &sim::SimConfig::n_steps},
    {"save_every", &sim::SimConfig::save_every},
};
constexpr SimStringField kSimStrings[] = {
    {"scenario", &sim::SimConfig::scenario},
    {"edge_attr_mode", &sim::SimConfig::edge_attr_mode},
    {"extra_feature", &sim::SimConfig::extra_feature},
};

json sim_to_json(const sim::SimConfig& s) {
    json j;
    for (const auto& f : kSimDoubles) j[f.key] = s.*(f.member);
    for (const auto& f : kSimInts) j[f.key] = s.*(f.member);
    for (const auto& f : kSimStrings) j[f.key] = s.*(f.member);
    return j;
}

void sim_apply_overrides(sim::SimConfig& s, const json& j) {
    std::set<std::string> known;
    for (const auto& f : kSimDoubles) known.insert(f.key);
    for (const auto& f : kSimInts) known.insert(f.key);
    for (const auto& f : kSimStrings) known.insert(f.key);
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!known.count(key))
            throw ValidationError("config: unknown field \"sim." + key + "\"");
    }
    for (const auto& f : kSimDoubles)
        if (j.contains(f.key)) s.*(f.member) = j.at(f.key).get<double>();
    for (const auto& f : kSimInts)
        if (j.contains(f.key)) s.*(f.member) = j.at(f.key).get<int>();
    for (const auto& f : kSimStrings)
        if (j.contains(f.key)) s.*(f.member) = j.at(f.key).get<std::string>();
}

std::vector<double> parse_param_grid(const json& j) {
    std::vector<double> grid;
    if (j.is_array()) {
        for (const auto& v : j) grid.push_back(v.get<double>());
    } else if (j.is_object()) {
        for (const auto& [key, value] : j.items()) {
            (void)value;
            if (key != "from" && key != "to" && key != "step")
                throw ValidationError("config: unknown field \"params." + key + "\"");
        }
        const double from = j.at("from").get<double>();
        const double to = j.at("to").get<double>();
        const double step = j.at("step").get<double>();
        if (!(step > 0.0) || to < from)
            throw ValidationError("config: params range needs step > 0 and to >= from");
        // Half-a-step slack so `to` itself is included despite round-off.
        for (double v = from; v <= to + 0.5 * step; v += step) grid.push_back(v);
    } else {
        throw ValidationError("config: \"params\" must be an array or a from/to/step object");
    }
    return grid;
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key))
            throw ValidationError("config: unknown field \"" + where + key + "\"");
    }
}

} // namespace

RunConfig RunConfig::preset(const std::string& scenario_kind) {
    RunConfig cfg;
    cfg.scenario = scenario_kind;
    if (scenario_kind == "helheim") {
        cfg.sim = sim::helheim_preset();
        for (int k = 0; k <= 6; ++k) cfg.param_grid.push_back(0.70e6 + 0.05e6 * k);
        cfg.split.test_params = {0.75e6, 0.95e6};
        cfg.split.train_fraction = 0.7; // remaining states shuffled 70/30
    } else if (scenario_kind == "pig") {
        cfg.sim = sim::pig_preset();
        for (int k = 0; k <= 35; ++k) cfg.param_grid.push_back(2.0 * k);
        cfg.split.val_params = {10.0, 30.0, 50.0, 70.0};
        cfg.split.test_params = {0.0, 20.0, 40.0, 60.0};
    } else {
        throw ValidationError("unknown scenario kind '" + scenario_kind +
                              "' (expected helheim or pig)");
    }
    cfg.model.in_features = pipeline::kNumInputs;
    cfg.model.out_features = pipeline::kNumTargets;
    return cfg;
}

std::string RunConfig::to_json() const {
    json j;
    j["scenario"] = scenario;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    j["threads"] = threads;
    j["sim"] = sim_to_json(sim);
    j["params"] = param_grid;
    j["model"] = json::parse(model.to_json());
    j["train"] = {{"epochs", train.epochs},
                  {"lr", train.lr},
                  {"seed", train.seed},
                  {"restore_best", train.restore_best},
                  {"log_every", train.log_every}};
    j["split"] = {{"trainval_params", split.trainval_params},
                  {"val_params", split.val_params},
                  {"test_params", split.test_params},
                  {"train_fraction", split.train_fraction},
                  {"seed", split.seed}};
    j["eval_masked"] = eval_masked;
    j["benchmark_repetitions"] = benchmark_repetitions;
    j["fcn_grid_spacing"] = fcn_grid_spacing;
    return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw ValidationError("config is not a JSON object");
    check_keys(j,
               {"scenario", "seed", "out_dir", "threads", "sim", "params", "model", "train",
                "split", "eval_masked", "benchmark_repetitions", "fcn_grid_spacing"},
               "");

    try {
        RunConfig cfg = preset(j.value("scenario", std::string("helheim")));
        cfg.seed = j.value("seed", cfg.seed);
        cfg.out_dir = j.value("out_dir", cfg.out_dir);
        cfg.threads = j.value("threads", cfg.threads);
        cfg.eval_masked = j.value("eval_masked", cfg.eval_masked);
        cfg.benchmark_repetitions = j.value("benchmark_repetitions", cfg.benchmark_repetitions);
        cfg.fcn_grid_spacing = j.value("fcn_grid_spacing", cfg.fcn_grid_spacing);

        if (j.contains("sim")) sim_apply_overrides(cfg.sim, j.at("sim"));
        if (j.contains("params")) cfg.param_grid = parse_param_grid(j.at("params"));

        if (j.contains("model")) {
            const json& jm = j.at("model");
            check_keys(jm,
                       {"kind", "in_features", "out_features", "width", "msg_width",
                        "mlp_hidden", "n_hidden", "n_edge_attr", "slope",
                        "velocity_from_coords", "coord_col_vx", "coord_col_vy"},
                       "model.");
            // Merge overrides onto the preset model, then revalidate the result
            // through the model's own parser.
            json merged = json::parse(cfg.model.to_json());
            merged.update(jm);
            // Widths usually move together; a bare "width" override carries
            // the message and MLP widths along unless they are set explicitly.
            if (jm.contains("width")) {
                if (!jm.contains("msg_width")) merged["msg_width"] = jm.at("width");
                if (!jm.contains("mlp_hidden")) merged["mlp_hidden"] = jm.at("width");
            }
            cfg.model = gnn::ModelConfig::from_json(merged.dump());
        }

        if (j.contains("train")) {
            const json& jt = j.at("train");
            check_keys(jt, {"epochs", "lr", "seed", "restore_best", "log_every"}, "train.");
            cfg.train.epochs = jt.value("epochs", cfg.train.epochs);
            cfg.train.lr = jt.value("lr", cfg.train.lr);
            cfg.train.seed = jt.value("seed", cfg.seed);
            cfg.train.restore_best = jt.value("restore_best", cfg.train.restore_best);
            cfg.train.log_every = jt.value("log_every", cfg.train.log_every);
        } else {
            cfg.train.seed = cfg.seed;
        }

        if (j.contains("split")) {
            const json& js = j.at("split");
            check_keys(js,
                       {"trainval_params", "val_params", "test_params", "train_fraction",
                        "seed"},
                       "split.");
            cfg.split.trainval_params =
                js.value("trainval_params", cfg.split.trainval_params);
            cfg.split.val_params = js.value("val_params", cfg.split.val_params);
            cfg.split.test_params = js.value("test_params", cfg.split.test_params);
            cfg.split.train_fraction = js.value("train_fraction", cfg.split.train_fraction);
            cfg.split.seed = js.value("seed", cfg.seed);
        } else {
            cfg.split.seed = cfg.seed;
        }

        cfg.validate();
        return cfg;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config has malformed fields: ") + e.what());
    }
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json(text);
}

void RunConfig::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open config file for writing: " + path);
    out << to_json() << "\n";
    if (!out) throw ValidationError("failed writing config file: " + path);
}

void RunConfig::validate() const {
    if (scenario != "helheim" && scenario != "pig")
        throw ValidationError("scenario must be helheim or pig");
    if (param_grid.empty()) throw ValidationError("param grid must be non-empty");
    for (double p : param_grid)
        if (!std::isfinite(p)) throw ValidationError("param grid contains a non-finite value");
    if (out_dir.empty()) throw ValidationError("output directory must be non-empty");
    if (threads < 1) throw ValidationError("threads must be >= 1");
    if (model.kind != "egcn" && model.kind != "gcn" && model.kind != "fcn")
        throw ValidationError("model kind must be egcn, gcn, or fcn");
    if (train.epochs <= 0) throw ValidationError("train.epochs must be positive");
    if (!(train.lr > 0.0) || !std::isfinite(train.lr))
        throw ValidationError("train.lr must be positive and finite");
    if (split.train_fraction < 0.0 || split.train_fraction > 1.0)
        throw ValidationError("split.train_fraction must be in [0, 1]");
    if (!(fcn_grid_spacing > 0.0)) throw ValidationError("fcn_grid_spacing must be positive");
    if (benchmark_repetitions < 1)
        throw ValidationError("benchmark_repetitions must be >= 1");
}

std::string mesh_path(const RunConfig& cfg) { return cfg.out_dir + "/mesh.json"; }

std::string trajectory_path(const RunConfig& cfg, int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "/trajectory_%03d.bin", index);
    return cfg.out_dir + buf;
}

std::string dataset_path(const RunConfig& cfg) { return cfg.out_dir + "/dataset.bin"; }

std::string model_path(const RunConfig& cfg, const std::string& kind) {
    return cfg.out_dir + "/model_" + kind + ".bin";
}

std::string history_path(const RunConfig& cfg, const std::string& kind) {
    return cfg.out_dir + "/history_" + kind + ".csv";
}

std::string metrics_path(const RunConfig& cfg, const std::string& kind) {
    return cfg.out_dir + "/metrics_" + kind + ".csv";
}

std::string timing_path(const RunConfig& cfg) { return cfg.out_dir + "/timing.json"; }

} // namespace icegraph::cli
