#include "pgfwi/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "pgfwi/io.hpp"
#include "pgfwi/metrics.hpp"

namespace pgfwi {

using nlohmann::json;

namespace {

// Reads known keys of one JSON object and rejects the rest.
class Fields {
public:
    Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(label() + " must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(label(key) + ": wrong type " + std::string(j_.at(key).type_name()));
        }
    }

    void path(const char* key, std::filesystem::path& out) {
        std::string s = out.string();
        get(key, s);
        out = s;
    }

    Fields sub(const char* key) {
        seen_.insert(key);
        static const json empty = json::object();
        return Fields(j_.contains(key) ? j_.at(key) : empty, label(key));
    }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) throw ConfigError("unknown config key '" + label(k.c_str()) + "'");
        }
    }

private:
    std::string label(const char* key = nullptr) const {
        std::string s = where_;
        if (key) s += (s.empty() ? "" : ".") + std::string(key);
        return s.empty() ? "config" : s;
    }

    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

InitKind parse_init_kind(const std::string& s) {
    if (s == "gaussian") return InitKind::Gaussian;
    if (s == "linear") return InitKind::Linear;
    throw ConfigError("initial_model.kind must be gaussian or linear, got '" + s + "'");
}

std::string init_kind_name(InitKind k) { return k == InitKind::Gaussian ? "gaussian" : "linear"; }

Upsample parse_upsample(const std::string& s) {
    if (s == "transposed") return Upsample::Transposed;
    if (s == "bilinear") return Upsample::Bilinear;
    throw ConfigError("unet.upsample must be transposed or bilinear, got '" + s + "'");
}

std::string upsample_name(Upsample u) { return u == Upsample::Transposed ? "transposed" : "bilinear"; }

BenchmarkSpec spec_of(const std::string& name) {
    try {
        return benchmark_spec(name);
    } catch (const ModelError& e) {
        throw ConfigError(e.what());
    }
}

} // namespace

ExperimentConfig default_config(const std::string& benchmark) {
    const auto spec = spec_of(benchmark);
    ExperimentConfig c;
    c.benchmark = benchmark;
    c.geometry.n_sources = spec.n_sources;
    c.geometry.f0 = spec.f0;
    c.geometry.dt = spec.dt;
    c.geometry.nt = spec.nt;
    c.initial_model.v_top = spec.vmin;
    c.initial_model.v_bottom = spec.vmax;
    c.fwi.v_min = spec.vmin;
    c.fwi.v_max = spec.vmax;
    c.discriminator.fc_hidden = spec.fc_hidden;
    if (benchmark == "toy-two-layer") {
        // Clip range wider than the two true velocities; small nets for desk runs.
        c.initial_model.sigma = 3.0;
        c.fwi.v_min = 1500.0;
        c.fwi.v_max = 4000.0;
        c.unet.base_channels = 8;
        c.discriminator.base_channels = 8;
        c.gan.epochs = 50;
    }
    return c;
}

void ExperimentConfig::validate() const {
    spec_of(benchmark);
    if (geometry.n_sources < 1) throw ConfigError("geometry.n_sources must be >= 1");
    if (!(geometry.f0 > 0.0) || !(geometry.dt > 0.0) || geometry.nt < 2) {
        throw ConfigError("geometry: f0 and dt must be > 0 and nt >= 2");
    }
    if (!(geometry.sponge_coeff >= 0.0)) throw ConfigError("geometry.sponge_coeff must be >= 0");
    if (initial_model.kind == InitKind::Gaussian && !(initial_model.sigma >= 0.0)) {
        throw ConfigError("initial_model.sigma must be >= 0");
    }
    if (initial_model.kind == InitKind::Linear && !(initial_model.v_top > 0.0 && initial_model.v_bottom > 0.0)) {
        throw ConfigError("initial_model: v_top and v_bottom must be > 0");
    }
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
    try {
        gan.validate();
        fwi.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
}

std::size_t ExperimentConfig::resolved_baseline_iters() const {
    return baseline_iters ? baseline_iters : gan.epochs * gan.fwi_inner_iters;
}

ExperimentConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    Fields root(j, "");
    std::string bench = "toy-two-layer";
    root.get("benchmark", bench);
    ExperimentConfig c = default_config(bench);

    {
        auto f = root.sub("model");
        f.path("path", c.model.path);
        f.path("raw_path", c.model.raw_path);
        f.path("raw_descriptor", c.model.raw_descriptor);
        f.get("raw_dx_km", c.model.raw_dx_km);
        f.finish();
    }
    {
        auto f = root.sub("geometry");
        f.get("n_sources", c.geometry.n_sources);
        f.get("f0", c.geometry.f0);
        f.get("dt", c.geometry.dt);
        f.get("nt", c.geometry.nt);
        f.get("pml_width", c.geometry.pml_width);
        f.get("sponge_coeff", c.geometry.sponge_coeff);
        f.finish();
    }
    {
        auto f = root.sub("initial_model");
        std::string kind = init_kind_name(c.initial_model.kind);
        f.get("kind", kind);
        c.initial_model.kind = parse_init_kind(kind);
        f.get("sigma", c.initial_model.sigma);
        f.get("v_top", c.initial_model.v_top);
        f.get("v_bottom", c.initial_model.v_bottom);
        f.finish();
    }
    {
        auto f = root.sub("noise");
        std::string kind = c.noise.enabled ? "awgn" : "none";
        f.get("kind", kind);
        if (kind != "none" && kind != "awgn") throw ConfigError("noise.kind must be none or awgn, got '" + kind + "'");
        c.noise.enabled = kind == "awgn";
        f.get("snr_db", c.noise.snr_db);
        f.get("seed", c.noise.seed);
        f.finish();
    }
    {
        auto f = root.sub("gan");
        auto& g = c.gan;
        f.get("epochs", g.epochs);
        f.get("batch_size", g.batch_size);
        f.get("lr", g.lr);
        f.get("d_steps_per_g", g.d_steps_per_g);
        std::string loss = loss_kind_name(g.loss);
        f.get("loss", loss);
        try {
            g.loss = parse_loss_kind(loss);
        } catch (const GanError& e) {
            throw ConfigError(e.what());
        }
        f.get("gp_lambda", g.gp_lambda);
        f.get("fwi_inner_iters", g.fwi_inner_iters);
        f.get("distill_every", g.distill_every);
        f.get("distill_steps", g.distill_steps);
        f.get("pretrain_epochs", g.pretrain_epochs);
        f.get("adversarial_lr", g.adversarial_lr);
        f.get("checkpoint_every", g.checkpoint_every);
        f.finish();
    }
    {
        auto f = root.sub("fwi");
        f.get("n_iters", c.fwi.n_iters);
        f.get("lr", c.fwi.lr);
        f.get("v_min", c.fwi.v_min);
        f.get("v_max", c.fwi.v_max);
        f.get("water_top_freeze", c.fwi.water_top_freeze);
        f.get("snapshot_every", c.fwi.snapshot_every);
        f.finish();
    }
    {
        auto f = root.sub("unet");
        f.get("base_channels", c.unet.base_channels);
        f.get("input_h", c.unet.input_h);
        f.get("input_w", c.unet.input_w);
        std::string up = upsample_name(c.unet.upsample);
        f.get("upsample", up);
        c.unet.upsample = parse_upsample(up);
        f.finish();
    }
    {
        auto f = root.sub("discriminator");
        // Linear-start experiments use the smaller head unless told otherwise.
        if (c.initial_model.kind == InitKind::Linear && bench != "toy-two-layer") c.discriminator.fc_hidden = 1500;
        f.get("base_channels", c.discriminator.base_channels);
        f.get("n_blocks", c.discriminator.n_blocks);
        f.get("fc_hidden", c.discriminator.fc_hidden);
        f.get("leaky_slope", c.discriminator.leaky_slope);
        f.get("input_h", c.discriminator.input_h);
        f.get("input_w", c.discriminator.input_w);
        f.finish();
    }
    root.get("baseline_iters", c.baseline_iters);
    root.path("output_dir", c.output_dir);
    root.get("seed", c.seed);
    root.get("threads", c.threads);
    root.finish();

    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string to_json(const ExperimentConfig& c) {
    json j;
    j["benchmark"] = c.benchmark;
    j["model"] = {{"path", c.model.path.string()},
                  {"raw_path", c.model.raw_path.string()},
                  {"raw_descriptor", c.model.raw_descriptor.string()},
                  {"raw_dx_km", c.model.raw_dx_km}};
    j["geometry"] = {{"n_sources", c.geometry.n_sources},
                     {"f0", c.geometry.f0},
                     {"dt", c.geometry.dt},
                     {"nt", c.geometry.nt},
                     {"pml_width", c.geometry.pml_width},
                     {"sponge_coeff", c.geometry.sponge_coeff}};
    j["initial_model"] = {{"kind", init_kind_name(c.initial_model.kind)},
                          {"sigma", c.initial_model.sigma},
                          {"v_top", c.initial_model.v_top},
                          {"v_bottom", c.initial_model.v_bottom}};
    j["noise"] = {{"kind", c.noise.enabled ? "awgn" : "none"}, {"snr_db", c.noise.snr_db}, {"seed", c.noise.seed}};
    const auto& g = c.gan;
    j["gan"] = {{"epochs", g.epochs},
                {"batch_size", g.batch_size},
                {"lr", g.lr},
                {"d_steps_per_g", g.d_steps_per_g},
                {"loss", loss_kind_name(g.loss)},
                {"gp_lambda", g.gp_lambda},
                {"fwi_inner_iters", g.fwi_inner_iters},
                {"distill_every", g.distill_every},
                {"distill_steps", g.distill_steps},
                {"pretrain_epochs", g.pretrain_epochs},
                {"adversarial_lr", g.adversarial_lr},
                {"checkpoint_every", g.checkpoint_every}};
    j["fwi"] = {{"n_iters", c.fwi.n_iters},
                {"lr", c.fwi.lr},
                {"v_min", c.fwi.v_min},
                {"v_max", c.fwi.v_max},
                {"water_top_freeze", c.fwi.water_top_freeze},
                {"snapshot_every", c.fwi.snapshot_every}};
    j["unet"] = {{"base_channels", c.unet.base_channels},
                 {"input_h", c.unet.input_h},
                 {"input_w", c.unet.input_w},
                 {"upsample", upsample_name(c.unet.upsample)}};
    j["discriminator"] = {{"base_channels", c.discriminator.base_channels},
                          {"n_blocks", c.discriminator.n_blocks},
                          {"fc_hidden", c.discriminator.fc_hidden},
                          {"leaky_slope", c.discriminator.leaky_slope},
                          {"input_h", c.discriminator.input_h},
                          {"input_w", c.discriminator.input_w}};
    j["baseline_iters"] = c.baseline_iters;
    j["output_dir"] = c.output_dir.string();
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    return j.dump(2);
}

VelocityModel load_true_model(const ExperimentConfig& cfg) {
    const auto spec = spec_of(cfg.benchmark);
    if (!cfg.model.path.empty()) {
        auto m = read_model(cfg.model.path);
        if (m.nx != spec.nx || m.nz != spec.nz) {
            throw ConfigError("model " + cfg.model.path.string() + " is " + std::to_string(m.nx) + "x" +
                              std::to_string(m.nz) + ", benchmark " + cfg.benchmark + " needs " +
                              std::to_string(spec.nx) + "x" + std::to_string(spec.nz));
        }
        return m;
    }
    if (!cfg.model.raw_path.empty()) {
        if (cfg.model.raw_descriptor.empty() || !(cfg.model.raw_dx_km > 0.0)) {
            throw ConfigError("model.raw_path needs model.raw_descriptor and model.raw_dx_km");
        }
        auto desc = read_raw_descriptor(cfg.model.raw_descriptor);
        return prepare_model(spec, read_raw_grid(cfg.model.raw_path, desc, cfg.model.raw_dx_km));
    }
    if (cfg.benchmark == "toy-two-layer") return toy_two_layer();
    throw ConfigError("benchmark " + cfg.benchmark + " needs model.path or model.raw_path");
}

AcquisitionGeometry make_geometry(const ExperimentConfig& cfg, const VelocityModel& model) {
    const auto& g = cfg.geometry;
    auto geom = surface_geometry(model, g.n_sources, g.dt, g.nt, g.f0, g.pml_width);
    geom.sponge_coeff = g.sponge_coeff;
    return geom;
}

VelocityModel make_initial_model(const ExperimentConfig& cfg, const VelocityModel& true_model) {
    const auto& im = cfg.initial_model;
    if (im.kind == InitKind::Gaussian) return make_initial_gaussian(true_model, im.sigma);
    return make_initial_linear(im.v_top, im.v_bottom, true_model.nx, true_model.nz, true_model.dx_km);
}

Experiment build_experiment(const ExperimentConfig& cfg) {
    Experiment e;
    e.true_model = load_true_model(cfg);
    e.geometry = make_geometry(cfg, e.true_model);
    e.observed = synthesize_observed(e.true_model, e.geometry, cfg.threads);
    if (cfg.noise.enabled) e.observed = add_awgn(e.observed, cfg.noise.snr_db, cfg.noise.seed);
    e.initial_model = make_initial_model(cfg, e.true_model);
    return e;
}

GanConfig gan_config(const ExperimentConfig& cfg) {
    GanConfig g = cfg.gan;
    g.seed = cfg.seed;
    g.threads = cfg.threads;
    return g;
}

TrainOptions train_options(const ExperimentConfig& cfg) {
    TrainOptions o;
    o.unet = cfg.unet;
    o.disc = cfg.discriminator;
    o.fwi = cfg.fwi;
    o.fwi.threads = cfg.threads;
    o.run_dir = cfg.output_dir;
    o.config_json = to_json(cfg);
    return o;
}

} // namespace pgfwi
