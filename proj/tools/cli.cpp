#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pgfwi/io.hpp"

namespace pgfwi::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError("cannot write " + path.string());
    os << text << '\n';
}

json report_json(const std::optional<double>& ssim_v, const std::optional<double>& snr_v, double e) {
    json j;
    j["E"] = e;
    if (ssim_v) j["ssim"] = *ssim_v;
    if (snr_v) {
        if (std::isinf(*snr_v)) {
            j["snr_db"] = "inf";
        } else {
            j["snr_db"] = *snr_v;
        }
    }
    return j;
}

std::string error_kind(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return "config";
    if (dynamic_cast<const FormatError*>(&e)) return "format";
    if (dynamic_cast<const CflError*>(&e)) return "cfl";
    if (dynamic_cast<const InstabilityError*>(&e)) return "instability";
    if (dynamic_cast<const ModelError*>(&e)) return "model";
    if (dynamic_cast<const FwiError*>(&e)) return "fwi";
    if (dynamic_cast<const GanError*>(&e)) return "gan";
    if (dynamic_cast<const NetError*>(&e)) return "net";
    if (dynamic_cast<const MetricError*>(&e)) return "metric";
    if (dynamic_cast<const ShapeError*>(&e)) return "shape";
    if (dynamic_cast<const AutodiffError*>(&e)) return "autodiff";
    if (dynamic_cast<const fs::filesystem_error*>(&e)) return "filesystem";
    return "internal";
}

void print_error(std::ostream& err, const std::string& kind, const std::string& message) {
    json j{{"error", kind}, {"message", message}};
    err << j.dump() << '\n';
}

// Options every experiment command shares.
struct Common {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    int threads = 0;
    std::string loss;

    void attach(CLI::App* app, bool with_loss) {
        app->add_option("--config", config, "Experiment config (JSON)")->check(CLI::ExistingFile);
        app->add_option("--out", out, "Output directory");
        app->add_option("--seed", seed, "Run seed");
        app->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
        if (with_loss) app->add_option("--loss", loss, "Adversarial loss")->check(CLI::IsMember({"vanilla", "wgan_gp"}));
    }

    ExperimentConfig resolve(const CLI::App* sub) const {
        ExperimentConfig c = config.empty() ? default_config("toy-two-layer") : load_config(config);
        if (!out.empty()) c.output_dir = out;
        if (sub->count("--seed")) c.seed = seed;
        if (!loss.empty()) c.gan.loss = parse_loss_kind(loss);
        c.threads = resolve_threads(threads, c.threads);
        c.fwi.threads = c.threads;
        c.validate();
        return c;
    }
};

Inputs load_inputs(const ExperimentConfig& cfg, const std::string& data, const std::string& init) {
    if (data.empty() && init.empty()) return inputs_from_config(cfg);
    Inputs in;
    try {
        in.truth = load_true_model(cfg);
    } catch (const ConfigError&) {
        // No true model named; metrics are skipped.
    }
    if (!data.empty()) {
        auto g = read_gather(data);
        in.observed = std::move(g.gather);
        in.geometry = std::move(g.geometry);
    } else {
        if (!in.truth) throw ConfigError("no observed data: pass --data or name a true model in the config");
        in.geometry = make_geometry(cfg, *in.truth);
        in.observed = synthesize_observed(*in.truth, in.geometry, cfg.threads);
        if (cfg.noise.enabled) in.observed = add_awgn(in.observed, cfg.noise.snr_db, cfg.noise.seed);
    }
    if (!init.empty()) {
        in.initial = read_model(init);
    } else {
        if (!in.truth) throw ConfigError("no initial model: pass --init or name a true model in the config");
        in.initial = make_initial_model(cfg, *in.truth);
    }
    return in;
}

} // namespace

int resolve_threads(int flag, int config_value) {
    if (flag > 0) return flag;
    if (const char* env = std::getenv("PGFWI_THREADS"); env && *env) {
        char* end = nullptr;
        long n = std::strtol(env, &end, 10);
        if (*end != '\0' || n < 1 || n > 1024) {
            throw ConfigError(std::string("PGFWI_THREADS must be a positive integer, got '") + env + "'");
        }
        return static_cast<int>(n);
    }
    return config_value;
}

Inputs inputs_from_config(const ExperimentConfig& cfg) {
    auto e = build_experiment(cfg);
    return Inputs{std::move(e.true_model), std::move(e.geometry), std::move(e.observed), std::move(e.initial_model)};
}

BaselineRun run_baseline(const ExperimentConfig& cfg, const Inputs& in, const fs::path& dir) {
    fs::create_directories(dir / "final");
    write_text(dir / "config.json", to_json(cfg));
    FwiConfig f = cfg.fwi;
    f.n_iters = cfg.resolved_baseline_iters();
    f.threads = cfg.threads;
    if (f.snapshot_every) f.snapshot_dir = dir / "models";
    BaselineRun run;
    if (f.n_iters == 0) {
        run.model = in.initial;
    } else {
        auto r = fwi_refine(in.initial, in.observed, in.geometry, f);
        run.model = std::move(r.model);
        run.misfit = std::move(r.misfit);
    }
    write_misfit_csv(dir / "misfit.csv", run.misfit);
    write_model(dir / "final" / "v_final.bin", run.model);
    if (in.truth) {
        run.report = evaluate(*in.truth, run.model);
        write_text(dir / "metrics.json", run.report->to_json());
    }
    return run;
}

TrainResult run_gan(const ExperimentConfig& cfg, const Inputs& in) {
    auto opts = train_options(cfg);
    opts.true_model = in.truth;
    auto r = train(gan_config(cfg), in.observed, in.geometry, in.initial, opts);
    json j{{"initial", report_json(r.initial_ssim, r.initial_snr_db, r.initial_misfit)},
           {"final", report_json(r.final_ssim, r.final_snr_db, r.final_misfit)},
           {"d_updates", r.d_updates},
           {"g_updates", r.g_updates}};
    write_text(cfg.output_dir / "final" / "metrics.json", j.dump());
    return r;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Physics-driven adversarial full-waveform inversion", "pgfwi"};
    app.require_subcommand(1);

    Common common;
    std::string model_path, data_path, init_path;

    auto* forward = app.add_subcommand("forward", "Model observed data on the true model");
    common.attach(forward, false);
    forward->add_option("--model", model_path, "Velocity model file (default: the config's true model)")
        ->check(CLI::ExistingFile);

    auto* make_init = app.add_subcommand("make-init", "Build the initial model");
    common.attach(make_init, false);
    make_init->add_option("--model", model_path, "True model file (default: the config's)")->check(CLI::ExistingFile);

    double snr_db = 0.0;
    auto* add_noise = app.add_subcommand("add-noise", "Add white Gaussian noise to a gather");
    common.attach(add_noise, false);
    add_noise->add_option("--data", data_path, "Gather file")->required()->check(CLI::ExistingFile);
    auto* snr_opt = add_noise->add_option("--snr-db", snr_db, "Target SNR in dB (default: config noise.snr_db)");

    std::size_t iters = 0;
    auto* fwi = app.add_subcommand("fwi", "Plain FWI baseline");
    common.attach(fwi, false);
    fwi->add_option("--data", data_path, "Observed gather file")->check(CLI::ExistingFile);
    fwi->add_option("--init", init_path, "Initial model file")->check(CLI::ExistingFile);
    auto* iters_opt = fwi->add_option("--iters", iters, "Iterations (default: epochs x inner iterations)");

    std::size_t epochs = 0;
    auto* gan = app.add_subcommand("gan-invert", "Adversarial inversion");
    common.attach(gan, true);
    gan->add_option("--data", data_path, "Observed gather file")->check(CLI::ExistingFile);
    gan->add_option("--init", init_path, "Initial model file")->check(CLI::ExistingFile);
    auto* epochs_opt = gan->add_option("--epochs", epochs, "Override gan.epochs");

    std::string true_path, inv_path;
    SsimOptions sopt;
    auto* metrics = app.add_subcommand("metrics", "SSIM and SNR of an inverted model");
    metrics->add_option("true", true_path, "True model file")->required()->check(CLI::ExistingFile);
    metrics->add_option("inverted", inv_path, "Inverted model file")->required()->check(CLI::ExistingFile);
    metrics->add_option("--window", sopt.window, "SSIM window (odd)");
    metrics->add_option("--sigma", sopt.sigma, "SSIM Gaussian sigma");
    metrics->add_option("--L", sopt.L, "SSIM dynamic range (default: range of the true model)");

    double vmin = 0.0, vmax = 0.0;
    auto* render = app.add_subcommand("render", "PGM image and CSV grid of a model");
    common.attach(render, false);
    render->add_option("model", model_path, "Model file")->required()->check(CLI::ExistingFile);
    auto* vmin_opt = render->add_option("--vmin", vmin, "Black level (default: config fwi.v_min)");
    auto* vmax_opt = render->add_option("--vmax", vmax, "White level (default: config fwi.v_max)");

    std::string raw_path, desc_path, benchmark;
    double dx_km = 0.0;
    auto* convert = app.add_subcommand("convert", "Raw f32/f64 grid to a model file");
    convert->add_option("raw", raw_path, "Raw grid")->required()->check(CLI::ExistingFile);
    convert->add_option("--descriptor", desc_path, "JSON {nx, nz, dtype, order}")->required()->check(CLI::ExistingFile);
    convert->add_option("--dx-km", dx_km, "Raw grid spacing in km")->required()->check(CLI::PositiveNumber);
    convert->add_option("--benchmark", benchmark, "Downsample to this benchmark's grid and check its range");
    std::string convert_out = ".";
    convert->add_option("--out", convert_out, "Output directory");

    std::vector<std::string> rest(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
    std::reverse(rest.begin(), rest.end());
    try {
        app.parse(rest);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        print_error(err, "usage", e.what());
        return 2;
    }

    try {
        if (metrics->parsed()) {
            out << evaluate(read_model(true_path), read_model(inv_path), sopt).to_json() << '\n';
            return 0;
        }
        if (convert->parsed()) {
            auto m = read_raw_grid(raw_path, read_raw_descriptor(desc_path), dx_km);
            if (!benchmark.empty()) m = prepare_model(benchmark_spec(benchmark), m);
            fs::create_directories(convert_out);
            auto path = fs::path(convert_out) / (fs::path(raw_path).stem().string() + ".bin");
            write_model(path, m);
            out << json{{"path", path.string()}, {"nx", m.nx}, {"nz", m.nz}}.dump() << '\n';
            return 0;
        }

        const CLI::App* sub = app.get_subcommands().front();
        auto cfg = common.resolve(sub);
        const fs::path dir = cfg.output_dir;
        if (forward->parsed()) {
            auto truth = model_path.empty() ? load_true_model(cfg) : read_model(model_path);
            auto geom = make_geometry(cfg, truth);
            fs::create_directories(dir);
            write_gather(dir / "d_obs.bin", synthesize_observed(truth, geom, cfg.threads), geom, "observed");
            out << json{{"path", (dir / "d_obs.bin").string()}}.dump() << '\n';
        } else if (make_init->parsed()) {
            auto truth = model_path.empty() ? load_true_model(cfg) : read_model(model_path);
            fs::create_directories(dir);
            write_model(dir / "v_init.bin", make_initial_model(cfg, truth));
            out << json{{"path", (dir / "v_init.bin").string()}}.dump() << '\n';
        } else if (add_noise->parsed()) {
            auto g = read_gather(data_path);
            double target = snr_opt->count() ? snr_db : cfg.noise.snr_db;
            std::uint64_t seed = sub->count("--seed") ? common.seed : cfg.noise.seed;
            auto noisy = add_awgn(g.gather, target, seed);
            fs::create_directories(dir);
            write_gather(dir / "d_noisy.bin", noisy, g.geometry, "noisy");
            out << json{{"path", (dir / "d_noisy.bin").string()}, {"snr_db", data_snr(g.gather, noisy)}}.dump()
                << '\n';
        } else if (fwi->parsed()) {
            if (iters_opt->count()) cfg.baseline_iters = iters;
            auto in = load_inputs(cfg, data_path, init_path);
            auto r = run_baseline(cfg, in, dir);
            json j{{"iterations", r.misfit.size()}, {"E_initial", r.misfit.empty() ? 0.0 : r.misfit.front()}};
            if (r.report) j["report"] = json::parse(r.report->to_json());
            out << j.dump() << '\n';
        } else if (gan->parsed()) {
            if (epochs_opt->count()) cfg.gan.epochs = epochs;
            auto in = load_inputs(cfg, data_path, init_path);
            run_gan(cfg, in);
            std::ifstream is(dir / "final" / "metrics.json");
            out << is.rdbuf();
        } else if (render->parsed()) {
            auto m = read_model(model_path);
            double lo = vmin_opt->count() ? vmin : cfg.fwi.v_min;
            double hi = vmax_opt->count() ? vmax : cfg.fwi.v_max;
            fs::create_directories(dir);
            auto stem = fs::path(model_path).stem().string();
            write_pgm(dir / (stem + ".pgm"), m, lo, hi);
            write_grid_csv(dir / (stem + ".csv"), m);
            out << json{{"pgm", (dir / (stem + ".pgm")).string()}, {"csv", (dir / (stem + ".csv")).string()}}.dump()
                << '\n';
        }
        return 0;
    } catch (const std::exception& e) {
        print_error(err, error_kind(e), e.what());
        return 1;
    }
}

} // namespace pgfwi::cli
