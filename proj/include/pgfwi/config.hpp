#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "pgfwi/fwi.hpp"
#include "pgfwi/gan.hpp"
#include "pgfwi/models.hpp"
#include "pgfwi/nets.hpp"

namespace pgfwi {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Where the true model comes from. All empty: the built-in toy model
// (toy-two-layer only).
struct ModelSource {
    std::filesystem::path path; // model file (f64 + sidecar)
    std::filesystem::path raw_path; // full-resolution raw grid, prepared to the benchmark grid
    std::filesystem::path raw_descriptor;
    double raw_dx_km = 0.0;
};

struct GeometryConfig {
    std::size_t n_sources = 10;
    double f0 = 5.0;
    double dt = 1e-3;
    std::size_t nt = 2000;
    std::size_t pml_width = 20;
    double sponge_coeff = 0.008;
};

enum class InitKind { Gaussian, Linear };

struct InitialModelConfig {
    InitKind kind = InitKind::Gaussian;
    double sigma = 10.0; // cells
    double v_top = 0.0;
    double v_bottom = 0.0;
};

struct NoiseConfig {
    bool enabled = false;
    double snr_db = 10.0;
    std::uint64_t seed = 0;
};

struct ExperimentConfig {
    std::string benchmark = "toy-two-layer";
    ModelSource model;
    GeometryConfig geometry;
    InitialModelConfig initial_model;
    NoiseConfig noise;
    GanConfig gan;
    FwiConfig fwi;
    UNetConfig unet;
    DiscriminatorConfig discriminator;
    // Iterations of the plain-FWI baseline; 0 means gan.epochs * gan.fwi_inner_iters.
    std::size_t baseline_iters = 0;
    std::filesystem::path output_dir = "run";
    std::uint64_t seed = 0;
    int threads = 1;

    void validate() const;
    std::size_t resolved_baseline_iters() const;
};

// Every field at its default for the named benchmark.
ExperimentConfig default_config(const std::string& benchmark);

// Missing keys take the benchmark's defaults; unknown keys throw ConfigError.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Complete document; parse_config(to_json(c)) reproduces c.
std::string to_json(const ExperimentConfig& cfg);

// True model, acquisition, observed data (noise applied) and initial model.
struct Experiment {
    VelocityModel true_model;
    AcquisitionGeometry geometry;
    ShotGather observed;
    VelocityModel initial_model;
};

VelocityModel load_true_model(const ExperimentConfig& cfg);
AcquisitionGeometry make_geometry(const ExperimentConfig& cfg, const VelocityModel& model);
VelocityModel make_initial_model(const ExperimentConfig& cfg, const VelocityModel& true_model);
Experiment build_experiment(const ExperimentConfig& cfg);

// gan settings with the experiment's seed and thread count applied.
GanConfig gan_config(const ExperimentConfig& cfg);
TrainOptions train_options(const ExperimentConfig& cfg);

} // namespace pgfwi
