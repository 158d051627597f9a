#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pgfwi/config.hpp"
#include "pgfwi/metrics.hpp"

namespace pgfwi::cli {

// Everything an inversion needs. The true model is absent when the config
// names none and the data came from a file.
struct Inputs {
    std::optional<VelocityModel> truth;
    AcquisitionGeometry geometry;
    ShotGather observed;
    VelocityModel initial;
};

struct BaselineRun {
    VelocityModel model;
    std::vector<double> misfit;
    std::optional<MetricReport> report;
};

// Plain FWI for cfg.resolved_baseline_iters() iterations. Writes config.json,
// misfit.csv, final/v_final.bin and, with a true model, metrics.json to `dir`.
BaselineRun run_baseline(const ExperimentConfig& cfg, const Inputs& in, const std::filesystem::path& dir);

// Full adversarial pipeline into cfg.output_dir, plus final/metrics.json.
TrainResult run_gan(const ExperimentConfig& cfg, const Inputs& in);

Inputs inputs_from_config(const ExperimentConfig& cfg);

// Flag, then PGFWI_THREADS, then the config value.
int resolve_threads(int flag, int config_value);

// argv[0] is the program name. Errors go to `err` as one JSON line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace pgfwi::cli
