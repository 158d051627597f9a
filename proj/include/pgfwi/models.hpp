#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "pgfwi/wavesim.hpp"

namespace pgfwi {

struct BenchmarkSpec {
    std::string name; // marmousi | overthrust | toy-two-layer
    std::size_t nx = 0;
    std::size_t nz = 0;
    double dx_km = 0.0;
    double vmin = 0.0;
    double vmax = 0.0;
    std::filesystem::path source_path; // raw full-resolution grid, user supplied

    // Acquisition defaults that go with the model.
    double f0 = 5.0;
    double dt = 1e-3;
    std::size_t nt = 2000;
    std::size_t n_sources = 10;
    std::size_t fc_hidden = 2000;
};

// Throws ModelError for unknown names.
BenchmarkSpec benchmark_spec(const std::string& name);

// 32x16 grid, 10 m cells, 2000 m/s over 3000 m/s with the interface at mid-depth.
VelocityModel toy_two_layer();

AcquisitionGeometry benchmark_geometry(const BenchmarkSpec& spec, const VelocityModel& model);

struct RawDescriptor {
    std::size_t nx = 0;
    std::size_t nz = 0;
    std::string dtype = "f32"; // f32 | f64
    std::string order = "x_fastest"; // x_fastest | z_fastest
};

RawDescriptor read_raw_descriptor(const std::filesystem::path& json_path);

// Little-endian raw grid to a model (x fastest) with the given spacing.
VelocityModel read_raw_grid(const std::filesystem::path& path, const RawDescriptor& desc, double dx_km);

// Area-weighted average onto an nx-by-nz grid covering the same extent.
VelocityModel downsample_area(const VelocityModel& raw, std::size_t nx, std::size_t nz, double dx_km);

// Downsamples to the benchmark grid and checks the velocity range against
// the benchmark's, within `tolerance` of its span.
VelocityModel prepare_model(const BenchmarkSpec& spec, const VelocityModel& raw, double tolerance = 0.01);

// Observed data on the true model. Deterministic.
ShotGather synthesize_observed(const VelocityModel& model, const AcquisitionGeometry& geom, int threads = 1);

} // namespace pgfwi
