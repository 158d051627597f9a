#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgfwi/wavesim.hpp"

namespace pgfwi {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Sidecar of a binary file: "<path>.json".
std::filesystem::path sidecar_path(const std::filesystem::path& path);

// Raw little-endian f64 grid + sidecar {nx, nz, dx_km, vmin, vmax}.
void write_model(const std::filesystem::path& path, const VelocityModel& model);
VelocityModel read_model(const std::filesystem::path& path);

struct GatherFile {
    ShotGather gather;
    AcquisitionGeometry geometry;
    std::string kind; // "observed", "synthetic", "noisy", ...
};

// Raw little-endian f64 [ns][nr][nt] + sidecar with the full geometry.
void write_gather(const std::filesystem::path& path, const ShotGather& gather,
                  const AcquisitionGeometry& geom, const std::string& kind);
GatherFile read_gather(const std::filesystem::path& path);

// 8-bit gray levels round(255 (v - vmin) / (vmax - vmin)), clamped; row-major with depth down.
std::vector<std::uint8_t> gray_levels(const VelocityModel& model, double vmin, double vmax);
void write_pgm(const std::filesystem::path& path, const VelocityModel& model, double vmin, double vmax);
// One line per depth row.
void write_grid_csv(const std::filesystem::path& path, const VelocityModel& model);

void write_f64(const std::filesystem::path& path, const std::vector<double>& values);
std::vector<double> read_f64(const std::filesystem::path& path, std::size_t expected);

} // namespace pgfwi
