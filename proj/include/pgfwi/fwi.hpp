#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <vector>

#include "pgfwi/adam.hpp"
#include "pgfwi/wavesim.hpp"

namespace pgfwi {

class FwiError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Gaussian blur (sigma in cells, truncated at 4 sigma) with half-sample
// symmetric padding. sigma = 0 returns a copy.
VelocityModel make_initial_gaussian(const VelocityModel& true_model, double sigma);

// Linear in depth, constant along x.
VelocityModel make_initial_linear(double v_top, double v_bottom, std::size_t nx, std::size_t nz,
                                  double dx_km);

struct FwiConfig {
    std::size_t n_iters = 10;
    double lr = 10.0; // m/s per Adam step
    double v_min = 1000.0;
    double v_max = 6000.0;
    std::size_t water_top_freeze = 0; // rows held fixed
    int threads = 1;
    std::size_t snapshot_every = 0; // 0 = no snapshots
    std::filesystem::path snapshot_dir;

    void validate() const;
};

// Adam for the velocity grid. Gradients of the sample-sum misfit carry the
// data's arbitrary amplitude scale, so eps sits far below any gradient scale.
AdamState velocity_optimizer(double lr);

struct FwiResult {
    VelocityModel model;
    std::vector<double> misfit; // E before each update
};

// n_iters Adam steps on E(v), clamping to [v_min, v_max] after each. Passing
// `state` lets successive calls continue one optimizer trajectory.
FwiResult fwi_refine(const VelocityModel& v0, const ShotGather& d_obs, const AcquisitionGeometry& geom,
                     const FwiConfig& cfg, AdamState* state = nullptr);

void write_misfit_csv(const std::filesystem::path& path, const std::vector<double>& misfit);

} // namespace pgfwi
