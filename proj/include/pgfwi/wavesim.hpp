#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace pgfwi {

class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CflError : public std::runtime_error {
public:
    CflError(const std::string& what, double max_dt) : std::runtime_error(what), max_dt_(max_dt) {}
    double max_dt() const { return max_dt_; }

private:
    double max_dt_;
};

class InstabilityError : public std::runtime_error {
public:
    InstabilityError(const std::string& what, std::size_t step)
        : std::runtime_error(what), step_(step) {}
    std::size_t step() const { return step_; }

private:
    std::size_t step_;
};

// Velocities in m/s on an nx-by-nz grid, x fastest: v[iz * nx + ix].
struct VelocityModel {
    std::size_t nx = 0;
    std::size_t nz = 0;
    double dx_km = 0.0;
    std::vector<double> v;

    double& at(std::size_t ix, std::size_t iz) { return v[iz * nx + ix]; }
    double at(std::size_t ix, std::size_t iz) const { return v[iz * nx + ix]; }
    double dx_m() const { return dx_km * 1000.0; }
    double vmin() const;
    double vmax() const;

    // Throws ModelError unless nx, nz >= 8, sizes agree and all v are finite and positive.
    void validate() const;
};

struct GridPoint {
    std::size_t ix = 0;
    std::size_t iz = 0;
    bool operator==(const GridPoint&) const = default;
};

struct AcquisitionGeometry {
    std::vector<GridPoint> sources;
    std::vector<GridPoint> receivers;
    double dt = 1e-3;
    std::size_t nt = 0;
    std::vector<double> wavelet; // nt samples
    std::size_t pml_width = 20;
    double sponge_coeff = 0.008;

    double record_length() const { return dt * static_cast<double>(nt); }
    void validate(const VelocityModel& model) const;
};

// Traces laid out [shot][receiver][time].
struct ShotGather {
    std::size_t ns = 0;
    std::size_t nr = 0;
    std::size_t nt = 0;
    std::vector<double> traces;

    ShotGather() = default;
    ShotGather(std::size_t ns_, std::size_t nr_, std::size_t nt_)
        : ns(ns_), nr(nr_), nt(nt_), traces(ns_ * nr_ * nt_, 0.0) {}

    double& at(std::size_t s, std::size_t r, std::size_t t) { return traces[(s * nr + r) * nt + t]; }
    double at(std::size_t s, std::size_t r, std::size_t t) const { return traces[(s * nr + r) * nt + t]; }
    const double* shot(std::size_t s) const { return traces.data() + s * nr * nt; }
    double* shot(std::size_t s) { return traces.data() + s * nr * nt; }
};

// Ricker wavelet with peak 1 at t = 1.5 / f0.
std::vector<double> ricker_wavelet(double f0, double dt, std::size_t nt);

struct CflReport {
    bool ok = false;
    double max_dt = 0.0; // seconds
};

// Stability bound of the second-order scheme: dt <= dx / (v_max * sqrt(2)).
CflReport check_cfl(const VelocityModel& model, double dt);
void require_cfl(const VelocityModel& model, double dt);

// Sources evenly spaced along the top row, receivers at every top-row cell.
AcquisitionGeometry surface_geometry(const VelocityModel& model, std::size_t n_sources, double dt,
                                     std::size_t nt, double f0, std::size_t pml_width = 20);

struct ForwardOptions {
    // Keep every k-th interior wavefield snapshot (0 = none).
    std::size_t history_stride = 0;
};

struct ShotRecord {
    std::vector<double> traces; // [receiver][time]
    std::vector<std::vector<double>> history; // interior nx*nz snapshots
};

// Single-shot modeling; snapshots i holds u after step i * history_stride.
ShotRecord forward_shot(const VelocityModel& model, const AcquisitionGeometry& geom,
                        std::size_t shot, const ForwardOptions& opts = {});

// All shots, fanned out over `threads` workers.
ShotGather forward_model(const VelocityModel& model, const AcquisitionGeometry& geom,
                         int threads = 1);

// Born modeling: directional derivative of forward_model along dv (m/s).
ShotGather linearized_forward(const VelocityModel& model, const AcquisitionGeometry& geom,
                              const std::vector<double>& dv, int threads = 1);

// Transpose of linearized_forward applied to data-space residuals.
std::vector<double> adjoint_gradient(const VelocityModel& model, const AcquisitionGeometry& geom,
                                     const ShotGather& residual, int threads = 1);

struct MisfitGradient {
    double misfit = 0.0;
    std::vector<double> gradient; // dE/dv, nx*nz
};

// E = 0.5 * sum (d_syn - d_obs)^2 over all samples, and its gradient.
MisfitGradient misfit_gradient(const VelocityModel& model, const AcquisitionGeometry& geom,
                               const ShotGather& d_obs, int threads = 1);

double misfit(const VelocityModel& model, const AcquisitionGeometry& geom, const ShotGather& d_obs,
              int threads = 1);

double misfit(const ShotGather& d_syn, const ShotGather& d_obs);

} // namespace pgfwi
