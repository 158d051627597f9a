#include "pgfwi/fwi.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <string>

#include "pgfwi/io.hpp"

namespace pgfwi {

namespace {

// Half-sample symmetric index: ... c b a | a b c ... | c b a ...
std::size_t reflect(long i, std::size_t n) {
    const long period = 2 * static_cast<long>(n);
    long k = ((i % period) + period) % period;
    return static_cast<std::size_t>(k < static_cast<long>(n) ? k : period - 1 - k);
}

std::vector<double> gaussian_kernel(double sigma) {
    const long radius = static_cast<long>(std::ceil(4.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (long i = -radius; i <= radius; ++i) {
        double w = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = w;
        total += w;
    }
    for (auto& w : k) w /= total;
    return k;
}

} // namespace

VelocityModel make_initial_gaussian(const VelocityModel& true_model, double sigma) {
    true_model.validate();
    if (!(sigma >= 0.0)) throw ModelError("make_initial_gaussian: sigma must be >= 0");
    VelocityModel out = true_model;
    if (sigma == 0.0) return out;

    auto k = gaussian_kernel(sigma);
    const long r = static_cast<long>(k.size() / 2);
    const std::size_t nx = out.nx, nz = out.nz;
    std::vector<double> tmp(out.v.size());
    for (std::size_t iz = 0; iz < nz; ++iz)
        for (std::size_t ix = 0; ix < nx; ++ix) {
            double s = 0.0;
            for (long j = -r; j <= r; ++j)
                s += k[static_cast<std::size_t>(j + r)] *
                     true_model.v[iz * nx + reflect(static_cast<long>(ix) + j, nx)];
            tmp[iz * nx + ix] = s;
        }
    for (std::size_t iz = 0; iz < nz; ++iz)
        for (std::size_t ix = 0; ix < nx; ++ix) {
            double s = 0.0;
            for (long j = -r; j <= r; ++j)
                s += k[static_cast<std::size_t>(j + r)] * tmp[reflect(static_cast<long>(iz) + j, nz) * nx + ix];
            out.v[iz * nx + ix] = s;
        }
    return out;
}

VelocityModel make_initial_linear(double v_top, double v_bottom, std::size_t nx, std::size_t nz,
                                  double dx_km) {
    if (nz < 2) throw ModelError("make_initial_linear: nz must be >= 2");
    VelocityModel m{nx, nz, dx_km, std::vector<double>(nx * nz)};
    for (std::size_t iz = 0; iz < nz; ++iz) {
        double v = v_top + (v_bottom - v_top) * static_cast<double>(iz) / static_cast<double>(nz - 1);
        std::fill_n(m.v.begin() + static_cast<long>(iz * nx), nx, v);
    }
    return m;
}

void FwiConfig::validate() const {
    if (!(v_min < v_max)) throw FwiError("fwi: v_min must be below v_max");
    if (!(lr >= 0.0)) throw FwiError("fwi: lr must be >= 0");
}

AdamState velocity_optimizer(double lr) {
    AdamState st;
    st.lr = lr;
    st.eps = 1e-30;
    return st;
}

FwiResult fwi_refine(const VelocityModel& v0, const ShotGather& d_obs, const AcquisitionGeometry& geom,
                     const FwiConfig& cfg, AdamState* state) {
    cfg.validate();
    v0.validate();
    AdamState local = velocity_optimizer(cfg.lr);
    AdamState& opt = state ? *state : local;

    FwiResult res{v0, {}};
    auto param = Tensor::from({v0.v.size()}, v0.v, true);
    std::vector<Tensor> params{param};
    const std::size_t frozen = std::min(cfg.water_top_freeze, v0.nz) * v0.nx;

    for (std::size_t it = 0; it < cfg.n_iters; ++it) {
        res.model.v.assign(param.data().begin(), param.data().end());
        auto mg = misfit_gradient(res.model, geom, d_obs, cfg.threads);
        if (!std::isfinite(mg.misfit)) {
            throw FwiError("fwi: misfit became non-finite at iteration " + std::to_string(it));
        }
        res.misfit.push_back(mg.misfit);
        std::fill_n(mg.gradient.begin(), frozen, 0.0);
        std::copy(mg.gradient.begin(), mg.gradient.end(), param.mutable_grad().begin());
        adam_step(params, opt);
        for (auto& v : param.storage()) v = std::clamp(v, cfg.v_min, cfg.v_max);

        if (cfg.snapshot_every && (it + 1) % cfg.snapshot_every == 0) {
            VelocityModel snap = res.model;
            snap.v.assign(param.data().begin(), param.data().end());
            std::filesystem::create_directories(cfg.snapshot_dir);
            write_model(cfg.snapshot_dir / ("iter_" + std::to_string(it + 1) + ".bin"), snap);
        }
    }
    res.model.v.assign(param.data().begin(), param.data().end());
    return res;
}

void write_misfit_csv(const std::filesystem::path& path, const std::vector<double>& misfit) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    out << "iteration,E\n" << std::setprecision(17);
    for (std::size_t i = 0; i < misfit.size(); ++i) out << i << ',' << misfit[i] << '\n';
}

} // namespace pgfwi
