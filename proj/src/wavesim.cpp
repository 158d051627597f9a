#include "pgfwi/wavesim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "pgfwi/parallel.hpp"

namespace pgfwi {

double VelocityModel::vmin() const { return *std::min_element(v.begin(), v.end()); }
double VelocityModel::vmax() const { return *std::max_element(v.begin(), v.end()); }

void VelocityModel::validate() const {
    if (nx < 8 || nz < 8) {
        throw ModelError("velocity model: grid " + std::to_string(nx) + "x" + std::to_string(nz) +
                         " is smaller than 8x8");
    }
    if (v.size() != nx * nz) {
        throw ModelError("velocity model: " + std::to_string(v.size()) + " values for a " +
                         std::to_string(nx) + "x" + std::to_string(nz) + " grid");
    }
    if (!(dx_km > 0.0)) throw ModelError("velocity model: grid spacing must be positive");
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i]) || v[i] <= 0.0) {
            throw ModelError("velocity model: invalid velocity " + std::to_string(v[i]) + " at cell (" +
                             std::to_string(i % nx) + "," + std::to_string(i / nx) + ")");
        }
    }
}

void AcquisitionGeometry::validate(const VelocityModel& model) const {
    if (sources.empty()) throw ModelError("geometry: no sources");
    if (receivers.empty()) throw ModelError("geometry: no receivers");
    if (!(dt > 0.0)) throw ModelError("geometry: dt must be positive");
    if (nt == 0) throw ModelError("geometry: nt must be positive");
    if (wavelet.size() != nt) {
        throw ModelError("geometry: wavelet has " + std::to_string(wavelet.size()) + " samples, nt is " +
                         std::to_string(nt));
    }
    auto check = [&](const GridPoint& p, const char* what) {
        if (p.ix >= model.nx || p.iz >= model.nz) {
            throw ModelError(std::string("geometry: ") + what + " (" + std::to_string(p.ix) + "," +
                             std::to_string(p.iz) + ") outside the " + std::to_string(model.nx) + "x" +
                             std::to_string(model.nz) + " grid");
        }
    };
    for (const auto& s : sources) check(s, "source");
    for (const auto& r : receivers) check(r, "receiver");
}

std::vector<double> ricker_wavelet(double f0, double dt, std::size_t nt) {
    if (!(f0 > 0.0) || !(dt > 0.0)) throw ModelError("ricker: f0 and dt must be positive");
    std::vector<double> w(nt);
    const double delay = 1.5 / f0;
    const double a = std::numbers::pi * std::numbers::pi * f0 * f0;
    for (std::size_t i = 0; i < nt; ++i) {
        double tau = static_cast<double>(i) * dt - delay;
        double x = a * tau * tau;
        w[i] = (1.0 - 2.0 * x) * std::exp(-x);
    }
    return w;
}

CflReport check_cfl(const VelocityModel& model, double dt) {
    CflReport r;
    r.max_dt = model.dx_m() / (model.vmax() * std::numbers::sqrt2);
    r.ok = dt <= r.max_dt;
    return r;
}

void require_cfl(const VelocityModel& model, double dt) {
    auto r = check_cfl(model, dt);
    if (!r.ok) {
        std::ostringstream os;
        os << "CFL violation: dt=" << dt << " s exceeds max stable dt=" << r.max_dt << " s (dx="
           << model.dx_m() << " m, v_max=" << model.vmax() << " m/s)";
        throw CflError(os.str(), r.max_dt);
    }
}

AcquisitionGeometry surface_geometry(const VelocityModel& model, std::size_t n_sources, double dt,
                                     std::size_t nt, double f0, std::size_t pml_width) {
    AcquisitionGeometry g;
    g.dt = dt;
    g.nt = nt;
    g.pml_width = pml_width;
    g.wavelet = ricker_wavelet(f0, dt, nt);
    for (std::size_t i = 0; i < n_sources; ++i) {
        std::size_t ix = n_sources == 1
                             ? model.nx / 2
                             : static_cast<std::size_t>(std::lround(static_cast<double>(i) *
                                                                    static_cast<double>(model.nx - 1) /
                                                                    static_cast<double>(n_sources - 1)));
        g.sources.push_back({ix, 0});
    }
    for (std::size_t ix = 0; ix < model.nx; ++ix) g.receivers.push_back({ix, 0});
    return g;
}

namespace {

// Padded grid = model + sponge of pml_width cells per side + one ghost cell
// of zeros. One step:
//   u+ = g * (2u - g*u- + C * (L u + e_s f)),   C = v^2 dt^2 / dx^2
// with L the 5-point Laplacian in cell units and g the sponge taper.
class Propagator {
public:
    Propagator(const VelocityModel& model, const AcquisitionGeometry& geom)
        : model_(model), geom_(geom) {
        model.validate();
        geom.validate(model);
        require_cfl(model, geom.dt);
        w_ = geom.pml_width;
        off_ = w_ + 1;
        sx_ = model.nx + 2 * w_ + 2;
        sz_ = model.nz + 2 * w_ + 2;
        c_.assign(size(), 0.0);
        damp_.assign(size(), 0.0);
        const double k = geom.dt * geom.dt / (model.dx_m() * model.dx_m());
        std::vector<double> tx(model.nx + 2 * w_), tz(model.nz + 2 * w_);
        auto taper = [&](std::vector<double>& t, std::size_t n) {
            for (std::size_t i = 0; i < t.size(); ++i) {
                std::size_t dist = i < w_ ? w_ - i : (i >= n + w_ ? i - (n + w_) + 1 : 0);
                double a = geom.sponge_coeff * static_cast<double>(dist);
                t[i] = std::exp(-a * a);
            }
        };
        taper(tx, model.nx);
        taper(tz, model.nz);
        for (std::size_t pz = 0; pz < model.nz + 2 * w_; ++pz) {
            for (std::size_t px = 0; px < model.nx + 2 * w_; ++px) {
                std::size_t i = (pz + 1) * sx_ + px + 1;
                double v = model.v[model_cell(px, pz)];
                c_[i] = v * v * k;
                damp_[i] = tx[px] * tz[pz];
            }
        }
    }

    std::size_t size() const { return sx_ * sz_; }
    std::size_t cell(const GridPoint& p) const { return (p.iz + off_) * sx_ + p.ix + off_; }
    const AcquisitionGeometry& geom() const { return geom_; }
    const VelocityModel& model() const { return model_; }

    // Model cell supplying the velocity of padded cell (px, pz): edge replication.
    std::size_t model_cell(std::size_t px, std::size_t pz) const {
        std::size_t ix = std::min(px > w_ ? px - w_ : 0, model_.nx - 1);
        std::size_t iz = std::min(pz > w_ ? pz - w_ : 0, model_.nz - 1);
        return iz * model_.nx + ix;
    }

    void step(const double* prev, const double* cur, double* next, std::size_t src, double f) const {
        const std::size_t sx = sx_;
        for (std::size_t z = 1; z + 1 < sz_; ++z) {
            const std::size_t row = z * sx;
            for (std::size_t x = 1; x + 1 < sx; ++x) {
                const std::size_t i = row + x;
                double lap = cur[i - 1] + cur[i + 1] + cur[i - sx] + cur[i + sx] - 4.0 * cur[i];
                next[i] = damp_[i] * (2.0 * cur[i] - damp_[i] * prev[i] + c_[i] * lap);
            }
        }
        next[src] += damp_[src] * c_[src] * f;
    }

    // Born step: adds g * dC * (L u + e_s f) scattered by the background field.
    void born_step(const double* prev, const double* cur, double* next, const double* dc,
                   const double* u, std::size_t src, double f) const {
        step(prev, cur, next, src, 0.0);
        const std::size_t sx = sx_;
        for (std::size_t z = 1; z + 1 < sz_; ++z) {
            const std::size_t row = z * sx;
            for (std::size_t x = 1; x + 1 < sx; ++x) {
                const std::size_t i = row + x;
                double lap = u[i - 1] + u[i + 1] + u[i - sx] + u[i + sx] - 4.0 * u[i];
                next[i] += damp_[i] * dc[i] * lap;
            }
        }
        next[src] += damp_[src] * dc[src] * f;
    }

    // Adjoint recursion: out = g * (2 nu1 + L(C nu1) - g nu2 + R^T r).
    void adjoint_step(const double* nu1, const double* nu2, double* out, double* scratch) const {
        const std::size_t sx = sx_;
        for (std::size_t i = 0; i < size(); ++i) scratch[i] = c_[i] * nu1[i];
        for (std::size_t z = 1; z + 1 < sz_; ++z) {
            const std::size_t row = z * sx;
            for (std::size_t x = 1; x + 1 < sx; ++x) {
                const std::size_t i = row + x;
                double lap = scratch[i - 1] + scratch[i + 1] + scratch[i - sx] + scratch[i + sx] -
                             4.0 * scratch[i];
                out[i] = 2.0 * nu1[i] + lap - damp_[i] * nu2[i];
            }
        }
    }

    void damp_in_place(double* u) const {
        for (std::size_t i = 0; i < size(); ++i) u[i] *= damp_[i];
    }
    double damp(std::size_t i) const { return damp_[i]; }

    // grad_c[i] += nu[i] * (L u + e_s f)[i]
    void accumulate(const double* nu, const double* u, std::size_t src, double f, double* grad_c) const {
        const std::size_t sx = sx_;
        for (std::size_t z = 1; z + 1 < sz_; ++z) {
            const std::size_t row = z * sx;
            for (std::size_t x = 1; x + 1 < sx; ++x) {
                const std::size_t i = row + x;
                double lap = u[i - 1] + u[i + 1] + u[i - sx] + u[i + sx] - 4.0 * u[i];
                grad_c[i] += nu[i] * lap;
            }
        }
        grad_c[src] += nu[src] * f;
    }

    // Chain rule through C = v^2 dt^2/dx^2 and the edge-replicated padding.
    std::vector<double> to_model_gradient(const std::vector<double>& grad_c) const {
        std::vector<double> g(model_.nx * model_.nz, 0.0);
        const double k = geom_.dt * geom_.dt / (model_.dx_m() * model_.dx_m());
        for (std::size_t pz = 0; pz < model_.nz + 2 * w_; ++pz)
            for (std::size_t px = 0; px < model_.nx + 2 * w_; ++px) {
                std::size_t m = model_cell(px, pz);
                g[m] += grad_c[(pz + 1) * sx_ + px + 1] * 2.0 * model_.v[m] * k;
            }
        return g;
    }

    // Perturbation dv (model cells) to dC on the padded grid.
    std::vector<double> to_padded_dc(const std::vector<double>& dv) const {
        std::vector<double> dc(size(), 0.0);
        const double k = geom_.dt * geom_.dt / (model_.dx_m() * model_.dx_m());
        for (std::size_t pz = 0; pz < model_.nz + 2 * w_; ++pz)
            for (std::size_t px = 0; px < model_.nx + 2 * w_; ++px) {
                std::size_t m = model_cell(px, pz);
                dc[(pz + 1) * sx_ + px + 1] = 2.0 * model_.v[m] * dv[m] * k;
            }
        return dc;
    }

    void copy_interior(const double* u, std::vector<double>& out) const {
        out.resize(model_.nx * model_.nz);
        for (std::size_t iz = 0; iz < model_.nz; ++iz)
            for (std::size_t ix = 0; ix < model_.nx; ++ix)
                out[iz * model_.nx + ix] = u[(iz + off_) * sx_ + ix + off_];
    }

    void check_finite(const double* u, std::size_t step_index) const {
        for (std::size_t i = 0; i < size(); ++i) {
            if (!std::isfinite(u[i])) {
                throw InstabilityError("wave simulation became unstable at step " +
                                           std::to_string(step_index),
                                       step_index);
            }
        }
    }

private:
    const VelocityModel& model_;
    const AcquisitionGeometry& geom_;
    std::size_t w_ = 0, off_ = 0, sx_ = 0, sz_ = 0;
    std::vector<double> c_, damp_;
};

constexpr std::size_t kCheckEvery = 100;

void check_shot(const AcquisitionGeometry& geom, std::size_t shot) {
    if (shot >= geom.sources.size()) {
        throw ModelError("shot index " + std::to_string(shot) + " out of range (" +
                         std::to_string(geom.sources.size()) + " sources)");
    }
}

std::vector<double> run_forward(const Propagator& prop, std::size_t shot, const ForwardOptions& opts,
                                std::vector<std::vector<double>>* history) {
    const auto& geom = prop.geom();
    const std::size_t nr = geom.receivers.size(), nt = geom.nt;
    const std::size_t src = prop.cell(geom.sources[shot]);
    std::vector<std::size_t> rec(nr);
    for (std::size_t r = 0; r < nr; ++r) rec[r] = prop.cell(geom.receivers[r]);

    std::vector<double> prev(prop.size(), 0.0), cur(prop.size(), 0.0), next(prop.size(), 0.0);
    std::vector<double> traces(nr * nt);
    for (std::size_t n = 0; n < nt; ++n) {
        prop.step(prev.data(), cur.data(), next.data(), src, geom.wavelet[n]);
        for (std::size_t r = 0; r < nr; ++r) traces[r * nt + n] = next[rec[r]];
        if ((n + 1) % kCheckEvery == 0) prop.check_finite(next.data(), n + 1);
        if (history && opts.history_stride && (n + 1) % opts.history_stride == 0) {
            history->emplace_back();
            prop.copy_interior(next.data(), history->back());
        }
        std::swap(prev, cur);
        std::swap(cur, next);
    }
    prop.check_finite(cur.data(), nt);
    return traces;
}

struct Checkpoint {
    std::vector<double> prev, cur;
};

// Forward pass storing state every `stride` steps, then a reverse sweep that
// recomputes each segment from its checkpoint. `make_residual` receives the
// recorded traces ([receiver][time]) and writes the adjoint source.
template <class ResidualFn>
std::vector<double> shot_adjoint(const Propagator& prop, std::size_t shot, ResidualFn&& make_residual) {
    const auto& geom = prop.geom();
    const std::size_t nr = geom.receivers.size(), nt = geom.nt, size = prop.size();
    const std::size_t src = prop.cell(geom.sources[shot]);
    std::vector<std::size_t> rec(nr);
    for (std::size_t r = 0; r < nr; ++r) rec[r] = prop.cell(geom.receivers[r]);
    const auto& f = geom.wavelet;

    const std::size_t stride = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(nt)))));
    std::vector<Checkpoint> cps;
    std::vector<double> traces(nr * nt);
    {
        std::vector<double> prev(size, 0.0), cur(size, 0.0), next(size, 0.0);
        for (std::size_t n = 0; n < nt; ++n) {
            if (n % stride == 0) cps.push_back({prev, cur});
            prop.step(prev.data(), cur.data(), next.data(), src, f[n]);
            for (std::size_t r = 0; r < nr; ++r) traces[r * nt + n] = next[rec[r]];
            if ((n + 1) % kCheckEvery == 0) prop.check_finite(next.data(), n + 1);
            std::swap(prev, cur);
            std::swap(cur, next);
        }
        prop.check_finite(cur.data(), nt);
    }
    std::vector<double> residual(nr * nt, 0.0);
    make_residual(traces, residual);

    std::vector<double> grad_c(size, 0.0);
    std::vector<double> nu1(size, 0.0), nu2(size, 0.0), nu0(size, 0.0), scratch(size, 0.0);
    std::vector<std::vector<double>> seg(stride, std::vector<double>(size));
    for (std::size_t j = cps.size(); j-- > 0;) {
        const std::size_t n0 = j * stride;
        const std::size_t n1 = std::min(nt, n0 + stride);
        // seg[k] = u^{n0 + k}
        seg[0] = cps[j].cur;
        {
            std::vector<double> prev = cps[j].prev;
            for (std::size_t n = n0; n + 1 < n1; ++n) {
                const double* p = n == n0 ? prev.data() : seg[n - 1 - n0].data();
                prop.step(p, seg[n - n0].data(), seg[n + 1 - n0].data(), src, f[n]);
            }
        }
        for (std::size_t m = n1; m > n0; --m) {
            // nu^m from nu^{m+1}, nu^{m+2} and the residual at sample m-1.
            prop.adjoint_step(nu1.data(), nu2.data(), nu0.data(), scratch.data());
            for (std::size_t r = 0; r < nr; ++r) nu0[rec[r]] += residual[r * nt + (m - 1)];
            prop.damp_in_place(nu0.data());
            prop.accumulate(nu0.data(), seg[m - 1 - n0].data(), src, f[m - 1], grad_c.data());
            std::swap(nu2, nu1);
            std::swap(nu1, nu0);
        }
    }
    return prop.to_model_gradient(grad_c);
}

void check_gather(const ShotGather& d, const AcquisitionGeometry& geom, const char* what) {
    if (d.ns != geom.sources.size() || d.nr != geom.receivers.size() || d.nt != geom.nt ||
        d.traces.size() != d.ns * d.nr * d.nt) {
        throw ModelError(std::string(what) + ": gather dims (" + std::to_string(d.ns) + "," +
                         std::to_string(d.nr) + "," + std::to_string(d.nt) +
                         ") do not match the acquisition geometry");
    }
}

std::vector<double> sum_in_order(const std::vector<std::vector<double>>& parts, std::size_t n) {
    std::vector<double> total(n, 0.0);
    for (const auto& p : parts)
        for (std::size_t i = 0; i < n; ++i) total[i] += p[i];
    return total;
}

} // namespace

ShotRecord forward_shot(const VelocityModel& model, const AcquisitionGeometry& geom, std::size_t shot,
                        const ForwardOptions& opts) {
    Propagator prop(model, geom);
    check_shot(geom, shot);
    ShotRecord rec;
    rec.traces = run_forward(prop, shot, opts, &rec.history);
    return rec;
}

ShotGather forward_model(const VelocityModel& model, const AcquisitionGeometry& geom, int threads) {
    Propagator prop(model, geom);
    ShotGather out(geom.sources.size(), geom.receivers.size(), geom.nt);
    parallel_for(out.ns, threads, [&](std::size_t s) {
        auto traces = run_forward(prop, s, {}, nullptr);
        std::copy(traces.begin(), traces.end(), out.shot(s));
    });
    return out;
}

ShotGather linearized_forward(const VelocityModel& model, const AcquisitionGeometry& geom,
                              const std::vector<double>& dv, int threads) {
    Propagator prop(model, geom);
    if (dv.size() != model.v.size()) throw ModelError("linearized_forward: perturbation size mismatch");
    const auto dc = prop.to_padded_dc(dv);
    ShotGather out(geom.sources.size(), geom.receivers.size(), geom.nt);
    parallel_for(out.ns, threads, [&](std::size_t s) {
        const std::size_t size = prop.size(), nt = geom.nt, nr = geom.receivers.size();
        const std::size_t src = prop.cell(geom.sources[s]);
        std::vector<double> up(size, 0.0), uc(size, 0.0), un(size, 0.0);
        std::vector<double> bp(size, 0.0), bc(size, 0.0), bn(size, 0.0);
        double* traces = out.shot(s);
        for (std::size_t n = 0; n < nt; ++n) {
            prop.born_step(bp.data(), bc.data(), bn.data(), dc.data(), uc.data(), src, geom.wavelet[n]);
            prop.step(up.data(), uc.data(), un.data(), src, geom.wavelet[n]);
            for (std::size_t r = 0; r < nr; ++r) traces[r * nt + n] = bn[prop.cell(geom.receivers[r])];
            std::swap(up, uc);
            std::swap(uc, un);
            std::swap(bp, bc);
            std::swap(bc, bn);
        }
        prop.check_finite(bc.data(), nt);
    });
    return out;
}

std::vector<double> adjoint_gradient(const VelocityModel& model, const AcquisitionGeometry& geom,
                                     const ShotGather& residual, int threads) {
    Propagator prop(model, geom);
    check_gather(residual, geom, "adjoint_gradient");
    std::vector<std::vector<double>> parts(residual.ns);
    parallel_for(residual.ns, threads, [&](std::size_t s) {
        parts[s] = shot_adjoint(prop, s, [&](const std::vector<double>&, std::vector<double>& res) {
            std::copy(residual.shot(s), residual.shot(s) + res.size(), res.begin());
        });
    });
    return sum_in_order(parts, model.v.size());
}

MisfitGradient misfit_gradient(const VelocityModel& model, const AcquisitionGeometry& geom,
                               const ShotGather& d_obs, int threads) {
    Propagator prop(model, geom);
    check_gather(d_obs, geom, "misfit_gradient");
    std::vector<std::vector<double>> parts(d_obs.ns);
    std::vector<double> shot_misfit(d_obs.ns, 0.0);
    parallel_for(d_obs.ns, threads, [&](std::size_t s) {
        parts[s] = shot_adjoint(prop, s, [&](const std::vector<double>& traces, std::vector<double>& res) {
            const double* obs = d_obs.shot(s);
            double e = 0.0;
            for (std::size_t i = 0; i < res.size(); ++i) {
                res[i] = traces[i] - obs[i];
                e += res[i] * res[i];
            }
            shot_misfit[s] = 0.5 * e;
        });
    });
    MisfitGradient out;
    for (double e : shot_misfit) out.misfit += e;
    out.gradient = sum_in_order(parts, model.v.size());
    return out;
}

double misfit(const ShotGather& d_syn, const ShotGather& d_obs) {
    if (d_syn.traces.size() != d_obs.traces.size()) throw ModelError("misfit: gather size mismatch");
    double e = 0.0;
    for (std::size_t i = 0; i < d_syn.traces.size(); ++i) {
        double r = d_syn.traces[i] - d_obs.traces[i];
        e += r * r;
    }
    return 0.5 * e;
}

double misfit(const VelocityModel& model, const AcquisitionGeometry& geom, const ShotGather& d_obs,
              int threads) {
    check_gather(d_obs, geom, "misfit");
    return misfit(forward_model(model, geom, threads), d_obs);
}

} // namespace pgfwi
