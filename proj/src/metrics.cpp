#include "pgfwi/metrics.hpp"

#include <cmath>
#include <limits>
#include <random>

#include <json.hpp>

namespace pgfwi {

namespace {

void require_same_grid(const VelocityModel& a, const VelocityModel& b, const char* what) {
    if (a.nx != b.nx || a.nz != b.nz || a.v.size() != b.v.size()) {
        throw MetricError(std::string(what) + ": shape mismatch " + std::to_string(a.nx) + "x" +
                          std::to_string(a.nz) + " vs " + std::to_string(b.nx) + "x" + std::to_string(b.nz));
    }
}

std::size_t mirror(long i, std::size_t n) {
    const long period = 2 * static_cast<long>(n);
    long k = ((i % period) + period) % period;
    return static_cast<std::size_t>(k < static_cast<long>(n) ? k : period - 1 - k);
}

} // namespace

double ssim(const VelocityModel& v, const VelocityModel& v_hat, const SsimOptions& opts) {
    require_same_grid(v, v_hat, "ssim");
    if (opts.window == 0 || opts.window % 2 == 0) throw MetricError("ssim: window must be odd");
    double L = opts.L;
    if (L <= 0.0) L = v.vmax() - v.vmin();
    if (L <= 0.0) L = std::abs(v.vmax()); // constant reference: fall back to its level
    const double c1 = (0.01 * L) * (0.01 * L);
    const double c2 = (0.03 * L) * (0.03 * L);

    const long r = static_cast<long>(opts.window / 2);
    std::vector<double> w1(opts.window);
    double total = 0.0;
    for (long i = -r; i <= r; ++i) {
        w1[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * static_cast<double>(i * i) / (opts.sigma * opts.sigma));
        total += w1[static_cast<std::size_t>(i + r)];
    }
    for (auto& x : w1) x /= total;

    const std::size_t nx = v.nx, nz = v.nz;
    double acc = 0.0;
    for (std::size_t iz = 0; iz < nz; ++iz)
        for (std::size_t ix = 0; ix < nx; ++ix) {
            double ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
            for (long dz = -r; dz <= r; ++dz) {
                std::size_t z = mirror(static_cast<long>(iz) + dz, nz);
                double wz = w1[static_cast<std::size_t>(dz + r)];
                for (long dx = -r; dx <= r; ++dx) {
                    std::size_t k = z * nx + mirror(static_cast<long>(ix) + dx, nx);
                    double w = wz * w1[static_cast<std::size_t>(dx + r)];
                    double a = v.v[k], b = v_hat.v[k];
                    ma += w * a;
                    mb += w * b;
                    saa += w * a * a;
                    sbb += w * b * b;
                    sab += w * a * b;
                }
            }
            double va = saa - ma * ma, vb = sbb - mb * mb, cab = sab - ma * mb;
            acc += (2.0 * ma * mb + c1) * (2.0 * cab + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    return acc / static_cast<double>(nx * nz);
}

double snr(const VelocityModel& v, const VelocityModel& v_hat) {
    require_same_grid(v, v_hat, "snr");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < v.v.size(); ++i) {
        num += v.v[i] * v.v[i];
        den += (v.v[i] - v_hat.v[i]) * (v.v[i] - v_hat.v[i]);
    }
    if (num == 0.0) throw MetricError("snr: reference model is all zero");
    if (den == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(num / den);
}

ShotGather add_awgn(const ShotGather& d, double target_snr_db, std::uint64_t seed) {
    double energy = 0.0;
    for (double x : d.traces) energy += x * x;
    if (energy == 0.0) throw MetricError("add_awgn: input gather has zero energy");
    if (std::isinf(target_snr_db) && target_snr_db > 0.0) return d;
    if (!std::isfinite(target_snr_db)) throw MetricError("add_awgn: target SNR must be finite or +inf");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> noise(d.traces.size());
    double noise_energy = 0.0;
    for (auto& n : noise) {
        n = gauss(rng);
        noise_energy += n * n;
    }
    const double scale = std::sqrt(energy / std::pow(10.0, target_snr_db / 10.0) / noise_energy);
    ShotGather out = d;
    for (std::size_t i = 0; i < noise.size(); ++i) out.traces[i] += scale * noise[i];
    return out;
}

double data_snr(const ShotGather& clean, const ShotGather& noisy) {
    if (clean.traces.size() != noisy.traces.size()) throw MetricError("data_snr: gather size mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < clean.traces.size(); ++i) {
        num += clean.traces[i] * clean.traces[i];
        double e = noisy.traces[i] - clean.traces[i];
        den += e * e;
    }
    if (den == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(num / den);
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["ssim"] = ssim;
    if (std::isinf(snr_db)) {
        j["snr_db"] = "inf";
    } else {
        j["snr_db"] = snr_db;
    }
    j["window"] = window;
    j["sigma"] = sigma;
    j["L"] = L;
    return j.dump();
}

MetricReport evaluate(const VelocityModel& v, const VelocityModel& v_hat, const SsimOptions& opts) {
    MetricReport r;
    r.ssim = ssim(v, v_hat, opts);
    r.snr_db = snr(v, v_hat);
    r.window = opts.window;
    r.sigma = opts.sigma;
    r.L = opts.L > 0.0 ? opts.L : v.vmax() - v.vmin();
    return r;
}

} // namespace pgfwi
