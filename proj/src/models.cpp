#include "pgfwi/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pgfwi/io.hpp"

namespace pgfwi {

BenchmarkSpec benchmark_spec(const std::string& name) {
    BenchmarkSpec s;
    s.name = name;
    if (name == "marmousi") {
        s.nx = 191, s.nz = 51, s.dx_km = 0.03, s.vmin = 1472.0, s.vmax = 5772.0;
        s.nt = 2000, s.fc_hidden = 2000;
    } else if (name == "overthrust") {
        s.nx = 251, s.nz = 81, s.dx_km = 0.05, s.vmin = 2360.0, s.vmax = 6000.0;
        s.nt = 2500, s.fc_hidden = 1000;
    } else if (name == "toy-two-layer") {
        s.nx = 32, s.nz = 16, s.dx_km = 0.01, s.vmin = 2000.0, s.vmax = 3000.0;
        s.f0 = 15.0, s.nt = 500, s.n_sources = 3, s.fc_hidden = 64;
    } else {
        throw ModelError("unknown benchmark '" + name + "' (expected marmousi, overthrust or toy-two-layer)");
    }
    return s;
}

VelocityModel toy_two_layer() {
    VelocityModel m{32, 16, 0.01, std::vector<double>(32 * 16, 2000.0)};
    std::fill(m.v.begin() + 8 * 32, m.v.end(), 3000.0);
    return m;
}

AcquisitionGeometry benchmark_geometry(const BenchmarkSpec& spec, const VelocityModel& model) {
    return surface_geometry(model, spec.n_sources, spec.dt, spec.nt, spec.f0);
}

RawDescriptor read_raw_descriptor(const std::filesystem::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw FormatError("cannot open descriptor " + json_path.string());
    RawDescriptor d;
    try {
        auto j = nlohmann::json::parse(in);
        d.nx = j.at("nx").get<std::size_t>();
        d.nz = j.at("nz").get<std::size_t>();
        d.dtype = j.value("dtype", d.dtype);
        d.order = j.value("order", d.order);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad descriptor " + json_path.string() + ": " + e.what());
    }
    if (d.dtype != "f32" && d.dtype != "f64") throw FormatError("descriptor dtype must be f32 or f64");
    if (d.order != "x_fastest" && d.order != "z_fastest") {
        throw FormatError("descriptor order must be x_fastest or z_fastest");
    }
    return d;
}

VelocityModel read_raw_grid(const std::filesystem::path& path, const RawDescriptor& desc, double dx_km) {
    const std::size_t n = desc.nx * desc.nz;
    const std::size_t width = desc.dtype == "f32" ? 4 : 8;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::vector<char> bytes(n * width);
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(in.gcount()) != bytes.size() || in.peek() != EOF) {
        throw FormatError(path.string() + ": expected " + std::to_string(bytes.size()) + " bytes for " +
                          std::to_string(desc.nx) + "x" + std::to_string(desc.nz) + " " + desc.dtype);
    }
    VelocityModel m{desc.nx, desc.nz, dx_km, std::vector<double>(n)};
    for (std::size_t k = 0; k < n; ++k) {
        double v;
        if (width == 4) {
            float f;
            std::memcpy(&f, bytes.data() + k * 4, 4);
            v = f;
        } else {
            std::memcpy(&v, bytes.data() + k * 8, 8);
        }
        // z_fastest stores column ix contiguously: k = ix * nz + iz.
        std::size_t dst = desc.order == "x_fastest" ? k : (k % desc.nz) * desc.nx + k / desc.nz;
        m.v[dst] = v;
    }
    return m;
}

namespace {

// Overlap weights of target cells [i*r, (i+1)*r) with unit source cells.
std::vector<std::vector<std::pair<std::size_t, double>>> overlap(std::size_t n_src, std::size_t n_dst) {
    const double r = static_cast<double>(n_src) / static_cast<double>(n_dst);
    std::vector<std::vector<std::pair<std::size_t, double>>> w(n_dst);
    for (std::size_t i = 0; i < n_dst; ++i) {
        double a = r * static_cast<double>(i), b = r * static_cast<double>(i + 1);
        auto first = static_cast<std::size_t>(std::floor(a));
        auto last = std::min(n_src, static_cast<std::size_t>(std::ceil(b)));
        for (std::size_t k = first; k < last; ++k) {
            double len = std::min(b, static_cast<double>(k + 1)) - std::max(a, static_cast<double>(k));
            if (len > 1e-12) w[i].push_back({k, len / r});
        }
    }
    return w;
}

} // namespace

VelocityModel downsample_area(const VelocityModel& raw, std::size_t nx, std::size_t nz, double dx_km) {
    if (raw.nx < nx || raw.nz < nz) {
        throw ModelError("downsample: raw grid " + std::to_string(raw.nx) + "x" + std::to_string(raw.nz) +
                         " is smaller than target " + std::to_string(nx) + "x" + std::to_string(nz));
    }
    if (raw.v.size() != raw.nx * raw.nz) throw ModelError("downsample: raw grid size mismatch");
    auto wx = overlap(raw.nx, nx);
    auto wz = overlap(raw.nz, nz);
    VelocityModel out{nx, nz, dx_km, std::vector<double>(nx * nz, 0.0)};
    for (std::size_t iz = 0; iz < nz; ++iz)
        for (std::size_t ix = 0; ix < nx; ++ix) {
            double s = 0.0;
            for (auto [kz, az] : wz[iz])
                for (auto [kx, ax] : wx[ix]) s += az * ax * raw.v[kz * raw.nx + kx];
            out.v[iz * nx + ix] = s;
        }
    return out;
}

VelocityModel prepare_model(const BenchmarkSpec& spec, const VelocityModel& raw, double tolerance) {
    VelocityModel m = raw.nx == spec.nx && raw.nz == spec.nz
                          ? VelocityModel{spec.nx, spec.nz, spec.dx_km, raw.v}
                          : downsample_area(raw, spec.nx, spec.nz, spec.dx_km);
    m.validate();
    const double span = spec.vmax - spec.vmin;
    const double lo = m.vmin(), hi = m.vmax();
    if (std::abs(lo - spec.vmin) > tolerance * span || std::abs(hi - spec.vmax) > tolerance * span) {
        std::ostringstream os;
        os << spec.name << ": prepared range [" << lo << ", " << hi << "] m/s does not match expected ["
           << spec.vmin << ", " << spec.vmax << "] within " << tolerance * 100.0
           << "% of the span; check the raw file and its units";
        throw ModelError(os.str());
    }
    return m;
}

ShotGather synthesize_observed(const VelocityModel& model, const AcquisitionGeometry& geom, int threads) {
    return forward_model(model, geom, threads);
}

} // namespace pgfwi
