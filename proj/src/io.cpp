#include "pgfwi/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace pgfwi {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "raw grids are read as native little-endian");

namespace {

json read_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open sidecar " + path.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw FormatError("sidecar " + path.string() + ": " + e.what());
    }
}

void write_json(const std::filesystem::path& path, const json& j) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError("cannot write " + path.string());
    os << j.dump(2) << '\n';
}

template <class T>
T field(const json& j, const char* key, const std::filesystem::path& path) {
    if (!j.contains(key)) throw FormatError("sidecar " + path.string() + ": missing '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw FormatError("sidecar " + path.string() + ": field '" + key + "': " + e.what());
    }
}

json points_json(const std::vector<GridPoint>& pts) {
    json a = json::array();
    for (const auto& p : pts) a.push_back({p.ix, p.iz});
    return a;
}

std::vector<GridPoint> points_from(const json& a) {
    std::vector<GridPoint> pts;
    for (const auto& p : a) pts.push_back({p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>()});
    return pts;
}

} // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    return std::filesystem::path(path.string() + ".json");
}

void write_f64(const std::filesystem::path& path, const std::vector<double>& values) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot write " + path.string());
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!os) throw FormatError("write failed for " + path.string());
}

std::vector<double> read_f64(const std::filesystem::path& path, std::size_t expected) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw FormatError("cannot open " + path.string());
    auto bytes = static_cast<std::size_t>(is.tellg());
    if (bytes != expected * sizeof(double)) {
        throw FormatError(path.string() + ": holds " + std::to_string(bytes) + " bytes, expected " +
                          std::to_string(expected * sizeof(double)));
    }
    is.seekg(0);
    std::vector<double> v(expected);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
    return v;
}

void write_model(const std::filesystem::path& path, const VelocityModel& model) {
    model.validate();
    write_f64(path, model.v);
    write_json(sidecar_path(path), json{{"nx", model.nx},
                                        {"nz", model.nz},
                                        {"dx_km", model.dx_km},
                                        {"vmin", model.vmin()},
                                        {"vmax", model.vmax()}});
}

VelocityModel read_model(const std::filesystem::path& path) {
    auto side = sidecar_path(path);
    json j = read_json(side);
    VelocityModel m;
    m.nx = field<std::size_t>(j, "nx", side);
    m.nz = field<std::size_t>(j, "nz", side);
    m.dx_km = field<double>(j, "dx_km", side);
    m.v = read_f64(path, m.nx * m.nz);
    m.validate();
    return m;
}

void write_gather(const std::filesystem::path& path, const ShotGather& gather,
                  const AcquisitionGeometry& geom, const std::string& kind) {
    write_f64(path, gather.traces);
    write_json(sidecar_path(path), json{{"ns", gather.ns},
                                        {"nr", gather.nr},
                                        {"nt", gather.nt},
                                        {"dt", geom.dt},
                                        {"kind", kind},
                                        {"sources", points_json(geom.sources)},
                                        {"receivers", points_json(geom.receivers)},
                                        {"pml_width", geom.pml_width},
                                        {"sponge_coeff", geom.sponge_coeff},
                                        {"wavelet", geom.wavelet}});
}

GatherFile read_gather(const std::filesystem::path& path) {
    auto side = sidecar_path(path);
    json j = read_json(side);
    GatherFile f;
    f.gather.ns = field<std::size_t>(j, "ns", side);
    f.gather.nr = field<std::size_t>(j, "nr", side);
    f.gather.nt = field<std::size_t>(j, "nt", side);
    f.gather.traces = read_f64(path, f.gather.ns * f.gather.nr * f.gather.nt);
    f.kind = field<std::string>(j, "kind", side);
    auto& g = f.geometry;
    g.dt = field<double>(j, "dt", side);
    g.nt = f.gather.nt;
    g.pml_width = field<std::size_t>(j, "pml_width", side);
    g.sponge_coeff = field<double>(j, "sponge_coeff", side);
    g.wavelet = field<std::vector<double>>(j, "wavelet", side);
    try {
        g.sources = points_from(j.at("sources"));
        g.receivers = points_from(j.at("receivers"));
    } catch (const json::exception& e) {
        throw FormatError("sidecar " + side.string() + ": bad point list: " + e.what());
    }
    if (g.sources.size() != f.gather.ns || g.receivers.size() != f.gather.nr) {
        throw FormatError("sidecar " + side.string() + ": geometry does not match gather dims");
    }
    return f;
}

std::vector<std::uint8_t> gray_levels(const VelocityModel& model, double vmin, double vmax) {
    if (!(vmax > vmin)) throw FormatError("render: vmax must exceed vmin");
    std::vector<std::uint8_t> px(model.v.size());
    for (std::size_t i = 0; i < px.size(); ++i) {
        double g = std::round(255.0 * (model.v[i] - vmin) / (vmax - vmin));
        px[i] = static_cast<std::uint8_t>(std::clamp(g, 0.0, 255.0));
    }
    return px;
}

void write_pgm(const std::filesystem::path& path, const VelocityModel& model, double vmin, double vmax) {
    auto px = gray_levels(model, vmin, vmax);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot write " + path.string());
    os << "P5\n" << model.nx << ' ' << model.nz << "\n255\n";
    os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

void write_grid_csv(const std::filesystem::path& path, const VelocityModel& model) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError("cannot write " + path.string());
    char buf[32];
    for (std::size_t iz = 0; iz < model.nz; ++iz) {
        for (std::size_t ix = 0; ix < model.nx; ++ix) {
            std::snprintf(buf, sizeof buf, "%.17g", model.at(ix, iz));
            os << (ix ? "," : "") << buf;
        }
        os << '\n';
    }
}

} // namespace pgfwi
