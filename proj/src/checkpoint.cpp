#include "pgfwi/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "pgfwi/io.hpp"

namespace pgfwi {

static_assert(std::endian::native == std::endian::little, "WGT1 writer assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'W', 'G', 'T', '1'};

template <class T>
void put(std::ofstream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& is, const std::filesystem::path& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw FormatError("checkpoint " + path.string() + ": truncated record");
    }
    return v;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("checkpoint " + path.string() + ": cannot open for writing");
    os.write(kMagic, 4);
    for (const auto& [name, t] : params) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
        for (auto d : t.shape()) put<std::uint64_t>(os, d);
        os.write(reinterpret_cast<const char*>(t.data().data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!os) throw FormatError("checkpoint " + path.string() + ": write failed");
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("checkpoint " + path.string() + ": cannot open");
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("checkpoint " + path.string() + ": bad magic");
    }
    NamedTensors out;
    while (is.peek() != std::char_traits<char>::eof()) {
        auto len = get<std::uint32_t>(is, path);
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw FormatError("checkpoint " + path.string() + ": truncated name");
        auto ndim = get<std::uint32_t>(is, path);
        Shape shape(ndim);
        for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(is, path));
        std::vector<double> data(numel(shape));
        if (!is.read(reinterpret_cast<char*>(data.data()),
                     static_cast<std::streamsize>(data.size() * sizeof(double)))) {
            throw FormatError("checkpoint " + path.string() + ": truncated payload for " + name);
        }
        out.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(data)));
    }
    return out;
}

void restore_checkpoint(const std::filesystem::path& path, const NamedTensors& params) {
    std::map<std::string, Tensor> stored;
    for (auto& [name, t] : load_checkpoint(path)) stored.emplace(name, t);
    for (const auto& [name, t] : params) {
        auto it = stored.find(name);
        if (it == stored.end()) throw FormatError("checkpoint " + path.string() + ": missing " + name);
        if (it->second.shape() != t.shape()) {
            throw FormatError("checkpoint " + path.string() + ": " + name + " has shape " +
                              shape_str(it->second.shape()) + ", expected " + shape_str(t.shape()));
        }
        Tensor dst = t;
        std::copy(it->second.data().begin(), it->second.data().end(), dst.data().begin());
    }
}

} // namespace pgfwi
