#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "pgfwi/io.hpp"
#include "pgfwi/models.hpp"
#include "test_util.hpp"

using namespace pgfwi;

TEST_CASE("benchmark presets") {
    auto m = benchmark_spec("marmousi");
    CHECK(m.nx == 191);
    CHECK(m.nz == 51);
    CHECK(m.dx_km == 0.03);
    CHECK(m.vmin == 1472.0);
    CHECK(m.vmax == 5772.0);
    auto o = benchmark_spec("overthrust");
    CHECK(o.nx == 251);
    CHECK(o.nz == 81);
    CHECK(o.dx_km == 0.05);
    CHECK(o.vmin == 2360.0);
    CHECK(o.vmax == 6000.0);
    CHECK_THROWS_AS(benchmark_spec("sigsbee"), ModelError);

    auto toy = toy_two_layer();
    CHECK(toy.nx == 32);
    CHECK(toy.nz == 16);
    CHECK(toy.at(5, 7) == 2000.0);
    CHECK(toy.at(5, 8) == 3000.0);
}

TEST_CASE("area downsampling") {
    VelocityModel raw{4, 4, 0.01, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16}};
    auto d = downsample_area(raw, 2, 2, 0.02);
    // block means by hand: (1+2+5+6)/4, (3+4+7+8)/4, ...
    CHECK(d.v == std::vector<double>{3.5, 5.5, 11.5, 13.5});

    // 3 -> 2 along x: weights (1, 0.5) and (0.5, 1) over 1.5 cells.
    VelocityModel row{3, 1, 0.01, {3.0, 6.0, 9.0}};
    auto r = downsample_area(row, 2, 1, 0.015);
    CHECK(r.v[0] == doctest::Approx((3.0 + 0.5 * 6.0) / 1.5));
    CHECK(r.v[1] == doctest::Approx((0.5 * 6.0 + 9.0) / 1.5));

    CHECK_THROWS_AS(downsample_area(raw, 5, 2, 0.01), ModelError);
}

TEST_CASE("prepare_model") {
    auto spec = benchmark_spec("marmousi");
    auto raw = testutil::random_smooth_model(382, 102, 0.015, spec.vmin, spec.vmax, 4, 0);
    // Pin the extremes over 2x2 blocks so they survive averaging.
    for (std::size_t k : {0ul, 1ul, 382ul, 383ul}) raw.v[k] = spec.vmin;
    for (std::size_t k : {200ul, 201ul, 582ul, 583ul}) raw.v[k] = spec.vmax;
    auto m = prepare_model(spec, raw);
    CHECK(m.nx == 191);
    CHECK(m.nz == 51);
    CHECK(m.dx_km == 0.03);
    CHECK(m.vmin() == doctest::Approx(spec.vmin));
    CHECK(m.vmax() == doctest::Approx(spec.vmax));

    auto same = prepare_model(spec, m);
    CHECK(same.v == m.v);

    auto wrong_units = m;
    for (auto& v : wrong_units.v) v /= 1000.0;
    CHECK_THROWS_AS(prepare_model(spec, wrong_units), ModelError);
}

TEST_CASE("raw grid reader") {
    auto dir = std::filesystem::temp_directory_path() / "pgfwi_test_raw";
    std::filesystem::create_directories(dir);
    // 3 x 2 grid stored column by column as f32.
    const float cols[6] = {1, 4, 2, 5, 3, 6};
    {
        std::ofstream out(dir / "g.f32", std::ios::binary);
        out.write(reinterpret_cast<const char*>(cols), sizeof(cols));
        std::ofstream js(dir / "g.json");
        js << R"({"nx": 3, "nz": 2, "dtype": "f32", "order": "z_fastest"})";
    }
    auto desc = read_raw_descriptor(dir / "g.json");
    auto m = read_raw_grid(dir / "g.f32", desc, 0.01);
    CHECK(m.v == std::vector<double>{1, 2, 3, 4, 5, 6});

    desc.dtype = "f64";
    CHECK_THROWS_AS(read_raw_grid(dir / "g.f32", desc, 0.01), FormatError);
    {
        std::ofstream js(dir / "bad.json");
        js << R"({"nx": 3, "nz": 2, "dtype": "i16"})";
    }
    CHECK_THROWS_AS(read_raw_descriptor(dir / "bad.json"), FormatError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("synthesize_observed") {
    auto toy = testutil::constant_model(32, 16, 0.01, 2000.0);
    auto g = surface_geometry(toy, 1, 1e-3, 300, 15.0);
    CHECK(synthesize_observed(toy, g).traces == forward_model(toy, g).traces);

    auto silent = g;
    std::fill(silent.wavelet.begin(), silent.wavelet.end(), 0.0);
    for (double x : synthesize_observed(toy, silent).traces) CHECK(x == 0.0);

    // Reciprocity on the layered toy: swap source and one receiver.
    auto layered = toy_two_layer();
    auto a = g;
    a.sources = {{4, 2}};
    a.receivers = {{27, 12}};
    auto b = g;
    b.sources = {{27, 12}};
    b.receivers = {{4, 2}};
    auto ta = synthesize_observed(layered, a).traces;
    auto tb = synthesize_observed(layered, b).traces;
    CHECK(testutil::rel_l2(ta, tb) < 1e-8);
}
