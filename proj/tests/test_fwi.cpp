#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "pgfwi/fwi.hpp"
#include "pgfwi/io.hpp"
#include "pgfwi/models.hpp"
#include "test_util.hpp"

using namespace pgfwi;
using testutil::constant_model;

namespace {

// Direct 2D convolution with the outer-product kernel; mirror indexing done
// by walking back and forth instead of modular arithmetic.
VelocityModel blur_oracle(const VelocityModel& m, double sigma) {
    long r = static_cast<long>(std::ceil(4.0 * sigma));
    auto mirror = [](long i, long n) {
        while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
        return static_cast<std::size_t>(i);
    };
    VelocityModel out = m;
    for (std::size_t iz = 0; iz < m.nz; ++iz)
        for (std::size_t ix = 0; ix < m.nx; ++ix) {
            double s = 0.0, wsum = 0.0;
            for (long dz = -r; dz <= r; ++dz)
                for (long dx = -r; dx <= r; ++dx) {
                    double w = std::exp(-0.5 * static_cast<double>(dx * dx + dz * dz) / (sigma * sigma));
                    s += w * m.at(mirror(static_cast<long>(ix) + dx, static_cast<long>(m.nx)),
                                  mirror(static_cast<long>(iz) + dz, static_cast<long>(m.nz)));
                    wsum += w;
                }
            out.at(ix, iz) = s / wsum;
        }
    return out;
}

struct Toy {
    VelocityModel truth = toy_two_layer();
    AcquisitionGeometry geom = benchmark_geometry(benchmark_spec("toy-two-layer"), truth);
    ShotGather obs = synthesize_observed(truth, geom);
};

FwiConfig toy_config(std::size_t iters) {
    FwiConfig c;
    c.n_iters = iters;
    c.v_min = 1500.0;
    c.v_max = 4000.0;
    return c;
}

} // namespace

TEST_CASE("gaussian initial model") {
    auto m = testutil::random_smooth_model(16, 16, 0.01, 1500.0, 4500.0, 21, 0);
    CHECK(make_initial_gaussian(m, 0.0).v == m.v);

    auto c = constant_model(20, 12, 0.01, 2345.0);
    for (double v : make_initial_gaussian(c, 3.7).v) CHECK(v == doctest::Approx(2345.0).epsilon(1e-14));

    auto got = make_initial_gaussian(m, 2.0);
    auto want = blur_oracle(m, 2.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < m.v.size(); ++i) worst = std::max(worst, std::abs(got.v[i] - want.v[i]) / want.v[i]);
    CHECK(worst < 1e-12);

    // Kernel wider than the grid still folds back in.
    auto small = testutil::random_smooth_model(8, 8, 0.01, 1500.0, 4500.0, 3, 0);
    auto a = make_initial_gaussian(small, 3.0);
    auto b = blur_oracle(small, 3.0);
    for (std::size_t i = 0; i < a.v.size(); ++i) CHECK(a.v[i] == doctest::Approx(b.v[i]).epsilon(1e-12));

    CHECK_THROWS_AS(make_initial_gaussian(m, -1.0), ModelError);
}

TEST_CASE("linear initial model") {
    for (double v : make_initial_linear(2000.0, 2000.0, 9, 10, 0.01).v) CHECK(v == 2000.0);
    auto m = make_initial_linear(1000.0, 3000.0, 4, 3, 0.01);
    for (std::size_t ix = 0; ix < 4; ++ix) {
        CHECK(m.at(ix, 0) == 1000.0);
        CHECK(m.at(ix, 1) == 2000.0);
        CHECK(m.at(ix, 2) == 3000.0);
    }
    auto marm = make_initial_linear(1472.0, 5772.0, 191, 51, 0.03);
    CHECK(marm.vmin() == 1472.0);
    CHECK(marm.vmax() == 5772.0);
    CHECK_THROWS_AS(make_initial_linear(1.0, 2.0, 4, 1, 0.01), ModelError);
}

TEST_CASE("fwi at the true model does not move") {
    Toy t;
    auto r = fwi_refine(t.truth, t.obs, t.geom, toy_config(3));
    REQUIRE(r.misfit.size() == 3);
    CHECK(r.misfit[0] == 0.0);
    CHECK(r.model.v == t.truth.v);
}

TEST_CASE("fwi with zero learning rate returns the start model") {
    Toy t;
    auto v0 = make_initial_gaussian(t.truth, 3.0);
    auto cfg = toy_config(3);
    cfg.lr = 0.0;
    auto r = fwi_refine(v0, t.obs, t.geom, cfg);
    CHECK(r.model.v == v0.v);
    CHECK(r.misfit[0] == r.misfit[2]);
}

TEST_CASE("fwi reduces the toy misfit by 10x in 50 iterations") {
    Toy t;
    auto v0 = make_initial_gaussian(t.truth, 3.0);
    auto cfg = toy_config(50);
    auto r = fwi_refine(v0, t.obs, t.geom, cfg);
    REQUIRE(r.misfit.size() == 50);
    double e_final = misfit(r.model, t.geom, t.obs);
    CHECK(e_final < 0.1 * r.misfit[0]);
    CHECK(r.misfit.back() < r.misfit.front());
    for (double v : r.model.v) {
        CHECK(v >= cfg.v_min);
        CHECK(v <= cfg.v_max);
    }

    auto again = fwi_refine(v0, t.obs, t.geom, cfg);
    CHECK(again.misfit == r.misfit);
}

TEST_CASE("fwi clamp, freeze, optimizer continuation and outputs") {
    Toy t;
    auto v0 = make_initial_gaussian(t.truth, 3.0);

    auto tight = toy_config(5);
    tight.lr = 500.0;
    tight.v_min = 2200.0;
    tight.v_max = 2600.0;
    for (double v : fwi_refine(v0, t.obs, t.geom, tight).model.v) {
        CHECK(v >= 2200.0);
        CHECK(v <= 2600.0);
    }

    auto frozen = toy_config(4);
    frozen.water_top_freeze = 3;
    auto rf = fwi_refine(v0, t.obs, t.geom, frozen);
    for (std::size_t i = 0; i < 3 * v0.nx; ++i) CHECK(rf.model.v[i] == v0.v[i]);
    CHECK(rf.model.v[10 * v0.nx] != v0.v[10 * v0.nx]);

    // Two chained calls sharing optimizer state equal one longer call.
    auto cfg = toy_config(3);
    auto whole = fwi_refine(v0, t.obs, t.geom, toy_config(6));
    AdamState st = velocity_optimizer(cfg.lr);
    auto first = fwi_refine(v0, t.obs, t.geom, cfg, &st);
    auto second = fwi_refine(first.model, t.obs, t.geom, cfg, &st);
    CHECK(second.model.v == whole.model.v);

    auto dir = std::filesystem::temp_directory_path() / "pgfwi_test_fwi";
    std::filesystem::remove_all(dir);
    auto snaps = toy_config(4);
    snaps.snapshot_every = 2;
    snaps.snapshot_dir = dir / "snaps";
    auto rs = fwi_refine(v0, t.obs, t.geom, snaps);
    CHECK(std::filesystem::exists(dir / "snaps" / "iter_2.bin"));
    CHECK(read_model(dir / "snaps" / "iter_4.bin").v == rs.model.v);
    write_misfit_csv(dir / "misfit.csv", rs.misfit);
    std::ifstream in(dir / "misfit.csv");
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header == "iteration,E");
    CHECK(row.rfind("0,", 0) == 0);
    std::filesystem::remove_all(dir);

    auto bad = toy_config(1);
    bad.v_min = 5000.0;
    CHECK_THROWS_AS(fwi_refine(v0, t.obs, t.geom, bad), FwiError);
}
