#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "pgfwi/io.hpp"

using namespace pgfwi;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result pgfwi_cmd(std::vector<std::string> args) {
    args.insert(args.begin(), "pgfwi");
    std::ostringstream out, err;
    int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& s) const { return (path / s).string(); }
};

void expect_json_error(const Result& r, const std::string& kind) {
    CHECK(r.code != 0);
    CHECK(r.out.empty());
    REQUIRE(!r.err.empty());
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
    auto j = json::parse(r.err);
    CHECK(j.at("error") == kind);
    CHECK(j.at("message").is_string());
}

} // namespace

TEST_CASE("metrics on identical files") {
    TempDir t("pgfwi_cli_metrics");
    write_model(t / "a.bin", toy_two_layer());
    auto r = pgfwi_cmd({"metrics", t / "a.bin", t / "a.bin"});
    CHECK(r.code == 0);
    auto j = json::parse(r.out);
    CHECK(j.at("ssim") == 1.0);
    CHECK(j.at("snr_db") == "inf");
    CHECK(r.out.find("\"ssim\":1.0") != std::string::npos);
}

TEST_CASE("gan-invert with zero epochs writes the initial model") {
    TempDir t("pgfwi_cli_gan0");
    auto a = pgfwi_cmd({"make-init", "--out", t / "init"});
    REQUIRE(a.code == 0);
    auto r = pgfwi_cmd({"gan-invert", "--epochs", "0", "--out", t / "run"});
    REQUIRE(r.code == 0);
    CHECK(read_model(t / "run/final/v_final.bin").v == read_model(t / "init/v_init.bin").v);
    CHECK(fs::exists(t / "run/config.json"));
    CHECK(json::parse(r.out).at("g_updates") == 0);
}

TEST_CASE("file-based pipeline matches the config-only pipeline") {
    TempDir t("pgfwi_cli_files");
    REQUIRE(pgfwi_cmd({"forward", "--out", t / "d"}).code == 0);
    REQUIRE(pgfwi_cmd({"make-init", "--out", t / "d"}).code == 0);
    auto g = read_gather(t / "d/d_obs.bin");
    CHECK(g.kind == "observed");
    CHECK(g.gather.ns == 3);

    REQUIRE(pgfwi_cmd({"fwi", "--iters", "3", "--out", t / "a"}).code == 0);
    REQUIRE(pgfwi_cmd({"fwi", "--iters", "3", "--data", t / "d/d_obs.bin", "--init", t / "d/v_init.bin", "--out",
                       t / "b"})
                .code == 0);
    CHECK(read_model(t / "a/final/v_final.bin").v == read_model(t / "b/final/v_final.bin").v);
    std::ifstream csv(t / "a/misfit.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "iteration,E");

    auto n = pgfwi_cmd({"add-noise", "--data", t / "d/d_obs.bin", "--snr-db", "10", "--seed", "3", "--out", t / "n"});
    REQUIRE(n.code == 0);
    CHECK(json::parse(n.out).at("snr_db").get<double>() == doctest::Approx(10.0).epsilon(1e-9));
    CHECK(read_gather(t / "n/d_noisy.bin").gather.traces == add_awgn(g.gather, 10.0, 3).traces);
}

TEST_CASE("render") {
    VelocityModel m{8, 8, 0.01, std::vector<double>(64, 2000.0)};
    m.v[0] = 1000.0; // below the range
    m.v[1] = 1500.0;
    m.v[2] = 4000.0;
    m.v[3] = 9000.0; // above the range
    m.v[4] = 1500.0 + 2500.0 * 0.5 / 255.0; // half a level: rounds up
    auto px = gray_levels(m, 1500.0, 4000.0);
    CHECK(px[0] == 0);
    CHECK(px[1] == 0);
    CHECK(px[2] == 255);
    CHECK(px[3] == 255);
    CHECK(px[4] == 1);
    CHECK(px[5] == 51); // 255 * 500 / 2500

    TempDir t("pgfwi_cli_render");
    write_model(t / "m.bin", m);
    auto r = pgfwi_cmd({"render", t / "m.bin", "--vmin", "1500", "--vmax", "4000", "--out", t / "img"});
    REQUIRE(r.code == 0);
    std::ifstream pgm(t / "img/m.pgm", std::ios::binary);
    std::string magic;
    std::size_t w, h, maxv;
    pgm >> magic >> w >> h >> maxv;
    pgm.get();
    CHECK(magic == "P5");
    CHECK(w == 8);
    CHECK(h == 8);
    CHECK(maxv == 255);
    std::vector<unsigned char> body(64);
    pgm.read(reinterpret_cast<char*>(body.data()), 64);
    CHECK(std::vector<std::uint8_t>(body.begin(), body.end()) == px);

    std::ifstream csv(t / "img/m.csv");
    std::string line;
    std::size_t rows = 0;
    while (std::getline(csv, line)) {
        CHECK(std::count(line.begin(), line.end(), ',') == 7);
        ++rows;
    }
    CHECK(rows == 8);
}

TEST_CASE("convert") {
    TempDir t("pgfwi_cli_convert");
    std::vector<float> raw(8 * 9);
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = 1500.0f + 10.0f * static_cast<float>(i);
    std::ofstream(t / "g.raw", std::ios::binary).write(reinterpret_cast<const char*>(raw.data()), 4 * 72);
    std::ofstream(t / "g.json") << R"({"nx": 8, "nz": 9, "dtype": "f32", "order": "x_fastest"})";
    auto r = pgfwi_cmd({"convert", t / "g.raw", "--descriptor", t / "g.json", "--dx-km", "0.01", "--out", t / "o"});
    INFO(r.err);
    REQUIRE(r.code == 0);
    auto m = read_model(t / "o/g.bin");
    CHECK(m.nx == 8);
    CHECK(m.nz == 9);
    CHECK(m.at(1, 2) == 1670.0);
}

TEST_CASE("errors are single-line JSON on stderr") {
    TempDir t("pgfwi_cli_errors");
    expect_json_error(pgfwi_cmd({}), "usage");
    expect_json_error(pgfwi_cmd({"frobnicate"}), "usage");
    expect_json_error(pgfwi_cmd({"metrics", t / "missing.bin", t / "missing.bin"}), "usage");
    expect_json_error(pgfwi_cmd({"gan-invert", "--loss", "hinge"}), "usage");

    std::ofstream(t / "bad.json") << R"({"gan": {"epochz": 1}})";
    expect_json_error(pgfwi_cmd({"fwi", "--config", t / "bad.json"}), "config");

    std::ofstream(t / "garbage.bin") << "xx";
    std::ofstream(t / "garbage.bin.json") << "{";
    expect_json_error(pgfwi_cmd({"render", t / "garbage.bin", "--out", t / "o"}), "format");

    std::ofstream(t / "marm.json") << R"({"benchmark": "marmousi"})";
    expect_json_error(pgfwi_cmd({"forward", "--config", t / "marm.json", "--out", t / "o"}), "config");
}

TEST_CASE("thread count precedence") {
    ::unsetenv("PGFWI_THREADS");
    CHECK(cli::resolve_threads(0, 3) == 3);
    ::setenv("PGFWI_THREADS", "2", 1);
    CHECK(cli::resolve_threads(0, 3) == 2);
    CHECK(cli::resolve_threads(4, 3) == 4);
    ::setenv("PGFWI_THREADS", "zero", 1);
    CHECK_THROWS_AS(cli::resolve_threads(0, 3), ConfigError);
    ::unsetenv("PGFWI_THREADS");
}

TEST_CASE("seed and loss flags reach the run config") {
    TempDir t("pgfwi_cli_flags");
    auto r = pgfwi_cmd({"gan-invert", "--epochs", "0", "--seed", "77", "--loss", "vanilla", "--out", t / "run"});
    REQUIRE(r.code == 0);
    auto c = load_config(t / "run/config.json");
    CHECK(c.seed == 77);
    CHECK(c.gan.loss == LossKind::Vanilla);
    CHECK(c.gan.epochs == 0);
    CHECK(c.output_dir == fs::path(t / "run"));
}
