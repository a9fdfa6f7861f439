#include "fibsim/cli.hpp"
#include "fibsim/formats.hpp"
#include "fibsim/report.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace fibsim;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code = 0;
    std::string out, err;
};

Result invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "fibsim");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    std::ostringstream out, err;
    Result r;
    r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("fibsim_test_cli_" + name);
    fs::remove_all(p);
    return p;
}

const std::string configs = std::string(FIBSIM_SOURCE_DIR) + "/data/configs/";

}  // namespace

TEST_CASE("help") {
    const auto r = invoke({"--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("simulate") != std::string::npos);
}

TEST_CASE("simulate array") {
    const auto dir = scratch("array");
    const auto r = invoke({"--config", configs + "fig2.json", "--seed", "7", "--out", dir.string(), "simulate", "array"});
    REQUIRE(r.code == 0);
    CHECK(fs::exists(dir / "sites.csv"));
    const auto manifest = json::parse(formats::read_text_file(dir / "manifest.json"));
    CHECK(manifest["seed"] == 7);
    CHECK(manifest["summary"]["rayleigh"].contains("sigma_nm"));
    const auto report = load_report(dir);
    CHECK(report.kind == "array");
    CHECK(json::parse(r.out)["summary"] == manifest["summary"]);

    SUBCASE("report show verifies the directory") {
        const auto s = invoke({"report", "show", dir.string()});
        CHECK(s.code == 0);
        CHECK(json::parse(s.out)["integrity"] == "ok");
    }
    SUBCASE("a tampered report is an input error") {
        std::ofstream(dir / "sites.csv", std::ios::app) << "1,2,3,4,5,6,7\n";
        const auto s = invoke({"report", "show", dir.string()});
        CHECK(s.code == 2);
        CHECK(json::parse(s.err).contains("error"));
    }
    fs::remove_all(dir);
}

TEST_CASE("simulate sweep with overrides") {
    const auto dir = scratch("sweep");
    const auto r = invoke({"--config", configs + "fig3.json", "--out", dir.string(), "--set", "sweep.energies_kev=[50,100]",
                           "--sweep.doses_per_cm2=[1e12,1e13]", "simulate", "sweep"});
    REQUIRE(r.code == 0);
    const auto t = table_from_csv(formats::read_text_file(dir / "sweep.csv"), "sweep.csv");
    CHECK(std::vector<std::string>(t.columns.begin(), t.columns.begin() + 4) ==
          std::vector<std::string>{"energy_kev", "dose_per_cm2", "eta_true", "eta_est"});
    CHECK(t.rows.size() == 4);
    fs::remove_all(dir);
}

TEST_CASE("configuration errors exit with code 2 and a JSON error") {
    const auto missing = invoke({"--config", "/nonexistent/cfg.json", "--out", scratch("x").string(), "simulate", "array"});
    CHECK(missing.code == 2);
    const auto e = json::parse(missing.err);
    CHECK(e["error"]["location"] == "/nonexistent/cfg.json");

    const auto bad_key = invoke({"--set", "array.bogus=1", "--out", scratch("y").string(), "simulate", "array"});
    CHECK(bad_key.code == 2);
    CHECK(json::parse(bad_key.err).contains("error"));

    CHECK(invoke({"simulate", "nonsense"}).code == 2);
}

TEST_CASE("analyze") {
    const auto dir = scratch("analyze");
    fs::create_directories(dir);

    SUBCASE("g2 histogram") {
        const auto h = synth_g2(G2Model{}, symmetric_delay_bins(300.0, 2.0), 1e6, std::nullopt);
        std::ofstream f(dir / "g2.csv");
        formats::write_g2_csv(f, h);
        f.close();
        const auto r = invoke({"analyze", "g2", (dir / "g2.csv").string()});
        REQUIRE(r.code == 0);
        const auto j = json::parse(r.out);
        CHECK(j["g2_zero"].get<double>() == doctest::Approx(0.38).epsilon(1e-5));
        CHECK(j["is_single"] == true);
    }
    SUBCASE("blank image") {
        const auto g = ImageGeometry::covering({-1000, -1000}, {1000, 1000}, 50.0, 1.0);
        const auto img = render_confocal({}, PsfSpec{}, 1.0, g, RandomSeed(1));
        std::ofstream f(dir / "img.csv");
        formats::write_image_csv(f, img);
        f.close();
        const auto r = invoke({"analyze", "image", (dir / "img.csv").string()});
        REQUIRE(r.code == 0);
        CHECK(json::parse(r.out)["sites"].empty());
    }
    SUBCASE("spectral cube") {
        CavityLayout cav;
        const Point2D ext = cav.half_extent();
        const auto g = ImageGeometry::covering({-ext.x - 800, -ext.y - 800}, {ext.x + 800, ext.y + 800}, 100.0, 1.0);
        Emitter e;
        e.position = {10.0, 20.0, 100.0};
        e.brightness_kcps = 30.0;
        e.zpl_center_ghz = wavelength_to_frequency(736.9);
        const std::vector<Emitter> em{e};
        const auto cube = render_spectral_cube(em, cav, CubeChannels{}, g, SpectralAxis{}, RandomSeed(2));
        std::ofstream f(dir / "cube.txt");
        formats::write_cube(f, cube);
        f.close();
        const auto r = invoke({"analyze", "cube", (dir / "cube.txt").string()});
        REQUIRE(r.code == 0);
        const auto j = json::parse(r.out);
        CHECK(j["distance_nm"].get<double>() < 100.0);
        CHECK(j["distance_err_nm"].get<double>() > 0.0);
    }
    SUBCASE("malformed input") {
        std::ofstream(dir / "bad.csv") << "tau_ns,value,sigma\n0,abc,1\n";
        const auto r = invoke({"analyze", "g2", (dir / "bad.csv").string()});
        CHECK(r.code == 2);
        CHECK(json::parse(r.err)["error"]["location"].get<std::string>().find("bad.csv:2") != std::string::npos);
    }
    SUBCASE("missing input") {
        CHECK(invoke({"analyze", "spectrum", (dir / "none.csv").string()}).code == 2);
    }
    fs::remove_all(dir);
}
