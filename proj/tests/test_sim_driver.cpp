#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "csph/sim_driver.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace csph;

namespace {

// independent erfc: Maclaurin series for small argument, Lentz continued
// fraction for the tail
double erfc_oracle(double x) {
    if (x < 0.0)
        return 2.0 - erfc_oracle(-x);
    if (x < 2.0) {
        double term = x, sum = x;
        for (int n = 1; n < 200; ++n) {
            term *= -x * x / n;
            sum += term / (2 * n + 1);
            if (std::abs(term) < 1e-18)
                break;
        }
        return 1.0 - 2.0 / std::sqrt(std::numbers::pi) * sum;
    }
    // erfc(x) = exp(-x^2)/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    double f = x, c = x, d = 0.0;
    const double tiny = 1e-300;
    for (int n = 1; n < 200; ++n) {
        const double a = n / 2.0;
        d = x + a * d;
        if (std::abs(d) < tiny)
            d = tiny;
        c = x + a / c;
        if (std::abs(c) < tiny)
            c = tiny;
        d = 1.0 / d;
        const double delta = c * d;
        f *= delta;
        if (std::abs(delta - 1.0) < 1e-16)
            break;
    }
    return std::exp(-x * x) / std::sqrt(std::numbers::pi) / f;
}

std::string minimal_diffusion_scene() {
    return R"({
      "name": "banddemo",
      "dimension": 2,
      "dp": 0.05,
      "end_time": 0.5,
      "geometry": {"type": "box", "min": [0, 0], "max": [0.4, 1.0]},
      "physics": {"electrophysiology": true, "mechanics": false, "coupling": false},
      "conductivity": {"d_iso": 1e-4, "d_ani": 0.0},
      "initial": {"V_m": {"type": "band", "axis": 1, "lo": 0.45, "hi": 0.55}},
      "probes": [{"name": "mid", "location": [0.2, 0.5], "quantity": "V_m", "interval": 0.1}]
    })";
}

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("scene loading: minimal diffusion scene") {
    const SceneConfig s = load_scene(minimal_diffusion_scene());
    CHECK(s.dimension == 2);
    CHECK(s.electrophysiology);
    CHECK_FALSE(s.mechanics);
    CHECK(s.ionic == IonicModelKind::none);
    CHECK(s.d_iso == doctest::Approx(1e-4));
    CHECK(s.probes.size() == 1);
}

TEST_CASE("scene validation: coupling without a material names the block") {
    const std::string text = R"({
      "name": "broken", "dimension": 2, "dp": 0.1, "end_time": 1.0,
      "geometry": {"type": "box", "min": [0,0], "max": [1,1]},
      "physics": {"electrophysiology": true, "mechanics": true, "coupling": true},
      "ionic": {"model": "aliev_panfilov"},
      "conductivity": {"d_iso": 1.0},
      "active_stress": {"mode": "ode"}
    })";
    CHECK_THROWS_WITH_AS(load_scene(text), doctest::Contains("scene.material"), ValidationError);
}

TEST_CASE("scene validation: unknown keys and non-physical values carry their path") {
    const std::string unknown = R"({
      "name": "x", "dimension": 2, "dp": 0.1, "end_time": 1.0, "typo_key": 3,
      "geometry": {"type": "box", "min": [0,0], "max": [1,1]},
      "conductivity": {"d_iso": 1.0}
    })";
    CHECK_THROWS_WITH_AS(load_scene(unknown), doctest::Contains("scene.typo_key"),
                         ValidationError);

    const std::string negative = R"({
      "name": "x", "dimension": 2, "dp": 0.1, "end_time": 1.0,
      "geometry": {"type": "box", "min": [0,0], "max": [1,1]},
      "conductivity": {"d_iso": -1.0}
    })";
    CHECK_THROWS_WITH_AS(load_scene(negative), doctest::Contains("scene.conductivity.d_iso"),
                         ValidationError);

    // every problem is reported, not just the first
    const std::string both = R"({
      "name": "x", "dimension": 2, "dp": -0.1, "end_time": -1.0,
      "geometry": {"type": "box", "min": [0,0], "max": [1,1]},
      "conductivity": {"d_iso": 1.0}
    })";
    try {
        load_scene(both);
        CHECK(false);
    } catch (const ValidationError& err) {
        const std::string what = err.what();
        CHECK(what.find("scene.dp") != std::string::npos);
        CHECK(what.find("scene.end_time") != std::string::npos);
    }
}

TEST_CASE("scene round trip: serialize(load(text)) parses to an equal config") {
    const SceneConfig a = load_scene(minimal_diffusion_scene());
    const SceneConfig b = load_scene(serialize_scene(a));
    CHECK(a == b);
}

TEST_CASE("band diffusion oracle") {
    // erfc(0) = 1 at the band edge
    CHECK(oracle_band_diffusion(0.45, 2.0, 1.0, 1e-4, 0.5, 0.45, 0.55) ==
          doctest::Approx(0.5).epsilon(1e-12));
    // far field decays to zero
    CHECK(oracle_band_diffusion(0.0, 0.01, 1.0, 1e-4, 0.5, 0.45, 0.55) ==
          doctest::Approx(0.0).epsilon(1e-12));
    // paper parameters vs the independent erfc at t = 1
    for (int i = 0; i <= 200; ++i) {
        const double z = i / 200.0;
        const double mine = oracle_band_diffusion(z, 1.0, 1.0, 1e-4, 0.5, 0.45, 0.55);
        const double denom = std::sqrt(4.0 * 1e-4 * 1.0);
        const double ref = z <= 0.5 ? 0.5 * erfc_oracle((0.45 - z) / denom)
                                    : 0.5 * erfc_oracle((z - 0.55) / denom);
        CHECK(mine == doctest::Approx(ref).epsilon(1e-10));
    }
}

TEST_CASE("exponential-profile diffusion oracle") {
    // peak value at t = 0
    CHECK(oracle_exp_diffusion(0.5, 0.0, 1.0, 1e-4, 0.5, 1.0) == doctest::Approx(1.0));
    // symmetry about z0
    CHECK(oracle_exp_diffusion(0.5 + 0.037, 1.0, 1.0, 1e-4, 0.5, 1.0) ==
          doctest::Approx(oracle_exp_diffusion(0.5 - 0.037, 1.0, 1.0, 1e-4, 0.5, 1.0)));
    // integral over z is conserved in time (trapezoid quadrature)
    auto integral = [](double t) {
        double sum = 0.0;
        const int n = 20000;
        const double dz = 1.0 / n;
        for (int i = 0; i < n; ++i) {
            const double z = (i + 0.5) * dz;
            sum += oracle_exp_diffusion(z, t, 1.0, 1e-4, 0.5, 1.0) * dz;
        }
        return sum;
    };
    CHECK(integral(0.0) == doctest::Approx(integral(5.0)).epsilon(1e-8));
}

TEST_CASE("anisotropic Gaussian oracle") {
    // peak value at t = 120 for D1 = diag(0.09, 0.03)
    const double peak = oracle_aniso_gaussian(Vec2(100.0, 100.0), 120.0, 0.09, 0.03,
                                              Vec2(100.0, 100.0));
    CHECK(peak == doctest::Approx(1.0 / (4.0 * std::numbers::pi * 120.0 * std::sqrt(0.0027)))
                      .epsilon(1e-12));
    CHECK(peak == doctest::Approx(1.277e-2).epsilon(1e-3));

    // level-set aspect ratio sqrt(Dxx/Dyy): equal values at x-offset vs
    // y-offset scaled by the ratio
    const double t = 300.0;
    const double rx = 7.0;
    const double ratio = std::sqrt(0.09 / 0.03);
    const double cx = oracle_aniso_gaussian(Vec2(100.0 + rx, 100.0), t, 0.09, 0.03,
                                            Vec2(100.0, 100.0));
    const double cy = oracle_aniso_gaussian(Vec2(100.0, 100.0 + rx / ratio), t, 0.09, 0.03,
                                            Vec2(100.0, 100.0));
    CHECK(cx == doctest::Approx(cy).epsilon(1e-12));
    const double r10 = std::sqrt(0.1 / 0.01);
    CHECK(r10 == doctest::Approx(std::sqrt(10.0)));
}

TEST_CASE("error norms") {
    const std::vector<double> a = {1.0, 2.0, 3.0};
    const std::vector<double> v = {0.5, 0.5, 0.5};
    const auto zero = error_norms(a, a, v);
    CHECK(zero.l2 == 0.0);
    CHECK(zero.linf == 0.0);

    const std::vector<double> b = {1.1, 2.1, 3.1};
    const auto offset = error_norms(b, a, v);
    CHECK(offset.linf == doctest::Approx(0.1));
    CHECK(offset.l2 == doctest::Approx(0.1));

    // direct summation cross-check on a seeded field
    std::vector<double> num(50), ref(50, 0.0), vol(50);
    double acc = 0.0, wsum = 0.0, linf = 0.0;
    for (int i = 0; i < 50; ++i) {
        num[i] = std::sin(0.37 * i);
        vol[i] = 0.2 + 0.01 * i;
        acc += vol[i] * num[i] * num[i];
        wsum += vol[i];
        linf = std::max(linf, std::abs(num[i]));
    }
    const auto norms = error_norms(num, ref, vol);
    CHECK(norms.l2 == doctest::Approx(std::sqrt(acc / wsum)).epsilon(1e-14));
    CHECK(norms.linf == doctest::Approx(linf).epsilon(1e-14));
}

TEST_CASE("stimulus application") {
    ParticleSet<2> set = make_lattice_block<2>(Vec2(0.0, 0.0), Vec2(1.0, 1.0), 0.1);
    std::vector<double> v(set.size(), 0.0);

    StimulusSpec st;
    st.region.kind = Region::Kind::box;
    st.region.lo = Vec3(0.0, 0.0, -1.0);
    st.region.hi = Vec3(0.36, 0.36, 1.0); // clean of lattice round-off at 0.35
    st.t_on = 1.0;
    st.t_off = 2.0;
    st.V_stim = 0.92;

    apply_stimulus(v, set, st, 0.5);
    for (double x : v)
        CHECK(x == 0.0);

    apply_stimulus(v, set, st, 1.5);
    double vmax = 0.0;
    std::size_t clamped = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        vmax = std::max(vmax, v[i]);
        const bool inside = set.r0[i][0] <= 0.36 && set.r0[i][1] <= 0.36;
        if (inside) {
            CHECK(v[i] == 0.92);
            ++clamped;
        } else {
            CHECK(v[i] == 0.0);
        }
    }
    CHECK(vmax == 0.92);
    CHECK(clamped == 16); // 4x4 lattice corner block
}

TEST_CASE("probe CSV round trip is bit exact") {
    ProbeSeries series;
    series.columns = {"time", "p.V_m"};
    series.rows = {{0.0, 0.123456789012345678}, {0.1, -3.9e-17}, {0.2, 1.0 / 3.0}};
    const std::string path = "probe_roundtrip_test.csv";
    write_probe_csv(path, series);
    const ProbeSeries back = read_probe_csv(path);
    REQUIRE(back.columns == series.columns);
    REQUIRE(back.rows.size() == series.rows.size());
    for (std::size_t r = 0; r < series.rows.size(); ++r)
        for (std::size_t c = 0; c < series.rows[r].size(); ++c)
            CHECK(back.rows[r][c] == series.rows[r][c]);
    std::filesystem::remove(path);
}

TEST_CASE("VTK snapshot header conformance") {
    const std::vector<double> xyz = {0, 0, 0, 1, 0, 0};
    write_vtk_pointcloud("vtk_test.vtk", "test", xyz, {{"V_m", {0.5, 1.0}}}, {});
    const std::string bytes = file_bytes("vtk_test.vtk");
    CHECK(bytes.rfind("# vtk DataFile Version 3.0", 0) == 0);
    CHECK(bytes.find("DATASET POLYDATA") != std::string::npos);
    CHECK(bytes.find("POINTS 2 double") != std::string::npos);
    CHECK(bytes.find("SCALARS V_m double 1") != std::string::npos);
    std::filesystem::remove("vtk_test.vtk");
}

TEST_CASE("rest state stays at rest through the full loop") {
    SceneConfig s = load_scene(minimal_diffusion_scene());
    s.ionic = IonicModelKind::aliev_panfilov;
    s.init_V_m = FieldInit{}; // uniform zero
    s.end_time = 0.5;
    RunOptions opt;
    opt.write_files = false;
    const RunResult res = run_scene(s, opt);
    for (const auto& row : res.probes.rows)
        CHECK(std::abs(row[1]) < 1e-14);
    for (double v : res.V_m)
        CHECK(std::abs(v) < 1e-14);
}

TEST_CASE("runs are deterministic: identical probe files byte for byte") {
    SceneConfig s = load_scene(minimal_diffusion_scene());
    RunOptions opt;
    opt.out_dir_override = "det_a";
    run_scene(s, opt);
    opt.out_dir_override = "det_b";
    run_scene(s, opt);
    CHECK(file_bytes("det_a/probes.csv") == file_bytes("det_b/probes.csv"));
    CHECK(!file_bytes("det_a/probes.csv").empty());
    std::filesystem::remove_all("det_a");
    std::filesystem::remove_all("det_b");
}

TEST_CASE("kernel-correction toggle keeps conservation and the rest state") {
    for (const bool corrected : {true, false}) {
        SceneConfig s = load_scene(minimal_diffusion_scene());
        s.kernel_correction = corrected;
        RunOptions opt;
        opt.write_files = false;
        const RunResult res = run_scene(s, opt);
        CHECK(std::abs(res.total_mass_final - res.total_mass_initial) <
              1e-10 * std::abs(res.total_mass_initial));
    }
}

TEST_CASE("coupled runs log dt = min(dt_p, dt_m)") {
    const std::string text = R"({
      "name": "coupled", "dimension": 3, "dp": 0.2, "end_time": 0.002,
      "geometry": {"type": "box", "min": [0,0,0], "max": [1,1,1]},
      "physics": {"electrophysiology": true, "mechanics": true, "coupling": true},
      "ionic": {"model": "aliev_panfilov"},
      "conductivity": {"d_iso": 1.0},
      "material": {"model": "neo_hookean", "E": 1.7e7, "nu": 0.45, "rho0": 1100},
      "active_stress": {"mode": "ode", "k_a": 1.0},
      "initial": {"V_m": {"type": "uniform", "value": 0.0}}
    })";
    SceneConfig s = load_scene(text);
    RunOptions opt;
    opt.write_files = false;
    const RunResult res = run_scene(s, opt);
    REQUIRE(!res.dt_log.empty());
    for (std::size_t k = 0; k < res.dt_log.size(); ++k)
        CHECK(res.dt_log[k] == std::min(res.dt_p_log[k], res.dt_m_log[k]));
}

TEST_CASE("probe outside the particle cloud is a validation error") {
    SceneConfig s = load_scene(minimal_diffusion_scene());
    s.probes[0].location = Vec3(5.0, 5.0, 0.0);
    RunOptions opt;
    opt.write_files = false;
    CHECK_THROWS_AS(run_scene(s, opt), ValidationError);
}
