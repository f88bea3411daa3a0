#pragma once

#include "csph/diffusion_sph.hpp"
#include "csph/geometry_pipeline.hpp"
#include "csph/math_kernels.hpp"
#include "csph/reaction_models.hpp"
#include "csph/solid_sph.hpp"

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace csph {

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Geometric predicate over reference positions (vectors are padded with
/// zeros when the scene dimension is below 3).
struct Region {
    enum class Kind { all, box, sphere, halfspace };
    Kind kind = Kind::all;
    Vec3 lo = Vec3::Constant(-std::numeric_limits<double>::infinity());
    Vec3 hi = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 center = Vec3::Zero();
    double radius = 0.0;
    Vec3 normal = Vec3::UnitX();
    double offset = 0.0; // halfspace: x . normal <= offset

    template <int D>
    bool contains(const Vec<D>& x) const {
        Vec3 p = Vec3::Zero();
        for (int a = 0; a < D; ++a)
            p[a] = x[a];
        switch (kind) {
        case Kind::all:
            return true;
        case Kind::box:
            return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
        case Kind::sphere:
            return (p - center).norm() <= radius;
        case Kind::halfspace:
            return p.dot(normal) <= offset;
        }
        return false;
    }
};

struct StimulusSpec {
    std::string label = "S1";
    Region region;
    double t_on = 0.0;
    double t_off = 0.0;
    double V_stim = 1.0;
    enum class Mode { clamp, current };
    Mode mode = Mode::clamp;
    double current = 0.0; // additive mode: dV per unit time inside the window
};

struct ConstraintSpec {
    Region region;
};

struct ProbeSpec {
    std::string name;
    Vec3 location = Vec3::Zero();
    std::string quantity = "V_m"; // V_m | w | T_a | displacement | velocity
    double interval = 0.0;        // 0: every step
};

/// Initial field descriptor; evaluated on reference positions.
struct FieldInit {
    enum class Kind {
        uniform,
        gaussian,      // amplitude exp(-|x - center|^2 / width)
        band,          // inside-value on axis coordinate in [lo, hi], outside elsewhere
        exp_profile,   // exp(-(x_axis - z0)^2 / (4 d t0))
        aniso_gaussian,// 2d free-space anisotropic Gaussian at t = t0
        linear,        // from + (to - from) (x_axis - a0)/(a1 - a0)
        region_value,  // inside-value in the region, outside elsewhere
        scaled_vm      // coeff * V_m (resolved after V_m init)
    };
    Kind kind = Kind::uniform;
    double value = 0.0;
    Vec3 center = Vec3::Zero();
    double width = 1.0, amplitude = 1.0;
    int axis = 0;
    double lo = 0.0, hi = 0.0, inside = 1.0, outside = 0.0;
    double z0 = 0.0, t0 = 1.0, d = 1.0;
    double Dxx = 1.0, Dyy = 1.0;
    double from = 0.0, to = 1.0, a0 = 0.0, a1 = 1.0;
    Region region;
    double coeff = 1.0;
};

struct GeometrySpec {
    enum class Kind { box, disk, stl, biventricle };
    Kind kind = Kind::box;
    Vec3 lo = Vec3::Zero();
    Vec3 hi = Vec3::Ones();
    Vec3 center = Vec3::Zero();
    double radius = 1.0;
    std::string stl_path;
    double grid_spacing = 0.0; // level-set grid spacing for stl/biventricle (default dp)
    BiventricleSpec biventricle;
};

enum class IonicModelKind { none, aliev_panfilov, fitzhugh_nagumo };
enum class MaterialKind { none, neo_hookean, holzapfel_ogden };
enum class ActiveMode { none, ode, constant };
enum class OracleCase { none, band, exp_profile, aniso_gaussian };

struct SceneConfig {
    std::string name = "scene";
    int dimension = 2;
    double dp = 0.01;
    double h_factor = 1.3;

    GeometrySpec geometry;

    bool electrophysiology = true;
    bool mechanics = false;
    bool coupling = false;

    IonicModelKind ionic = IonicModelKind::none;
    AlievPanfilovParams ap;
    FitzHughNagumoParams fhn;
    double C_m = 1.0;

    double d_iso = 0.0;
    double d_ani = 0.0;
    Vec3 fiber = Vec3::UnitX();
    bool fiber_from_field = false;
    bool kernel_correction = true;
    PairConductivity pair_variant = PairConductivity::mean_inverse_factor;

    MaterialKind material = MaterialKind::none;
    NeoHookeanParams neo_hookean;
    HolzapfelOgdenParams holzapfel;
    double rho0 = 1.0;
    Vec3 mech_fiber = Vec3::UnitX();
    Vec3 mech_sheet = Vec3::UnitY();
    bool mech_fibers_from_field = false;

    ActiveMode active_mode = ActiveMode::none;
    ActiveStressParams active;

    FieldInit init_V_m;
    FieldInit init_w;
    FieldInit init_T_a;
    Vec3 init_velocity = Vec3::Zero();

    std::vector<StimulusSpec> stimuli;
    std::vector<ConstraintSpec> constraints;
    std::vector<ProbeSpec> probes;

    double end_time = 1.0;

    std::string out_dir = ".";
    std::string probe_file = "probes.csv";
    double snapshot_every = 0.0; // 0 disables snapshots
    std::string snapshot_format = "vtk";
    std::uint64_t seed = 0;

    int relax_steps = 0;
    double relax_pressure = 2.0;
    double relax_target_cv = 0.0;

    double theta_epi_deg = -70.0;
    double theta_endo_deg = 80.0;
    Vec3 fiber_axis = Vec3::UnitY();
    double band_factor = 1.5; // Dirichlet band width in units of dp

    double cfl_diffusion = 0.5;
    double cfl_mechanics = 0.6;
    double damping = 0.0;
    double dt_max = std::numeric_limits<double>::infinity();

    OracleCase oracle = OracleCase::none;
    double oracle_C0 = 1.0;
    double oracle_z0 = 0.5, oracle_z1 = 0.45, oracle_z2 = 0.55;
    double oracle_t0 = 1.0;
    int oracle_axis = 1;
    Vec3 oracle_center = Vec3::Zero();
};

/// Parses and fully validates a scene; throws ValidationError listing every
/// problem with its config path.
SceneConfig load_scene(const std::string& text);
SceneConfig load_scene_file(const std::string& path);
std::string serialize_scene(const SceneConfig& config);

bool operator==(const SceneConfig& a, const SceneConfig& b);

/// Clamp (or add current) inside the active window; no effect outside.
template <int D>
void apply_stimulus(std::vector<double>& v_m, const ParticleSet<D>& set, const StimulusSpec& st,
                    double t, double dt = 0.0) {
    if (t < st.t_on || t > st.t_off)
        return;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (!st.region.contains<D>(set.r0[i]))
            continue;
        if (st.mode == StimulusSpec::Mode::clamp)
            v_m[i] = st.V_stim;
        else
            v_m[i] += st.current * dt;
    }
}

} // namespace csph
