#pragma once

#include "csph/scene.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace csph {

// ---------------------------------------------------------------------------
// analytical oracles for the diffusion benchmarks

/// Band of initial concentration C0 on [z1, z2] diffusing into a half-infinite
/// medium: piecewise complementary-error-function profile.
inline double oracle_band_diffusion(double z, double t, double C0, double d_iso, double z0,
                                    double z1, double z2) {
    const double denom = std::sqrt(4.0 * d_iso * t);
    if (z <= z0)
        return 0.5 * C0 * std::erfc((z1 - z) / denom);
    return 0.5 * C0 * std::erfc((z - z2) / denom);
}

/// Spreading of an initial Gaussian exp(-(z-z0)^2/(4 d t0)).
inline double oracle_exp_diffusion(double z, double t, double C0, double d_iso, double z0,
                                   double t0) {
    const double s = (z - z0) * (z - z0) / (4.0 * d_iso * (t + t0));
    return C0 / std::sqrt((t + t0) / t0) * std::exp(-s);
}

/// Free-space anisotropic Gaussian for a diagonal diffusion tensor in 2d.
inline double oracle_aniso_gaussian(const Vec2& x, double t, double Dxx, double Dyy,
                                    const Vec2& x0) {
    const double norm = 1.0 / (4.0 * std::numbers::pi * t * std::sqrt(Dxx * Dyy));
    const double ex = (x[0] - x0[0]) * (x[0] - x0[0]) / (4.0 * t * Dxx);
    const double ey = (x[1] - x0[1]) * (x[1] - x0[1]) / (4.0 * t * Dyy);
    return norm * std::exp(-(ex + ey));
}

struct ErrorNorms {
    double l2 = 0.0;   // volume-weighted root-mean-square error
    double linf = 0.0; // pointwise maximum error
};

inline ErrorNorms error_norms(std::span<const double> numerical, std::span<const double> reference,
                              std::span<const double> volumes) {
    ErrorNorms norms;
    double wsum = 0.0, esum = 0.0;
    for (std::size_t i = 0; i < numerical.size(); ++i) {
        const double e = numerical[i] - reference[i];
        esum += volumes[i] * e * e;
        wsum += volumes[i];
        norms.linf = std::max(norms.linf, std::abs(e));
    }
    norms.l2 = wsum > 0.0 ? std::sqrt(esum / wsum) : 0.0;
    return norms;
}

// ---------------------------------------------------------------------------
// probe tables and snapshot output

struct ProbeSeries {
    std::vector<std::string> columns; // "time" first
    std::vector<std::vector<double>> rows;
};

void write_probe_csv(const std::string& path, const ProbeSeries& series);
ProbeSeries read_probe_csv(const std::string& path);

/// Legacy VTK point cloud (POLYDATA with vertices); positions padded to 3d.
void write_vtk_pointcloud(const std::string& path, const std::string& title,
                          std::span<const double> positions_xyz,
                          const std::map<std::string, std::vector<double>>& scalars,
                          const std::map<std::string, std::vector<double>>& vectors_xyz);

// ---------------------------------------------------------------------------
// scene execution

struct RunOptions {
    int threads = 0; // 0: leave the OpenMP default
    std::string out_dir_override;
    double snapshot_every_override = -1.0;
    bool write_files = true;
    bool verbose = false;
};

struct RunResult {
    int dimension = 0;
    long long steps = 0;
    double final_time = 0.0;
    double dt_diffusion = 0.0;

    ProbeSeries probes;
    std::string probe_path;

    // final particle state (positions padded to 3 components)
    std::vector<double> positions;
    std::vector<double> volumes;
    std::vector<double> V_m, w, T_a;
    std::vector<double> displacement; // 3 components per particle
    double total_mass_initial = 0.0; // sum V_i phi_i at t = 0 (electro scenes)
    double total_mass_final = 0.0;
    double max_abs_V = 0.0; // max |V_m| seen during the run
    double min_V = 0.0, max_V = 0.0;

    // per-step log when coupling is enabled
    std::vector<double> dt_log, dt_p_log, dt_m_log;

    // oracle comparison at end time when the scene binds one
    bool oracle_bound = false;
    ErrorNorms oracle_errors;

    // geometry pipeline summary (biventricle scenes)
    double relax_final_cv = 0.0;
    std::size_t fiber_fallbacks = 0;
};

/// Runs a scene end to end (geometry, operators, Algorithm-1 time loop,
/// probes, outputs). Deterministic for a fixed scene and thread count.
RunResult run_scene(const SceneConfig& scene, const RunOptions& options = {});

} // namespace csph
