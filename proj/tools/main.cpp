#include "csph/sim_driver.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace {

int guarded(const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const csph::ValidationError& err) {
        std::cerr << "validation error: " << err.what() << "\n";
        return 1;
    } catch (const csph::NumericalError& err) {
        std::cerr << "numerical failure: " << err.what() << "\n";
        return 2;
    } catch (const csph::IoError& err) {
        std::cerr << "i/o error: " << err.what() << "\n";
        return 3;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    }
}

void print_summary(const csph::RunResult& res) {
    std::printf("steps            %lld\n", res.steps);
    std::printf("final time       %.6g\n", res.final_time);
    if (res.dt_diffusion > 0.0 && std::isfinite(res.dt_diffusion))
        std::printf("diffusion dt     %.6g\n", res.dt_diffusion);
    if (!res.probe_path.empty())
        std::printf("probe table      %s\n", res.probe_path.c_str());
    if (res.oracle_bound)
        std::printf("oracle errors    L2 %.6e  Linf %.6e\n", res.oracle_errors.l2,
                    res.oracle_errors.linf);
    if (res.total_mass_initial != 0.0 || res.total_mass_final != 0.0)
        std::printf("field mass       %.12e -> %.12e\n", res.total_mass_initial,
                    res.total_mass_final);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cardiosph: meshless cardiac electrophysiology and electromechanics"};
    app.require_subcommand(1);

    std::string scene_path, out_dir;
    int threads = 0;
    double snapshot_every = -1.0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("scene", scene_path, "scene configuration file")->required();
        cmd->add_option("--out", out_dir, "output directory (overrides the scene)");
        cmd->add_option("--threads", threads, "worker thread count");
        cmd->add_option("--snapshot-every", snapshot_every, "snapshot cadence override");
    };

    CLI::App* run_cmd = app.add_subcommand("run", "run a scene end to end");
    add_common(run_cmd);

    CLI::App* relax_cmd = app.add_subcommand("relax", "generate and relax the scene's particles");
    add_common(relax_cmd);

    CLI::App* fibers_cmd = app.add_subcommand("fibers", "reconstruct and export the fiber field");
    add_common(fibers_cmd);

    CLI::App* oracle_cmd =
        app.add_subcommand("oracle", "evaluate an analytical solution on a 1d sample range");
    std::string oracle_case;
    double o_t = 1.0, o_d = 1e-4, o_C0 = 1.0, o_z0 = 0.5, o_z1 = 0.45, o_z2 = 0.55, o_t0 = 1.0;
    double o_dxx = 0.09, o_dyy = 0.03, o_lo = 0.0, o_hi = 1.0;
    int o_samples = 101;
    oracle_cmd->add_option("case", oracle_case, "band | exp | aniso")->required();
    oracle_cmd->add_option("--t", o_t, "evaluation time");
    oracle_cmd->add_option("--d", o_d, "isotropic diffusivity");
    oracle_cmd->add_option("--C0", o_C0, "concentration scale");
    oracle_cmd->add_option("--z0", o_z0, "band midpoint / profile center");
    oracle_cmd->add_option("--z1", o_z1, "band lower edge");
    oracle_cmd->add_option("--z2", o_z2, "band upper edge");
    oracle_cmd->add_option("--t0", o_t0, "initial-profile time offset");
    oracle_cmd->add_option("--Dxx", o_dxx, "anisotropic tensor xx entry");
    oracle_cmd->add_option("--Dyy", o_dyy, "anisotropic tensor yy entry");
    oracle_cmd->add_option("--lo", o_lo, "sample range start");
    oracle_cmd->add_option("--hi", o_hi, "sample range end");
    oracle_cmd->add_option("--samples", o_samples, "sample count");

    CLI::App* conv_cmd =
        app.add_subcommand("convergence", "run a scene at refined resolutions against its oracle");
    int levels = 3;
    add_common(conv_cmd);
    conv_cmd->add_option("--levels", levels, "number of refinement levels (dp halves each time)");

    CLI11_PARSE(app, argc, argv);

    auto options = [&] {
        csph::RunOptions opt;
        opt.threads = threads;
        opt.out_dir_override = out_dir;
        opt.snapshot_every_override = snapshot_every;
        return opt;
    };

    if (run_cmd->parsed()) {
        return guarded([&] {
            const csph::SceneConfig scene = csph::load_scene_file(scene_path);
            const csph::RunResult res = csph::run_scene(scene, options());
            print_summary(res);
        });
    }

    if (relax_cmd->parsed()) {
        return guarded([&] {
            csph::SceneConfig scene = csph::load_scene_file(scene_path);
            // keep the geometry pipeline, skip the physics
            scene.electrophysiology = false;
            scene.mechanics = false;
            scene.coupling = false;
            scene.active_mode = csph::ActiveMode::none;
            scene.probes.clear();
            scene.end_time = 1e-9;
            scene.snapshot_every = 0.0;
            csph::RunOptions opt = options();
            const csph::RunResult res = csph::run_scene(scene, opt);
            std::printf("particles        %zu\n", res.volumes.size());
            std::printf("relaxed cv       %.4f\n", res.relax_final_cv);
            const std::string dir = !out_dir.empty() ? out_dir : scene.out_dir;
            csph::write_vtk_pointcloud(dir + "/" + scene.name + "_particles.vtk",
                                       scene.name + " relaxed particles", res.positions, {}, {});
            std::printf("wrote            %s/%s_particles.vtk\n", dir.c_str(),
                        scene.name.c_str());
        });
    }

    if (fibers_cmd->parsed()) {
        return guarded([&] {
            csph::SceneConfig scene = csph::load_scene_file(scene_path);
            if (scene.geometry.kind != csph::GeometrySpec::Kind::biventricle)
                throw csph::ValidationError("fibers: scene must use the biventricle geometry");
            scene.fiber_from_field = true;
            scene.d_ani = std::max(scene.d_ani, 1e-12);
            scene.electrophysiology = true;
            scene.ionic = csph::IonicModelKind::none;
            scene.d_iso = std::max(scene.d_iso, 1.0);
            scene.mechanics = false;
            scene.coupling = false;
            scene.active_mode = csph::ActiveMode::none;
            scene.probes.clear();
            scene.end_time = 1e-9;
            scene.snapshot_every = 0.0;

            // rebuild the pipeline pieces directly for the export
            const double gs =
                scene.geometry.grid_spacing > 0.0 ? scene.geometry.grid_spacing : scene.dp;
            const auto fields = csph::generate_biventricle(scene.geometry.biventricle, gs);
            auto set = csph::generate_lattice_particles(fields.tissue, scene.dp, 1.0);
            if (scene.relax_steps > 0) {
                csph::RelaxOptions ro;
                ro.steps = scene.relax_steps;
                ro.background_pressure = scene.relax_pressure;
                ro.target_cv = scene.relax_target_cv;
                csph::relax_particles(set, fields.tissue, ro);
            }
            const auto classes =
                csph::classify_biventricle_nodes(fields, scene.band_factor * scene.dp);
            const auto psi = csph::solve_pseudo_distance(fields.tissue, classes, 1e-6);
            constexpr double deg = std::numbers::pi / 180.0;
            const auto fibers = csph::reconstruct_fibers(set, fields.tissue, psi,
                                                         scene.theta_epi_deg * deg,
                                                         scene.theta_endo_deg * deg,
                                                         scene.fiber_axis);
            std::vector<double> xyz(3 * set.size()), f0(3 * set.size()), s0(3 * set.size());
            for (std::size_t i = 0; i < set.size(); ++i)
                for (int a = 0; a < 3; ++a) {
                    xyz[3 * i + a] = set.r0[i][a];
                    f0[3 * i + a] = fibers.f0[i][a];
                    s0[3 * i + a] = fibers.s0[i][a];
                }
            const std::string dir = !out_dir.empty() ? out_dir : scene.out_dir;
            csph::write_vtk_pointcloud(dir + "/" + scene.name + "_fibers.vtk",
                                       scene.name + " fiber field", xyz, {{"psi", fibers.psi}},
                                       {{"f0", f0}, {"s0", s0}});
            std::printf("particles        %zu\n", set.size());
            std::printf("fallback frames  %zu\n", fibers.fallback_count);
            std::printf("wrote            %s/%s_fibers.vtk\n", dir.c_str(), scene.name.c_str());
        });
    }

    if (oracle_cmd->parsed()) {
        return guarded([&] {
            std::printf("z,C\n");
            for (int i = 0; i < o_samples; ++i) {
                const double z = o_lo + (o_hi - o_lo) * i / (o_samples - 1);
                double c;
                if (oracle_case == "band")
                    c = csph::oracle_band_diffusion(z, o_t, o_C0, o_d, o_z0, o_z1, o_z2);
                else if (oracle_case == "exp")
                    c = csph::oracle_exp_diffusion(z, o_t, o_C0, o_d, o_z0, o_t0);
                else if (oracle_case == "aniso")
                    c = csph::oracle_aniso_gaussian(csph::Vec2(z, o_z0), o_t, o_dxx, o_dyy,
                                                    csph::Vec2(0.0, o_z0));
                else
                    throw csph::ValidationError("oracle: unknown case '" + oracle_case + "'");
                std::printf("%.16e,%.16e\n", z, c);
            }
        });
    }

    if (conv_cmd->parsed()) {
        return guarded([&] {
            csph::SceneConfig scene = csph::load_scene_file(scene_path);
            if (scene.oracle == csph::OracleCase::none)
                throw csph::ValidationError("convergence: scene binds no oracle");
            std::printf("%12s %12s %12s %12s\n", "dp", "particles", "L2", "Linf");
            for (int level = 0; level < levels; ++level) {
                csph::SceneConfig refined = scene;
                refined.dp = scene.dp / (1 << level);
                csph::RunOptions opt = options();
                opt.write_files = false;
                const csph::RunResult res = csph::run_scene(refined, opt);
                std::printf("%12.6g %12zu %12.5e %12.5e\n", refined.dp, res.volumes.size(),
                            res.oracle_errors.l2, res.oracle_errors.linf);
            }
        });
    }

    return 0;
}
