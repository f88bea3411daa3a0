#include "csph/sim_driver.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace csph {

// ---------------------------------------------------------------------------
// probe tables

void write_probe_csv(const std::string& path, const ProbeSeries& series) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f)
        throw IoError("write_probe_csv: cannot open '" + path + "' for writing");
    for (std::size_t c = 0; c < series.columns.size(); ++c)
        std::fprintf(f, "%s%s", c ? "," : "", series.columns[c].c_str());
    std::fprintf(f, "\n");
    for (const auto& row : series.rows) {
        for (std::size_t c = 0; c < row.size(); ++c)
            std::fprintf(f, "%s%.16e", c ? "," : "", row[c]);
        std::fprintf(f, "\n");
    }
    if (std::fclose(f) != 0)
        throw IoError("write_probe_csv: failed to close '" + path + "'");
}

ProbeSeries read_probe_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("read_probe_csv: cannot open '" + path + "'");
    ProbeSeries series;
    std::string line;
    if (!std::getline(in, line))
        throw IoError("read_probe_csv: empty file '" + path + "'");
    std::stringstream head(line);
    std::string cell;
    while (std::getline(head, cell, ','))
        series.columns.push_back(cell);
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::vector<double> row;
        std::stringstream ss(line);
        while (std::getline(ss, cell, ','))
            row.push_back(std::strtod(cell.c_str(), nullptr));
        series.rows.push_back(std::move(row));
    }
    return series;
}

// ---------------------------------------------------------------------------
// legacy VTK point clouds

void write_vtk_pointcloud(const std::string& path, const std::string& title,
                          std::span<const double> positions_xyz,
                          const std::map<std::string, std::vector<double>>& scalars,
                          const std::map<std::string, std::vector<double>>& vectors_xyz) {
    const std::size_t n = positions_xyz.size() / 3;
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f)
        throw IoError("write_vtk_pointcloud: cannot open '" + path + "' for writing");
    std::fprintf(f, "# vtk DataFile Version 3.0\n%s\nASCII\nDATASET POLYDATA\n", title.c_str());
    std::fprintf(f, "POINTS %zu double\n", n);
    for (std::size_t i = 0; i < n; ++i)
        std::fprintf(f, "%.9e %.9e %.9e\n", positions_xyz[3 * i], positions_xyz[3 * i + 1],
                     positions_xyz[3 * i + 2]);
    std::fprintf(f, "VERTICES %zu %zu\n", n, 2 * n);
    for (std::size_t i = 0; i < n; ++i)
        std::fprintf(f, "1 %zu\n", i);
    std::fprintf(f, "POINT_DATA %zu\n", n);
    for (const auto& [name, values] : scalars) {
        std::fprintf(f, "SCALARS %s double 1\nLOOKUP_TABLE default\n", name.c_str());
        for (std::size_t i = 0; i < n; ++i)
            std::fprintf(f, "%.9e\n", values[i]);
    }
    for (const auto& [name, values] : vectors_xyz) {
        std::fprintf(f, "VECTORS %s double\n", name.c_str());
        for (std::size_t i = 0; i < n; ++i)
            std::fprintf(f, "%.9e %.9e %.9e\n", values[3 * i], values[3 * i + 1],
                         values[3 * i + 2]);
    }
    if (std::fclose(f) != 0)
        throw IoError("write_vtk_pointcloud: failed to close '" + path + "'");
}

// ---------------------------------------------------------------------------
// scene instantiation

namespace {

template <int D>
Vec<D> truncate(const Vec3& v) {
    Vec<D> out;
    for (int a = 0; a < D; ++a)
        out[a] = v[a];
    return out;
}

template <int D>
double eval_field_init(const FieldInit& f, const Vec<D>& x, double vm_value, double dp) {
    Vec3 p = Vec3::Zero();
    for (int a = 0; a < D; ++a)
        p[a] = x[a];
    switch (f.kind) {
    case FieldInit::Kind::uniform:
        return f.value;
    case FieldInit::Kind::gaussian:
        return f.amplitude * std::exp(-(p - f.center).squaredNorm() / f.width);
    case FieldInit::Kind::band: {
        // cell average keeps the band mass exact at every resolution
        const double c = p[f.axis];
        const double overlap = std::max(
            0.0, std::min(c + 0.5 * dp, f.hi) - std::max(c - 0.5 * dp, f.lo));
        const double frac = std::min(1.0, overlap / dp);
        return f.inside * frac + f.outside * (1.0 - frac);
    }
    case FieldInit::Kind::exp_profile: {
        const double c = p[f.axis];
        return std::exp(-(c - f.z0) * (c - f.z0) / (4.0 * f.d * f.t0));
    }
    case FieldInit::Kind::aniso_gaussian:
        return oracle_aniso_gaussian(Vec2(p[0], p[1]), f.t0, f.Dxx, f.Dyy,
                                     Vec2(f.center[0], f.center[1]));
    case FieldInit::Kind::linear: {
        const double c = p[f.axis];
        return f.from + (f.to - f.from) * (c - f.a0) / (f.a1 - f.a0);
    }
    case FieldInit::Kind::region_value:
        return f.region.contains<D>(x) ? f.inside : f.outside;
    case FieldInit::Kind::scaled_vm:
        return f.coeff * vm_value;
    }
    return 0.0;
}

struct GeometryArtifacts {
    FiberField fibers;
    bool has_fiber_field = false;
    double relax_cv = 0.0;
    std::size_t fiber_fallbacks = 0;
};

template <int D>
ParticleSet<D> build_particles(const SceneConfig& s, GeometryArtifacts& artifacts) {
    const double rho0 = s.material != MaterialKind::none ? s.rho0 : 1.0;
    switch (s.geometry.kind) {
    case GeometrySpec::Kind::box:
        return make_lattice_block<D>(truncate<D>(s.geometry.lo), truncate<D>(s.geometry.hi), s.dp,
                                     rho0);
    case GeometrySpec::Kind::disk: {
        const Vec<D> c = truncate<D>(s.geometry.center);
        const double r = s.geometry.radius;
        Vec<D> lo = c - Vec<D>::Constant(r), hi = c + Vec<D>::Constant(r);
        return make_lattice_region<D>(lo, hi, s.dp, rho0,
                                      [&](const Vec<D>& x) { return (x - c).norm() < r; });
    }
    case GeometrySpec::Kind::stl: {
        if constexpr (D != 3) {
            throw ValidationError("scene.geometry: stl geometry requires dimension = 3");
        } else {
            const TriangleMesh mesh = parse_stl_file(s.geometry.stl_path);
            const double gs = s.geometry.grid_spacing > 0.0 ? s.geometry.grid_spacing : s.dp;
            auto [lo, hi] = mesh.bounding_box();
            lo -= Vec3::Constant(3.0 * gs);
            hi += Vec3::Constant(3.0 * gs);
            std::array<int, 3> dims{};
            for (int a = 0; a < 3; ++a)
                dims[a] = static_cast<int>(std::ceil((hi[a] - lo[a]) / gs)) + 1;
            std::size_t ambiguous = 0;
            const LevelSetGrid<3> ls = build_signed_distance(mesh, lo, gs, dims, &ambiguous);
            if (ambiguous > 0)
                std::cerr << "warning: " << ambiguous
                          << " level-set nodes had ambiguous inside/outside parity (mesh may not "
                             "be watertight)\n";
            ParticleSet<3> set = generate_lattice_particles(ls, s.dp, rho0);
            if (s.relax_steps > 0) {
                RelaxOptions opt;
                opt.steps = s.relax_steps;
                opt.background_pressure = s.relax_pressure;
                opt.target_cv = s.relax_target_cv;
                opt.h_factor = s.h_factor;
                artifacts.relax_cv = relax_particles(set, ls, opt).final_cv;
            }
            return set;
        }
    }
    case GeometrySpec::Kind::biventricle: {
        if constexpr (D != 3) {
            throw ValidationError("scene.geometry: biventricle geometry requires dimension = 3");
        } else {
            const double gs = s.geometry.grid_spacing > 0.0 ? s.geometry.grid_spacing : s.dp;
            const BiventricleFields fields = generate_biventricle(s.geometry.biventricle, gs);
            ParticleSet<3> set = generate_lattice_particles(fields.tissue, s.dp, rho0);
            if (s.relax_steps > 0) {
                RelaxOptions opt;
                opt.steps = s.relax_steps;
                opt.background_pressure = s.relax_pressure;
                opt.target_cv = s.relax_target_cv;
                opt.h_factor = s.h_factor;
                artifacts.relax_cv = relax_particles(set, fields.tissue, opt).final_cv;
            }
            if (s.fiber_from_field || s.mech_fibers_from_field) {
                const auto classes = classify_biventricle_nodes(fields, s.band_factor * s.dp);
                const auto psi = solve_pseudo_distance(fields.tissue, classes, 1e-6);
                constexpr double deg = std::numbers::pi / 180.0;
                artifacts.fibers =
                    reconstruct_fibers(set, fields.tissue, psi, s.theta_epi_deg * deg,
                                       s.theta_endo_deg * deg, s.fiber_axis);
                artifacts.has_fiber_field = true;
                artifacts.fiber_fallbacks = artifacts.fibers.fallback_count;
            }
            return set;
        }
    }
    }
    throw ValidationError("scene.geometry: unsupported geometry");
}

struct ResolvedProbe {
    std::string name;
    std::string quantity;
    std::size_t particle;
    double interval;
    double next_due;
};

template <int D>
class Simulation {
  public:
    Simulation(const SceneConfig& scene, const RunOptions& options)
        : s_(scene), opt_(options) {
        set_ = build_particles<D>(s_, artifacts_);
        kernel_ = std::make_unique<SmoothingKernel<D>>(s_.dp, s_.h_factor);
        nl_ = build_neighbor_lists(set_, *kernel_);

        const bool need_b0 = s_.mechanics || (s_.electrophysiology && s_.kernel_correction);
        if (need_b0)
            b0_ = compute_correction_matrices(set_, nl_);

        if (s_.electrophysiology)
            setup_electrophysiology();
        init_fields();
        if (s_.mechanics)
            setup_mechanics();
        resolve_probes();
    }

    RunResult run() {
        RunResult res;
        res.dimension = D;
        res.relax_final_cv = artifacts_.relax_cv;
        res.fiber_fallbacks = artifacts_.fiber_fallbacks;
        res.dt_diffusion = dt_p_;

        if (opt_.write_files) {
            out_dir_ = !opt_.out_dir_override.empty() ? opt_.out_dir_override : s_.out_dir;
            std::error_code ec;
            std::filesystem::create_directories(out_dir_, ec);
            if (ec)
                throw IoError("run: cannot create output directory '" + out_dir_ + "': " +
                              ec.message());
        }
        const double snapshot_every =
            opt_.snapshot_every_override >= 0.0 ? opt_.snapshot_every_override : s_.snapshot_every;

        probe_series_.columns.push_back("time");
        for (const auto& pr : probes_) {
            if (pr.quantity == "displacement" || pr.quantity == "velocity") {
                static const char* axes[3] = {"x", "y", "z"};
                for (int a = 0; a < D; ++a)
                    probe_series_.columns.push_back(pr.name + "." + pr.quantity + "." + axes[a]);
            } else {
                probe_series_.columns.push_back(pr.name + "." + pr.quantity);
            }
        }

        if (s_.electrophysiology)
            res.total_mass_initial = field_mass();

        double t = 0.0;
        long long step = 0;
        track_extrema(res);
        sample_probes(t);
        double next_snapshot = snapshot_every > 0.0 ? snapshot_every : -1.0;
        if (snapshot_every > 0.0)
            write_snapshot(t, 0);
        int snapshot_id = 1;

        const bool coupled = s_.coupling;
        const bool mech_only = s_.mechanics && !s_.electrophysiology;
        while (t < s_.end_time - 1e-12 * s_.end_time) {
            double dt = s_.dt_max;
            double dt_m = std::numeric_limits<double>::infinity();
            if (s_.electrophysiology)
                dt = std::min(dt, dt_p_);
            if (s_.mechanics) {
                dt_m = solid_->timestep(s_.cfl_mechanics);
                if (coupled || mech_only)
                    dt = std::min(dt, dt_m);
            }
            if (coupled) {
                res.dt_p_log.push_back(dt_p_);
                res.dt_m_log.push_back(dt_m);
                res.dt_log.push_back(std::min(dt_p_, dt_m));
            }
            dt = std::min(dt, s_.end_time - t);

            for (const auto& st : s_.stimuli)
                apply_stimulus<D>(V_, set_, st, t, dt);

            if (s_.electrophysiology) {
                reaction_pass(ReactionOrder::forward, dt);
                diffusion_->rate(V_, rate_);
#pragma omp parallel for schedule(static)
                for (long long i = 0; i < static_cast<long long>(V_.size()); ++i)
                    V_[i] += dt * rate_[i];
                reaction_pass(ReactionOrder::backward, dt);
            }

            if (s_.mechanics) {
                if (s_.active_mode == ActiveMode::ode) {
                    auto& ta = solid_->active_stress();
#pragma omp parallel for schedule(static)
                    for (long long i = 0; i < static_cast<long long>(ta.size()); ++i)
                        ta[i] = active_stress_step(ta[i], V_[i], dt, s_.active);
                }
                try {
                    solid_->verlet_step(dt);
                } catch (const std::runtime_error& err) {
                    diagnostic_snapshot(t);
                    throw NumericalError(std::string("run: ") + err.what() + " at t = " +
                                         std::to_string(t));
                }
            }

            t += dt;
            ++step;

            if (step % 100 == 0)
                nan_guard(t);
            if (due_probe(t))
                sample_probes(t);
            if (snapshot_every > 0.0 && t >= next_snapshot - 1e-12) {
                write_snapshot(t, snapshot_id++);
                next_snapshot += snapshot_every;
            }
            track_extrema(res);
        }
        if (probe_series_.rows.empty() || probe_series_.rows.back()[0] != t)
            sample_probes(t);

        res.steps = step;
        res.final_time = t;
        res.probes = probe_series_;
        if (s_.electrophysiology)
            res.total_mass_final = field_mass();
        fill_result_state(res);
        evaluate_oracle(res, t);

        if (opt_.write_files) {
            res.probe_path = out_dir_ + "/" + s_.probe_file;
            write_probe_csv(res.probe_path, probe_series_);
        }
        return res;
    }

  private:
    void setup_electrophysiology() {
        const std::size_t n = set_.size();
        if (s_.fiber_from_field) {
            if (!artifacts_.has_fiber_field)
                throw ValidationError("scene.conductivity.fiber: geometry did not produce a fiber "
                                      "field");
            std::vector<Vec<D>> fibers(n);
            for (std::size_t i = 0; i < n; ++i)
                fibers[i] = truncate<D>(artifacts_.fibers.f0[i]);
            conductivity_ = ConductivityModel<D>::from_fibers(s_.d_iso, s_.d_ani, fibers);
        } else {
            Vec<D> f = truncate<D>(s_.fiber);
            if (s_.d_ani != 0.0)
                f.normalize();
            conductivity_ = ConductivityModel<D>::uniform(n, s_.d_iso, s_.d_ani, f);
        }
        dt_p_ = s_.cfl_diffusion * kernel_->h() * kernel_->h() / (D * conductivity_.max_trace());
        diffusion_ = std::make_unique<DiffusionOperator<D>>(
            set_, nl_, conductivity_, s_.kernel_correction ? &b0_ : nullptr, s_.pair_variant,
            s_.C_m);
        rate_.assign(n, 0.0);
    }

    void init_fields() {
        const std::size_t n = set_.size();
        V_.resize(n);
        w_.resize(n);
        T_a_init_.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            V_[i] = eval_field_init<D>(s_.init_V_m, set_.r0[i], 0.0, s_.dp);
        for (std::size_t i = 0; i < n; ++i)
            w_[i] = eval_field_init<D>(s_.init_w, set_.r0[i], V_[i], s_.dp);
        for (std::size_t i = 0; i < n; ++i)
            T_a_init_[i] = eval_field_init<D>(s_.init_T_a, set_.r0[i], V_[i], s_.dp);
    }

    void setup_mechanics() {
        const std::size_t n = set_.size();
        SolidMaterial material;
        if (s_.material == MaterialKind::neo_hookean)
            material = s_.neo_hookean;
        else if (s_.material == MaterialKind::holzapfel_ogden)
            material = s_.holzapfel;
        else
            throw ValidationError("scene.material: mechanics enabled without a material model");

        FiberFrame<D> frame;
        const bool needs_frame =
            (s_.material == MaterialKind::holzapfel_ogden && s_.holzapfel.anisotropic()) ||
            s_.active_mode != ActiveMode::none;
        if (needs_frame) {
            if (s_.mech_fibers_from_field) {
                if (!artifacts_.has_fiber_field)
                    throw ValidationError("scene.material.fiber: geometry did not produce a fiber "
                                          "field");
                frame.f0.resize(n);
                frame.s0.resize(n);
                for (std::size_t i = 0; i < n; ++i) {
                    frame.f0[i] = truncate<D>(artifacts_.fibers.f0[i]);
                    frame.s0[i] = truncate<D>(artifacts_.fibers.s0[i]);
                }
            } else {
                frame = FiberFrame<D>::uniform(n, truncate<D>(s_.mech_fiber).normalized(),
                                               truncate<D>(s_.mech_sheet).normalized());
            }
        }
        solid_ = std::make_unique<SolidDynamics<D>>(set_, nl_, b0_, material, kernel_->h(),
                                                    std::move(frame));
        solid_->set_damping(s_.damping);
        for (const auto& ct : s_.constraints) {
            const std::size_t count = solid_->set_constrained_region(
                [&](const Vec<D>& x) { return ct.region.contains<D>(x); });
            if (count == 0)
                std::cerr << "warning: constraint region matches no particle\n";
        }
        solid_->set_velocity(truncate<D>(s_.init_velocity));
        solid_->active_stress() = T_a_init_;
    }

    void resolve_probes() {
        for (const auto& pr : s_.probes) {
            const Vec<D> loc = truncate<D>(pr.location);
            double best = std::numeric_limits<double>::infinity();
            std::size_t pick = 0;
            for (std::size_t i = 0; i < set_.size(); ++i) {
                const double d = (set_.r0[i] - loc).norm();
                if (d < best) {
                    best = d;
                    pick = i;
                }
            }
            if (best > kernel_->h())
                throw ValidationError("scene.probes: probe '" + pr.name +
                                      "' has no particle within h of its location");
            probes_.push_back({pr.name, pr.quantity, pick, pr.interval,
                               pr.interval > 0.0 ? pr.interval : 0.0});
        }
    }

    void reaction_pass(ReactionOrder order, double dt) {
        if (s_.ionic == IonicModelKind::none)
            return;
        const long long n = static_cast<long long>(V_.size());
        bool failed = false;
        if (s_.ionic == IonicModelKind::aliev_panfilov) {
#pragma omp parallel for schedule(static)
            for (long long i = 0; i < n; ++i) {
                try {
                    ElectroState st{V_[i], w_[i], s_.C_m};
                    st = reaction_half_step(st, dt, s_.ap, order);
                    V_[i] = st.V_m;
                    w_[i] = st.w;
                } catch (const std::runtime_error&) {
#pragma omp critical
                    failed = true;
                }
            }
        } else {
#pragma omp parallel for schedule(static)
            for (long long i = 0; i < n; ++i) {
                ElectroState st{V_[i], w_[i], s_.C_m};
                st = reaction_half_step(st, dt, s_.fhn, order);
                V_[i] = st.V_m;
                w_[i] = st.w;
            }
        }
        if (failed)
            throw NumericalError("run: reaction integration hit the epsilon pole (diverged "
                                 "transmembrane potential)");
    }

    double field_mass() const {
        double m = 0.0;
        for (std::size_t i = 0; i < V_.size(); ++i)
            m += set_.volume[i] * V_[i];
        return m;
    }

    bool due_probe(double t) const {
        for (const auto& pr : probes_)
            if (t >= pr.next_due - 1e-12)
                return true;
        return false;
    }

    void sample_probes(double t) {
        std::vector<double> row;
        row.push_back(t);
        for (auto& pr : probes_) {
            const std::size_t i = pr.particle;
            if (pr.quantity == "V_m")
                row.push_back(V_[i]);
            else if (pr.quantity == "w")
                row.push_back(w_[i]);
            else if (pr.quantity == "T_a")
                row.push_back(solid_ ? solid_->active_stress()[i] : T_a_init_[i]);
            else if (pr.quantity == "displacement") {
                const Vec<D> u = solid_ ? solid_->displacement(i) : Vec<D>::Zero().eval();
                for (int a = 0; a < D; ++a)
                    row.push_back(u[a]);
            } else if (pr.quantity == "velocity") {
                const Vec<D> v = solid_ ? Vec<D>(solid_->velocities()[i]) : Vec<D>::Zero().eval();
                for (int a = 0; a < D; ++a)
                    row.push_back(v[a]);
            }
            while (pr.interval > 0.0 && pr.next_due <= t + 1e-12)
                pr.next_due += pr.interval;
        }
        probe_series_.rows.push_back(std::move(row));
    }

    void track_extrema(RunResult& res) {
        if (!s_.electrophysiology)
            return;
        for (double v : V_) {
            res.max_abs_V = std::max(res.max_abs_V, std::abs(v));
            res.min_V = std::min(res.min_V, v);
            res.max_V = std::max(res.max_V, v);
        }
    }

    void nan_guard(double t) {
        bool bad = false;
        for (double v : V_)
            if (!std::isfinite(v))
                bad = true;
        for (double v : w_)
            if (!std::isfinite(v))
                bad = true;
        if (solid_ && !solid_->all_finite())
            bad = true;
        if (bad) {
            diagnostic_snapshot(t);
            throw NumericalError("run: non-finite field detected at t = " + std::to_string(t));
        }
    }

    std::vector<double> positions_xyz() const {
        std::vector<double> xyz(3 * set_.size(), 0.0);
        for (std::size_t i = 0; i < set_.size(); ++i) {
            const Vec<D> p = solid_ ? Vec<D>(solid_->positions()[i]) : set_.r0[i];
            for (int a = 0; a < D; ++a)
                xyz[3 * i + a] = p[a];
        }
        return xyz;
    }

    void write_snapshot(double t, int id) {
        if (!opt_.write_files)
            return;
        char suffix[32];
        std::snprintf(suffix, sizeof suffix, "_%05d", id);
        std::map<std::string, std::vector<double>> scalars;
        std::map<std::string, std::vector<double>> vectors;
        if (s_.electrophysiology || s_.ionic != IonicModelKind::none) {
            scalars["V_m"] = V_;
            scalars["w"] = w_;
        }
        if (solid_) {
            scalars["T_a"] = solid_->active_stress();
            std::vector<double> u(3 * set_.size(), 0.0), vm(set_.size());
            for (std::size_t i = 0; i < set_.size(); ++i) {
                const Vec<D> ui = solid_->displacement(i);
                for (int a = 0; a < D; ++a)
                    u[3 * i + a] = ui[a];
                vm[i] = solid_->von_mises_stress(i);
            }
            vectors["displacement"] = std::move(u);
            scalars["von_mises"] = std::move(vm);
        }
        const std::string path = out_dir_ + "/" + s_.name + suffix +
                                 (s_.snapshot_format == "vtk" ? ".vtk" : ".csv");
        if (s_.snapshot_format == "vtk") {
            write_vtk_pointcloud(path, s_.name + " t=" + std::to_string(t), positions_xyz(),
                                 scalars, vectors);
        } else {
            std::ofstream out(path);
            if (!out)
                throw IoError("write_snapshot: cannot open '" + path + "'");
            out << "x,y,z";
            for (const auto& [name, v] : scalars)
                out << "," << name;
            out << "\n";
            const auto xyz = positions_xyz();
            char buf[64];
            for (std::size_t i = 0; i < set_.size(); ++i) {
                std::snprintf(buf, sizeof buf, "%.9e,%.9e,%.9e", xyz[3 * i], xyz[3 * i + 1],
                              xyz[3 * i + 2]);
                out << buf;
                for (const auto& [name, v] : scalars) {
                    std::snprintf(buf, sizeof buf, ",%.9e", v[i]);
                    out << buf;
                }
                out << "\n";
            }
        }
    }

    void diagnostic_snapshot(double t) {
        if (!opt_.write_files)
            return;
        try {
            std::map<std::string, std::vector<double>> scalars;
            if (!V_.empty())
                scalars["V_m"] = V_;
            write_vtk_pointcloud(out_dir_ + "/" + s_.name + "_diverged.vtk",
                                 s_.name + " diagnostic t=" + std::to_string(t), positions_xyz(),
                                 scalars, {});
        } catch (...) {
            // the diagnostic is best effort; the original error wins
        }
    }

    void fill_result_state(RunResult& res) {
        res.positions = positions_xyz();
        res.volumes = set_.volume;
        res.V_m = V_;
        res.w = w_;
        res.T_a = solid_ ? solid_->active_stress() : T_a_init_;
        res.displacement.assign(3 * set_.size(), 0.0);
        if (solid_)
            for (std::size_t i = 0; i < set_.size(); ++i) {
                const Vec<D> u = solid_->displacement(i);
                for (int a = 0; a < D; ++a)
                    res.displacement[3 * i + a] = u[a];
            }
    }

    void evaluate_oracle(RunResult& res, double t) {
        if (s_.oracle == OracleCase::none)
            return;
        std::vector<double> ref(set_.size());
        for (std::size_t i = 0; i < set_.size(); ++i) {
            const Vec<D>& x = set_.r0[i];
            if (s_.oracle == OracleCase::band)
                ref[i] = oracle_band_diffusion(x[s_.oracle_axis], t, s_.oracle_C0, s_.d_iso,
                                               s_.oracle_z0, s_.oracle_z1, s_.oracle_z2);
            else if (s_.oracle == OracleCase::exp_profile)
                ref[i] = oracle_exp_diffusion(x[s_.oracle_axis], t, s_.oracle_C0, s_.d_iso,
                                              s_.oracle_z0, s_.oracle_t0);
            else
                ref[i] = oracle_aniso_gaussian(
                    Vec2(x[0], x[1]), t + s_.oracle_t0, conductivity_.tensors[i](0, 0),
                    conductivity_.tensors[i](1, 1),
                    Vec2(s_.oracle_center[0], s_.oracle_center[1]));
        }
        res.oracle_bound = true;
        res.oracle_errors = error_norms(res.V_m, ref, set_.volume);
    }

    SceneConfig s_;
    RunOptions opt_;
    GeometryArtifacts artifacts_;
    ParticleSet<D> set_;
    std::unique_ptr<SmoothingKernel<D>> kernel_;
    NeighborList<D> nl_;
    std::vector<Mat<D>> b0_;
    ConductivityModel<D> conductivity_;
    std::unique_ptr<DiffusionOperator<D>> diffusion_;
    std::unique_ptr<SolidDynamics<D>> solid_;
    std::vector<double> V_, w_, T_a_init_, rate_;
    std::vector<ResolvedProbe> probes_;
    ProbeSeries probe_series_;
    std::string out_dir_ = ".";
    double dt_p_ = std::numeric_limits<double>::infinity();
};

} // namespace

RunResult run_scene(const SceneConfig& scene, const RunOptions& options) {
#ifdef _OPENMP
    if (options.threads > 0)
        omp_set_num_threads(options.threads);
#endif
    switch (scene.dimension) {
    case 1:
        return Simulation<1>(scene, options).run();
    case 2:
        return Simulation<2>(scene, options).run();
    case 3:
        return Simulation<3>(scene, options).run();
    default:
        throw ValidationError("scene.dimension: must be 1, 2 or 3");
    }
}

} // namespace csph
