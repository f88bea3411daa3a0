#pragma once

#include "csph/math_kernels.hpp"
#include "csph/particle_store.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace csph {

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<std::uint32_t, 3>> triangles;
    std::vector<Vec3> normals; // per facet, recomputed from vertex winding
    std::size_t dropped_degenerate = 0;

    std::pair<Vec3, Vec3> bounding_box() const;
};

/// Reads ASCII or binary STL (auto-detected). Parse failures report the byte
/// offset; zero-area facets are dropped and counted.
TriangleMesh parse_stl(std::istream& in);
TriangleMesh parse_stl_file(const std::string& path);

/// Node-centered scalar grid; positive phi means inside the body.
template <int D>
struct LevelSetGrid {
    Vec<D> origin = Vec<D>::Zero();
    double spacing = 1.0;
    std::array<int, D> dims{}; // node counts
    std::vector<double> phi;

    std::size_t node_count() const {
        std::size_t n = 1;
        for (int a = 0; a < D; ++a)
            n *= static_cast<std::size_t>(dims[a]);
        return n;
    }

    std::size_t index(const std::array<int, D>& c) const {
        std::size_t f = 0;
        for (int a = D - 1; a >= 0; --a)
            f = f * dims[a] + c[a];
        return f;
    }

    Vec<D> node_pos(const std::array<int, D>& c) const {
        Vec<D> x;
        for (int a = 0; a < D; ++a)
            x[a] = origin[a] + c[a] * spacing;
        return x;
    }

    Vec<D> max_corner() const {
        Vec<D> x;
        for (int a = 0; a < D; ++a)
            x[a] = origin[a] + (dims[a] - 1) * spacing;
        return x;
    }

    /// Multilinear interpolation, clamped to the grid box.
    double interpolate(const Vec<D>& x) const {
        std::array<int, D> base{};
        std::array<double, D> frac{};
        for (int a = 0; a < D; ++a) {
            double s = (x[a] - origin[a]) / spacing;
            s = std::min(std::max(s, 0.0), static_cast<double>(dims[a] - 1));
            int b = static_cast<int>(s);
            if (b > dims[a] - 2)
                b = std::max(0, dims[a] - 2);
            base[a] = b;
            frac[a] = dims[a] > 1 ? s - b : 0.0;
        }
        double acc = 0.0;
        for (int corner = 0; corner < (1 << D); ++corner) {
            double wgt = 1.0;
            std::array<int, D> c{};
            for (int a = 0; a < D; ++a) {
                const bool hi = corner & (1 << a);
                c[a] = std::min(base[a] + (hi ? 1 : 0), dims[a] - 1);
                wgt *= hi ? frac[a] : 1.0 - frac[a];
            }
            acc += wgt * phi[index(c)];
        }
        return acc;
    }

    /// Central-difference gradient of the interpolated field.
    Vec<D> gradient(const Vec<D>& x) const {
        Vec<D> g;
        const double eps = 0.5 * spacing;
        for (int a = 0; a < D; ++a) {
            Vec<D> hi = x, lo = x;
            hi[a] += eps;
            lo[a] -= eps;
            g[a] = (interpolate(hi) - interpolate(lo)) / (2.0 * eps);
        }
        return g;
    }
};

/// Exact signed distance on a node grid: |phi| is the point-to-triangle
/// distance, the sign comes from a majority vote of axis-parallel ray-parity
/// tests (inside positive). Nodes whose votes disagree are counted in
/// sign_ambiguous; a nonzero count indicates a non-watertight mesh.
LevelSetGrid<3> build_signed_distance(const TriangleMesh& mesh, const Vec3& origin, double spacing,
                                      const std::array<int, 3>& dims,
                                      std::size_t* sign_ambiguous = nullptr);

/// Two truncated thick-walled ellipsoids sharing the long (y) axis. The right
/// ventricle is offset along x so its cavity is tangent to the outer left wall,
/// which makes that wall the septum.
struct BiventricleSpec {
    double a_lv = 45.0, b_lv = 54.0, c_lv = 24.0; // inner LV semi-axes (mm)
    double a_rv = 18.0, b_rv = 58.0, c_rv = 18.0; // inner RV semi-axes (mm)
    double wall_lv = 6.0;
    double wall_rv = 12.0;
    double base_y = 0.0; // truncation plane; tissue keeps y <= base_y
    Vec3 rv_center = Vec3(-(45.0 + 6.0 + 18.0), 0.0, 0.0);
};

struct BiventricleFields {
    LevelSetGrid<3> tissue;          // phi > 0 inside the myocardium
    std::vector<double> cavity_dist; // min over both cavities of the signed surface distance
    BiventricleSpec spec;
};

/// Signed distance from x to the ellipsoid surface with the given semi-axes
/// and center (axis-aligned); positive outside.
double signed_distance_to_ellipsoid(const Vec3& semi_axes, const Vec3& center, const Vec3& x);

/// Analytic SDF composition of the biventricle: union of the two thickened
/// shells minus both cavities, truncated at the base plane.
BiventricleFields generate_biventricle(const BiventricleSpec& spec, double spacing,
                                       double margin_cells = 3.0);

double biventricle_phi(const BiventricleSpec& spec, const Vec3& x);

/// One particle per lattice cell with interpolated phi > 0; V = dp^D.
/// Throws when the body is thinner than dp (empty result).
template <int D>
ParticleSet<D> generate_lattice_particles(const LevelSetGrid<D>& ls, double dp, double rho0 = 1.0) {
    ParticleSet<D> set = make_lattice_region<D>(
        ls.origin, ls.max_corner(), dp, rho0,
        [&](const Vec<D>& x) { return ls.interpolate(x) > 0.0; });
    if (set.size() == 0)
        throw std::runtime_error("generate_lattice_particles: no lattice point falls inside the "
                                 "body; it is thinner than dp = " + std::to_string(dp));
    return set;
}

/// Coefficient of variation of the nearest-neighbor distance distribution.
template <int D>
double nearest_neighbor_cv(const ParticleSet<D>& set, double h_factor = 1.3) {
    const double dp = std::pow(set.volume.empty() ? 1.0 : set.volume[0], 1.0 / D);
    const SmoothingKernel<D> kernel(dp, h_factor);
    const NeighborList<D> nl = build_neighbor_lists(set, kernel);
    double sum = 0.0, sum2 = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& e : nl.neighbors(i))
            best = std::min(best, e.dist);
        if (std::isfinite(best)) {
            sum += best;
            sum2 += best * best;
            ++count;
        }
    }
    if (count == 0)
        return 0.0;
    const double mean = sum / count;
    const double var = std::max(0.0, sum2 / count - mean * mean);
    return std::sqrt(var) / mean;
}

struct RelaxOptions {
    int steps = 1000;
    double background_pressure = 2.0;
    double density = 1.0;
    double h_factor = 1.3;
    double target_cv = 0.0; // early stop when > 0 and the CV drops below it
    int check_every = 100;
    bool periodic = false; // wrap positions in [periodic_lo, periodic_hi), no surface
    double periodic_lo = 0.0;
    double periodic_hi = 1.0;
};

struct RelaxReport {
    int steps_run = 0;
    double final_cv = 0.0;
};

/// Constant-pressure repulsion with overdamped pseudo-time stepping; particles
/// that drift outside the zero level set are projected back onto the surface
/// along the interpolated gradient. Deterministic for a fixed input.
template <int D>
RelaxReport relax_particles(ParticleSet<D>& set, const LevelSetGrid<D>& ls,
                            const RelaxOptions& opt) {
    const std::size_t n = set.size();
    if (n == 0)
        return {};
    const double dp = std::pow(set.volume[0], 1.0 / D);
    const SmoothingKernel<D> kernel(dp, opt.h_factor);
    const double h = kernel.h();
    const double max_step = 0.5 * dp;
    std::vector<Vec<D>> accel(n);

    const double period = opt.periodic_hi - opt.periodic_lo;
    RelaxReport report;
    for (int step = 0; step < opt.steps; ++step) {
        ParticleSet<D> search = set;
        if (opt.periodic) {
            for (auto& x : search.r0)
                for (int a = 0; a < D; ++a)
                    x[a] = opt.periodic_lo + std::fmod(std::fmod(x[a] - opt.periodic_lo, period) +
                                                           period,
                                                       period);
            set.r0 = search.r0;
            // ghost images of particles near the faces close the wrap-around pairs
            const double cut = kernel.cutoff();
            std::array<int, D> span{};
            span.fill(1);
            std::array<int, D> off{};
            off.fill(-1);
            while (true) {
                bool zero = true;
                for (int a = 0; a < D; ++a)
                    zero = zero && off[a] == 0;
                if (!zero) {
                    for (std::size_t i = 0; i < n; ++i) {
                        Vec<D> ghost = search.r0[i];
                        bool near = true;
                        for (int a = 0; a < D; ++a) {
                            ghost[a] += off[a] * period;
                            if (ghost[a] < opt.periodic_lo - cut ||
                                ghost[a] > opt.periodic_hi + cut)
                                near = false;
                        }
                        if (near)
                            search.push_back(ghost, set.volume[i], opt.density);
                    }
                }
                int a = 0;
                for (; a < D; ++a) {
                    if (++off[a] <= span[a])
                        break;
                    off[a] = -1;
                }
                if (a == D)
                    break;
            }
        }
        const NeighborList<D> nl = build_neighbor_lists(search, kernel);
        double amax = 0.0;
#pragma omp parallel for schedule(static) reduction(max : amax)
        for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
            const std::size_t i = static_cast<std::size_t>(ii);
            Vec<D> a = Vec<D>::Zero();
            for (const auto& e : nl.neighbors(i))
                a -= search.volume[e.j] * 2.0 * e.dwdr * e.e0;
            a *= opt.background_pressure / opt.density;
            accel[i] = a;
            amax = std::max(amax, a.norm());
        }
        // single-neighbor force scale keeps near-equilibrium states from
        // random-walking on round-off
        const double floor_accel = 0.02 * opt.background_pressure / opt.density *
                                   set.volume[0] * 2.0 * std::abs(kernel.grad(dp));
        if (amax <= floor_accel * 1e-6)
            break;
        const double tau2 = 0.05 * h / std::max(amax, floor_accel);
#pragma omp parallel for schedule(static)
        for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
            const std::size_t i = static_cast<std::size_t>(ii);
            Vec<D> delta = accel[i] * tau2;
            const double len = delta.norm();
            if (len > max_step)
                delta *= max_step / len;
            set.r0[i] += delta;
            // surface constraint: project escapees back to phi = 0
            if (!opt.periodic) {
                for (int it = 0; it < 4; ++it) {
                    const double phi = ls.interpolate(set.r0[i]);
                    if (phi >= 0.0)
                        break;
                    const Vec<D> g = ls.gradient(set.r0[i]);
                    const double g2 = g.squaredNorm();
                    if (g2 < 1e-20)
                        break;
                    set.r0[i] -= phi * g / g2;
                }
            }
        }
        for (std::size_t i = 0; i < n; ++i)
            if (!set.r0[i].allFinite())
                throw std::runtime_error("relax_particles: diverged (non-finite position) at step " +
                                         std::to_string(step));
        report.steps_run = step + 1;
        if (opt.target_cv > 0.0 && (step + 1) % opt.check_every == 0) {
            if (nearest_neighbor_cv(set, opt.h_factor) < opt.target_cv)
                break;
        }
    }
    report.final_cv = nearest_neighbor_cv(set, opt.h_factor);
    return report;
}

/// Node classification for the pseudo-distance Laplace solve.
enum class PsiNode : std::int8_t { outside = 0, interior = 1, epi = 2, endo = 3 };

/// Harmonic interpolation between the epicardial (psi = 1) and endocardial
/// (psi = 0) bands: clamped SOR sweep of the masked grid Laplacian until the
/// max update falls below tol. Throws on non-convergence with the residual.
template <int D>
std::vector<double> solve_pseudo_distance(const LevelSetGrid<D>& grid,
                                          std::span<const PsiNode> node_class, double tol = 1e-6,
                                          int max_iter = 100000, double omega = 1.7) {
    const std::size_t n = grid.node_count();
    if (node_class.size() != n)
        throw std::invalid_argument("solve_pseudo_distance: classification size mismatch");
    bool has_epi = false, has_endo = false;
    std::vector<double> psi(n, 0.5);
    for (std::size_t i = 0; i < n; ++i) {
        if (node_class[i] == PsiNode::epi) {
            psi[i] = 1.0;
            has_epi = true;
        } else if (node_class[i] == PsiNode::endo) {
            psi[i] = 0.0;
            has_endo = true;
        }
    }
    if (!has_epi || !has_endo)
        throw std::invalid_argument("solve_pseudo_distance: both boundary bands must be nonempty");

    std::array<int, D> c{};
    double residual = 0.0;
    for (int iter = 0; iter < max_iter; ++iter) {
        residual = 0.0;
        c.fill(0);
        // lexicographic Gauss-Seidel/SOR sweep; clamping keeps the discrete
        // maximum principle under over-relaxation
        for (std::size_t flat = 0; flat < n; ++flat) {
            if (node_class[flat] == PsiNode::interior) {
                double sum = 0.0;
                int cnt = 0;
                for (int a = 0; a < D; ++a) {
                    for (int dir = -1; dir <= 1; dir += 2) {
                        std::array<int, D> nb = c;
                        nb[a] += dir;
                        if (nb[a] < 0 || nb[a] >= grid.dims[a])
                            continue;
                        const std::size_t fi = grid.index(nb);
                        if (node_class[fi] == PsiNode::outside)
                            continue;
                        sum += psi[fi];
                        ++cnt;
                    }
                }
                if (cnt > 0) {
                    const double target = sum / cnt;
                    const double next =
                        std::min(1.0, std::max(0.0, psi[flat] + omega * (target - psi[flat])));
                    residual = std::max(residual, std::abs(next - psi[flat]));
                    psi[flat] = next;
                }
            }
            int a = 0;
            for (; a < D; ++a) {
                if (++c[a] < grid.dims[a])
                    break;
                c[a] = 0;
            }
        }
        if (residual < tol)
            return psi;
    }
    throw std::runtime_error("solve_pseudo_distance: no convergence within iteration cap, "
                             "residual = " + std::to_string(residual));
}

struct FiberField {
    std::vector<Vec3> f0;
    std::vector<Vec3> s0;
    std::vector<double> psi;
    std::size_t fallback_count = 0;
};

/// Level-set + rotation fiber reconstruction: s0 is the oriented transmural
/// normal, the flat fiber s0 x axis is rotated about s0 by
/// theta(psi) = (theta_epi - theta_endo) psi + theta_endo (angles in radians).
FiberField reconstruct_fibers(const ParticleSet<3>& set, const LevelSetGrid<3>& tissue,
                              std::span<const double> psi_nodes, double theta_epi,
                              double theta_endo, const Vec3& axis);

/// Epi/endo/interior classification of the biventricle grid from the analytic
/// SDFs; band is the Dirichlet band width.
std::vector<PsiNode> classify_biventricle_nodes(const BiventricleFields& fields, double band);

} // namespace csph
