#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "csph/geometry_pipeline.hpp"

#include <cstring>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>

using namespace csph;

namespace {

const char* cube_ascii_stl = R"(solid cube
facet normal 0 0 -1
outer loop
vertex 0 0 0
vertex 1 1 0
vertex 1 0 0
endloop
endfacet
facet normal 0 0 -1
outer loop
vertex 0 0 0
vertex 0 1 0
vertex 1 1 0
endloop
endfacet
facet normal 0 0 1
outer loop
vertex 0 0 1
vertex 1 0 1
vertex 1 1 1
endloop
endfacet
facet normal 0 0 1
outer loop
vertex 0 0 1
vertex 1 1 1
vertex 0 1 1
endloop
endfacet
facet normal 0 -1 0
outer loop
vertex 0 0 0
vertex 1 0 0
vertex 1 0 1
endloop
endfacet
facet normal 0 -1 0
outer loop
vertex 0 0 0
vertex 1 0 1
vertex 0 0 1
endloop
endfacet
facet normal 0 1 0
outer loop
vertex 0 1 0
vertex 1 1 1
vertex 1 1 0
endloop
endfacet
facet normal 0 1 0
outer loop
vertex 0 1 0
vertex 0 1 1
vertex 1 1 1
endloop
endfacet
facet normal -1 0 0
outer loop
vertex 0 0 0
vertex 0 0 1
vertex 0 1 1
endloop
endfacet
facet normal -1 0 0
outer loop
vertex 0 0 0
vertex 0 1 1
vertex 0 1 0
endloop
endfacet
facet normal 1 0 0
outer loop
vertex 1 0 0
vertex 1 1 0
vertex 1 1 1
endloop
endfacet
facet normal 1 0 0
outer loop
vertex 1 0 0
vertex 1 1 1
vertex 1 0 1
endloop
endfacet
endsolid cube
)";

TriangleMesh cube_mesh() {
    std::istringstream in(cube_ascii_stl);
    return parse_stl(in);
}

void put_le_float(std::string& buf, float v) {
    char bytes[4];
    std::memcpy(bytes, &v, 4);
    buf.append(bytes, 4);
}

std::string cube_binary_stl(std::uint32_t declared_facets, std::size_t emit_facets) {
    const TriangleMesh mesh = cube_mesh();
    std::string buf(80, '\0');
    char count[4];
    std::memcpy(count, &declared_facets, 4);
    buf.append(count, 4);
    for (std::size_t t = 0; t < emit_facets; ++t) {
        for (int a = 0; a < 3; ++a)
            put_le_float(buf, static_cast<float>(mesh.normals[t][a]));
        for (int k = 0; k < 3; ++k)
            for (int a = 0; a < 3; ++a)
                put_le_float(buf, static_cast<float>(mesh.vertices[mesh.triangles[t][k]][a]));
        buf.append(2, '\0');
    }
    return buf;
}

// icosphere by subdividing an icosahedron and projecting onto the unit sphere
TriangleMesh icosphere(int subdivisions) {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> verts = {{-1, t, 0},  {1, t, 0},  {-1, -t, 0}, {1, -t, 0},
                               {0, -1, t},  {0, 1, t},  {0, -1, -t}, {0, 1, -t},
                               {t, 0, -1},  {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
    for (auto& v : verts)
        v.normalize();
    std::vector<std::array<std::uint32_t, 3>> faces = {
        {0, 11, 5},  {0, 5, 1},  {0, 1, 7},  {0, 7, 10}, {0, 10, 11}, {1, 5, 9},  {5, 11, 4},
        {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6},  {3, 6, 8},
        {3, 8, 9},   {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
    for (int level = 0; level < subdivisions; ++level) {
        std::vector<std::array<std::uint32_t, 3>> next;
        for (const auto& f : faces) {
            const auto mid = [&](std::uint32_t a, std::uint32_t b) {
                verts.push_back(((verts[a] + verts[b]) * 0.5).normalized());
                return static_cast<std::uint32_t>(verts.size() - 1);
            };
            const std::uint32_t ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
            next.push_back({f[0], ab, ca});
            next.push_back({f[1], bc, ab});
            next.push_back({f[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        faces = std::move(next);
    }
    TriangleMesh mesh;
    for (const auto& f : faces) {
        const Vec3 &a = verts[f[0]], &b = verts[f[1]], &c = verts[f[2]];
        const std::uint32_t base = static_cast<std::uint32_t>(mesh.vertices.size());
        mesh.vertices.push_back(a);
        mesh.vertices.push_back(b);
        mesh.vertices.push_back(c);
        mesh.triangles.push_back({base, base + 1, base + 2});
        mesh.normals.push_back(((b - a).cross(c - a)).normalized());
    }
    return mesh;
}

template <int D>
LevelSetGrid<D> analytic_grid(const Vec<D>& origin, double spacing, const std::array<int, D>& dims,
                              const std::function<double(const Vec<D>&)>& f) {
    LevelSetGrid<D> g;
    g.origin = origin;
    g.spacing = spacing;
    g.dims = dims;
    g.phi.resize(g.node_count());
    std::array<int, D> c{};
    for (std::size_t flat = 0; flat < g.node_count(); ++flat) {
        g.phi[flat] = f(g.node_pos(c));
        for (int a = 0; a < D; ++a) {
            if (++c[a] < dims[a])
                break;
            c[a] = 0;
        }
    }
    return g;
}

} // namespace

TEST_CASE("ASCII cube STL: 12 facets, unit bounding box") {
    const TriangleMesh mesh = cube_mesh();
    CHECK(mesh.triangles.size() == 12);
    CHECK(mesh.dropped_degenerate == 0);
    const auto [lo, hi] = mesh.bounding_box();
    CHECK((lo - Vec3::Zero()).norm() == 0.0);
    CHECK((hi - Vec3::Ones()).norm() == 0.0);
}

TEST_CASE("binary cube STL parses to the identical mesh") {
    const std::string bin = cube_binary_stl(12, 12);
    std::istringstream in(bin);
    const TriangleMesh mesh = parse_stl(in);
    const TriangleMesh ref = cube_mesh();
    REQUIRE(mesh.triangles.size() == ref.triangles.size());
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
        for (int k = 0; k < 3; ++k)
            CHECK((mesh.vertices[mesh.triangles[t][k]] - ref.vertices[ref.triangles[t][k]])
                      .norm() < 1e-7);
}

TEST_CASE("truncated binary STL reports expected vs found facet counts") {
    const std::string bin = cube_binary_stl(12, 7);
    std::istringstream in(bin);
    CHECK_THROWS_WITH_AS(parse_stl(in), doctest::Contains("12"), std::runtime_error);
    std::istringstream in2(bin);
    CHECK_THROWS_WITH_AS(parse_stl(in2), doctest::Contains("7"), std::runtime_error);
}

TEST_CASE("malformed ASCII STL reports a byte offset") {
    std::istringstream in("solid broken\nfacet normal 0 0 1\nouter loop\nvertex 0 0 oops\n");
    CHECK_THROWS_WITH_AS(parse_stl(in), doctest::Contains("byte"), std::runtime_error);
}

TEST_CASE("degenerate facets are dropped and counted") {
    std::istringstream in("solid d\n"
                          "facet normal 0 0 1\nouter loop\n"
                          "vertex 0 0 0\nvertex 1 0 0\nvertex 2 0 0\n"
                          "endloop\nendfacet\n"
                          "facet normal 0 0 1\nouter loop\n"
                          "vertex 0 0 0\nvertex 1 0 0\nvertex 0 1 0\n"
                          "endloop\nendfacet\nendsolid d\n");
    const TriangleMesh mesh = parse_stl(in);
    CHECK(mesh.triangles.size() == 1);
    CHECK(mesh.dropped_degenerate == 1);
}

TEST_CASE("signed distance of the unit cube") {
    const TriangleMesh mesh = cube_mesh();
    std::size_t ambiguous = 0;
    const LevelSetGrid<3> grid =
        build_signed_distance(mesh, Vec3(-0.5, -0.5, -0.5), 0.5, {7, 7, 7}, &ambiguous);
    // node exactly at the cube center
    CHECK(grid.phi[grid.index({2, 2, 2})] == doctest::Approx(0.5).epsilon(1e-12));
    // node at (2, 0.5, 0.5), one unit outside the +x face
    CHECK(grid.phi[grid.index({5, 2, 2})] == doctest::Approx(-1.0).epsilon(1e-12));
    // only nodes sitting exactly on the surface may stay unresolved
    CHECK(ambiguous <= 4);
}

TEST_CASE("non-watertight mesh triggers the sign-ambiguity warning") {
    TriangleMesh mesh = cube_mesh();
    mesh.triangles.pop_back(); // open a hole in the +x face
    mesh.normals.pop_back();
    std::size_t ambiguous = 0;
    build_signed_distance(mesh, Vec3(-0.45, -0.45, -0.45), 0.3, {8, 8, 8}, &ambiguous);
    CHECK(ambiguous > 0);
}

TEST_CASE("icosphere signed distance against the analytic sphere") {
    const TriangleMesh mesh = icosphere(2);
    // plane-offset sagitta of the coarsest facet bounds the discretization gap
    double min_plane = 1.0;
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        const Vec3& a = mesh.vertices[mesh.triangles[t][0]];
        min_plane = std::min(min_plane, std::abs(mesh.normals[t].dot(a)));
    }
    const double sagitta = 1.0 - min_plane;

    const double spacing = 0.2;
    const LevelSetGrid<3> grid =
        build_signed_distance(mesh, Vec3(-1.4, -1.4, -1.4), spacing, {15, 15, 15}, nullptr);
    std::array<int, 3> c{};
    double worst = 0.0;
    for (std::size_t flat = 0; flat < grid.node_count(); ++flat) {
        const Vec3 p = grid.node_pos(c);
        const double exact = 1.0 - p.norm(); // inside positive
        worst = std::max(worst, std::abs(grid.phi[flat] - exact));
        for (int a = 0; a < 3; ++a) {
            if (++c[a] < grid.dims[a])
                break;
            c[a] = 0;
        }
    }
    CHECK(worst <= 2.0 * sagitta);
}

TEST_CASE("icosphere SDF satisfies the eikonal property near the surface") {
    const TriangleMesh mesh = icosphere(2);
    const double spacing = 0.1;
    const LevelSetGrid<3> grid =
        build_signed_distance(mesh, Vec3(-1.45, -1.45, -1.45), spacing, {30, 30, 30}, nullptr);
    std::array<int, 3> c{};
    for (std::size_t flat = 0; flat < grid.node_count(); ++flat) {
        const Vec3 p = grid.node_pos(c);
        for (int a = 0; a < 3; ++a) {
            if (++c[a] < grid.dims[a])
                break;
            c[a] = 0;
        }
        if (std::abs(grid.phi[flat]) > 3.0 * spacing)
            continue;
        if (p.norm() < 0.5) // stay away from the medial center
            continue;
        const double gnorm = grid.gradient(p).norm();
        CHECK(gnorm > 0.9);
        CHECK(gnorm < 1.1);
    }
}

TEST_CASE("ellipsoid signed distance: sphere case and axis points") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> uni(-3.0, 3.0);
    for (int k = 0; k < 50; ++k) {
        const Vec3 x(uni(rng), uni(rng), uni(rng));
        const double d = signed_distance_to_ellipsoid(Vec3(2.0, 2.0, 2.0), Vec3::Zero(), x);
        CHECK(d == doctest::Approx(x.norm() - 2.0).epsilon(1e-8));
    }
    const double d = signed_distance_to_ellipsoid(Vec3(1.0, 3.0, 1.0), Vec3::Zero(),
                                                  Vec3(0.0, 4.0, 0.0));
    CHECK(d == doctest::Approx(1.0).epsilon(1e-8));
    // the center sits on the medial axis where the foot-point parameterization
    // is ill-conditioned; the distance itself is still accurate
    const double inside =
        signed_distance_to_ellipsoid(Vec3(1.0, 3.0, 1.0), Vec3::Zero(), Vec3(0.0, 0.0, 0.0));
    CHECK(inside == doctest::Approx(-1.0).epsilon(1e-5));
}

TEST_CASE("biventricle: cavities excluded, mid-wall inside, MC volume oracle") {
    BiventricleSpec spec;
    CHECK(spec.rv_center[0] == doctest::Approx(-69.0));

    CHECK(biventricle_phi(spec, Vec3(0.0, -20.0, 0.0)) < 0.0);              // LV cavity
    CHECK(biventricle_phi(spec, Vec3(45.0 + 3.0, -1.0, 0.0)) > 0.0);        // LV mid-wall
    CHECK(biventricle_phi(spec, Vec3(47.0, 10.0, 0.0)) < 0.0);              // above the base
    CHECK(biventricle_phi(spec, Vec3(-69.0, -20.0, 0.0)) < 0.0);            // RV cavity
    CHECK(biventricle_phi(spec, Vec3(-48.0, -5.0, 0.0)) > 0.0);             // septum

    const double spacing = 3.0;
    const BiventricleFields fields = generate_biventricle(spec, spacing);
    double grid_volume = 0.0;
    for (double phi : fields.tissue.phi)
        if (phi > 0.0)
            grid_volume += spacing * spacing * spacing;

    // Monte-Carlo membership with independently composed shell/cavity logic
    std::mt19937_64 rng(12345);
    const Vec3 lo = fields.tissue.origin;
    const Vec3 hi = fields.tissue.max_corner();
    std::uniform_real_distribution<double> ux(lo[0], hi[0]), uy(lo[1], hi[1]), uz(lo[2], hi[2]);
    const std::size_t samples = 400000;
    std::size_t hits = 0;
    const Vec3 lv(spec.a_lv, spec.b_lv, spec.c_lv), rv(spec.a_rv, spec.b_rv, spec.c_rv);
    for (std::size_t k = 0; k < samples; ++k) {
        const Vec3 x(ux(rng), uy(rng), uz(rng));
        if (x[1] > spec.base_y)
            continue;
        const double dlv = signed_distance_to_ellipsoid(lv, Vec3::Zero(), x);
        const double drv = signed_distance_to_ellipsoid(rv, spec.rv_center, x);
        const bool in_lv_shell = dlv >= 0.0 && dlv <= spec.wall_lv;
        const bool in_rv_shell = drv >= 0.0 && drv <= spec.wall_rv;
        const bool in_cavity = dlv < 0.0 || drv < 0.0;
        if ((in_lv_shell || in_rv_shell) && !in_cavity)
            ++hits;
    }
    double box_volume = 1.0;
    for (int a = 0; a < 3; ++a)
        box_volume *= hi[a] - lo[a];
    const double mc_volume = box_volume * static_cast<double>(hits) / samples;
    CHECK(grid_volume == doctest::Approx(mc_volume).epsilon(0.02));
}

TEST_CASE("lattice particles from a level set") {
    const auto square = analytic_grid<2>(Vec2(0.0, 0.0), 0.05, {21, 21}, [](const Vec2& x) {
        return std::min(std::min(x[0], 1.0 - x[0]), std::min(x[1], 1.0 - x[1]));
    });
    const auto set = generate_lattice_particles(square, 0.1);
    CHECK(set.size() == 100);
    for (std::size_t i = 0; i < set.size(); ++i)
        CHECK(square.interpolate(set.r0[i]) > 0.0);

    const double r = 1.0;
    const auto ball = analytic_grid<3>(Vec3(-1.1, -1.1, -1.1), 0.05, {45, 45, 45},
                                       [&](const Vec3& x) { return r - x.norm(); });
    const auto bset = generate_lattice_particles(ball, r / 20.0);
    const double volume = bset.size() * std::pow(r / 20.0, 3);
    CHECK(volume == doctest::Approx(4.0 / 3.0 * std::numbers::pi).epsilon(0.05));

    const auto sliver = analytic_grid<2>(Vec2(0.0, 0.0), 0.01, {101, 101}, [](const Vec2& x) {
        return std::min(std::min(x[0], 0.001 - x[0]), std::min(x[1], 1.0 - x[1]));
    });
    CHECK_THROWS_AS(generate_lattice_particles(sliver, 0.1), std::runtime_error);
}

TEST_CASE("relaxation: an already-uniform periodic lattice stays put") {
    const double dp = 0.1;
    auto set = make_lattice_block<2>(Vec2(0.0, 0.0), Vec2(1.0, 1.0), dp);
    const auto reference = set.r0;
    LevelSetGrid<2> unused = analytic_grid<2>(Vec2(-0.5, -0.5), 1.0, {3, 3},
                                              [](const Vec2&) { return 1.0; });
    RelaxOptions opt;
    opt.steps = 100;
    opt.periodic = true;
    opt.periodic_lo = 0.0;
    opt.periodic_hi = 1.0;
    relax_particles(set, unused, opt);
    for (std::size_t i = 0; i < set.size(); ++i)
        CHECK((set.r0[i] - reference[i]).norm() < 0.05 * dp);
}

TEST_CASE("relaxation: jittered lattice becomes more uniform and stays inside") {
    const double dp = 0.05;
    const auto disk = analytic_grid<2>(Vec2(-1.05, -1.05), 0.05, {43, 43},
                                       [](const Vec2& x) { return 1.0 - x.norm(); });
    auto set = generate_lattice_particles(disk, dp);
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> jitter(-0.3 * dp, 0.3 * dp);
    for (auto& x : set.r0) {
        x[0] += jitter(rng);
        x[1] += jitter(rng);
    }
    const double cv_before = nearest_neighbor_cv(set);

    RelaxOptions opt;
    opt.steps = 400;
    const RelaxReport report = relax_particles(set, disk, opt);
    CHECK(report.final_cv < cv_before);
    CHECK(report.final_cv < 0.15);
    for (std::size_t i = 0; i < set.size(); ++i)
        CHECK(disk.interpolate(set.r0[i]) >= -1e-6);

    // local density never exceeds 1.2x the lattice value
    const SmoothingKernel<2> k(dp);
    const auto nl = build_neighbor_lists(set, k);
    const auto lattice = generate_lattice_particles(disk, dp);
    const auto lattice_nl = build_neighbor_lists(lattice, k);
    double lattice_density = 0.0;
    for (std::size_t i = 0; i < lattice.size(); ++i) {
        double s = lattice.volume[i] * k.value(0.0);
        for (const auto& e : lattice_nl.neighbors(i))
            s += lattice.volume[e.j] * k.value(e.dist);
        lattice_density = std::max(lattice_density, s);
    }
    double relaxed_density = 0.0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        double s = set.volume[i] * k.value(0.0);
        for (const auto& e : nl.neighbors(i))
            s += set.volume[e.j] * k.value(e.dist);
        relaxed_density = std::max(relaxed_density, s);
    }
    CHECK(relaxed_density <= 1.2 * lattice_density);
}

TEST_CASE("pseudo-distance: 1d slab is linear") {
    const int n = 101;
    LevelSetGrid<1> grid;
    grid.origin = Vec1(0.0);
    grid.spacing = 1.0 / (n - 1);
    grid.dims = {n};
    grid.phi.assign(n, 1.0);
    std::vector<PsiNode> classes(n, PsiNode::interior);
    classes[0] = PsiNode::endo;
    classes[n - 1] = PsiNode::epi;
    const auto psi = solve_pseudo_distance<1>(grid, classes, 1e-9);
    for (int i = 0; i < n; ++i) {
        const double x = i * grid.spacing;
        CHECK(psi[i] == doctest::Approx(x).epsilon(1e-6));
        CHECK(psi[i] >= 0.0);
        CHECK(psi[i] <= 1.0);
    }
}

TEST_CASE("pseudo-distance: concentric annulus matches the harmonic log profile") {
    const double r_in = 0.3, r_out = 1.0;
    const int n = 161;
    const double spacing = 2.2 / (n - 1);
    LevelSetGrid<2> grid;
    grid.origin = Vec2(-1.1, -1.1);
    grid.spacing = spacing;
    grid.dims = {n, n};
    grid.phi.assign(static_cast<std::size_t>(n) * n, 1.0);
    std::vector<PsiNode> classes(grid.node_count(), PsiNode::outside);
    std::array<int, 2> c{};
    for (std::size_t flat = 0; flat < grid.node_count(); ++flat) {
        // bands straddle the circles so the discrete Dirichlet boundary is
        // centered on the analytic one
        const double r = grid.node_pos(c).norm();
        if (r <= r_in + 0.5 * spacing)
            classes[flat] = PsiNode::endo;
        else if (r >= r_out - 0.5 * spacing)
            classes[flat] = r <= r_out + 3 * spacing ? PsiNode::epi : PsiNode::outside;
        else
            classes[flat] = PsiNode::interior;
        for (int a = 0; a < 2; ++a) {
            if (++c[a] < grid.dims[a])
                break;
            c[a] = 0;
        }
    }
    const auto psi = solve_pseudo_distance<2>(grid, classes, 1e-8);
    c = {0, 0};
    for (std::size_t flat = 0; flat < grid.node_count(); ++flat) {
        const double r = grid.node_pos(c).norm();
        for (int a = 0; a < 2; ++a) {
            if (++c[a] < grid.dims[a])
                break;
            c[a] = 0;
        }
        CHECK(psi[flat] >= 0.0);
        CHECK(psi[flat] <= 1.0);
        if (classes[flat] != PsiNode::interior || r < r_in + 2 * spacing ||
            r > r_out - 2 * spacing)
            continue;
        const double exact = std::log(r / r_in) / std::log(r_out / r_in);
        CHECK(std::abs(psi[flat] - exact) < 0.02); // 2% of the unit psi range
    }
}

TEST_CASE("pseudo-distance requires both bands") {
    LevelSetGrid<1> grid;
    grid.origin = Vec1(0.0);
    grid.spacing = 0.1;
    grid.dims = {11};
    grid.phi.assign(11, 1.0);
    std::vector<PsiNode> classes(11, PsiNode::interior);
    classes[0] = PsiNode::endo;
    CHECK_THROWS_AS(solve_pseudo_distance<1>(grid, classes, 1e-6), std::invalid_argument);
}

TEST_CASE("fiber reconstruction on a flat slab: rotation endpoints") {
    // slab with phi = x: gradient +x everywhere
    const auto slab = analytic_grid<3>(Vec3(0.0, -0.5, -0.5), 0.25, {9, 5, 5},
                                       [](const Vec3& x) { return x[0]; });
    ParticleSet<3> set;
    set.push_back(Vec3(1.0, 0.0, 0.0), 1.0, 1.0);

    const Vec3 axis = Vec3::UnitY();
    std::vector<double> psi_zero(slab.node_count(), 0.0);
    const FiberField flat = reconstruct_fibers(set, slab, psi_zero, 0.0, 0.0, axis);
    CHECK((flat.s0[0] - Vec3::UnitX()).norm() < 1e-9);
    CHECK((flat.f0[0] - Vec3(Vec3::UnitX()).cross(axis)).norm() < 1e-9);

    const FiberField quarter =
        reconstruct_fibers(set, slab, psi_zero, 0.0, std::numbers::pi / 2.0, axis);
    const Vec3 ftilde = Vec3(Vec3::UnitX()).cross(axis);
    CHECK((quarter.f0[0] - Vec3(Vec3::UnitX()).cross(ftilde)).norm() < 1e-9);

    // endpoint angles: psi = 0 gives theta_endo, psi = 1 gives theta_epi
    constexpr double deg = std::numbers::pi / 180.0;
    const FiberField endo = reconstruct_fibers(set, slab, psi_zero, -70.0 * deg, 80.0 * deg, axis);
    double angle = std::atan2(ftilde.cross(endo.f0[0]).dot(endo.s0[0]), ftilde.dot(endo.f0[0]));
    CHECK(angle == doctest::Approx(80.0 * deg).epsilon(1e-9));

    std::vector<double> psi_one(slab.node_count(), 1.0);
    const FiberField epi = reconstruct_fibers(set, slab, psi_one, -70.0 * deg, 80.0 * deg, axis);
    angle = std::atan2(ftilde.cross(epi.f0[0]).dot(epi.s0[0]), ftilde.dot(epi.f0[0]));
    CHECK(angle == doctest::Approx(-70.0 * deg).epsilon(1e-9));
}

TEST_CASE("biventricle fiber field invariants") {
    BiventricleSpec spec;
    const double spacing = 3.0;
    const BiventricleFields fields = generate_biventricle(spec, spacing);
    auto set = generate_lattice_particles(fields.tissue, 3.0);

    const auto classes = classify_biventricle_nodes(fields, 1.5 * 3.0);
    const auto psi = solve_pseudo_distance(fields.tissue, classes, 1e-6);
    for (double v : psi) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    constexpr double deg = std::numbers::pi / 180.0;
    const FiberField fibers =
        reconstruct_fibers(set, fields.tissue, psi, -70.0 * deg, 80.0 * deg, Vec3::UnitY());
    std::size_t checked = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        CHECK(fibers.f0[i].norm() == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(fibers.s0[i].norm() == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(std::abs(fibers.f0[i].dot(fibers.s0[i])) < 1e-6);

        // recovered rotation angle matches theta(psi) within half a degree
        const Vec3 ftilde = fibers.s0[i].cross(Vec3(Vec3::UnitY()));
        if (ftilde.norm() < 1e-6)
            continue;
        const Vec3 fl = ftilde.normalized();
        const double angle =
            std::atan2(fl.cross(fibers.f0[i]).dot(fibers.s0[i]), fl.dot(fibers.f0[i]));
        const double expected = (-70.0 * deg - 80.0 * deg) * fibers.psi[i] + 80.0 * deg;
        CHECK(std::abs(angle - expected) < 0.5 * deg);
        ++checked;
    }
    CHECK(checked > set.size() / 2);
    CHECK(fibers.fallback_count < set.size() / 5);
}
