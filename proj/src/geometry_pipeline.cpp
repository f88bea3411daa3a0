#include "csph/geometry_pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <istream>
#include <sstream>

namespace csph {

std::pair<Vec3, Vec3> TriangleMesh::bounding_box() const {
    if (vertices.empty())
        return {Vec3::Zero(), Vec3::Zero()};
    Vec3 lo = vertices[0], hi = vertices[0];
    for (const auto& v : vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    return {lo, hi};
}

namespace {

[[noreturn]] void stl_error(const std::string& what, std::size_t byte_offset) {
    throw std::runtime_error("STL parse error at byte " + std::to_string(byte_offset) + ": " + what);
}

void append_facet(TriangleMesh& mesh, const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 cr = (b - a).cross(c - a);
    const double area2 = cr.norm();
    if (!(area2 > 0.0)) {
        ++mesh.dropped_degenerate;
        return;
    }
    const std::uint32_t base = static_cast<std::uint32_t>(mesh.vertices.size());
    mesh.vertices.push_back(a);
    mesh.vertices.push_back(b);
    mesh.vertices.push_back(c);
    mesh.triangles.push_back({base, base + 1, base + 2});
    mesh.normals.push_back(cr / area2);
}

float read_le_float(const char* p) {
    std::uint32_t bits;
    std::memcpy(&bits, p, 4);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

TriangleMesh parse_binary_stl(const std::string& buf, std::uint32_t declared) {
    TriangleMesh mesh;
    const std::size_t have = (buf.size() - 84) / 50;
    if (have < declared)
        stl_error("truncated stream: header declares " + std::to_string(declared) +
                      " facets, data holds only " + std::to_string(have),
                  buf.size());
    for (std::uint32_t f = 0; f < declared; ++f) {
        const char* rec = buf.data() + 84 + static_cast<std::size_t>(f) * 50;
        Vec3 v[4]; // normal + 3 vertices
        for (int k = 0; k < 4; ++k)
            for (int a = 0; a < 3; ++a) {
                const double val = read_le_float(rec + 4 * (3 * k + a));
                if (!std::isfinite(val))
                    stl_error("non-finite coordinate in facet " + std::to_string(f),
                              84 + static_cast<std::size_t>(f) * 50 + 4 * (3 * k + a));
                v[k][a] = val;
            }
        append_facet(mesh, v[1], v[2], v[3]);
    }
    return mesh;
}

struct AsciiCursor {
    const std::string& buf;
    std::size_t pos = 0;

    std::string next_token() {
        while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos])))
            ++pos;
        const std::size_t start = pos;
        while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos])))
            ++pos;
        return buf.substr(start, pos - start);
    }

    void expect(const std::string& word) {
        const std::size_t at = pos;
        const std::string tok = next_token();
        if (tok != word)
            stl_error("expected '" + word + "', found '" + tok + "'", at);
    }

    double number() {
        const std::size_t at = pos;
        const std::string tok = next_token();
        char* end = nullptr;
        const double v = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str() || *end != '\0' || !std::isfinite(v))
            stl_error("expected a finite number, found '" + tok + "'", at);
        return v;
    }
};

TriangleMesh parse_ascii_stl(const std::string& buf) {
    TriangleMesh mesh;
    AsciiCursor cur{buf};
    cur.expect("solid");
    // optional name: consume tokens until 'facet' or 'endsolid'
    std::size_t mark = cur.pos;
    std::string tok = cur.next_token();
    while (tok != "facet" && tok != "endsolid" && !tok.empty()) {
        mark = cur.pos;
        tok = cur.next_token();
    }
    while (tok == "facet") {
        cur.expect("normal");
        Vec3 v[4];
        for (int a = 0; a < 3; ++a)
            v[0][a] = cur.number();
        cur.expect("outer");
        cur.expect("loop");
        for (int k = 1; k <= 3; ++k) {
            cur.expect("vertex");
            for (int a = 0; a < 3; ++a)
                v[k][a] = cur.number();
        }
        cur.expect("endloop");
        cur.expect("endfacet");
        append_facet(mesh, v[1], v[2], v[3]);
        mark = cur.pos;
        tok = cur.next_token();
    }
    if (tok != "endsolid")
        stl_error("expected 'facet' or 'endsolid', found '" + tok + "'", mark);
    return mesh;
}

} // namespace

TriangleMesh parse_stl(std::istream& in) {
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();
    if (buf.size() >= 84) {
        std::uint32_t declared;
        std::memcpy(&declared, buf.data() + 80, 4);
        if (84 + static_cast<std::uint64_t>(declared) * 50 == buf.size())
            return parse_binary_stl(buf, declared);
        // binary file cut short: header count can no longer match the size
        const bool looks_ascii = buf.rfind("solid", 0) == 0;
        if (!looks_ascii)
            return parse_binary_stl(buf, declared); // reports the truncation
    }
    if (buf.rfind("solid", 0) == 0)
        return parse_ascii_stl(buf);
    stl_error("neither a binary header nor an ASCII 'solid' keyword", 0);
}

TriangleMesh parse_stl_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("parse_stl_file: cannot open '" + path + "'");
    return parse_stl(in);
}

namespace {

// closest point on triangle abc to p (Ericson, Real-Time Collision Detection)
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0)
        return a;
    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3)
        return b;
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0)
        return a + (d1 / (d1 - d3)) * ab;
    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6)
        return c;
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0)
        return a + (d2 / (d2 - d6)) * ac;
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
        return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
    const double denom = 1.0 / (va + vb + vc);
    return a + ab * (vb * denom) + ac * (vc * denom);
}

// Ray-triangle crossing count along +axis from origin p. Returns -1 when the
// hit grazes an edge or the origin (vote invalid, caller jitters); triangles
// parallel to the ray do not cross it.
int ray_crossing(const Vec3& p, int axis, const Vec3& a, const Vec3& b, const Vec3& c) {
    Vec3 dir = Vec3::Zero();
    dir[axis] = 1.0;
    const Vec3 e1 = b - a, e2 = c - a;
    const Vec3 pv = dir.cross(e2);
    const double det = e1.dot(pv);
    const double scale = e1.norm() * e2.norm();
    if (std::abs(det) < 1e-12 * scale)
        return 0;
    const double inv = 1.0 / det;
    const Vec3 tv = p - a;
    const double u = tv.dot(pv) * inv;
    const double eps = 1e-9;
    if (u < -eps || u > 1.0 + eps)
        return 0;
    const Vec3 qv = tv.cross(e1);
    const double v = dir.dot(qv) * inv;
    if (v < -eps || u + v > 1.0 + eps)
        return 0;
    const double t = e2.dot(qv) * inv;
    if (t <= eps * std::max(1.0, p.norm()))
        return (t > -eps) ? -1 : 0; // grazing the origin is ambiguous
    if (u < eps || v < eps || u + v > 1.0 - eps)
        return -1; // edge hit, let the caller jitter
    return 1;
}

} // namespace

LevelSetGrid<3> build_signed_distance(const TriangleMesh& mesh, const Vec3& origin, double spacing,
                                      const std::array<int, 3>& dims,
                                      std::size_t* sign_ambiguous) {
    LevelSetGrid<3> grid;
    grid.origin = origin;
    grid.spacing = spacing;
    grid.dims = dims;
    grid.phi.assign(grid.node_count(), 0.0);

    const std::size_t ntri = mesh.triangles.size();
    std::vector<Vec3> centroid(ntri);
    std::vector<double> radius(ntri);
    for (std::size_t t = 0; t < ntri; ++t) {
        const auto& tri = mesh.triangles[t];
        const Vec3 &a = mesh.vertices[tri[0]], &b = mesh.vertices[tri[1]],
                   &c = mesh.vertices[tri[2]];
        centroid[t] = (a + b + c) / 3.0;
        radius[t] = std::max({(a - centroid[t]).norm(), (b - centroid[t]).norm(),
                              (c - centroid[t]).norm()});
    }

    std::size_t ambiguous = 0;
    const long long total = static_cast<long long>(grid.node_count());
#pragma omp parallel for schedule(static) reduction(+ : ambiguous)
    for (long long flat = 0; flat < total; ++flat) {
        std::array<int, 3> c{};
        long long rest = flat;
        for (int a = 0; a < 3; ++a) {
            c[a] = static_cast<int>(rest % dims[a]);
            rest /= dims[a];
        }
        const Vec3 p = grid.node_pos(c);

        double best = std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < ntri; ++t) {
            const double lower = (p - centroid[t]).norm() - radius[t];
            if (lower >= best)
                continue;
            const auto& tri = mesh.triangles[t];
            const Vec3 q = closest_point_on_triangle(p, mesh.vertices[tri[0]],
                                                     mesh.vertices[tri[1]], mesh.vertices[tri[2]]);
            best = std::min(best, (p - q).norm());
        }

        // parity votes along the three axes; jitter the ray origin when a
        // cast grazes an edge
        int votes_inside = 0, votes_valid = 0;
        for (int axis = 0; axis < 3 && votes_valid < 2; ++axis) {
            for (int attempt = 0; attempt < 3; ++attempt) {
                Vec3 o = p;
                if (attempt > 0) {
                    const double j = attempt * 2.0e-5 * spacing;
                    o[(axis + 1) % 3] += j;
                    o[(axis + 2) % 3] += 1.7 * j;
                }
                int crossings = 0;
                bool valid = true;
                for (std::size_t t = 0; t < ntri && valid; ++t) {
                    const auto& tri = mesh.triangles[t];
                    const int r = ray_crossing(o, axis, mesh.vertices[tri[0]],
                                               mesh.vertices[tri[1]], mesh.vertices[tri[2]]);
                    if (r < 0)
                        valid = false;
                    else
                        crossings += r;
                }
                if (valid) {
                    ++votes_valid;
                    votes_inside += crossings % 2;
                    break;
                }
            }
        }
        bool inside = false;
        if (votes_valid == 0)
            ++ambiguous;
        else if (votes_valid == 2 && votes_inside == 1) {
            ++ambiguous;
            inside = true; // tie: lean inside, the caller was warned
        } else
            inside = 2 * votes_inside > votes_valid;
        grid.phi[flat] = inside ? best : -best;
    }
    if (sign_ambiguous)
        *sign_ambiguous = ambiguous;
    return grid;
}

double signed_distance_to_ellipsoid(const Vec3& semi_axes, const Vec3& center, const Vec3& x) {
    // Closest-point parameterization y_i = a_i^2 q_i / (t + a_i^2) with
    // sum (y_i/a_i)^2 = 1; the root of g(t) is bracketed and bisected.
    Vec3 q = x - center;
    Vec3 qa = q.cwiseAbs();
    const Vec3& a = semi_axes;
    const double amin2 = a.cwiseProduct(a).minCoeff();
    // nudge exact-zero components so the bracket endpoints stay infinite/finite
    for (int i = 0; i < 3; ++i)
        if (qa[i] < 1e-9 * a[i])
            qa[i] = 1e-9 * a[i];

    double level = 0.0;
    for (int i = 0; i < 3; ++i)
        level += (qa[i] / a[i]) * (qa[i] / a[i]);
    const bool inside = level <= 1.0;

    auto g = [&](double t) {
        double s = -1.0;
        for (int i = 0; i < 3; ++i) {
            const double term = a[i] * qa[i] / (t + a[i] * a[i]);
            s += term * term;
        }
        return s;
    };

    double lo, hi;
    if (inside) {
        lo = -amin2 * (1.0 - 1e-14);
        hi = 0.0;
        // g(lo) -> +inf for nudged q, g(0) = level - 1 <= 0
    } else {
        lo = 0.0;
        hi = a.maxCoeff() * qa.norm() + a.maxCoeff() * a.maxCoeff();
        while (g(hi) > 0.0)
            hi *= 2.0;
    }
    for (int it = 0; it < 120; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (g(mid) > 0.0)
            lo = mid;
        else
            hi = mid;
    }
    const double t = 0.5 * (lo + hi);
    Vec3 y;
    for (int i = 0; i < 3; ++i)
        y[i] = a[i] * a[i] * qa[i] / (t + a[i] * a[i]);
    const double dist = (qa - y).norm();
    return inside ? -dist : dist;
}

double biventricle_phi(const BiventricleSpec& spec, const Vec3& x) {
    const Vec3 lv_axes(spec.a_lv, spec.b_lv, spec.c_lv);
    const Vec3 rv_axes(spec.a_rv, spec.b_rv, spec.c_rv);
    const double d_lv = signed_distance_to_ellipsoid(lv_axes, Vec3::Zero(), x);
    const double d_rv = signed_distance_to_ellipsoid(rv_axes, spec.rv_center, x);
    const double slab_lv = std::min(d_lv, spec.wall_lv - d_lv);
    const double slab_rv = std::min(d_rv, spec.wall_rv - d_rv);
    double phi = std::max(slab_lv, slab_rv); // union of the two shells
    phi = std::min(phi, d_lv);               // carve both cavities
    phi = std::min(phi, d_rv);
    phi = std::min(phi, spec.base_y - x[1]); // truncate at the base plane
    return phi;
}

BiventricleFields generate_biventricle(const BiventricleSpec& spec, double spacing,
                                       double margin_cells) {
    const Vec3 lv_axes(spec.a_lv, spec.b_lv, spec.c_lv);
    const Vec3 rv_axes(spec.a_rv, spec.b_rv, spec.c_rv);
    Vec3 lo, hi;
    lo[0] = spec.rv_center[0] - (spec.a_rv + spec.wall_rv);
    hi[0] = spec.a_lv + spec.wall_lv;
    lo[1] = -std::max(spec.b_lv + spec.wall_lv, spec.b_rv + spec.wall_rv);
    hi[1] = spec.base_y;
    const double zext = std::max(spec.c_lv + spec.wall_lv, spec.c_rv + spec.wall_rv);
    lo[2] = -zext;
    hi[2] = zext;
    lo -= Vec3::Constant(margin_cells * spacing);
    hi += Vec3::Constant(margin_cells * spacing);

    BiventricleFields fields;
    fields.spec = spec;
    LevelSetGrid<3>& grid = fields.tissue;
    grid.origin = lo;
    grid.spacing = spacing;
    for (int a = 0; a < 3; ++a)
        grid.dims[a] = static_cast<int>(std::ceil((hi[a] - lo[a]) / spacing)) + 1;
    grid.phi.assign(grid.node_count(), 0.0);
    fields.cavity_dist.assign(grid.node_count(), 0.0);

    const long long total = static_cast<long long>(grid.node_count());
#pragma omp parallel for schedule(static)
    for (long long flat = 0; flat < total; ++flat) {
        std::array<int, 3> c{};
        long long rest = flat;
        for (int a = 0; a < 3; ++a) {
            c[a] = static_cast<int>(rest % grid.dims[a]);
            rest /= grid.dims[a];
        }
        const Vec3 p = grid.node_pos(c);
        grid.phi[flat] = biventricle_phi(spec, p);
        const double d_lv = signed_distance_to_ellipsoid(lv_axes, Vec3::Zero(), p);
        const double d_rv = signed_distance_to_ellipsoid(rv_axes, spec.rv_center, p);
        fields.cavity_dist[flat] = std::min(d_lv, d_rv);
    }
    return fields;
}

std::vector<PsiNode> classify_biventricle_nodes(const BiventricleFields& fields, double band) {
    const LevelSetGrid<3>& grid = fields.tissue;
    const std::size_t n = grid.node_count();
    std::vector<PsiNode> cls(n, PsiNode::outside);
    for (std::size_t flat = 0; flat < n; ++flat) {
        const double phi = grid.phi[flat];
        if (phi <= -band)
            continue;
        const double cav = fields.cavity_dist[flat];
        std::array<int, 3> c{};
        std::size_t rest = flat;
        for (int a = 0; a < 3; ++a) {
            c[a] = static_cast<int>(rest % grid.dims[a]);
            rest /= grid.dims[a];
        }
        const double y = grid.node_pos(c)[1];
        if (std::abs(cav) <= band)
            cls[flat] = PsiNode::endo;
        else if (std::abs(phi) <= band && (fields.spec.base_y - y) > band)
            cls[flat] = PsiNode::epi;
        else if (phi > 0.0)
            cls[flat] = PsiNode::interior;
    }
    return cls;
}

FiberField reconstruct_fibers(const ParticleSet<3>& set, const LevelSetGrid<3>& tissue,
                              std::span<const double> psi_nodes, double theta_epi,
                              double theta_endo, const Vec3& axis) {
    if (psi_nodes.size() != tissue.node_count())
        throw std::invalid_argument("reconstruct_fibers: psi grid size mismatch");
    LevelSetGrid<3> psi_grid;
    psi_grid.origin = tissue.origin;
    psi_grid.spacing = tissue.spacing;
    psi_grid.dims = tissue.dims;
    psi_grid.phi.assign(psi_nodes.begin(), psi_nodes.end());

    const std::size_t n = set.size();
    FiberField field;
    field.f0.assign(n, Vec3::Zero());
    field.s0.assign(n, Vec3::Zero());
    field.psi.assign(n, 0.0);
    std::vector<std::uint8_t> valid(n, 0);

    const Vec3 ey = axis.normalized();
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        const Vec3 g = tissue.gradient(set.r0[i]);
        const double gn = g.norm();
        if (gn < 1e-10)
            continue;
        Vec3 normal = g / gn;
        const Vec3 s0 = (normal.dot(ey) >= 0.0) ? normal : (-normal).eval();
        Vec3 flat = s0.cross(ey);
        const double fn = flat.norm();
        if (fn < 1e-10)
            continue;
        flat /= fn;
        const double psi = std::min(1.0, std::max(0.0, psi_grid.interpolate(set.r0[i])));
        const double theta = (theta_epi - theta_endo) * psi + theta_endo;
        // Rodrigues rotation of the flat fiber about s0
        Vec3 f = flat * std::cos(theta) + s0.cross(flat) * std::sin(theta) +
                 s0 * (s0.dot(flat)) * (1.0 - std::cos(theta));
        f.normalize();
        field.f0[i] = f;
        field.s0[i] = s0;
        field.psi[i] = psi;
        valid[i] = 1;
    }

    // medial-axis fallbacks copy the nearest valid frame
    std::vector<std::size_t> valid_ids;
    for (std::size_t i = 0; i < n; ++i)
        if (valid[i])
            valid_ids.push_back(i);
    if (valid_ids.empty())
        throw std::runtime_error("reconstruct_fibers: no particle has a usable level-set gradient");
    for (std::size_t i = 0; i < n; ++i) {
        if (valid[i])
            continue;
        ++field.fallback_count;
        double best = std::numeric_limits<double>::infinity();
        std::size_t pick = valid_ids[0];
        for (std::size_t j : valid_ids) {
            const double d = (set.r0[i] - set.r0[j]).squaredNorm();
            if (d < best) {
                best = d;
                pick = j;
            }
        }
        field.f0[i] = field.f0[pick];
        field.s0[i] = field.s0[pick];
        field.psi[i] = field.psi[pick];
    }
    return field;
}

} // namespace csph
