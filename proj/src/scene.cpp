#include "csph/scene.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace csph {

using nlohmann::json;

namespace {

struct Parser {
    std::vector<std::string> errors;

    void fail(const std::string& path, const std::string& what) {
        errors.push_back(path + ": " + what);
    }

    void check_keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
        if (!j.is_object()) {
            fail(path, "expected an object");
            return;
        }
        for (auto it = j.begin(); it != j.end(); ++it)
            if (!allowed.count(it.key()))
                fail(path + "." + it.key(), "unknown key");
    }

    double number(const json& j, const std::string& path, const std::string& key, double def,
                  bool required = false) {
        if (!j.contains(key)) {
            if (required)
                fail(path + "." + key, "missing required value");
            return def;
        }
        if (!j[key].is_number()) {
            fail(path + "." + key, "expected a number");
            return def;
        }
        return j[key].get<double>();
    }

    bool boolean(const json& j, const std::string& path, const std::string& key, bool def) {
        if (!j.contains(key))
            return def;
        if (!j[key].is_boolean()) {
            fail(path + "." + key, "expected a boolean");
            return def;
        }
        return j[key].get<bool>();
    }

    std::string text(const json& j, const std::string& path, const std::string& key,
                     const std::string& def, bool required = false) {
        if (!j.contains(key)) {
            if (required)
                fail(path + "." + key, "missing required value");
            return def;
        }
        if (!j[key].is_string()) {
            fail(path + "." + key, "expected a string");
            return def;
        }
        return j[key].get<std::string>();
    }

    Vec3 vec(const json& j, const std::string& path, const std::string& key, const Vec3& def,
             bool required = false) {
        if (!j.contains(key)) {
            if (required)
                fail(path + "." + key, "missing required value");
            return def;
        }
        const json& a = j[key];
        if (!a.is_array() || a.size() < 1 || a.size() > 3) {
            fail(path + "." + key, "expected an array of 1-3 numbers");
            return def;
        }
        Vec3 v = Vec3::Zero();
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (!a[i].is_number()) {
                fail(path + "." + key, "expected numeric components");
                return def;
            }
            v[static_cast<int>(i)] = a[i].get<double>();
        }
        return v;
    }
};

json vec_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

Region parse_region(Parser& p, const json& j, const std::string& path) {
    Region r;
    p.check_keys(j, path, {"type", "min", "max", "center", "radius", "normal", "offset"});
    if (!j.is_object())
        return r;
    const std::string type = p.text(j, path, "type", "all");
    if (type == "all") {
        r.kind = Region::Kind::all;
    } else if (type == "box") {
        r.kind = Region::Kind::box;
        r.lo = p.vec(j, path, "min", r.lo, true);
        r.hi = p.vec(j, path, "max", r.hi, true);
        // unbounded in unstated dimensions: a 2-component box still matches any z
        if (j.contains("min") && j["min"].is_array() && j["min"].size() < 3) {
            for (std::size_t a = j["min"].size(); a < 3; ++a) {
                r.lo[static_cast<int>(a)] = -std::numeric_limits<double>::infinity();
                r.hi[static_cast<int>(a)] = std::numeric_limits<double>::infinity();
            }
        }
    } else if (type == "sphere") {
        r.kind = Region::Kind::sphere;
        r.center = p.vec(j, path, "center", r.center, true);
        r.radius = p.number(j, path, "radius", 0.0, true);
    } else if (type == "halfspace") {
        r.kind = Region::Kind::halfspace;
        r.normal = p.vec(j, path, "normal", r.normal, true);
        r.offset = p.number(j, path, "offset", 0.0, true);
    } else {
        p.fail(path + ".type", "unknown region type '" + type + "'");
    }
    return r;
}

json region_json(const Region& r) {
    json j;
    switch (r.kind) {
    case Region::Kind::all:
        j["type"] = "all";
        break;
    case Region::Kind::box:
        j["type"] = "box";
        j["min"] = vec_json(r.lo);
        j["max"] = vec_json(r.hi);
        break;
    case Region::Kind::sphere:
        j["type"] = "sphere";
        j["center"] = vec_json(r.center);
        j["radius"] = r.radius;
        break;
    case Region::Kind::halfspace:
        j["type"] = "halfspace";
        j["normal"] = vec_json(r.normal);
        j["offset"] = r.offset;
        break;
    }
    return j;
}

FieldInit parse_field_init(Parser& p, const json& j, const std::string& path) {
    FieldInit f;
    p.check_keys(j, path,
                 {"type", "value", "center", "width", "amplitude", "axis", "lo", "hi", "inside",
                  "outside", "z0", "t0", "d", "Dxx", "Dyy", "from", "to", "a0", "a1", "region",
                  "coeff"});
    if (!j.is_object())
        return f;
    const std::string type = p.text(j, path, "type", "uniform");
    f.axis = static_cast<int>(p.number(j, path, "axis", 0));
    if (f.axis < 0 || f.axis > 2)
        p.fail(path + ".axis", "axis must be 0, 1 or 2");
    if (type == "uniform") {
        f.kind = FieldInit::Kind::uniform;
        f.value = p.number(j, path, "value", 0.0);
    } else if (type == "gaussian") {
        f.kind = FieldInit::Kind::gaussian;
        f.center = p.vec(j, path, "center", f.center, true);
        f.width = p.number(j, path, "width", 1.0, true);
        f.amplitude = p.number(j, path, "amplitude", 1.0);
        if (!(f.width > 0.0))
            p.fail(path + ".width", "must be positive");
    } else if (type == "band") {
        f.kind = FieldInit::Kind::band;
        f.lo = p.number(j, path, "lo", 0.0, true);
        f.hi = p.number(j, path, "hi", 0.0, true);
        f.inside = p.number(j, path, "inside", 1.0);
        f.outside = p.number(j, path, "outside", 0.0);
    } else if (type == "exp_profile") {
        f.kind = FieldInit::Kind::exp_profile;
        f.z0 = p.number(j, path, "z0", 0.5, true);
        f.t0 = p.number(j, path, "t0", 1.0, true);
        f.d = p.number(j, path, "d", 1.0, true);
    } else if (type == "aniso_gaussian") {
        f.kind = FieldInit::Kind::aniso_gaussian;
        f.center = p.vec(j, path, "center", f.center, true);
        f.t0 = p.number(j, path, "t0", 1.0, true);
        f.Dxx = p.number(j, path, "Dxx", 1.0, true);
        f.Dyy = p.number(j, path, "Dyy", 1.0, true);
    } else if (type == "linear") {
        f.kind = FieldInit::Kind::linear;
        f.from = p.number(j, path, "from", 0.0, true);
        f.to = p.number(j, path, "to", 1.0, true);
        f.a0 = p.number(j, path, "a0", 0.0, true);
        f.a1 = p.number(j, path, "a1", 1.0, true);
    } else if (type == "region_value") {
        f.kind = FieldInit::Kind::region_value;
        if (!j.contains("region"))
            p.fail(path + ".region", "missing required value");
        else
            f.region = parse_region(p, j["region"], path + ".region");
        f.inside = p.number(j, path, "inside", 1.0);
        f.outside = p.number(j, path, "outside", 0.0);
    } else if (type == "scaled_vm") {
        f.kind = FieldInit::Kind::scaled_vm;
        f.coeff = p.number(j, path, "coeff", 1.0, true);
    } else {
        p.fail(path + ".type", "unknown initial-field type '" + type + "'");
    }
    return f;
}

json field_init_json(const FieldInit& f) {
    json j;
    switch (f.kind) {
    case FieldInit::Kind::uniform:
        j["type"] = "uniform";
        j["value"] = f.value;
        break;
    case FieldInit::Kind::gaussian:
        j["type"] = "gaussian";
        j["center"] = vec_json(f.center);
        j["width"] = f.width;
        j["amplitude"] = f.amplitude;
        break;
    case FieldInit::Kind::band:
        j["type"] = "band";
        j["axis"] = f.axis;
        j["lo"] = f.lo;
        j["hi"] = f.hi;
        j["inside"] = f.inside;
        j["outside"] = f.outside;
        break;
    case FieldInit::Kind::exp_profile:
        j["type"] = "exp_profile";
        j["axis"] = f.axis;
        j["z0"] = f.z0;
        j["t0"] = f.t0;
        j["d"] = f.d;
        break;
    case FieldInit::Kind::aniso_gaussian:
        j["type"] = "aniso_gaussian";
        j["center"] = vec_json(f.center);
        j["t0"] = f.t0;
        j["Dxx"] = f.Dxx;
        j["Dyy"] = f.Dyy;
        break;
    case FieldInit::Kind::linear:
        j["type"] = "linear";
        j["axis"] = f.axis;
        j["from"] = f.from;
        j["to"] = f.to;
        j["a0"] = f.a0;
        j["a1"] = f.a1;
        break;
    case FieldInit::Kind::region_value:
        j["type"] = "region_value";
        j["region"] = region_json(f.region);
        j["inside"] = f.inside;
        j["outside"] = f.outside;
        break;
    case FieldInit::Kind::scaled_vm:
        j["type"] = "scaled_vm";
        j["coeff"] = f.coeff;
        break;
    }
    return j;
}

} // namespace

SceneConfig load_scene(const std::string& textual) {
    json j;
    try {
        j = json::parse(textual);
    } catch (const json::parse_error& err) {
        throw ValidationError(std::string("scene: invalid JSON: ") + err.what());
    }

    Parser p;
    SceneConfig s;

    p.check_keys(j, "scene",
                 {"name", "dimension", "dp", "kernel", "geometry", "physics", "ionic",
                  "conductivity", "material", "active_stress", "initial", "stimuli", "constraints",
                  "probes", "end_time", "output", "seed", "relaxation", "fibers", "numerics",
                  "oracle"});

    s.name = p.text(j, "scene", "name", "scene");
    s.dimension = static_cast<int>(p.number(j, "scene", "dimension", 2));
    if (s.dimension < 1 || s.dimension > 3)
        p.fail("scene.dimension", "must be 1, 2 or 3");
    s.dp = p.number(j, "scene", "dp", 0.01, true);
    if (!(s.dp > 0.0))
        p.fail("scene.dp", "must be positive");
    s.end_time = p.number(j, "scene", "end_time", 1.0, true);
    if (!(s.end_time > 0.0))
        p.fail("scene.end_time", "must be positive");
    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned())
            p.fail("scene.seed", "expected an unsigned integer");
        else
            s.seed = j["seed"].get<std::uint64_t>();
    }

    if (j.contains("kernel")) {
        p.check_keys(j["kernel"], "scene.kernel", {"h_factor"});
        s.h_factor = p.number(j["kernel"], "scene.kernel", "h_factor", 1.3);
        if (!(s.h_factor > 0.0))
            p.fail("scene.kernel.h_factor", "must be positive");
    }

    if (!j.contains("geometry")) {
        p.fail("scene.geometry", "missing required block");
    } else {
        const json& g = j["geometry"];
        p.check_keys(g, "scene.geometry",
                     {"type", "min", "max", "center", "radius", "path", "grid_spacing", "a_lv",
                      "b_lv", "c_lv", "a_rv", "b_rv", "c_rv", "wall_lv", "wall_rv", "base_y",
                      "rv_center"});
        const std::string type = p.text(g, "scene.geometry", "type", "", true);
        if (type == "box") {
            s.geometry.kind = GeometrySpec::Kind::box;
            s.geometry.lo = p.vec(g, "scene.geometry", "min", Vec3::Zero(), true);
            s.geometry.hi = p.vec(g, "scene.geometry", "max", Vec3::Ones(), true);
        } else if (type == "disk") {
            s.geometry.kind = GeometrySpec::Kind::disk;
            s.geometry.center = p.vec(g, "scene.geometry", "center", Vec3::Zero(), true);
            s.geometry.radius = p.number(g, "scene.geometry", "radius", 1.0, true);
            if (!(s.geometry.radius > 0.0))
                p.fail("scene.geometry.radius", "must be positive");
        } else if (type == "stl") {
            s.geometry.kind = GeometrySpec::Kind::stl;
            s.geometry.stl_path = p.text(g, "scene.geometry", "path", "", true);
            s.geometry.grid_spacing = p.number(g, "scene.geometry", "grid_spacing", 0.0);
        } else if (type == "biventricle") {
            s.geometry.kind = GeometrySpec::Kind::biventricle;
            BiventricleSpec& b = s.geometry.biventricle;
            b.a_lv = p.number(g, "scene.geometry", "a_lv", b.a_lv);
            b.b_lv = p.number(g, "scene.geometry", "b_lv", b.b_lv);
            b.c_lv = p.number(g, "scene.geometry", "c_lv", b.c_lv);
            b.a_rv = p.number(g, "scene.geometry", "a_rv", b.a_rv);
            b.b_rv = p.number(g, "scene.geometry", "b_rv", b.b_rv);
            b.c_rv = p.number(g, "scene.geometry", "c_rv", b.c_rv);
            b.wall_lv = p.number(g, "scene.geometry", "wall_lv", b.wall_lv);
            b.wall_rv = p.number(g, "scene.geometry", "wall_rv", b.wall_rv);
            b.base_y = p.number(g, "scene.geometry", "base_y", b.base_y);
            b.rv_center = p.vec(g, "scene.geometry", "rv_center",
                                Vec3(-(b.a_lv + b.wall_lv + b.a_rv), 0.0, 0.0));
            for (double v : {b.a_lv, b.b_lv, b.c_lv, b.a_rv, b.b_rv, b.c_rv, b.wall_lv, b.wall_rv})
                if (!(v > 0.0)) {
                    p.fail("scene.geometry", "semi-axes and wall thicknesses must be positive");
                    break;
                }
            s.geometry.grid_spacing = p.number(g, "scene.geometry", "grid_spacing", 0.0);
        } else {
            p.fail("scene.geometry.type", "unknown geometry type '" + type + "'");
        }
    }

    if (j.contains("physics")) {
        p.check_keys(j["physics"], "scene.physics", {"electrophysiology", "mechanics", "coupling"});
        s.electrophysiology = p.boolean(j["physics"], "scene.physics", "electrophysiology", true);
        s.mechanics = p.boolean(j["physics"], "scene.physics", "mechanics", false);
        s.coupling = p.boolean(j["physics"], "scene.physics", "coupling", false);
    }
    if (s.coupling && !(s.electrophysiology && s.mechanics))
        p.fail("scene.physics.coupling", "coupling requires both electrophysiology and mechanics");

    if (j.contains("ionic")) {
        const json& io = j["ionic"];
        p.check_keys(io, "scene.ionic",
                     {"model", "C_m", "k", "a", "b", "eps0", "mu1", "mu2", "beta", "gamma",
                      "sigma"});
        const std::string model = p.text(io, "scene.ionic", "model", "none");
        s.C_m = p.number(io, "scene.ionic", "C_m", 1.0);
        if (!(s.C_m > 0.0))
            p.fail("scene.ionic.C_m", "must be positive");
        if (model == "none") {
            s.ionic = IonicModelKind::none;
        } else if (model == "aliev_panfilov") {
            s.ionic = IonicModelKind::aliev_panfilov;
            s.ap.k = p.number(io, "scene.ionic", "k", s.ap.k);
            s.ap.a = p.number(io, "scene.ionic", "a", s.ap.a);
            s.ap.b = p.number(io, "scene.ionic", "b", s.ap.b);
            s.ap.eps0 = p.number(io, "scene.ionic", "eps0", s.ap.eps0);
            s.ap.mu1 = p.number(io, "scene.ionic", "mu1", s.ap.mu1);
            s.ap.mu2 = p.number(io, "scene.ionic", "mu2", s.ap.mu2);
            if (!(s.ap.k > 0.0))
                p.fail("scene.ionic.k", "must be positive");
            if (!(s.ap.a > 0.0 && s.ap.a < 1.0))
                p.fail("scene.ionic.a", "must lie in (0, 1)");
            if (!(s.ap.mu2 > 0.0))
                p.fail("scene.ionic.mu2", "must be positive");
        } else if (model == "fitzhugh_nagumo") {
            s.ionic = IonicModelKind::fitzhugh_nagumo;
            s.fhn.a = p.number(io, "scene.ionic", "a", s.fhn.a);
            s.fhn.eps0 = p.number(io, "scene.ionic", "eps0", s.fhn.eps0);
            s.fhn.beta = p.number(io, "scene.ionic", "beta", s.fhn.beta);
            s.fhn.gamma = p.number(io, "scene.ionic", "gamma", s.fhn.gamma);
            s.fhn.sigma = p.number(io, "scene.ionic", "sigma", s.fhn.sigma);
            if (!(s.fhn.a > 0.0 && s.fhn.a < 1.0))
                p.fail("scene.ionic.a", "must lie in (0, 1)");
            if (s.fhn.gamma < 0.0)
                p.fail("scene.ionic.gamma", "must be non-negative");
        } else {
            p.fail("scene.ionic.model", "unknown ionic model '" + model + "'");
        }
    }

    if (j.contains("conductivity")) {
        const json& c = j["conductivity"];
        p.check_keys(c, "scene.conductivity",
                     {"d_iso", "d_ani", "fiber", "kernel_correction", "pair_variant"});
        s.d_iso = p.number(c, "scene.conductivity", "d_iso", 0.0, true);
        s.d_ani = p.number(c, "scene.conductivity", "d_ani", 0.0);
        if (s.d_iso < 0.0)
            p.fail("scene.conductivity.d_iso", "must be non-negative");
        if (s.d_iso + s.d_ani <= 0.0 && s.electrophysiology)
            p.fail("scene.conductivity", "d_iso + d_ani must be positive");
        if (c.contains("fiber") && c["fiber"].is_string()) {
            if (c["fiber"].get<std::string>() == "from_field")
                s.fiber_from_field = true;
            else
                p.fail("scene.conductivity.fiber", "expected a vector or \"from_field\"");
        } else {
            s.fiber = p.vec(c, "scene.conductivity", "fiber", Vec3::UnitX());
            if (s.d_ani != 0.0 && s.fiber.norm() > 0.0)
                s.fiber.normalize();
        }
        s.kernel_correction = p.boolean(c, "scene.conductivity", "kernel_correction", true);
        const std::string variant =
            p.text(c, "scene.conductivity", "pair_variant", "mean_inverse_factor");
        if (variant == "mean_inverse_factor")
            s.pair_variant = PairConductivity::mean_inverse_factor;
        else if (variant == "pairwise_cholesky")
            s.pair_variant = PairConductivity::pairwise_cholesky;
        else
            p.fail("scene.conductivity.pair_variant", "unknown variant '" + variant + "'");
    } else if (s.electrophysiology) {
        p.fail("scene.conductivity", "missing required block (electrophysiology is enabled)");
    }

    if (j.contains("material")) {
        const json& m = j["material"];
        p.check_keys(m, "scene.material",
                     {"model", "rho0", "E", "nu", "lambda", "mu", "a", "b", "a_f", "b_f", "a_s",
                      "b_s", "a_fs", "b_fs", "lambda_bulk", "fiber", "sheet"});
        const std::string model = p.text(m, "scene.material", "model", "", true);
        s.rho0 = p.number(m, "scene.material", "rho0", 1.0);
        if (!(s.rho0 > 0.0))
            p.fail("scene.material.rho0", "must be positive");
        if (model == "neo_hookean") {
            s.material = MaterialKind::neo_hookean;
            if (m.contains("E") || m.contains("nu")) {
                const double youngs = p.number(m, "scene.material", "E", 0.0, true);
                const double poisson = p.number(m, "scene.material", "nu", 0.0, true);
                if (!(youngs > 0.0))
                    p.fail("scene.material.E", "must be positive");
                if (!(poisson > -1.0 && poisson < 0.5))
                    p.fail("scene.material.nu", "must lie in (-1, 0.5)");
                else if (youngs > 0.0)
                    s.neo_hookean = NeoHookeanParams::from_moduli(youngs, poisson);
            } else {
                s.neo_hookean.lambda = p.number(m, "scene.material", "lambda", 0.0, true);
                s.neo_hookean.mu = p.number(m, "scene.material", "mu", 0.0, true);
                if (!(s.neo_hookean.mu > 0.0))
                    p.fail("scene.material.mu", "must be positive");
            }
        } else if (model == "holzapfel_ogden") {
            s.material = MaterialKind::holzapfel_ogden;
            HolzapfelOgdenParams& h = s.holzapfel;
            h.a = p.number(m, "scene.material", "a", 0.0, true);
            h.b = p.number(m, "scene.material", "b", 0.0);
            h.a_f = p.number(m, "scene.material", "a_f", 0.0);
            h.b_f = p.number(m, "scene.material", "b_f", 0.0);
            h.a_s = p.number(m, "scene.material", "a_s", 0.0);
            h.b_s = p.number(m, "scene.material", "b_s", 0.0);
            h.a_fs = p.number(m, "scene.material", "a_fs", 0.0);
            h.b_fs = p.number(m, "scene.material", "b_fs", 0.0);
            h.lambda_bulk = p.number(m, "scene.material", "lambda_bulk", 0.0, true);
            for (double v : {h.a, h.a_f, h.a_s, h.a_fs, h.b, h.b_f, h.b_s, h.b_fs})
                if (v < 0.0) {
                    p.fail("scene.material", "a- and b-parameters must be non-negative");
                    break;
                }
        } else {
            p.fail("scene.material.model", "unknown material model '" + model + "'");
        }
        if (m.contains("fiber") && m["fiber"].is_string()) {
            if (m["fiber"].get<std::string>() == "from_field")
                s.mech_fibers_from_field = true;
            else
                p.fail("scene.material.fiber", "expected a vector or \"from_field\"");
        } else if (m.contains("fiber")) {
            s.mech_fiber = p.vec(m, "scene.material", "fiber", Vec3::UnitX()).normalized();
        }
        if (m.contains("sheet") && !m["sheet"].is_string())
            s.mech_sheet = p.vec(m, "scene.material", "sheet", Vec3::UnitY()).normalized();
    } else if (s.mechanics) {
        p.fail("scene.material", "missing required block (mechanics is enabled)");
    }

    if (j.contains("active_stress")) {
        const json& a = j["active_stress"];
        p.check_keys(a, "scene.active_stress",
                     {"mode", "k_a", "V_r", "eps0", "eps_inf", "eps_minus_inf", "xi", "V_bar"});
        const std::string mode = p.text(a, "scene.active_stress", "mode", "ode");
        if (mode == "ode")
            s.active_mode = ActiveMode::ode;
        else if (mode == "constant")
            s.active_mode = ActiveMode::constant;
        else
            p.fail("scene.active_stress.mode", "unknown mode '" + mode + "'");
        s.active.k_a = p.number(a, "scene.active_stress", "k_a", s.active.k_a);
        s.active.V_r = p.number(a, "scene.active_stress", "V_r", s.active.V_r);
        s.active.eps0 = p.number(a, "scene.active_stress", "eps0", s.active.eps0);
        s.active.eps_inf = p.number(a, "scene.active_stress", "eps_inf", s.active.eps_inf);
        s.active.eps_minus_inf =
            p.number(a, "scene.active_stress", "eps_minus_inf", s.active.eps_minus_inf);
        s.active.xi = p.number(a, "scene.active_stress", "xi", s.active.xi);
        s.active.V_bar = p.number(a, "scene.active_stress", "V_bar", s.active.V_bar);
        for (double v : {s.active.eps0, s.active.eps_inf, s.active.eps_minus_inf})
            if (!(v > 0.0)) {
                p.fail("scene.active_stress", "eps values must be positive");
                break;
            }
    }

    if (j.contains("initial")) {
        const json& ini = j["initial"];
        p.check_keys(ini, "scene.initial", {"V_m", "w", "T_a", "velocity"});
        if (ini.contains("V_m"))
            s.init_V_m = parse_field_init(p, ini["V_m"], "scene.initial.V_m");
        if (ini.contains("w"))
            s.init_w = parse_field_init(p, ini["w"], "scene.initial.w");
        if (ini.contains("T_a"))
            s.init_T_a = parse_field_init(p, ini["T_a"], "scene.initial.T_a");
        s.init_velocity = p.vec(ini, "scene.initial", "velocity", Vec3::Zero());
    }

    if (j.contains("stimuli")) {
        if (!j["stimuli"].is_array()) {
            p.fail("scene.stimuli", "expected an array");
        } else {
            int k = 0;
            for (const json& st : j["stimuli"]) {
                const std::string path = "scene.stimuli[" + std::to_string(k++) + "]";
                p.check_keys(st, path,
                             {"label", "region", "t_on", "t_off", "V_stim", "mode", "current"});
                StimulusSpec spec;
                spec.label = p.text(st, path, "label", "S" + std::to_string(k));
                if (st.contains("region"))
                    spec.region = parse_region(p, st["region"], path + ".region");
                spec.t_on = p.number(st, path, "t_on", 0.0, true);
                spec.t_off = p.number(st, path, "t_off", 0.0, true);
                if (spec.t_off < spec.t_on)
                    p.fail(path, "t_off must be >= t_on");
                spec.V_stim = p.number(st, path, "V_stim", 1.0);
                const std::string mode = p.text(st, path, "mode", "clamp");
                if (mode == "clamp")
                    spec.mode = StimulusSpec::Mode::clamp;
                else if (mode == "current") {
                    spec.mode = StimulusSpec::Mode::current;
                    spec.current = p.number(st, path, "current", 0.0, true);
                } else
                    p.fail(path + ".mode", "unknown stimulus mode '" + mode + "'");
                s.stimuli.push_back(spec);
            }
        }
    }

    if (j.contains("constraints")) {
        if (!j["constraints"].is_array()) {
            p.fail("scene.constraints", "expected an array");
        } else {
            int k = 0;
            for (const json& ct : j["constraints"]) {
                const std::string path = "scene.constraints[" + std::to_string(k++) + "]";
                p.check_keys(ct, path, {"region"});
                ConstraintSpec spec;
                if (ct.contains("region"))
                    spec.region = parse_region(p, ct["region"], path + ".region");
                else
                    p.fail(path + ".region", "missing required value");
                s.constraints.push_back(spec);
            }
        }
    }

    if (j.contains("probes")) {
        if (!j["probes"].is_array()) {
            p.fail("scene.probes", "expected an array");
        } else {
            int k = 0;
            for (const json& pr : j["probes"]) {
                const std::string path = "scene.probes[" + std::to_string(k++) + "]";
                p.check_keys(pr, path, {"name", "location", "quantity", "interval"});
                ProbeSpec spec;
                spec.name = p.text(pr, path, "name", "probe" + std::to_string(k));
                spec.location = p.vec(pr, path, "location", Vec3::Zero(), true);
                spec.quantity = p.text(pr, path, "quantity", "V_m");
                static const std::set<std::string> quantities = {"V_m", "w", "T_a", "displacement",
                                                                 "velocity"};
                if (!quantities.count(spec.quantity))
                    p.fail(path + ".quantity", "unknown quantity '" + spec.quantity + "'");
                spec.interval = p.number(pr, path, "interval", 0.0);
                if (spec.interval < 0.0)
                    p.fail(path + ".interval", "must be non-negative");
                s.probes.push_back(spec);
            }
        }
    }

    if (j.contains("output")) {
        const json& o = j["output"];
        p.check_keys(o, "scene.output", {"directory", "probe_file", "snapshot_every", "format"});
        s.out_dir = p.text(o, "scene.output", "directory", ".");
        s.probe_file = p.text(o, "scene.output", "probe_file", "probes.csv");
        s.snapshot_every = p.number(o, "scene.output", "snapshot_every", 0.0);
        s.snapshot_format = p.text(o, "scene.output", "format", "vtk");
        if (s.snapshot_format != "vtk" && s.snapshot_format != "csv")
            p.fail("scene.output.format", "expected 'vtk' or 'csv'");
        if (s.snapshot_every < 0.0)
            p.fail("scene.output.snapshot_every", "must be non-negative");
    }

    if (j.contains("relaxation")) {
        const json& r = j["relaxation"];
        p.check_keys(r, "scene.relaxation", {"steps", "background_pressure", "target_cv"});
        s.relax_steps = static_cast<int>(p.number(r, "scene.relaxation", "steps", 0));
        s.relax_pressure = p.number(r, "scene.relaxation", "background_pressure", 2.0);
        s.relax_target_cv = p.number(r, "scene.relaxation", "target_cv", 0.0);
        if (s.relax_steps < 0)
            p.fail("scene.relaxation.steps", "must be non-negative");
    }

    if (j.contains("fibers")) {
        const json& f = j["fibers"];
        p.check_keys(f, "scene.fibers", {"theta_epi_deg", "theta_endo_deg", "axis", "band_factor"});
        s.theta_epi_deg = p.number(f, "scene.fibers", "theta_epi_deg", s.theta_epi_deg);
        s.theta_endo_deg = p.number(f, "scene.fibers", "theta_endo_deg", s.theta_endo_deg);
        s.fiber_axis = p.vec(f, "scene.fibers", "axis", s.fiber_axis).normalized();
        s.band_factor = p.number(f, "scene.fibers", "band_factor", s.band_factor);
        if (!(s.band_factor > 0.0))
            p.fail("scene.fibers.band_factor", "must be positive");
    }

    if (j.contains("numerics")) {
        const json& nu = j["numerics"];
        p.check_keys(nu, "scene.numerics", {"cfl_diffusion", "cfl_mechanics", "damping", "dt_max"});
        s.cfl_diffusion = p.number(nu, "scene.numerics", "cfl_diffusion", 0.5);
        s.cfl_mechanics = p.number(nu, "scene.numerics", "cfl_mechanics", 0.6);
        s.damping = p.number(nu, "scene.numerics", "damping", 0.0);
        s.dt_max = p.number(nu, "scene.numerics", "dt_max",
                            std::numeric_limits<double>::infinity());
        if (!(s.cfl_diffusion > 0.0))
            p.fail("scene.numerics.cfl_diffusion", "must be positive");
        if (!(s.cfl_mechanics > 0.0))
            p.fail("scene.numerics.cfl_mechanics", "must be positive");
        if (s.damping < 0.0)
            p.fail("scene.numerics.damping", "must be non-negative");
    }

    if (j.contains("oracle")) {
        const json& o = j["oracle"];
        p.check_keys(o, "scene.oracle", {"case", "C0", "z0", "z1", "z2", "t0", "axis", "center",
                                         "Dxx", "Dyy"});
        const std::string which = p.text(o, "scene.oracle", "case", "", true);
        if (which == "band") {
            s.oracle = OracleCase::band;
            s.oracle_C0 = p.number(o, "scene.oracle", "C0", 1.0);
            s.oracle_z0 = p.number(o, "scene.oracle", "z0", 0.5, true);
            s.oracle_z1 = p.number(o, "scene.oracle", "z1", 0.45, true);
            s.oracle_z2 = p.number(o, "scene.oracle", "z2", 0.55, true);
            s.oracle_axis = static_cast<int>(p.number(o, "scene.oracle", "axis", 1));
        } else if (which == "exp_profile") {
            s.oracle = OracleCase::exp_profile;
            s.oracle_C0 = p.number(o, "scene.oracle", "C0", 1.0);
            s.oracle_z0 = p.number(o, "scene.oracle", "z0", 0.5, true);
            s.oracle_t0 = p.number(o, "scene.oracle", "t0", 1.0, true);
            s.oracle_axis = static_cast<int>(p.number(o, "scene.oracle", "axis", 1));
        } else if (which == "aniso_gaussian") {
            s.oracle = OracleCase::aniso_gaussian;
            s.oracle_t0 = p.number(o, "scene.oracle", "t0", 1.0, true);
            s.oracle_center = p.vec(o, "scene.oracle", "center", Vec3::Zero(), true);
        } else {
            p.fail("scene.oracle.case", "unknown oracle case '" + which + "'");
        }
    }

    // cross-block requirements
    if (s.electrophysiology && !j.contains("ionic") && s.coupling)
        p.fail("scene.ionic", "missing required block (coupling needs a reaction model)");
    if (s.coupling && s.active_mode == ActiveMode::none)
        p.fail("scene.active_stress", "missing required block (coupling is enabled)");
    if (s.fiber_from_field && s.geometry.kind != GeometrySpec::Kind::biventricle &&
        s.geometry.kind != GeometrySpec::Kind::stl)
        p.fail("scene.conductivity.fiber",
               "\"from_field\" requires a geometry with a reconstructed fiber field");

    if (!p.errors.empty()) {
        std::string msg = "scene validation failed:";
        for (const auto& e : p.errors)
            msg += "\n  - " + e;
        throw ValidationError(msg);
    }
    return s;
}

SceneConfig load_scene_file(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("load_scene_file: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return load_scene(ss.str());
}

std::string serialize_scene(const SceneConfig& s) {
    json j;
    j["name"] = s.name;
    j["dimension"] = s.dimension;
    j["dp"] = s.dp;
    j["kernel"] = {{"h_factor", s.h_factor}};
    j["end_time"] = s.end_time;
    j["seed"] = s.seed;

    json g;
    switch (s.geometry.kind) {
    case GeometrySpec::Kind::box:
        g["type"] = "box";
        g["min"] = vec_json(s.geometry.lo);
        g["max"] = vec_json(s.geometry.hi);
        break;
    case GeometrySpec::Kind::disk:
        g["type"] = "disk";
        g["center"] = vec_json(s.geometry.center);
        g["radius"] = s.geometry.radius;
        break;
    case GeometrySpec::Kind::stl:
        g["type"] = "stl";
        g["path"] = s.geometry.stl_path;
        g["grid_spacing"] = s.geometry.grid_spacing;
        break;
    case GeometrySpec::Kind::biventricle: {
        const BiventricleSpec& b = s.geometry.biventricle;
        g["type"] = "biventricle";
        g["a_lv"] = b.a_lv;
        g["b_lv"] = b.b_lv;
        g["c_lv"] = b.c_lv;
        g["a_rv"] = b.a_rv;
        g["b_rv"] = b.b_rv;
        g["c_rv"] = b.c_rv;
        g["wall_lv"] = b.wall_lv;
        g["wall_rv"] = b.wall_rv;
        g["base_y"] = b.base_y;
        g["rv_center"] = vec_json(b.rv_center);
        g["grid_spacing"] = s.geometry.grid_spacing;
        break;
    }
    }
    j["geometry"] = g;

    j["physics"] = {{"electrophysiology", s.electrophysiology},
                    {"mechanics", s.mechanics},
                    {"coupling", s.coupling}};

    if (s.electrophysiology || s.ionic != IonicModelKind::none) {
        json io;
        io["C_m"] = s.C_m;
        if (s.ionic == IonicModelKind::aliev_panfilov) {
            io["model"] = "aliev_panfilov";
            io["k"] = s.ap.k;
            io["a"] = s.ap.a;
            io["b"] = s.ap.b;
            io["eps0"] = s.ap.eps0;
            io["mu1"] = s.ap.mu1;
            io["mu2"] = s.ap.mu2;
        } else if (s.ionic == IonicModelKind::fitzhugh_nagumo) {
            io["model"] = "fitzhugh_nagumo";
            io["a"] = s.fhn.a;
            io["eps0"] = s.fhn.eps0;
            io["beta"] = s.fhn.beta;
            io["gamma"] = s.fhn.gamma;
            io["sigma"] = s.fhn.sigma;
        } else {
            io["model"] = "none";
        }
        j["ionic"] = io;
    }

    if (s.electrophysiology) {
        json c;
        c["d_iso"] = s.d_iso;
        c["d_ani"] = s.d_ani;
        if (s.fiber_from_field)
            c["fiber"] = "from_field";
        else
            c["fiber"] = vec_json(s.fiber);
        c["kernel_correction"] = s.kernel_correction;
        c["pair_variant"] = s.pair_variant == PairConductivity::mean_inverse_factor
                                ? "mean_inverse_factor"
                                : "pairwise_cholesky";
        j["conductivity"] = c;
    }

    if (s.material != MaterialKind::none) {
        json m;
        m["rho0"] = s.rho0;
        if (s.material == MaterialKind::neo_hookean) {
            m["model"] = "neo_hookean";
            m["lambda"] = s.neo_hookean.lambda;
            m["mu"] = s.neo_hookean.mu;
        } else {
            m["model"] = "holzapfel_ogden";
            m["a"] = s.holzapfel.a;
            m["b"] = s.holzapfel.b;
            m["a_f"] = s.holzapfel.a_f;
            m["b_f"] = s.holzapfel.b_f;
            m["a_s"] = s.holzapfel.a_s;
            m["b_s"] = s.holzapfel.b_s;
            m["a_fs"] = s.holzapfel.a_fs;
            m["b_fs"] = s.holzapfel.b_fs;
            m["lambda_bulk"] = s.holzapfel.lambda_bulk;
        }
        if (s.mech_fibers_from_field)
            m["fiber"] = "from_field";
        else {
            m["fiber"] = vec_json(s.mech_fiber);
            m["sheet"] = vec_json(s.mech_sheet);
        }
        j["material"] = m;
    }

    if (s.active_mode != ActiveMode::none) {
        json a;
        a["mode"] = s.active_mode == ActiveMode::ode ? "ode" : "constant";
        a["k_a"] = s.active.k_a;
        a["V_r"] = s.active.V_r;
        a["eps0"] = s.active.eps0;
        a["eps_inf"] = s.active.eps_inf;
        a["eps_minus_inf"] = s.active.eps_minus_inf;
        a["xi"] = s.active.xi;
        a["V_bar"] = s.active.V_bar;
        j["active_stress"] = a;
    }

    json ini;
    ini["V_m"] = field_init_json(s.init_V_m);
    ini["w"] = field_init_json(s.init_w);
    ini["T_a"] = field_init_json(s.init_T_a);
    ini["velocity"] = vec_json(s.init_velocity);
    j["initial"] = ini;

    json stim = json::array();
    for (const auto& st : s.stimuli) {
        json e;
        e["label"] = st.label;
        e["region"] = region_json(st.region);
        e["t_on"] = st.t_on;
        e["t_off"] = st.t_off;
        e["V_stim"] = st.V_stim;
        e["mode"] = st.mode == StimulusSpec::Mode::clamp ? "clamp" : "current";
        if (st.mode == StimulusSpec::Mode::current)
            e["current"] = st.current;
        stim.push_back(e);
    }
    j["stimuli"] = stim;

    json cons = json::array();
    for (const auto& ct : s.constraints)
        cons.push_back({{"region", region_json(ct.region)}});
    j["constraints"] = cons;

    json probes = json::array();
    for (const auto& pr : s.probes) {
        json e;
        e["name"] = pr.name;
        e["location"] = vec_json(pr.location);
        e["quantity"] = pr.quantity;
        e["interval"] = pr.interval;
        probes.push_back(e);
    }
    j["probes"] = probes;

    j["output"] = {{"directory", s.out_dir},
                   {"probe_file", s.probe_file},
                   {"snapshot_every", s.snapshot_every},
                   {"format", s.snapshot_format}};
    j["relaxation"] = {{"steps", s.relax_steps},
                       {"background_pressure", s.relax_pressure},
                       {"target_cv", s.relax_target_cv}};
    j["fibers"] = {{"theta_epi_deg", s.theta_epi_deg},
                   {"theta_endo_deg", s.theta_endo_deg},
                   {"axis", vec_json(s.fiber_axis)},
                   {"band_factor", s.band_factor}};
    json nu;
    nu["cfl_diffusion"] = s.cfl_diffusion;
    nu["cfl_mechanics"] = s.cfl_mechanics;
    nu["damping"] = s.damping;
    if (std::isfinite(s.dt_max))
        nu["dt_max"] = s.dt_max;
    j["numerics"] = nu;

    if (s.oracle != OracleCase::none) {
        json o;
        if (s.oracle == OracleCase::band) {
            o["case"] = "band";
            o["C0"] = s.oracle_C0;
            o["z0"] = s.oracle_z0;
            o["z1"] = s.oracle_z1;
            o["z2"] = s.oracle_z2;
            o["axis"] = s.oracle_axis;
        } else if (s.oracle == OracleCase::exp_profile) {
            o["case"] = "exp_profile";
            o["C0"] = s.oracle_C0;
            o["z0"] = s.oracle_z0;
            o["t0"] = s.oracle_t0;
            o["axis"] = s.oracle_axis;
        } else {
            o["case"] = "aniso_gaussian";
            o["t0"] = s.oracle_t0;
            o["center"] = vec_json(s.oracle_center);
        }
        j["oracle"] = o;
    }

    return j.dump(2);
}

bool operator==(const SceneConfig& a, const SceneConfig& b) {
    return serialize_scene(a) == serialize_scene(b);
}

} // namespace csph
