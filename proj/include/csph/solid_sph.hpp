#pragma once

#include "csph/math_kernels.hpp"
#include "csph/particle_store.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace csph {

struct NeoHookeanParams {
    double lambda = 0.0;
    double mu = 0.0;

    static NeoHookeanParams from_moduli(double youngs, double poisson) {
        NeoHookeanParams p;
        p.mu = youngs / (2.0 * (1.0 + poisson));
        p.lambda = youngs * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
        return p;
    }
};

/// Invariant-based exponential strain energy with isotropic, fiber, sheet and
/// fiber-sheet shear contributions; incompressibility is enforced through the
/// volumetric penalty -a ln J + lambda_bulk/2 (ln J)^2 so the stress vanishes
/// in the reference configuration.
struct HolzapfelOgdenParams {
    double a = 0.0, b = 0.0;
    double a_f = 0.0, b_f = 0.0;
    double a_s = 0.0, b_s = 0.0;
    double a_fs = 0.0, b_fs = 0.0;
    double lambda_bulk = 0.0;

    bool anisotropic() const { return a_f != 0.0 || a_s != 0.0 || a_fs != 0.0; }
};

using SolidMaterial = std::variant<NeoHookeanParams, HolzapfelOgdenParams>;

template <int D>
struct FiberFrame {
    std::vector<Vec<D>> f0;
    std::vector<Vec<D>> s0;

    bool empty() const { return f0.empty(); }

    static FiberFrame uniform(std::size_t n, const Vec<D>& f, const Vec<D>& s) {
        FiberFrame frame;
        frame.f0.assign(n, f);
        frame.s0.assign(n, s);
        return frame;
    }
};

struct DeformationInvariants {
    double I1;
    double I_ff;
    double I_ss;
    double I_fs;
    double J;
};

template <int D>
DeformationInvariants invariants(const Mat<D>& F, const Vec<D>& f0, const Vec<D>& s0) {
    const double J = F.determinant();
    if (!(J > 0.0))
        throw std::runtime_error("invariants: det(F) <= 0, element is inverted");
    const Mat<D> C = F.transpose() * F;
    return {C.trace(), f0.dot(C * f0), s0.dot(C * s0), f0.dot(C * s0), J};
}

// W = mu tr(E) - mu ln J + lambda/2 (ln J)^2, E = (C - I)/2
template <int D>
double neo_hookean_energy(const Mat<D>& F, const NeoHookeanParams& p) {
    const double J = F.determinant();
    if (!(J > 0.0))
        throw std::runtime_error("neo_hookean_energy: det(F) <= 0");
    const double lnj = std::log(J);
    const double tr_e = 0.5 * ((F.transpose() * F).trace() - D);
    return p.mu * tr_e - p.mu * lnj + 0.5 * p.lambda * lnj * lnj;
}

// S = mu I + (lambda ln J - mu) C^{-1}
template <int D>
Mat<D> neo_hookean_pk2(const Mat<D>& F, const NeoHookeanParams& p) {
    const double J = F.determinant();
    if (!(J > 0.0))
        throw std::runtime_error("neo_hookean_pk2: det(F) <= 0, element is inverted");
    const Mat<D> C = F.transpose() * F;
    return p.mu * Mat<D>::Identity() + (p.lambda * std::log(J) - p.mu) * C.inverse().eval();
}

namespace detail {
// a/(2b) (exp(b x) - 1), continuous at b = 0
inline double exp_term(double a, double b, double x) {
    if (b == 0.0)
        return 0.5 * a * x;
    return 0.5 * a / b * std::expm1(b * x);
}
} // namespace detail

template <int D>
double holzapfel_ogden_energy(const Mat<D>& F, const Vec<D>& f0, const Vec<D>& s0,
                              const HolzapfelOgdenParams& p) {
    const auto inv = invariants(F, f0, s0);
    const double lnj = std::log(inv.J);
    double w = detail::exp_term(p.a, p.b, inv.I1 - 3.0);
    w += -p.a * lnj + 0.5 * p.lambda_bulk * lnj * lnj;
    const double ef = inv.I_ff - 1.0;
    const double es = inv.I_ss - 1.0;
    w += (p.b_f == 0.0) ? 0.5 * p.a_f * ef * ef
                        : 0.5 * p.a_f / p.b_f * std::expm1(p.b_f * ef * ef);
    w += (p.b_s == 0.0) ? 0.5 * p.a_s * es * es
                        : 0.5 * p.a_s / p.b_s * std::expm1(p.b_s * es * es);
    w += (p.b_fs == 0.0) ? 0.5 * p.a_fs * inv.I_fs * inv.I_fs
                         : 0.5 * p.a_fs / p.b_fs * std::expm1(p.b_fs * inv.I_fs * inv.I_fs);
    return w;
}

// S = a exp[b(I1-3)] I + (lambda ln J - a) C^{-1}
//   + 2 a_f (I_ff-1) exp[b_f (I_ff-1)^2] f0 (x) f0
//   + 2 a_s (I_ss-1) exp[b_s (I_ss-1)^2] s0 (x) s0
//   + a_fs I_fs exp[b_fs I_fs^2] (f0 (x) s0 + s0 (x) f0)
template <int D>
Mat<D> holzapfel_ogden_pk2(const Mat<D>& F, const Vec<D>& f0, const Vec<D>& s0,
                           const HolzapfelOgdenParams& p) {
    const auto inv = invariants(F, f0, s0);
    const Mat<D> C = F.transpose() * F;
    const double lnj = std::log(inv.J);
    Mat<D> S = p.a * std::exp(p.b * (inv.I1 - 3.0)) * Mat<D>::Identity();
    S += (p.lambda_bulk * lnj - p.a) * C.inverse().eval();
    if (p.a_f != 0.0) {
        const double e = inv.I_ff - 1.0;
        S += 2.0 * p.a_f * e * std::exp(p.b_f * e * e) * (f0 * f0.transpose());
    }
    if (p.a_s != 0.0) {
        const double e = inv.I_ss - 1.0;
        S += 2.0 * p.a_s * e * std::exp(p.b_s * e * e) * (s0 * s0.transpose());
    }
    if (p.a_fs != 0.0) {
        const double shear = p.a_fs * inv.I_fs * std::exp(p.b_fs * inv.I_fs * inv.I_fs);
        S += shear * (f0 * s0.transpose() + s0 * f0.transpose());
    }
    return S;
}

/// Active contraction stress P_active = T_a F f0 (x) f0.
template <int D>
Mat<D> active_pk1(double T_a, const Mat<D>& F, const Vec<D>& f0) {
    return T_a * F * (f0 * f0.transpose());
}

/// Cauchy stress push-forward sigma = J^{-1} P F^T, the quantity fed to von_mises.
template <int D>
Mat<D> cauchy_stress(const Mat<D>& pk1, const Mat<D>& F) {
    return (pk1 * F.transpose() / F.determinant()).eval();
}

/// F_i = [sum_j V_j (u_j - u_i) (x) grad0_i W_ij] B0_i + I.
template <int D>
std::vector<Mat<D>> compute_deformation_gradient(std::span<const Vec<D>> u,
                                                 const ParticleSet<D>& set,
                                                 const NeighborList<D>& nl,
                                                 std::span<const Mat<D>> b0) {
    const std::size_t n = set.size();
    std::vector<Mat<D>> F(n);
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        Mat<D> g = Mat<D>::Zero();
        for (const auto& e : nl.neighbors(i))
            g += set.volume[e.j] * (u[e.j] - u[i]) * (e.dwdr * e.e0).transpose();
        F[i] = g * b0[i] + Mat<D>::Identity();
    }
    return F;
}

/// dF_i/dt = [sum_j V_j (v_j - v_i) (x) grad0_i W_ij] B0_i, the same discrete
/// operator as the deformation gradient applied to the velocity field.
template <int D>
void deformation_rate(std::span<const Vec<D>> v, const ParticleSet<D>& set,
                      const NeighborList<D>& nl, std::span<const Mat<D>> b0,
                      std::span<Mat<D>> dfdt) {
    const std::size_t n = set.size();
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        Mat<D> g = Mat<D>::Zero();
        for (const auto& e : nl.neighbors(i))
            g += set.volume[e.j] * (v[e.j] - v[i]) * (e.dwdr * e.e0).transpose();
        dfdt[i] = g * b0[i];
    }
}

namespace detail {

// dv_i/dt = (1/rho0_i) sum_j V_j (PB_i + PB_j) grad0_i W_ij with PB = P B0
template <int D>
void momentum_rate_into(std::span<const Mat<D>> pb, const ParticleSet<D>& set,
                        const NeighborList<D>& nl, std::span<Vec<D>> accel) {
    const std::size_t n = set.size();
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        Vec<D> a = Vec<D>::Zero();
        for (const auto& e : nl.neighbors(i))
            a += set.volume[e.j] * ((pb[i] + pb[e.j]) * (e.dwdr * e.e0));
        accel[i] = a / set.rho0[i];
    }
}

} // namespace detail

/// Acceleration from an inter-particle averaged first Piola-Kirchhoff stress:
/// dv_i/dt = (2/m_i) sum_j V_i V_j Ptilde_ij grad0_i W_ij,
/// Ptilde_ij = (P_i B0_i + P_j B0_j)/2. Pairwise antisymmetric, so the total
/// momentum rate of a closed body vanishes to round-off.
template <int D>
std::vector<Vec<D>> momentum_rate(std::span<const Mat<D>> pk1, const ParticleSet<D>& set,
                                  const NeighborList<D>& nl, std::span<const Mat<D>> b0) {
    const std::size_t n = set.size();
    std::vector<Mat<D>> pb(n);
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(n); ++ii)
        pb[ii] = pk1[ii] * b0[ii];
    std::vector<Vec<D>> accel(n);
    detail::momentum_rate_into<D>(pb, set, nl, accel);
    return accel;
}

/// Bulk sound speed used by the CFL condition. mu_eff is mu for Neo-Hookean and
/// a + 2 max(a_f, a_s) for Holzapfel-Ogden (stiffest tangent estimate at the
/// reference state).
inline double sound_speed(const SolidMaterial& material, double rho0) {
    double stiff;
    if (const auto* nh = std::get_if<NeoHookeanParams>(&material))
        stiff = nh->lambda + 2.0 * nh->mu;
    else {
        const auto& ho = std::get<HolzapfelOgdenParams>(material);
        stiff = ho.lambda_bulk + 2.0 * (ho.a + 2.0 * std::max(ho.a_f, ho.a_s));
    }
    return std::sqrt(stiff / rho0);
}

/// dt_m = cfl min(h/(c + |v|max), sqrt(h/|dv/dt|max))
inline double timestep_mechanics(double h, double c, double vmax, double amax, double cfl = 0.6) {
    const double acoustic = h / (c + vmax);
    const double accel = amax > 0.0 ? std::sqrt(h / amax)
                                    : std::numeric_limits<double>::infinity();
    return cfl * std::min(acoustic, accel);
}

/// Total-Lagrangian solid integrator: owns the mechanical state and advances it
/// with the position-based Verlet scheme; kernel gradients, neighbor lists and
/// correction matrices stay fixed on the reference configuration.
template <int D>
class SolidDynamics {
  public:
    SolidDynamics(const ParticleSet<D>& set, const NeighborList<D>& nl,
                  std::vector<Mat<D>> b0, SolidMaterial material, double h,
                  FiberFrame<D> fibers = {})
        : set_(&set), nl_(&nl), b0_(std::move(b0)), material_(material), h_(h),
          fibers_(std::move(fibers)) {
        const std::size_t n = set.size();
        if (const auto* ho = std::get_if<HolzapfelOgdenParams>(&material_);
            ho && ho->anisotropic() && fibers_.f0.size() != n)
            throw std::invalid_argument("SolidDynamics: anisotropic material requires a fiber "
                                        "frame for every particle");
        r_ = set.r0;
        v_.assign(n, Vec<D>::Zero());
        F_.assign(n, Mat<D>::Identity());
        rho_ = set.rho0;
        T_a_.assign(n, 0.0);
        accel_.assign(n, Vec<D>::Zero());
        pb_.resize(n);
        dfdt_.resize(n);
        constrained_.assign(n, 0);
        rho0_min_ = *std::min_element(set.rho0.begin(), set.rho0.end());
    }

    std::span<const Vec<D>> positions() const { return r_; }
    std::span<const Vec<D>> velocities() const { return v_; }
    std::span<const Mat<D>> deformation() const { return F_; }
    std::span<const double> density() const { return rho_; }
    std::span<const Vec<D>> acceleration() const { return accel_; }
    std::vector<double>& active_stress() { return T_a_; }
    const std::vector<double>& active_stress() const { return T_a_; }
    const FiberFrame<D>& fibers() const { return fibers_; }

    Vec<D> displacement(std::size_t i) const { return r_[i] - set_->r0[i]; }

    void set_velocity(const Vec<D>& v) {
        for (std::size_t i = 0; i < v_.size(); ++i)
            v_[i] = constrained_[i] ? Vec<D>::Zero().eval() : v;
    }

    void set_damping(double gamma) { damping_ = gamma; }

    /// Marks every particle whose reference position satisfies the predicate as
    /// clamped (zero velocity, fixed position). Returns the number of clamped
    /// particles; a zero count is the caller's cue to warn.
    template <class Pred>
    std::size_t set_constrained_region(Pred&& pred) {
        std::size_t count = 0;
        for (std::size_t i = 0; i < constrained_.size(); ++i) {
            if (pred(set_->r0[i])) {
                constrained_[i] = 1;
                v_[i].setZero();
                ++count;
            }
        }
        return count;
    }

    std::span<const std::uint8_t> constrained() const { return constrained_; }

    double timestep(double cfl = 0.6) const {
        double vmax = 0.0, amax = 0.0;
#pragma omp parallel for schedule(static) reduction(max : vmax, amax)
        for (long long i = 0; i < static_cast<long long>(v_.size()); ++i) {
            vmax = std::max(vmax, v_[i].norm());
            amax = std::max(amax, accel_[i].norm());
        }
        return timestep_mechanics(h_, sound_speed(material_, rho0_min_), vmax, amax, cfl);
    }

    /// One position-based Verlet step: half kinematics update, full velocity
    /// kick with forces evaluated at the midpoint, second half kinematics.
    void verlet_step(double dt) {
        enforce_velocity_constraints();
        half_kinematics(0.5 * dt);
        assemble_stress();
        detail::momentum_rate_into<D>(pb_, *set_, *nl_, accel_);
        const double damp = damping_ > 0.0 ? std::max(0.0, 1.0 - damping_ * dt) : 1.0;
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(v_.size()); ++i) {
            if (constrained_[i]) {
                v_[i].setZero();
                continue;
            }
            v_[i] = damp * (v_[i] + dt * accel_[i]);
        }
        half_kinematics(0.5 * dt);
        enforce_position_constraints();
    }

    double kinetic_energy() const {
        double e = 0.0;
        for (std::size_t i = 0; i < v_.size(); ++i)
            e += 0.5 * set_->mass[i] * v_[i].squaredNorm();
        return e;
    }

    double strain_energy() const {
        double e = 0.0;
        if (const auto* nh = std::get_if<NeoHookeanParams>(&material_)) {
            for (std::size_t i = 0; i < F_.size(); ++i)
                e += set_->volume[i] * neo_hookean_energy(F_[i], *nh);
        } else {
            const auto& ho = std::get<HolzapfelOgdenParams>(material_);
            for (std::size_t i = 0; i < F_.size(); ++i)
                e += set_->volume[i] * holzapfel_ogden_energy(F_[i], fiber(i), sheet(i), ho);
        }
        return e;
    }

    Vec<D> total_momentum() const {
        Vec<D> p = Vec<D>::Zero();
        for (std::size_t i = 0; i < v_.size(); ++i)
            p += set_->mass[i] * v_[i];
        return p;
    }

    Mat<D> first_piola(std::size_t i) const {
        Mat<D> P;
        if (const auto* nh = std::get_if<NeoHookeanParams>(&material_))
            P = F_[i] * neo_hookean_pk2(F_[i], *nh);
        else
            P = F_[i] * holzapfel_ogden_pk2(F_[i], fiber(i), sheet(i),
                                            std::get<HolzapfelOgdenParams>(material_));
        if (T_a_[i] != 0.0 && !fibers_.empty())
            P += active_pk1(T_a_[i], F_[i], fiber(i));
        return P;
    }

    double von_mises_stress(std::size_t i) const {
        return von_mises<D>(cauchy_stress(first_piola(i), F_[i]));
    }

    bool all_finite() const {
        for (std::size_t i = 0; i < v_.size(); ++i)
            if (!r_[i].allFinite() || !v_[i].allFinite() || !F_[i].allFinite())
                return false;
        return true;
    }

  private:
    Vec<D> fiber(std::size_t i) const {
        return fibers_.empty() ? Vec<D>::Unit(0).eval() : fibers_.f0[i];
    }
    Vec<D> sheet(std::size_t i) const {
        return fibers_.empty() ? Vec<D>::Unit(D > 1 ? 1 : 0).eval() : fibers_.s0[i];
    }

    void enforce_velocity_constraints() {
        for (std::size_t i = 0; i < v_.size(); ++i)
            if (constrained_[i])
                v_[i].setZero();
    }

    void enforce_position_constraints() {
        for (std::size_t i = 0; i < r_.size(); ++i)
            if (constrained_[i]) {
                r_[i] = set_->r0[i];
                v_[i].setZero();
            }
    }

    void half_kinematics(double half_dt) {
        deformation_rate<D>(v_, *set_, *nl_, b0_, dfdt_);
        long long bad = -1;
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(F_.size()); ++i) {
            F_[i] += half_dt * dfdt_[i];
            const double j = F_[i].determinant();
            if (!(j > 0.0)) {
#pragma omp critical
                {
                    if (bad < 0 || i < bad)
                        bad = i;
                }
                continue;
            }
            rho_[i] = set_->rho0[i] / j;
            r_[i] += half_dt * v_[i];
        }
        if (bad >= 0)
            throw std::runtime_error("SolidDynamics: inverted element at particle " +
                                     std::to_string(bad) + " (det F <= 0)");
    }

    void assemble_stress() {
        std::visit(
            [&](const auto& mat) {
                using M = std::decay_t<decltype(mat)>;
                long long bad = -1;
#pragma omp parallel for schedule(static)
                for (long long i = 0; i < static_cast<long long>(F_.size()); ++i) {
                    Mat<D> P;
                    try {
                        if constexpr (std::is_same_v<M, NeoHookeanParams>)
                            P = F_[i] * neo_hookean_pk2(F_[i], mat);
                        else
                            P = F_[i] * holzapfel_ogden_pk2(F_[i], fiber(i), sheet(i), mat);
                    } catch (const std::runtime_error&) {
#pragma omp critical
                        {
                            if (bad < 0 || i < bad)
                                bad = i;
                        }
                        continue;
                    }
                    if (T_a_[i] != 0.0 && !fibers_.empty())
                        P += active_pk1(T_a_[i], F_[i], fiber(i));
                    pb_[i] = P * b0_[i];
                }
                if (bad >= 0)
                    throw std::runtime_error("SolidDynamics: inverted element at particle " +
                                             std::to_string(bad) + " during stress assembly");
            },
            material_);
    }

    const ParticleSet<D>* set_;
    const NeighborList<D>* nl_;
    std::vector<Mat<D>> b0_;
    SolidMaterial material_;
    double h_;
    FiberFrame<D> fibers_;
    double damping_ = 0.0;
    double rho0_min_ = 1.0;

    std::vector<Vec<D>> r_, v_, accel_;
    std::vector<Mat<D>> F_, pb_, dfdt_;
    std::vector<double> rho_, T_a_;
    std::vector<std::uint8_t> constrained_;
};

} // namespace csph
