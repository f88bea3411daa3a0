#pragma once

#include <cmath>
#include <stdexcept>
#include <variant>

namespace csph {

// Two-current reduced ionic models. Potential, gating variable and time are
// nondimensional; to_physical() maps them to mV and ms for output.

struct AlievPanfilovParams {
    double k = 8.0;
    double a = 0.15;
    double b = 0.15;
    double eps0 = 0.002;
    double mu1 = 0.2;
    double mu2 = 0.3;
};

struct FitzHughNagumoParams {
    double a = 0.1;
    double eps0 = 0.01;
    double beta = 0.5;
    double gamma = 1.0;
    double sigma = 0.0;
};

struct ElectroState {
    double V_m = 0.0;
    double w = 0.0;
    double C_m = 1.0;
};

/// Active-stress evolution dT_a/dt = eps(V)[k_a (V - V_r) - T_a] with the
/// Gompertz-type gate eps(V) = eps0 + (eps_inf - eps_minus_inf) exp(-exp(-xi (V - V_bar))).
struct ActiveStressParams {
    double k_a = 1.0;
    double V_r = 0.0;
    double eps0 = 0.1;
    double eps_inf = 1.0;
    double eps_minus_inf = 0.1;
    double xi = 1.0;
    double V_bar = 0.0;
};

struct ReactionRates {
    double dV_dt;
    double dw_dt;
};

inline double aliev_panfilov_epsilon(double V, double w, const AlievPanfilovParams& p) {
    const double denom = p.mu2 + V;
    if (std::abs(denom) < 1e-12)
        throw std::runtime_error("aliev_panfilov: epsilon pole reached at V = -mu2, "
                                 "state has left the physical range");
    return p.eps0 + p.mu1 * w / denom;
}

inline ReactionRates ap_rates(const ElectroState& s, const AlievPanfilovParams& p) {
    const double V = s.V_m, w = s.w;
    const double i_ion = -p.k * V * (V - p.a) * (V - 1.0) - w * V;
    const double eps = aliev_panfilov_epsilon(V, w, p);
    const double dw = eps * (-p.k * V * (V - p.b - 1.0) - w);
    return {i_ion / s.C_m, dw};
}

inline ReactionRates fhn_rates(const ElectroState& s, const FitzHughNagumoParams& p) {
    const double V = s.V_m, w = s.w;
    const double i_ion = -V * (V - p.a) * (V - 1.0) - w;
    const double dw = p.eps0 * (p.beta * V - p.gamma * w - p.sigma);
    return {i_ion / s.C_m, dw};
}

/// One quasi-steady-state step for dy/dt = q - p y with q, p frozen:
/// y' = y e^{-p dt} + (q/p)(1 - e^{-p dt}); series limit for small |p dt|.
inline double qss_step(double y, double q, double p, double dt) {
    const double pdt = p * dt;
    if (std::abs(pdt) < 1e-8)
        return y + (q - p * y) * dt;
    const double decay = std::exp(-pdt);
    return y * decay + q / p * (1.0 - decay);
}

enum class ReactionOrder { forward, backward };

// Production/loss decompositions used by the QSS sub-steps. Loss rates are
// kept non-negative over the physical state range so the exponential update
// stays contractive.

inline double ap_potential_substep(double V, double w, double dt, double C_m,
                                   const AlievPanfilovParams& p) {
    const double q = p.k * (1.0 + p.a) * V * V / C_m;
    const double loss = (p.k * V * V + p.k * p.a + w) / C_m;
    return qss_step(V, q, loss, dt);
}

inline double ap_gate_substep(double V, double w, double dt, const AlievPanfilovParams& p) {
    const double eps = aliev_panfilov_epsilon(V, w, p);
    const double q = eps * p.k * V * (p.b + 1.0 - V);
    return qss_step(w, q, eps, dt);
}

inline double fhn_potential_substep(double V, double w, double dt, double C_m,
                                    const FitzHughNagumoParams& p) {
    const double q = ((1.0 + p.a) * V * V - w) / C_m;
    const double loss = (V * V + p.a) / C_m;
    return qss_step(V, q, loss, dt);
}

inline double fhn_gate_substep(double V, double w, double dt, const FitzHughNagumoParams& p) {
    const double q = p.eps0 * (p.beta * V - p.sigma);
    return qss_step(w, q, p.eps0 * p.gamma, dt);
}

/// Half of the symmetric reaction sequence: forward integrates the potential
/// then the gate for dt/2 each, backward does the reverse. A forward half,
/// the diffusion step, then a backward half forms one full split step.
template <class Params>
ElectroState reaction_half_step(ElectroState s, double dt, const Params& p, ReactionOrder order) {
    const double half = 0.5 * dt;
    constexpr bool is_ap = std::is_same_v<Params, AlievPanfilovParams>;
    if (order == ReactionOrder::forward) {
        if constexpr (is_ap) {
            s.V_m = ap_potential_substep(s.V_m, s.w, half, s.C_m, p);
            s.w = ap_gate_substep(s.V_m, s.w, half, p);
        } else {
            s.V_m = fhn_potential_substep(s.V_m, s.w, half, s.C_m, p);
            s.w = fhn_gate_substep(s.V_m, s.w, half, p);
        }
    } else {
        if constexpr (is_ap) {
            s.w = ap_gate_substep(s.V_m, s.w, half, p);
            s.V_m = ap_potential_substep(s.V_m, s.w, half, s.C_m, p);
        } else {
            s.w = fhn_gate_substep(s.V_m, s.w, half, p);
            s.V_m = fhn_potential_substep(s.V_m, s.w, half, s.C_m, p);
        }
    }
    return s;
}

inline double activation_gate(double V_m, const ActiveStressParams& p) {
    return p.eps0 + (p.eps_inf - p.eps_minus_inf) * std::exp(-std::exp(-p.xi * (V_m - p.V_bar)));
}

/// Exact exponential update of the active stress ODE with V_m frozen over dt
/// (the equation is linear in T_a, so the QSS step is the closed form).
inline double active_stress_step(double T_a, double V_m, double dt, const ActiveStressParams& p) {
    const double eps = activation_gate(V_m, p);
    return qss_step(T_a, eps * p.k_a * (V_m - p.V_r), eps, dt);
}

struct PhysicalUnits {
    double E_mV;
    double T_ms;
};

inline PhysicalUnits to_physical(double V_m, double t) {
    return {100.0 * V_m - 80.0, 12.9 * t};
}

} // namespace csph
