#pragma once

#include "csph/math_kernels.hpp"
#include "csph/particle_store.hpp"

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace csph {

/// Conductivity tensor d_iso I + d_ani f0 (x) f0. SPD requires d_iso > 0 and
/// d_iso + d_ani > 0; the fiber must be a unit vector unless d_ani = 0.
template <int D>
Mat<D> assemble_conductivity(double d_iso, double d_ani, const Vec<D>& f0) {
    if (d_ani != 0.0 && std::abs(f0.norm() - 1.0) > 1e-8)
        throw std::invalid_argument("assemble_conductivity: fiber direction must be a unit vector");
    Mat<D> t = d_iso * Mat<D>::Identity();
    if (d_ani != 0.0)
        t += d_ani * f0 * f0.transpose();
    return t;
}

/// Per-particle inverse Cholesky factors Ltilde_i = (chol(D_i))^{-1}, computed
/// once before the run. Decomposition failures carry the particle id.
template <int D>
std::vector<Mat<D>> precompute_factors(std::span<const Mat<D>> tensors) {
    std::vector<Mat<D>> factors(tensors.size());
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        try {
            factors[i] = invert_lower_triangular(cholesky_lower(tensors[i]));
        } catch (const std::runtime_error& err) {
            throw std::runtime_error("precompute_factors: particle " + std::to_string(i) + ": " +
                                     err.what());
        }
    }
    return factors;
}

/// Per-particle diffusion tensors and their precomputed inverse Cholesky factors.
template <int D>
struct ConductivityModel {
    std::vector<Mat<D>> tensors;
    std::vector<Mat<D>> inv_factors;

    static ConductivityModel uniform(std::size_t n, double d_iso, double d_ani, const Vec<D>& f0) {
        ConductivityModel m;
        m.tensors.assign(n, assemble_conductivity(d_iso, d_ani, f0));
        m.inv_factors = precompute_factors<D>(m.tensors);
        return m;
    }

    static ConductivityModel from_fibers(double d_iso, double d_ani,
                                         std::span<const Vec<D>> fibers) {
        ConductivityModel m;
        m.tensors.reserve(fibers.size());
        for (const auto& f : fibers)
            m.tensors.push_back(assemble_conductivity(d_iso, d_ani, f));
        m.inv_factors = precompute_factors<D>(m.tensors);
        return m;
    }

    double max_trace() const {
        double t = 0.0;
        for (const auto& d : tensors)
            t = std::max(t, d.trace());
        return t;
    }
};

/// How the pairwise directional conductivity is formed from the per-particle
/// factors. The mean-inverse-factor form averages the precomputed Ltilde_i and
/// is exact for homogeneous tensors; the pairwise-Cholesky form factorizes the
/// matrix harmonic mean of the two tensors per pair (slower, kept for
/// cross-checking heterogeneous cases).
enum class PairConductivity { mean_inverse_factor, pairwise_cholesky };

/// kappa_ij = 1 / |M_ij e_ij|^2 with M_ij = (Ltilde_i + Ltilde_j)/2.
/// Symmetric in (i, j); reduces to e.De along principal axes for equal tensors.
template <int D>
double pairwise_directional_conductivity(const Mat<D>& ltilde_i, const Mat<D>& ltilde_j,
                                         const Vec<D>& e_ij) {
    const Vec<D> me = 0.5 * (ltilde_i + ltilde_j) * e_ij;
    return 1.0 / me.squaredNorm();
}

/// Anisotropic SPH diffusion operator on a fixed particle set:
///
///   dphi_i/dt = (2/C_m) sum_j V_j (phi_i - phi_j) c_ij kappa_ij (1/r_ij) dW/dr
///
/// with the optional renormalization factor c_ij = e_ij . Bbar_ij e_ij,
/// Bbar_ij = (B0_i + B0_j)/2. All pair coefficients are precomputed at
/// construction; rate() is parallel over particles and deterministic for the
/// stored neighbor order. Missing neighbors contribute zero flux, so closed
/// boundaries are flux-free by construction.
template <int D>
class DiffusionOperator {
  public:
    DiffusionOperator(const ParticleSet<D>& set, const NeighborList<D>& nl,
                      const ConductivityModel<D>& model,
                      const std::vector<Mat<D>>* correction = nullptr,
                      PairConductivity variant = PairConductivity::mean_inverse_factor,
                      double C_m = 1.0)
        : nl_(&nl) {
        const std::size_t n = set.size();
        if (model.tensors.size() != n || model.inv_factors.size() != n)
            throw std::invalid_argument("DiffusionOperator: conductivity model size mismatch");
        coeff_.resize(nl.pair_entry_count());
#pragma omp parallel for schedule(static)
        for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
            const std::size_t i = static_cast<std::size_t>(ii);
            std::size_t at = nl.entry_offset(i);
            for (const auto& e : nl.neighbors(i)) {
                double kappa;
                if (variant == PairConductivity::mean_inverse_factor) {
                    kappa = pairwise_directional_conductivity(model.inv_factors[i],
                                                              model.inv_factors[e.j], e.e0);
                } else {
                    // harmonic mean 2 (D_i^{-1} + D_j^{-1})^{-1}, one Cholesky per pair
                    const Mat<D> hm =
                        2.0 * (model.tensors[i].inverse() + model.tensors[e.j].inverse()).inverse();
                    const Vec<D> me = invert_lower_triangular(cholesky_lower<D>(hm)) * e.e0;
                    kappa = 1.0 / me.squaredNorm();
                }
                double c = 1.0;
                if (correction) {
                    const Mat<D> bbar = 0.5 * ((*correction)[i] + (*correction)[e.j]);
                    c = e.e0.dot(bbar * e.e0);
                }
                coeff_[at++] = 2.0 / C_m * set.volume[e.j] * c * kappa * e.dwdr / e.dist;
            }
        }
    }

    void rate(std::span<const double> phi, std::span<double> dphi_dt) const {
        const std::size_t n = nl_->size();
#pragma omp parallel for schedule(static)
        for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
            const std::size_t i = static_cast<std::size_t>(ii);
            double acc = 0.0;
            std::size_t at = nl_->entry_offset(i);
            for (const auto& e : nl_->neighbors(i))
                acc += coeff_[at++] * (phi[i] - phi[e.j]);
            dphi_dt[i] = acc;
        }
    }

    std::vector<double> rate(std::span<const double> phi) const {
        std::vector<double> out(nl_->size());
        rate(phi, out);
        return out;
    }

  private:
    const NeighborList<D>* nl_;
    std::vector<double> coeff_;
};

/// Convenience wrapper matching the operator contract as a single call.
template <int D>
std::vector<double> diffusion_rate(std::span<const double> phi, const ParticleSet<D>& set,
                                   const NeighborList<D>& nl, const ConductivityModel<D>& model,
                                   const std::vector<Mat<D>>* correction = nullptr,
                                   PairConductivity variant = PairConductivity::mean_inverse_factor,
                                   double C_m = 1.0) {
    return DiffusionOperator<D>(set, nl, model, correction, variant, C_m).rate(phi);
}

} // namespace csph
