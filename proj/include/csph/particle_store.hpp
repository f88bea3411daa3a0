#pragma once

#include "csph/math_kernels.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace csph {

/// Reference-configuration particle data. Masses satisfy m_i = rho0_i * V_i.
template <int D>
struct ParticleSet {
    std::vector<Vec<D>> r0;
    std::vector<double> volume;
    std::vector<double> mass;
    std::vector<double> rho0;

    std::size_t size() const { return r0.size(); }

    void push_back(const Vec<D>& pos, double vol, double density) {
        r0.push_back(pos);
        volume.push_back(vol);
        rho0.push_back(density);
        mass.push_back(density * vol);
    }
};

/// Cell-centered lattice fill of [lo, hi], keeping points where keep(x) is true.
/// Particle volumes are dp^D.
template <int D, class Pred>
ParticleSet<D> make_lattice_region(const Vec<D>& lo, const Vec<D>& hi, double dp,
                                   double rho0, Pred&& keep) {
    if (!(dp > 0.0))
        throw std::invalid_argument("make_lattice_region: dp must be positive");
    std::array<int, D> counts{};
    for (int a = 0; a < D; ++a) {
        counts[a] = static_cast<int>(std::floor((hi[a] - lo[a]) / dp + 0.5));
        if (counts[a] < 1)
            counts[a] = 0;
    }
    double vol = 1.0;
    for (int a = 0; a < D; ++a)
        vol *= dp;

    ParticleSet<D> set;
    std::array<int, D> idx{};
    bool done = false;
    for (int a = 0; a < D; ++a)
        if (counts[a] == 0)
            done = true;
    while (!done) {
        Vec<D> x;
        for (int a = 0; a < D; ++a)
            x[a] = lo[a] + (idx[a] + 0.5) * dp;
        if (keep(x))
            set.push_back(x, vol, rho0);
        // odometer increment, x fastest
        int a = 0;
        for (; a < D; ++a) {
            if (++idx[a] < counts[a])
                break;
            idx[a] = 0;
        }
        if (a == D)
            done = true;
    }
    return set;
}

template <int D>
ParticleSet<D> make_lattice_block(const Vec<D>& lo, const Vec<D>& hi, double dp,
                                  double rho0 = 1.0) {
    return make_lattice_region<D>(lo, hi, dp, rho0, [](const Vec<D>&) { return true; });
}

/// Fixed neighbor lists built once on the reference configuration with cutoff 2h.
/// Entries cache the pair distance, the unit vector e0 = (r0_i - r0_j)/|r0_ij| and
/// dW/dr, so that grad0_i W_ij = dwdr * e0.
template <int D>
class NeighborList {
  public:
    struct Entry {
        std::uint32_t j;
        double dist;
        Vec<D> e0;
        double dwdr;
    };

    std::size_t size() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
    std::size_t pair_entry_count() const { return entries_.size(); }

    std::span<const Entry> neighbors(std::size_t i) const {
        return {entries_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
    }

    /// Flat index of the k-th entry of particle i (for per-pair coefficient arrays).
    std::size_t entry_offset(std::size_t i) const { return offsets_[i]; }

    template <int E>
    friend NeighborList<E> build_neighbor_lists(const ParticleSet<E>&, const SmoothingKernel<E>&);

  private:
    std::vector<std::size_t> offsets_;
    std::vector<Entry> entries_;
};

namespace detail {

template <int D>
struct CellGrid {
    Vec<D> lo;
    double cell;
    std::array<int, D> dims{};
    std::vector<std::vector<std::uint32_t>> cells;

    explicit CellGrid(const ParticleSet<D>& set, double cutoff) : cell(cutoff) {
        Vec<D> hi;
        lo = hi = set.r0.empty() ? Vec<D>::Zero().eval() : set.r0[0];
        for (const auto& x : set.r0) {
            lo = lo.cwiseMin(x);
            hi = hi.cwiseMax(x);
        }
        std::size_t total = 1;
        for (int a = 0; a < D; ++a) {
            dims[a] = set.r0.empty() ? 1 : static_cast<int>((hi[a] - lo[a]) / cell) + 1;
            total *= dims[a];
        }
        cells.resize(total);
        for (std::uint32_t i = 0; i < set.r0.size(); ++i)
            cells[flat(coords(set.r0[i]))].push_back(i);
    }

    std::array<int, D> coords(const Vec<D>& x) const {
        std::array<int, D> c{};
        for (int a = 0; a < D; ++a) {
            int v = static_cast<int>((x[a] - lo[a]) / cell);
            c[a] = std::min(std::max(v, 0), dims[a] - 1);
        }
        return c;
    }

    std::size_t flat(const std::array<int, D>& c) const {
        std::size_t f = 0;
        for (int a = D - 1; a >= 0; --a)
            f = f * dims[a] + c[a];
        return f;
    }

    template <class Fn>
    void for_nearby(const Vec<D>& x, Fn&& fn) const {
        const auto c = coords(x);
        std::array<int, D> n{};
        // fixed lexicographic sweep over the 3^D neighborhood for determinism
        std::array<int, D> off{};
        off.fill(-1);
        while (true) {
            bool ok = true;
            for (int a = 0; a < D; ++a) {
                n[a] = c[a] + off[a];
                if (n[a] < 0 || n[a] >= dims[a])
                    ok = false;
            }
            if (ok)
                for (std::uint32_t id : cells[flat(n)])
                    fn(id);
            int a = 0;
            for (; a < D; ++a) {
                if (++off[a] <= 1)
                    break;
                off[a] = -1;
            }
            if (a == D)
                break;
        }
    }
};

} // namespace detail

/// Builds the fixed neighbor lists with strict cutoff |r0_ij| < 2h, self excluded.
/// Pairs are enumerated cell-then-id so repeated builds are bitwise reproducible.
template <int D>
NeighborList<D> build_neighbor_lists(const ParticleSet<D>& set, const SmoothingKernel<D>& kernel) {
    const std::size_t n = set.size();
    for (std::size_t i = 0; i < n; ++i)
        if (!set.r0[i].allFinite())
            throw std::invalid_argument("build_neighbor_lists: non-finite position for particle " +
                                        std::to_string(i));

    NeighborList<D> nl;
    nl.offsets_.assign(n + 1, 0);
    if (n == 0)
        return nl;

    const double cutoff = kernel.cutoff();
    const detail::CellGrid<D> grid(set, cutoff);
    const double cut2 = cutoff * cutoff;

    std::vector<std::size_t> counts(n, 0);
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        std::size_t c = 0;
        grid.for_nearby(set.r0[i], [&](std::uint32_t j) {
            if (j != i && (set.r0[i] - set.r0[j]).squaredNorm() < cut2)
                ++c;
        });
        counts[i] = c;
    }
    for (std::size_t i = 0; i < n; ++i)
        nl.offsets_[i + 1] = nl.offsets_[i] + counts[i];
    nl.entries_.resize(nl.offsets_[n]);

#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        std::size_t at = nl.offsets_[i];
        grid.for_nearby(set.r0[i], [&](std::uint32_t j) {
            if (j == i)
                return;
            const Vec<D> d = set.r0[i] - set.r0[j];
            const double r2 = d.squaredNorm();
            if (r2 >= cut2)
                return;
            const double r = std::sqrt(r2);
            typename NeighborList<D>::Entry e;
            e.j = j;
            e.dist = r;
            e.e0 = r > 0.0 ? (d / r).eval() : Vec<D>::Zero().eval();
            e.dwdr = kernel.grad(r);
            nl.entries_[at++] = e;
        });
    }
    return nl;
}

/// Correction matrices B0_i = [sum_j V_j (r0_j - r0_i) (x) grad0_i W_ij]^{-1},
/// computed once on the reference configuration.
/// Throws when the kernel moment matrix of a particle is singular.
template <int D>
std::vector<Mat<D>> compute_correction_matrices(const ParticleSet<D>& set,
                                                const NeighborList<D>& nl) {
    const std::size_t n = set.size();
    std::vector<Mat<D>> b0(n);
    long long bad = -1;
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        Mat<D> moment = Mat<D>::Zero();
        for (const auto& e : nl.neighbors(i)) {
            const Vec<D> rji = -e.dist * e.e0;     // r0_j - r0_i
            const Vec<D> gradw = e.dwdr * e.e0;
            moment += set.volume[e.j] * rji * gradw.transpose();
        }
        Eigen::FullPivLU<Mat<D>> lu(moment);
        if (!lu.isInvertible()) {
#pragma omp critical
            {
                if (bad < 0 || ii < bad)
                    bad = ii;
            }
        } else {
            b0[i] = lu.inverse();
        }
    }
    if (bad >= 0)
        throw std::runtime_error("compute_correction_matrices: singular kernel moment matrix for "
                                 "particle " + std::to_string(bad) +
                                 " (isolated particle or degenerate neighborhood)");
    return b0;
}

} // namespace csph
