#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace csph {

template <int D> using Vec = Eigen::Matrix<double, D, 1>;
template <int D> using Mat = Eigen::Matrix<double, D, D>;

using Vec1 = Vec<1>;
using Vec2 = Vec<2>;
using Vec3 = Vec<3>;
using Mat1 = Mat<1>;
using Mat2 = Mat<2>;
using Mat3 = Mat<3>;

/// Wendland C2 smoothing kernel with compact support radius 2h.
///
/// W(r) = sigma_d (1 - q/2)^4 (2q + 1) for q = r/h in [0, 2], zero beyond.
/// The normalization constants are the standard Wendland values
/// sigma_1 = 3/(4h), sigma_2 = 7/(4 pi h^2), sigma_3 = 21/(16 pi h^3).
template <int D>
class SmoothingKernel {
    static_assert(D >= 1 && D <= 3, "SmoothingKernel supports d = 1, 2, 3");

  public:
    explicit SmoothingKernel(double dp, double h_factor = 1.3)
        : dp_(dp), h_(h_factor * dp) {
        if (!(dp > 0.0))
            throw std::invalid_argument("SmoothingKernel: dp must be positive");
        if constexpr (D == 1)
            sigma_ = 3.0 / (4.0 * h_);
        else if constexpr (D == 2)
            sigma_ = 7.0 / (4.0 * std::numbers::pi * h_ * h_);
        else
            sigma_ = 21.0 / (16.0 * std::numbers::pi * h_ * h_ * h_);
    }

    double dp() const { return dp_; }
    double h() const { return h_; }
    double cutoff() const { return 2.0 * h_; }

    double value(double r) const {
        check_radius(r);
        const double q = r / h_;
        if (q >= 2.0)
            return 0.0;
        const double t = 1.0 - 0.5 * q;
        const double t2 = t * t;
        return sigma_ * t2 * t2 * (2.0 * q + 1.0);
    }

    // dW/dr = -5 sigma_d q (1 - q/2)^3 / h; zero at r = 0 and r >= 2h.
    double grad(double r) const {
        check_radius(r);
        const double q = r / h_;
        if (q >= 2.0)
            return 0.0;
        const double t = 1.0 - 0.5 * q;
        return -5.0 * sigma_ * q * t * t * t / h_;
    }

  private:
    static void check_radius(double r) {
        if (!(r >= 0.0))
            throw std::invalid_argument("SmoothingKernel: radius must be non-negative");
    }

    double dp_;
    double h_;
    double sigma_;
};

/// Lower-triangular Cholesky factor L with A = L L^T.
/// Throws std::runtime_error on a non-positive pivot (A not SPD).
template <int D>
Mat<D> cholesky_lower(const Mat<D>& A) {
    Mat<D> L = Mat<D>::Zero();
    for (int j = 0; j < D; ++j) {
        double diag = A(j, j);
        for (int k = 0; k < j; ++k)
            diag -= L(j, k) * L(j, k);
        if (!(diag > 0.0))
            throw std::runtime_error("cholesky_lower: non-positive pivot at row " +
                                     std::to_string(j) + ", matrix is not SPD");
        L(j, j) = std::sqrt(diag);
        for (int i = j + 1; i < D; ++i) {
            double s = A(i, j);
            for (int k = 0; k < j; ++k)
                s -= L(i, k) * L(j, k);
            L(i, j) = s / L(j, j);
        }
    }
    return L;
}

/// Inverse of a lower-triangular matrix by forward substitution.
/// Throws std::runtime_error when a diagonal entry vanishes.
template <int D>
Mat<D> invert_lower_triangular(const Mat<D>& L) {
    for (int j = 0; j < D; ++j)
        if (L(j, j) == 0.0)
            throw std::runtime_error("invert_lower_triangular: zero diagonal entry at row " +
                                     std::to_string(j));
    Mat<D> inv = Mat<D>::Zero();
    for (int col = 0; col < D; ++col) {
        for (int i = col; i < D; ++i) {
            double s = (i == col) ? 1.0 : 0.0;
            for (int k = col; k < i; ++k)
                s -= L(i, k) * inv(k, col);
            inv(i, col) = s / L(i, i);
        }
    }
    return inv;
}

/// Von Mises equivalent stress of a symmetric Cauchy stress tensor.
/// Deviatoric norm scaled so that a uniaxial state with axial stress s maps
/// to |s| and any hydrostatic state maps to zero; degenerate in 1d.
template <int D>
double von_mises(const Mat<D>& sigma) {
    if constexpr (D == 1) {
        return 0.0;
    } else {
        const double mean = sigma.trace() / D;
        const Mat<D> dev = sigma - mean * Mat<D>::Identity();
        const double s2 = dev.squaredNorm();
        return std::sqrt(std::max(0.0, static_cast<double>(D) / (D - 1) * s2));
    }
}

} // namespace csph
