#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>

namespace ccbf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

namespace detail {

/// Largest singular value by power iteration on AᵀA. Deterministic start.
inline double power_iteration_norm(const Mat& a) {
    const Mat ata = a.transpose() * a;
    Vec x = Vec::Ones(ata.rows());
    x.normalize();
    double lambda = 0.0;
    for (int it = 0; it < 200; ++it) {
        Vec y = ata * x;
        const double norm = y.norm();
        if (norm == 0.0) return 0.0;
        y /= norm;
        const double next = y.dot(ata * y);
        if (std::abs(next - lambda) <= 1e-14 * std::max(1.0, std::abs(next)) && it > 2) {
            lambda = next;
            break;
        }
        lambda = next;
        x = y;
    }
    return std::sqrt(std::max(0.0, lambda));
}

}  // namespace detail

/// Spectral norm (largest singular value). Closed form up to 2x2, power
/// iteration for larger sizes.
inline double spectral_norm(const Mat& a) {
    if (a.size() == 0) return 0.0;
    if (a.rows() == 1 && a.cols() == 1) return std::abs(a(0, 0));
    if (a.rows() == 1 || a.cols() == 1) return a.norm();
    if (a.rows() == 2 && a.cols() == 2) {
        // sigma_max^2 = (f + sqrt(f^2 - 4 d^2)) / 2 with f = |A|_F^2, d = det A
        const double f = a.squaredNorm();
        const double d = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
        const double disc = std::max(0.0, f * f - 4.0 * d * d);
        return std::sqrt(0.5 * (f + std::sqrt(disc)));
    }
    return detail::power_iteration_norm(a);
}

/// Smallest eigenvalue of a symmetric matrix. Closed form up to 2x2, else
/// solver-based (offline checks only, not on hot paths).
inline double min_symmetric_eigenvalue(const Mat& a) {
    if (a.rows() == 1) return a(0, 0);
    if (a.rows() == 2) {
        const double tr = a(0, 0) + a(1, 1);
        const double det = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
        const double disc = std::sqrt(std::max(0.0, 0.25 * tr * tr - det));
        return 0.5 * tr - disc;
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(a, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

inline bool is_symmetric(const Mat& a, double tol = 1e-12) {
    return (a - a.transpose()).cwiseAbs().maxCoeff() <= tol * std::max(1.0, a.cwiseAbs().maxCoeff());
}

}  // namespace ccbf
