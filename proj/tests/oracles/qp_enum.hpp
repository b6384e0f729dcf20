#pragma once

// Exhaustive active-set enumeration for min ||c - C||^2 s.t. A c >= b.
// Every subset of rows is tried as an equality set; the projection onto
// each consistent affine set is kept when feasible.

#include <Eigen/Dense>

#include <cstdint>
#include <limits>

namespace oracle {

struct EnumResult {
    Eigen::VectorXd x;
    double objective = std::numeric_limits<double>::infinity();
};

inline EnumResult enumerate_active_sets(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& c,
                                        double feas_tol = 1e-10) {
    const auto m = a.rows();
    EnumResult best;
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << m); ++mask) {
        Eigen::Index k = 0;
        for (Eigen::Index j = 0; j < m; ++j) k += (mask >> j) & 1U;
        Eigen::MatrixXd as(k, a.cols());
        Eigen::VectorXd bs(k);
        Eigen::Index r = 0;
        for (Eigen::Index j = 0; j < m; ++j) {
            if ((mask >> j) & 1U) {
                as.row(r) = a.row(j);
                bs[r] = b[j];
                ++r;
            }
        }
        Eigen::VectorXd x = c;
        if (k > 0) {
            // x = c + A_s' y with A_s A_s' y = b_s - A_s c (minimum-norm move)
            const Eigen::MatrixXd gram = as * as.transpose();
            const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(gram);
            const Eigen::VectorXd y = cod.solve(bs - as * c);
            x = c + as.transpose() * y;
            if ((as * x - bs).lpNorm<Eigen::Infinity>() > 1e-9) continue;  // inconsistent set
        }
        if (((a * x - b).array() < -feas_tol).any()) continue;
        const double obj = (x - c).squaredNorm();
        if (obj < best.objective) {
            best.objective = obj;
            best.x = x;
        }
    }
    return best;
}

}  // namespace oracle
