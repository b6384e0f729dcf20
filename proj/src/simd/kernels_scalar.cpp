#include "rndkit/simd/kernels.hpp"

#include <cmath>
#include <numbers>

namespace rndkit::simd {

namespace {

void exp_scalar(std::span<double> v) {
    for (double& x : v) x = x < -708.0 ? 0.0 : std::exp(x);
}

void kde_scalar(std::span<const double> samples, std::span<const double> grid, double h, std::span<double> out) {
    const double inv_h = 1.0 / h;
    const double norm = inv_h / (static_cast<double>(samples.size()) * std::sqrt(2.0 * std::numbers::pi));
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double acc = 0.0;
        for (double x : samples) {
            const double u = (grid[g] - x) * inv_h;
            const double e = -0.5 * u * u;
            if (e >= -708.0) acc += std::exp(e);
        }
        out[g] = acc * norm;
    }
}

void moments_scalar(std::span<const double> x, std::span<const double> y, double center, double h, int degree,
                    std::span<double> s, std::span<double> t) {
    const int ns = 2 * degree + 1;
    for (int p = 0; p < ns; ++p) s[p] = 0.0;
    for (int p = 0; p <= degree; ++p) t[p] = 0.0;
    const double inv_h = 1.0 / h;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double u = (x[i] - center) * inv_h;
        const double e = -0.5 * u * u;
        if (e < -708.0) continue;
        double w = std::exp(e);
        for (int p = 0; p < ns; ++p) {
            s[p] += w;
            if (p <= degree) t[p] += w * y[i];
            w *= u;
        }
    }
}

}  // namespace

const KernelTable& scalar_kernels() {
    static const KernelTable table{Isa::Scalar, exp_scalar, kde_scalar, moments_scalar};
    return table;
}

}  // namespace rndkit::simd
