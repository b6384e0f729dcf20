#pragma once

// Data-parallel inner loops used by the density estimators. Each kernel has a
// scalar reference implementation and, on x86-64, an AVX2+FMA variant; the
// variant is picked once at runtime from CPUID (override with RND_SIMD=scalar
// or RND_SIMD=avx2). Both variants must agree to rounding.

#include <span>
#include <string_view>

namespace rndkit::simd {

enum class Isa { Scalar, Avx2 };

struct KernelTable {
    Isa isa;
    void (*exp_inplace)(std::span<double> values);
    void (*gaussian_kde)(std::span<const double> samples, std::span<const double> grid, double bandwidth,
                         std::span<double> out);
    void (*local_poly_moments)(std::span<const double> x, std::span<const double> y, double center,
                               double bandwidth, int degree, std::span<double> s, std::span<double> t);
};

const KernelTable& scalar_kernels();
/// nullptr when the AVX2 variant was not compiled in.
const KernelTable* avx2_kernels();

bool cpu_supports(Isa isa);
/// Table selected for this process.
const KernelTable& active();
std::string_view isa_name(Isa isa);

/// values[i] <- exp(values[i]); inputs below -708 flush to 0.
inline void exp_inplace(std::span<double> values) { active().exp_inplace(values); }

/// out[g] = 1/(n h sqrt(2 pi)) * sum_i exp(-((grid[g] - samples[i]) / h)^2 / 2)
inline void gaussian_kde(std::span<const double> samples, std::span<const double> grid, double bandwidth,
                         std::span<double> out) {
    active().gaussian_kde(samples, grid, bandwidth, out);
}

/// Gaussian-weighted power sums for a local polynomial fit at `center`.
/// With u_i = (x_i - center) / h and w_i = exp(-u_i^2 / 2):
///   s[p] = sum_i w_i u_i^p      for p = 0 .. 2*degree
///   t[p] = sum_i w_i u_i^p y_i  for p = 0 .. degree
inline void local_poly_moments(std::span<const double> x, std::span<const double> y, double center,
                               double bandwidth, int degree, std::span<double> s, std::span<double> t) {
    active().local_poly_moments(x, y, center, bandwidth, degree, s, t);
}

}  // namespace rndkit::simd
