#include "rndkit/simd/kernels.hpp"

#include <immintrin.h>

#include <array>
#include <cmath>
#include <numbers>

namespace rndkit::simd {

namespace {

// exp on four doubles: x = n ln2 + r with |r| <= ln2/2, e^r by a degree-13
// Taylor polynomial (truncation < 2e-16 relative), 2^n by exponent injection.
inline __m256d pow2i(__m256d n) {
    const __m128i n32 = _mm256_cvtpd_epi32(n);
    const __m256i n64 = _mm256_cvtepi32_epi64(n32);
    const __m256i bits = _mm256_slli_epi64(_mm256_add_epi64(n64, _mm256_set1_epi64x(1023)), 52);
    return _mm256_castsi256_pd(bits);
}

inline __m256d exp4(__m256d x) {
    const double overflow_at = 709.782712893384;
    const __m256d underflow = _mm256_cmp_pd(x, _mm256_set1_pd(-708.0), _CMP_LT_OQ);
    const __m256d overflow = _mm256_cmp_pd(x, _mm256_set1_pd(overflow_at), _CMP_GT_OQ);
    x = _mm256_max_pd(x, _mm256_set1_pd(-708.0));
    x = _mm256_min_pd(x, _mm256_set1_pd(overflow_at));

    const __m256d n = _mm256_round_pd(_mm256_mul_pd(x, _mm256_set1_pd(std::numbers::log2e)),
                                      _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    // Cody-Waite split of ln 2
    __m256d r = _mm256_fnmadd_pd(n, _mm256_set1_pd(6.93147180369123816490e-01), x);
    r = _mm256_fnmadd_pd(n, _mm256_set1_pd(1.90821492927058770002e-10), r);

    static constexpr std::array<double, 14> c = {
        1.0,
        1.0,
        1.0 / 2,
        1.0 / 6,
        1.0 / 24,
        1.0 / 120,
        1.0 / 720,
        1.0 / 5040,
        1.0 / 40320,
        1.0 / 362880,
        1.0 / 3628800,
        1.0 / 39916800,
        1.0 / 479001600,
        1.0 / 6227020800.0,
    };
    __m256d p = _mm256_set1_pd(c[13]);
    for (int k = 12; k >= 0; --k) p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(c[k]));

    // 2^n in two factors so n = 1024 does not overflow the exponent field
    const __m256d n1 = _mm256_floor_pd(_mm256_mul_pd(n, _mm256_set1_pd(0.5)));
    const __m256d n2 = _mm256_sub_pd(n, n1);
    const __m256d y = _mm256_mul_pd(_mm256_mul_pd(p, pow2i(n1)), pow2i(n2));
    const __m256d capped = _mm256_blendv_pd(y, _mm256_set1_pd(HUGE_VAL), overflow);
    return _mm256_blendv_pd(capped, _mm256_setzero_pd(), underflow);
}

inline double hsum(__m256d v) {
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, v);
    return (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
}

void exp_avx2(std::span<double> v) {
    std::size_t i = 0;
    for (; i + 4 <= v.size(); i += 4) {
        _mm256_storeu_pd(v.data() + i, exp4(_mm256_loadu_pd(v.data() + i)));
    }
    for (; i < v.size(); ++i) v[i] = v[i] < -708.0 ? 0.0 : std::exp(v[i]);
}

void kde_avx2(std::span<const double> samples, std::span<const double> grid, double h, std::span<double> out) {
    const double inv_h = 1.0 / h;
    const double norm = inv_h / (static_cast<double>(samples.size()) * std::sqrt(2.0 * std::numbers::pi));
    const __m256d vinv = _mm256_set1_pd(inv_h);
    const __m256d mhalf = _mm256_set1_pd(-0.5);
    const std::size_t n = samples.size();
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const __m256d c = _mm256_set1_pd(grid[g]);
        __m256d acc = _mm256_setzero_pd();
        std::size_t i = 0;
        for (; i + 4 <= n; i += 4) {
            const __m256d u = _mm256_mul_pd(_mm256_sub_pd(c, _mm256_loadu_pd(samples.data() + i)), vinv);
            acc = _mm256_add_pd(acc, exp4(_mm256_mul_pd(mhalf, _mm256_mul_pd(u, u))));
        }
        double total = hsum(acc);
        for (; i < n; ++i) {
            const double u = (grid[g] - samples[i]) * inv_h;
            const double e = -0.5 * u * u;
            if (e >= -708.0) total += std::exp(e);
        }
        out[g] = total * norm;
    }
}

void moments_avx2(std::span<const double> x, std::span<const double> y, double center, double h, int degree,
                  std::span<double> s, std::span<double> t) {
    constexpr int kMaxPow = 17;
    const int ns = 2 * degree + 1;
    __m256d vs[kMaxPow];
    __m256d vt[kMaxPow];
    for (int p = 0; p < ns; ++p) vs[p] = _mm256_setzero_pd();
    for (int p = 0; p <= degree; ++p) vt[p] = _mm256_setzero_pd();
    const double inv_h = 1.0 / h;
    const __m256d vc = _mm256_set1_pd(center);
    const __m256d vinv = _mm256_set1_pd(inv_h);
    const __m256d mhalf = _mm256_set1_pd(-0.5);
    const std::size_t n = x.size();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d u = _mm256_mul_pd(_mm256_sub_pd(_mm256_loadu_pd(x.data() + i), vc), vinv);
        const __m256d yv = _mm256_loadu_pd(y.data() + i);
        __m256d w = exp4(_mm256_mul_pd(mhalf, _mm256_mul_pd(u, u)));
        for (int p = 0; p < ns; ++p) {
            vs[p] = _mm256_add_pd(vs[p], w);
            if (p <= degree) vt[p] = _mm256_fmadd_pd(w, yv, vt[p]);
            w = _mm256_mul_pd(w, u);
        }
    }
    for (int p = 0; p < ns; ++p) s[p] = hsum(vs[p]);
    for (int p = 0; p <= degree; ++p) t[p] = hsum(vt[p]);
    for (; i < n; ++i) {
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

const KernelTable* avx2_kernels() {
    static const KernelTable table{Isa::Avx2, exp_avx2, kde_avx2, moments_avx2};
    return &table;
}

}  // namespace rndkit::simd
