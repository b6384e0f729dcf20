#include <doctest.h>

#include "rndkit/simd/kernels.hpp"

#include <cmath>
#include <random>
#include <vector>

using namespace rndkit;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

}  // namespace

TEST_CASE("dispatch reports a usable table") {
    const auto& t = simd::active();
    CHECK(t.exp_inplace != nullptr);
    CHECK_FALSE(simd::isa_name(t.isa).empty());
    if (t.isa == simd::Isa::Avx2) CHECK(simd::cpu_supports(simd::Isa::Avx2));
}

TEST_CASE("avx2 kernels agree with the scalar reference") {
    const simd::KernelTable* avx = simd::avx2_kernels();
    if (avx == nullptr || !simd::cpu_supports(simd::Isa::Avx2)) {
        MESSAGE("AVX2 variant unavailable; skipping equivalence");
        return;
    }
    const auto& ref = simd::scalar_kernels();
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(-750.0, 710.0);

    SUBCASE("exp") {
        for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 64u, 1001u}) {
            std::vector<double> a(n);
            for (auto& x : a) x = u(rng);
            if (n > 2) {
                a[0] = -708.5;
                a[1] = 0.0;
                a[2] = 709.7;
            }
            std::vector<double> b = a;
            ref.exp_inplace(a);
            avx->exp_inplace(b);
            for (std::size_t i = 0; i < n; ++i) {
                if (a[i] == 0.0) {
                    CHECK(b[i] == 0.0);
                } else {
                    CHECK(rel(a[i], b[i]) < 4e-16);
                }
            }
        }
    }
    SUBCASE("kde") {
        std::normal_distribution<double> z(100.0, 15.0);
        for (std::size_t n : {1u, 5u, 1000u, 10007u}) {
            std::vector<double> samples(n);
            for (auto& x : samples) x = z(rng);
            std::vector<double> grid;
            for (int g = 0; g < 37; ++g) grid.push_back(40.0 + 3.3 * g);
            std::vector<double> a(grid.size());
            std::vector<double> b(grid.size());
            ref.gaussian_kde(samples, grid, 2.5, a);
            avx->gaussian_kde(samples, grid, 2.5, b);
            for (std::size_t g = 0; g < grid.size(); ++g) CHECK(std::abs(a[g] - b[g]) <= 1e-13 * std::max(a[g], 1e-3));
        }
    }
    SUBCASE("local polynomial moments") {
        for (int degree : {1, 2, 4, 8}) {
            for (std::size_t n : {3u, 8u, 51u, 333u}) {
                std::vector<double> x(n);
                std::vector<double> y(n);
                for (std::size_t i = 0; i < n; ++i) {
                    x[i] = 50.0 + 100.0 * static_cast<double>(i) / static_cast<double>(n);
                    y[i] = std::max(100.0 - x[i], 0.0) + std::sin(x[i]);
                }
                std::vector<double> sa(2 * degree + 1);
                std::vector<double> sb(2 * degree + 1);
                std::vector<double> ta(degree + 1);
                std::vector<double> tb(degree + 1);
                ref.local_poly_moments(x, y, 97.3, 6.0, degree, sa, ta);
                avx->local_poly_moments(x, y, 97.3, 6.0, degree, sb, tb);
                double scale_s = 0.0;
                double scale_t = 0.0;
                for (double v : sa) scale_s = std::max(scale_s, std::abs(v));
                for (double v : ta) scale_t = std::max(scale_t, std::abs(v));
                for (std::size_t p = 0; p < sa.size(); ++p) CHECK(std::abs(sa[p] - sb[p]) <= 1e-12 * scale_s);
                for (std::size_t p = 0; p < ta.size(); ++p) CHECK(std::abs(ta[p] - tb[p]) <= 1e-12 * scale_t);
            }
        }
    }
}

TEST_CASE("scalar exp flushes deep negatives") {
    std::vector<double> v{-800.0, -708.0, 0.0, 1.0};
    simd::scalar_kernels().exp_inplace(v);
    CHECK(v[0] == 0.0);
    CHECK(v[1] > 0.0);
    CHECK(v[2] == 1.0);
    CHECK(v[3] == doctest::Approx(std::exp(1.0)));
}
