#include "rndkit/simd/kernels.hpp"

#include <cstdlib>
#include <string>

namespace rndkit::simd {

bool cpu_supports(Isa isa) {
    switch (isa) {
        case Isa::Scalar:
            return true;
        case Isa::Avx2:
#if defined(__x86_64__) || defined(_M_X64)
            return avx2_kernels() != nullptr && __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
            return false;
#endif
    }
    return false;
}

std::string_view isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

namespace {

const KernelTable& select() {
    const char* env = std::getenv("RND_SIMD");
    const std::string want = env ? env : "";
    if (want == "scalar") return scalar_kernels();
    if (cpu_supports(Isa::Avx2)) return *avx2_kernels();
    return scalar_kernels();
}

}  // namespace

const KernelTable& active() {
    static const KernelTable& table = select();
    return table;
}

#if !defined(RNDKIT_HAVE_AVX2)
const KernelTable* avx2_kernels() { return nullptr; }
#endif

}  // namespace rndkit::simd
