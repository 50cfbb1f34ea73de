#pragma once

#include <cstddef>

// Dense inner-loop kernels used by the tensor engine. Every kernel has a
// scalar reference implementation and (on x86-64) an AVX2/FMA variant; the
// backend is chosen once at startup from CPUID, overridable via the
// BIALIGN_KERNELS environment variable ("scalar", "avx2", "auto") or
// kernels::force(). SIMD variants may reassociate reductions, so results can
// differ from scalar by rounding; equivalence tests bound that difference.
namespace bialign::kernels {

enum class Backend { scalar, avx2 };

bool cpu_has_avx2();
Backend active();
void force(Backend b);
const char* backend_name(Backend b);

template <class Real>
struct Table {
    Real (*dot)(const Real* x, const Real* y, std::size_t n);
    void (*axpy)(Real a, const Real* x, Real* y, std::size_t n); // y += a*x
    void (*add)(const Real* x, const Real* y, Real* out, std::size_t n);
    void (*sub)(const Real* x, const Real* y, Real* out, std::size_t n);
    void (*mul)(const Real* x, const Real* y, Real* out, std::size_t n);
    void (*scale)(Real a, const Real* x, Real* out, std::size_t n); // out = a*x
    Real (*reduce_sum)(const Real* x, std::size_t n);
    Real (*reduce_max)(const Real* x, std::size_t n); // n >= 1
    // C[m,n] = A[m,k] * B[n,k]^T  (rows of both operands are contiguous)
    void (*matmul_nt)(const Real* a, const Real* b, Real* c,
                      std::size_t m, std::size_t n, std::size_t k);
    // dA[m,k] += dC[m,n] * B[n,k]
    void (*matmul_acc_nn)(const Real* dc, const Real* b, Real* da,
                          std::size_t m, std::size_t n, std::size_t k);
    // dB[n,k] += dC[m,n]^T * A[m,k]
    void (*matmul_acc_tn)(const Real* dc, const Real* a, Real* db,
                          std::size_t m, std::size_t n, std::size_t k);
};

// Active dispatch table for the given precision.
template <class Real>
const Table<Real>& table();

// Backend-specific tables, exposed for equivalence testing.
template <class Real>
const Table<Real>& table_for(Backend b);

} // namespace bialign::kernels
