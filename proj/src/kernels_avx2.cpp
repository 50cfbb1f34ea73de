#include "bialign/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define BIALIGN_X86 1
#include <immintrin.h>
#else
#define BIALIGN_X86 0
#endif

// AVX2/FMA kernels. This translation unit is compiled with -mavx2 -mfma;
// nothing here runs unless CPUID reports AVX2 (see kernels.cpp).

namespace bialign::kernels {

#if BIALIGN_X86

namespace avx2 {

static inline float hsum256(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_add_ss(lo, _mm_movehdup_ps(lo));
    return _mm_cvtss_f32(lo);
}

static inline double hsum256d(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    lo = _mm_add_sd(lo, _mm_unpackhi_pd(lo, lo));
    return _mm_cvtsd_f64(lo);
}

static float dot_f32(const float* x, const float* y, std::size_t n) {
    __m256 acc0 = _mm256_setzero_ps();
    __m256 acc1 = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), acc1);
    }
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
    }
    float s = hsum256(_mm256_add_ps(acc0, acc1));
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

static double dot_f64(const double* x, const double* y, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    }
    double s = hsum256d(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

static void axpy_f32(float a, const float* x, float* y, std::size_t n) {
    const __m256 va = _mm256_set1_ps(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vy = _mm256_loadu_ps(y + i);
        vy = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy);
        _mm256_storeu_ps(y + i, vy);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

static void axpy_f64(double a, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

static void add_f32(const float* x, const float* y, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) out[i] = x[i] + y[i];
}

static void add_f64(const double* x, const double* y, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) out[i] = x[i] + y[i];
}

static void sub_f32(const float* x, const float* y, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) out[i] = x[i] - y[i];
}

static void sub_f64(const double* x, const double* y, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) out[i] = x[i] - y[i];
}

static void mul_f32(const float* x, const float* y, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) out[i] = x[i] * y[i];
}

static void mul_f64(const double* x, const double* y, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) out[i] = x[i] * y[i];
}

static void scale_f32(float a, const float* x, float* out, std::size_t n) {
    const __m256 va = _mm256_set1_ps(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) out[i] = a * x[i];
}

static void scale_f64(double a, const double* x, double* out, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) out[i] = a * x[i];
}

static float reduce_sum_f32(const float* x, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    float s = hsum256(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

static double reduce_sum_f64(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = hsum256d(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

static float reduce_max_f32(const float* x, std::size_t n) {
    float m = x[0];
    std::size_t i = 0;
    if (n >= 8) {
        __m256 vm = _mm256_loadu_ps(x);
        for (i = 8; i + 8 <= n; i += 8) vm = _mm256_max_ps(vm, _mm256_loadu_ps(x + i));
        __m128 lo = _mm_max_ps(_mm256_castps256_ps128(vm), _mm256_extractf128_ps(vm, 1));
        lo = _mm_max_ps(lo, _mm_movehl_ps(lo, lo));
        lo = _mm_max_ss(lo, _mm_movehdup_ps(lo));
        m = _mm_cvtss_f32(lo);
    }
    for (; i < n; ++i)
        if (x[i] > m) m = x[i];
    return m;
}

static double reduce_max_f64(const double* x, std::size_t n) {
    double m = x[0];
    std::size_t i = 0;
    if (n >= 4) {
        __m256d vm = _mm256_loadu_pd(x);
        for (i = 4; i + 4 <= n; i += 4) vm = _mm256_max_pd(vm, _mm256_loadu_pd(x + i));
        __m128d lo = _mm_max_pd(_mm256_castpd256_pd128(vm), _mm256_extractf128_pd(vm, 1));
        lo = _mm_max_sd(lo, _mm_unpackhi_pd(lo, lo));
        m = _mm_cvtsd_f64(lo);
    }
    for (; i < n; ++i)
        if (x[i] > m) m = x[i];
    return m;
}

// C[m,n] = A * B^T with 2x4 register tiles: two A rows stream against four B
// rows so every load feeds two FMAs.
static void matmul_nt_f32(const float* a, const float* b, float* c,
                          std::size_t m, std::size_t n, std::size_t k) {
    std::size_t i = 0;
    for (; i + 2 <= m; i += 2) {
        const float* a0 = a + i * k;
        const float* a1 = a0 + k;
        float* c0 = c + i * n;
        float* c1 = c0 + n;
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            const float* b0 = b + (j + 0) * k;
            const float* b1 = b + (j + 1) * k;
            const float* b2 = b + (j + 2) * k;
            const float* b3 = b + (j + 3) * k;
            __m256 s00 = _mm256_setzero_ps(), s01 = _mm256_setzero_ps(),
                   s02 = _mm256_setzero_ps(), s03 = _mm256_setzero_ps();
            __m256 s10 = _mm256_setzero_ps(), s11 = _mm256_setzero_ps(),
                   s12 = _mm256_setzero_ps(), s13 = _mm256_setzero_ps();
            std::size_t p = 0;
            for (; p + 8 <= k; p += 8) {
                const __m256 va0 = _mm256_loadu_ps(a0 + p);
                const __m256 va1 = _mm256_loadu_ps(a1 + p);
                __m256 vb = _mm256_loadu_ps(b0 + p);
                s00 = _mm256_fmadd_ps(va0, vb, s00);
                s10 = _mm256_fmadd_ps(va1, vb, s10);
                vb = _mm256_loadu_ps(b1 + p);
                s01 = _mm256_fmadd_ps(va0, vb, s01);
                s11 = _mm256_fmadd_ps(va1, vb, s11);
                vb = _mm256_loadu_ps(b2 + p);
                s02 = _mm256_fmadd_ps(va0, vb, s02);
                s12 = _mm256_fmadd_ps(va1, vb, s12);
                vb = _mm256_loadu_ps(b3 + p);
                s03 = _mm256_fmadd_ps(va0, vb, s03);
                s13 = _mm256_fmadd_ps(va1, vb, s13);
            }
            float r00 = hsum256(s00), r01 = hsum256(s01), r02 = hsum256(s02), r03 = hsum256(s03);
            float r10 = hsum256(s10), r11 = hsum256(s11), r12 = hsum256(s12), r13 = hsum256(s13);
            for (; p < k; ++p) {
                const float av0 = a0[p], av1 = a1[p];
                r00 += av0 * b0[p];
                r01 += av0 * b1[p];
                r02 += av0 * b2[p];
                r03 += av0 * b3[p];
                r10 += av1 * b0[p];
                r11 += av1 * b1[p];
                r12 += av1 * b2[p];
                r13 += av1 * b3[p];
            }
            c0[j + 0] = r00;
            c0[j + 1] = r01;
            c0[j + 2] = r02;
            c0[j + 3] = r03;
            c1[j + 0] = r10;
            c1[j + 1] = r11;
            c1[j + 2] = r12;
            c1[j + 3] = r13;
        }
        for (; j < n; ++j) {
            c0[j] = dot_f32(a0, b + j * k, k);
            c1[j] = dot_f32(a1, b + j * k, k);
        }
    }
    for (; i < m; ++i) {
        const float* ai = a + i * k;
        float* ci = c + i * n;
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            const float* b0 = b + (j + 0) * k;
            const float* b1 = b + (j + 1) * k;
            const float* b2 = b + (j + 2) * k;
            const float* b3 = b + (j + 3) * k;
            __m256 s0 = _mm256_setzero_ps();
            __m256 s1 = _mm256_setzero_ps();
            __m256 s2 = _mm256_setzero_ps();
            __m256 s3 = _mm256_setzero_ps();
            std::size_t p = 0;
            for (; p + 8 <= k; p += 8) {
                const __m256 va = _mm256_loadu_ps(ai + p);
                s0 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b0 + p), s0);
                s1 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b1 + p), s1);
                s2 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b2 + p), s2);
                s3 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b3 + p), s3);
            }
            float r0 = hsum256(s0), r1 = hsum256(s1), r2 = hsum256(s2), r3 = hsum256(s3);
            for (; p < k; ++p) {
                const float av = ai[p];
                r0 += av * b0[p];
                r1 += av * b1[p];
                r2 += av * b2[p];
                r3 += av * b3[p];
            }
            ci[j + 0] = r0;
            ci[j + 1] = r1;
            ci[j + 2] = r2;
            ci[j + 3] = r3;
        }
        for (; j < n; ++j) ci[j] = dot_f32(ai, b + j * k, k);
    }
}

static void matmul_nt_f64(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] = dot_f64(ai, b + j * k, k);
    }
}

// dA[i,:] += sum_j dC[i,j] * B[j,:], four j at a time so the dA row is loaded
// and stored once per group.
static void matmul_acc_nn_f32(const float* dc, const float* b, float* da,
                              std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const float* dci = dc + i * n;
        float* dai = da + i * k;
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            const __m256 w0 = _mm256_set1_ps(dci[j + 0]);
            const __m256 w1 = _mm256_set1_ps(dci[j + 1]);
            const __m256 w2 = _mm256_set1_ps(dci[j + 2]);
            const __m256 w3 = _mm256_set1_ps(dci[j + 3]);
            const float* b0 = b + (j + 0) * k;
            const float* b1 = b + (j + 1) * k;
            const float* b2 = b + (j + 2) * k;
            const float* b3 = b + (j + 3) * k;
            std::size_t p = 0;
            for (; p + 8 <= k; p += 8) {
                __m256 acc = _mm256_loadu_ps(dai + p);
                acc = _mm256_fmadd_ps(w0, _mm256_loadu_ps(b0 + p), acc);
                acc = _mm256_fmadd_ps(w1, _mm256_loadu_ps(b1 + p), acc);
                acc = _mm256_fmadd_ps(w2, _mm256_loadu_ps(b2 + p), acc);
                acc = _mm256_fmadd_ps(w3, _mm256_loadu_ps(b3 + p), acc);
                _mm256_storeu_ps(dai + p, acc);
            }
            for (; p < k; ++p)
                dai[p] += dci[j] * b0[p] + dci[j + 1] * b1[p] + dci[j + 2] * b2[p] +
                          dci[j + 3] * b3[p];
        }
        for (; j < n; ++j) axpy_f32(dci[j], b + j * k, dai, k);
    }
}

static void matmul_acc_nn_f64(const double* dc, const double* b, double* da,
                              std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* dci = dc + i * n;
        double* dai = da + i * k;
        for (std::size_t j = 0; j < n; ++j) axpy_f64(dci[j], b + j * k, dai, k);
    }
}

// dB[j,:] += sum_i dC[i,j] * A[i,:], four i at a time per dB row.
static void matmul_acc_tn_f32(const float* dc, const float* a, float* db,
                              std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t j = 0; j < n; ++j) {
        float* dbj = db + j * k;
        std::size_t i = 0;
        for (; i + 4 <= m; i += 4) {
            const __m256 w0 = _mm256_set1_ps(dc[(i + 0) * n + j]);
            const __m256 w1 = _mm256_set1_ps(dc[(i + 1) * n + j]);
            const __m256 w2 = _mm256_set1_ps(dc[(i + 2) * n + j]);
            const __m256 w3 = _mm256_set1_ps(dc[(i + 3) * n + j]);
            const float* a0 = a + (i + 0) * k;
            const float* a1 = a + (i + 1) * k;
            const float* a2 = a + (i + 2) * k;
            const float* a3 = a + (i + 3) * k;
            std::size_t p = 0;
            for (; p + 8 <= k; p += 8) {
                __m256 acc = _mm256_loadu_ps(dbj + p);
                acc = _mm256_fmadd_ps(w0, _mm256_loadu_ps(a0 + p), acc);
                acc = _mm256_fmadd_ps(w1, _mm256_loadu_ps(a1 + p), acc);
                acc = _mm256_fmadd_ps(w2, _mm256_loadu_ps(a2 + p), acc);
                acc = _mm256_fmadd_ps(w3, _mm256_loadu_ps(a3 + p), acc);
                _mm256_storeu_ps(dbj + p, acc);
            }
            for (; p < k; ++p)
                dbj[p] += dc[(i + 0) * n + j] * a0[p] + dc[(i + 1) * n + j] * a1[p] +
                          dc[(i + 2) * n + j] * a2[p] + dc[(i + 3) * n + j] * a3[p];
        }
        for (; i < m; ++i) axpy_f32(dc[i * n + j], a + i * k, dbj, k);
    }
}

static void matmul_acc_tn_f64(const double* dc, const double* a, double* db,
                              std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* dci = dc + i * n;
        const double* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) axpy_f64(dci[j], ai, db + j * k, k);
    }
}

} // namespace avx2

const Table<float>& avx2_table_f32() {
    static const Table<float> t = [] {
        Table<float> x;
        x.dot = &avx2::dot_f32;
        x.axpy = &avx2::axpy_f32;
        x.add = &avx2::add_f32;
        x.sub = &avx2::sub_f32;
        x.mul = &avx2::mul_f32;
        x.scale = &avx2::scale_f32;
        x.reduce_sum = &avx2::reduce_sum_f32;
        x.reduce_max = &avx2::reduce_max_f32;
        x.matmul_nt = &avx2::matmul_nt_f32;
        x.matmul_acc_nn = &avx2::matmul_acc_nn_f32;
        x.matmul_acc_tn = &avx2::matmul_acc_tn_f32;
        return x;
    }();
    return t;
}

const Table<double>& avx2_table_f64() {
    static const Table<double> t = [] {
        Table<double> x;
        x.dot = &avx2::dot_f64;
        x.axpy = &avx2::axpy_f64;
        x.add = &avx2::add_f64;
        x.sub = &avx2::sub_f64;
        x.mul = &avx2::mul_f64;
        x.scale = &avx2::scale_f64;
        x.reduce_sum = &avx2::reduce_sum_f64;
        x.reduce_max = &avx2::reduce_max_f64;
        x.matmul_nt = &avx2::matmul_nt_f64;
        x.matmul_acc_nn = &avx2::matmul_acc_nn_f64;
        x.matmul_acc_tn = &avx2::matmul_acc_tn_f64;
        return x;
    }();
    return t;
}

#endif // BIALIGN_X86

} // namespace bialign::kernels
