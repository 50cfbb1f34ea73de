#include "bialign/kernels.hpp"

// Reference kernels. Plain loops, no intrinsics; these define the semantics
// the SIMD variants are tested against.

namespace bialign::kernels {
namespace scalar {

template <class Real>
Real dot(const Real* x, const Real* y, std::size_t n) {
    Real acc = Real(0);
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

template <class Real>
void axpy(Real a, const Real* x, Real* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <class Real>
void add(const Real* x, const Real* y, Real* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

template <class Real>
void sub(const Real* x, const Real* y, Real* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - y[i];
}

template <class Real>
void mul(const Real* x, const Real* y, Real* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

template <class Real>
void scale(Real a, const Real* x, Real* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i];
}

template <class Real>
Real reduce_sum(const Real* x, std::size_t n) {
    Real acc = Real(0);
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

template <class Real>
Real reduce_max(const Real* x, std::size_t n) {
    Real m = x[0];
    for (std::size_t i = 1; i < n; ++i)
        if (x[i] > m) m = x[i];
    return m;
}

template <class Real>
void matmul_nt(const Real* a, const Real* b, Real* c,
               std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* ai = a + i * k;
        Real* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] = dot(ai, b + j * k, k);
    }
}

template <class Real>
void matmul_acc_nn(const Real* dc, const Real* b, Real* da,
                   std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* dci = dc + i * n;
        Real* dai = da + i * k;
        for (std::size_t j = 0; j < n; ++j) axpy(dci[j], b + j * k, dai, k);
    }
}

template <class Real>
void matmul_acc_tn(const Real* dc, const Real* a, Real* db,
                   std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* dci = dc + i * n;
        const Real* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) axpy(dci[j], ai, db + j * k, k);
    }
}

} // namespace scalar

template <class Real>
static Table<Real> make_scalar_table() {
    Table<Real> t;
    t.dot = &scalar::dot<Real>;
    t.axpy = &scalar::axpy<Real>;
    t.add = &scalar::add<Real>;
    t.sub = &scalar::sub<Real>;
    t.mul = &scalar::mul<Real>;
    t.scale = &scalar::scale<Real>;
    t.reduce_sum = &scalar::reduce_sum<Real>;
    t.reduce_max = &scalar::reduce_max<Real>;
    t.matmul_nt = &scalar::matmul_nt<Real>;
    t.matmul_acc_nn = &scalar::matmul_acc_nn<Real>;
    t.matmul_acc_tn = &scalar::matmul_acc_tn<Real>;
    return t;
}

const Table<float>& scalar_table_f32() {
    static const Table<float> t = make_scalar_table<float>();
    return t;
}

const Table<double>& scalar_table_f64() {
    static const Table<double> t = make_scalar_table<double>();
    return t;
}

} // namespace bialign::kernels
