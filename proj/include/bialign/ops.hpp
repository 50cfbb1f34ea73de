#pragma once

#include "bialign/kernels.hpp"
#include "bialign/tensor.hpp"

#include <cmath>
#include <numbers>
#include <vector>

// Differentiable tensor operations. Every op computes its forward result
// immediately; when a Graph is supplied and some input carries gradients, a
// backward closure is recorded on the tape. Passing g == nullptr runs the
// same forward math without recording (used for frozen-teacher evaluation).
namespace bialign::ops {

namespace detail {

template <class Real>
inline bool want_grad(const Graph<Real>* g, std::initializer_list<const Tensor<Real>*> ins) {
    if (!g) return false;
    for (const auto* t : ins)
        if ((*t).requires_grad()) return true;
    return false;
}

template <class Real>
inline void mark(Graph<Real>* g, Tensor<Real>& out, std::function<void()> back) {
    out.set_requires_grad(true);
    out.set_node(g, g->add_node(std::move(back)));
}

template <class Real>
inline void check_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
    if (a.shape() != b.shape())
        throw UsageError(std::string(op) + ": shape mismatch");
}

} // namespace detail

template <class Real>
Tensor<Real> add(Graph<Real>* g, const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::check_same_shape(a, b, "add");
    const auto& K = kernels::table<Real>();
    auto out = Tensor<Real>::zeros(a.shape());
    K.add(a.data(), b.data(), out.data(), a.numel());
    if (detail::want_grad(g, {&a, &b})) {
        detail::mark(g, out, [out, a, b]() mutable {
            if (!out.has_grad()) return;
            const auto& K = kernels::table<Real>();
            if (a.requires_grad()) {
                a.ensure_grad();
                K.axpy(Real(1), out.grad_data(), a.grad_data(), a.numel());
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                K.axpy(Real(1), out.grad_data(), b.grad_data(), b.numel());
            }
        });
    }
    return out;
}

template <class Real>
Tensor<Real> sub(Graph<Real>* g, const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::check_same_shape(a, b, "sub");
    const auto& K = kernels::table<Real>();
    auto out = Tensor<Real>::zeros(a.shape());
    K.sub(a.data(), b.data(), out.data(), a.numel());
    if (detail::want_grad(g, {&a, &b})) {
        detail::mark(g, out, [out, a, b]() mutable {
            if (!out.has_grad()) return;
            const auto& K = kernels::table<Real>();
            if (a.requires_grad()) {
                a.ensure_grad();
                K.axpy(Real(1), out.grad_data(), a.grad_data(), a.numel());
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                K.axpy(Real(-1), out.grad_data(), b.grad_data(), b.numel());
            }
        });
    }
    return out;
}

template <class Real>
Tensor<Real> mul(Graph<Real>* g, const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::check_same_shape(a, b, "mul");
    const auto& K = kernels::table<Real>();
    auto out = Tensor<Real>::zeros(a.shape());
    K.mul(a.data(), b.data(), out.data(), a.numel());
    if (detail::want_grad(g, {&a, &b})) {
        detail::mark(g, out, [out, a, b]() mutable {
            if (!out.has_grad()) return;
            const Real* go = out.grad_data();
            if (a.requires_grad()) {
                a.ensure_grad();
                Real* ga = a.grad_data();
                const Real* bv = b.data();
                for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += go[i] * bv[i];
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                Real* gb = b.grad_data();
                const Real* av = a.data();
                for (std::size_t i = 0; i < b.numel(); ++i) gb[i] += go[i] * av[i];
            }
        });
    }
    return out;
}

template <class Real>
Tensor<Real> scale(Graph<Real>* g, const Tensor<Real>& a, Real c) {
    const auto& K = kernels::table<Real>();
    auto out = Tensor<Real>::zeros(a.shape());
    K.scale(c, a.data(), out.data(), a.numel());
    if (detail::want_grad(g, {&a})) {
        detail::mark(g, out, [out, a, c]() mutable {
            if (!out.has_grad()) return;
            a.ensure_grad();
            kernels::table<Real>().axpy(c, out.grad_data(), a.grad_data(), a.numel());
        });
    }
    return out;
}

template <class Real>
Tensor<Real> add_scalar(Graph<Real>* g, const Tensor<Real>& a, Real c) {
    auto out = Tensor<Real>::zeros(a.shape());
    const Real* av = a.data();
    Real* ov = out.data();
    for (std::size_t i = 0; i < a.numel(); ++i) ov[i] = av[i] + c;
    if (detail::want_grad(g, {&a})) {
        detail::mark(g, out, [out, a]() mutable {
            if (!out.has_grad()) return;
            a.ensure_grad();
            kernels::table<Real>().axpy(Real(1), out.grad_data(), a.grad_data(), a.numel());
        });
    }
    return out;
}

template <class Real>
Tensor<Real> relu(Graph<Real>* g, const Tensor<Real>& a) {
    auto out = Tensor<Real>::zeros(a.shape());
    const Real* av = a.data();
    Real* ov = out.data();
    for (std::size_t i = 0; i < a.numel(); ++i) ov[i] = av[i] > Real(0) ? av[i] : Real(0);
    if (detail::want_grad(g, {&a})) {
        detail::mark(g, out, [out, a]() mutable {
            if (!out.has_grad()) return;
            a.ensure_grad();
            const Real* go = out.grad_data();
            const Real* av = a.data();
            Real* ga = a.grad_data();
            for (std::size_t i = 0; i < a.numel(); ++i)
                if (av[i] > Real(0)) ga[i] += go[i];
        });
    }
    return out;
}

template <class Real>
Tensor<Real> exp_ew(Graph<Real>* g, const Tensor<Real>& a) {
    auto out = Tensor<Real>::zeros(a.shape());
    const Real* av = a.data();
    Real* ov = out.data();
    for (std::size_t i = 0; i < a.numel(); ++i) ov[i] = std::exp(av[i]);
    if (detail::want_grad(g, {&a})) {
        detail::mark(g, out, [out, a]() mutable {
            if (!out.has_grad()) return;
            a.ensure_grad();
            const Real* go = out.grad_data();
            const Real* ov = out.data();
            Real* ga = a.grad_data();
            for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += go[i] * ov[i];
        });
    }
    return out;
}

template <class Real>
Tensor<Real> gelu(Graph<Real>* g, const Tensor<Real>& a) {
    auto out = Tensor<Real>::zeros(a.shape());
    const Real* av = a.data();
    Real* ov = out.data();
    const Real inv_sqrt2 = Real(1) / std::numbers::sqrt2_v<Real>;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const Real x = av[i];
        ov[i] = Real(0.5) * x * (Real(1) + std::erf(x * inv_sqrt2));
    }
    if (detail::want_grad(g, {&a})) {
        detail::mark(g, out, [out, a, inv_sqrt2]() mutable {
            if (!out.has_grad()) return;
            a.ensure_grad();
            const Real* go = out.grad_data();
            const Real* av = a.data();
            Real* ga = a.grad_data();
            const Real inv_sqrt2pi = Real(1) / std::sqrt(Real(2) * std::numbers::pi_v<Real>);
            for (std::size_t i = 0; i < a.numel(); ++i) {
                const Real x = av[i];
                const Real cdf = Real(0.5) * (Real(1) + std::erf(x * inv_sqrt2));
                const Real pdf = inv_sqrt2pi * std::exp(Real(-0.5) * x * x);
                ga[i] += go[i] * (cdf + x * pdf);
            }
        });
    }
    return out;
}

// x: [m, n], v: [n]; out[i,:] = x[i,:] + v (bias broadcast over rows).
template <class Real>
Tensor<Real> add_rowvec(Graph<Real>* g, const Tensor<Real>& x, const Tensor<Real>& v) {
    if (x.shape().size() != 2 || v.shape().size() != 1 || v.shape()[0] != x.cols())
        throw UsageError("add_rowvec: expected [m,n] plus [n]");
    const auto& K = kernels::table<Real>();
    auto out = Tensor<Real>::zeros(x.shape());
    const std::size_t n = static_cast<std::size_t>(x.cols());
    for (int i = 0; i < x.rows(); ++i)
        K.add(x.data() + static_cast<std::size_t>(i) * n, v.data(),
              out.data() + static_cast<std::size_t>(i) * n, n);
    if (detail::want_grad(g, {&x, &v})) {
        detail::mark(g, out, [out, x, v]() mutable {
            if (!out.has_grad()) return;
            const auto& K = kernels::table<Real>();
            const std::size_t n = static_cast<std::size_t>(x.cols());
            if (x.requires_grad()) {
                x.ensure_grad();
                K.axpy(Real(1), out.grad_data(), x.grad_data(), out.numel());
            }
            if (v.requires_grad()) {
                v.ensure_grad();
                for (int i = 0; i < x.rows(); ++i)
                    K.axpy(Real(1), out.grad_data() + static_cast<std::size_t>(i) * n,
                           v.grad_data(), n);
            }
        });
    }
    return out;
}

// C[m,n] = A[m,k] * B[n,k]^T. Weights are stored [out_features, in_features],
// so a linear layer is matmul_nt(x, W); the tied output projection reuses the
// embedding table the same way.
template <class Real>
Tensor<Real> matmul_nt(Graph<Real>* g, const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.cols())
        throw UsageError("matmul_nt: inner dimensions do not match");
    const auto& K = kernels::table<Real>();
    const std::size_t m = static_cast<std::size_t>(a.rows());
    const std::size_t n = static_cast<std::size_t>(b.rows());
    const std::size_t k = static_cast<std::size_t>(a.cols());
    auto out = Tensor<Real>::zeros({a.rows(), b.rows()});
    K.matmul_nt(a.data(), b.data(), out.data(), m, n, k);
    if (detail::want_grad(g, {&a, &b})) {
        detail::mark(g, out, [out, a, b, m, n, k]() mutable {
            if (!out.has_grad()) return;
            const auto& K = kernels::table<Real>();
            if (a.requires_grad()) {
                a.ensure_grad();
                K.matmul_acc_nn(out.grad_data(), b.data(), a.grad_data(), m, n, k);
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                K.matmul_acc_tn(out.grad_data(), a.data(), b.grad_data(), m, n, k);
            }
        });
    }
    return out;
}

// out[t,:] = table[ids[t],:]
template <class Real>
Tensor<Real> embedding_rows(Graph<Real>* g, const Tensor<Real>& table,
                            const std::vector<int>& ids) {
    if (table.shape().size() != 2) throw UsageError("embedding_rows: table must be rank-2");
    const int n_rows = table.rows();
    const std::size_t d = static_cast<std::size_t>(table.cols());
    for (int id : ids)
        if (id < 0 || id >= n_rows) throw UsageError("embedding_rows: id out of range");
    auto out = Tensor<Real>::zeros({static_cast<int>(ids.size()), table.cols()});
    for (std::size_t t = 0; t < ids.size(); ++t)
        std::copy(table.data() + static_cast<std::size_t>(ids[t]) * d,
                  table.data() + static_cast<std::size_t>(ids[t]) * d + d,
                  out.data() + t * d);
    if (detail::want_grad(g, {&table})) {
        detail::mark(g, out, [out, table, ids, d]() mutable {
            if (!out.has_grad()) return;
            table.ensure_grad();
            const auto& K = kernels::table<Real>();
            for (std::size_t t = 0; t < ids.size(); ++t)
                K.axpy(Real(1), out.grad_data() + t * d,
                       table.grad_data() + static_cast<std::size_t>(ids[t]) * d, d);
        });
    }
    return out;
}

// Row-wise layer normalization with learned gain/bias.
template <class Real>
Tensor<Real> layer_norm(Graph<Real>* g, const Tensor<Real>& x, const Tensor<Real>& gain,
                        const Tensor<Real>& bias, Real eps = Real(1e-5)) {
    if (x.shape().size() != 2 || gain.shape() != std::vector<int>{x.cols()} ||
        bias.shape() != std::vector<int>{x.cols()})
        throw UsageError("layer_norm: expected x [m,n] with gain/bias [n]");
    const int m = x.rows();
    const std::size_t n = static_cast<std::size_t>(x.cols());
    auto out = Tensor<Real>::zeros(x.shape());
    auto xhat = Tensor<Real>::zeros(x.shape());
    std::vector<Real> inv_std(static_cast<std::size_t>(m));
    const auto& K = kernels::table<Real>();
    for (int i = 0; i < m; ++i) {
        const Real* xi = x.data() + static_cast<std::size_t>(i) * n;
        Real* hi = xhat.data() + static_cast<std::size_t>(i) * n;
        Real* oi = out.data() + static_cast<std::size_t>(i) * n;
        const Real mean = K.reduce_sum(xi, n) / Real(n);
        Real var = Real(0);
        for (std::size_t j = 0; j < n; ++j) {
            const Real c = xi[j] - mean;
            var += c * c;
        }
        var /= Real(n);
        const Real is = Real(1) / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(i)] = is;
        for (std::size_t j = 0; j < n; ++j) {
            hi[j] = (xi[j] - mean) * is;
            oi[j] = gain.data()[j] * hi[j] + bias.data()[j];
        }
    }
    if (detail::want_grad(g, {&x, &gain, &bias})) {
        detail::mark(g, out, [out, x, gain, bias, xhat, inv_std, m, n]() mutable {
            if (!out.has_grad()) return;
            const Real* go = out.grad_data();
            if (gain.requires_grad()) gain.ensure_grad();
            if (bias.requires_grad()) bias.ensure_grad();
            if (x.requires_grad()) x.ensure_grad();
            std::vector<Real> u(n);
            for (int i = 0; i < m; ++i) {
                const std::size_t off = static_cast<std::size_t>(i) * n;
                const Real* goi = go + off;
                const Real* hi = xhat.data() + off;
                if (gain.requires_grad()) {
                    Real* gg = gain.grad_data();
                    for (std::size_t j = 0; j < n; ++j) gg[j] += goi[j] * hi[j];
                }
                if (bias.requires_grad()) {
                    Real* gb = bias.grad_data();
                    for (std::size_t j = 0; j < n; ++j) gb[j] += goi[j];
                }
                if (x.requires_grad()) {
                    Real su = Real(0), suh = Real(0);
                    for (std::size_t j = 0; j < n; ++j) {
                        u[j] = goi[j] * gain.data()[j];
                        su += u[j];
                        suh += u[j] * hi[j];
                    }
                    const Real mu = su / Real(n);
                    const Real muh = suh / Real(n);
                    const Real is = inv_std[static_cast<std::size_t>(i)];
                    Real* gx = x.grad_data() + off;
                    for (std::size_t j = 0; j < n; ++j)
                        gx[j] += (u[j] - mu - hi[j] * muh) * is;
                }
            }
        });
    }
    return out;
}

// Fused causal multi-head self-attention over one sequence.
// q, k, v: [T, d] with d divisible by n_heads; output [T, d].
template <class Real>
Tensor<Real> causal_self_attention(Graph<Real>* g, const Tensor<Real>& q, const Tensor<Real>& k,
                                   const Tensor<Real>& v, int n_heads) {
    detail::check_same_shape(q, k, "causal_self_attention");
    detail::check_same_shape(q, v, "causal_self_attention");
    if (q.shape().size() != 2 || n_heads <= 0 || q.cols() % n_heads != 0)
        throw UsageError("causal_self_attention: d_model must be divisible by n_heads");
    const int T = q.rows();
    const int d = q.cols();
    const int hd = d / n_heads;
    const std::size_t st = static_cast<std::size_t>(T);
    const std::size_t sd = static_cast<std::size_t>(d);
    const std::size_t shd = static_cast<std::size_t>(hd);
    const Real inv_sqrt_hd = Real(1) / std::sqrt(Real(hd));
    const auto& K = kernels::table<Real>();

    auto out = Tensor<Real>::zeros(q.shape());
    // Contiguous per-head copies plus attention probabilities, kept for backward.
    std::vector<std::vector<Real>> qh(static_cast<std::size_t>(n_heads)),
        kh(static_cast<std::size_t>(n_heads)), vh(static_cast<std::size_t>(n_heads)),
        probs(static_cast<std::size_t>(n_heads));

    for (int h = 0; h < n_heads; ++h) {
        auto& Q = qh[static_cast<std::size_t>(h)];
        auto& Kh = kh[static_cast<std::size_t>(h)];
        auto& V = vh[static_cast<std::size_t>(h)];
        Q.resize(st * shd);
        Kh.resize(st * shd);
        V.resize(st * shd);
        const std::size_t col0 = static_cast<std::size_t>(h) * shd;
        for (std::size_t t = 0; t < st; ++t) {
            std::copy(q.data() + t * sd + col0, q.data() + t * sd + col0 + shd, Q.data() + t * shd);
            std::copy(k.data() + t * sd + col0, k.data() + t * sd + col0 + shd, Kh.data() + t * shd);
            std::copy(v.data() + t * sd + col0, v.data() + t * sd + col0 + shd, V.data() + t * shd);
        }
        auto& P = probs[static_cast<std::size_t>(h)];
        P.assign(st * st, Real(0));
        std::vector<Real> row(st);
        for (std::size_t i = 0; i < st; ++i) {
            const std::size_t len = i + 1; // causal: attend to positions <= i
            for (std::size_t j = 0; j < len; ++j)
                row[j] = K.dot(Q.data() + i * shd, Kh.data() + j * shd, shd) * inv_sqrt_hd;
            const Real mx = K.reduce_max(row.data(), len);
            Real denom = Real(0);
            for (std::size_t j = 0; j < len; ++j) {
                row[j] = std::exp(row[j] - mx);
                denom += row[j];
            }
            const Real inv = Real(1) / denom;
            Real* pi = P.data() + i * st;
            for (std::size_t j = 0; j < len; ++j) pi[j] = row[j] * inv;
            // out row i, head h = sum_j P[i,j] * V[j,:]
            Real* oi = out.data() + i * sd + col0;
            for (std::size_t j = 0; j < len; ++j) K.axpy(pi[j], V.data() + j * shd, oi, shd);
        }
    }

    if (detail::want_grad(g, {&q, &k, &v})) {
        detail::mark(g, out,
                     [out, q, k, v, qh, kh, vh, probs, n_heads, st, sd, shd, inv_sqrt_hd]() mutable {
            if (!out.has_grad()) return;
            const auto& K = kernels::table<Real>();
            if (q.requires_grad()) q.ensure_grad();
            if (k.requires_grad()) k.ensure_grad();
            if (v.requires_grad()) v.ensure_grad();
            std::vector<Real> doh(st * shd), dqh(st * shd), dkh(st * shd), dvh(st * shd);
            std::vector<Real> dp(st), ds(st);
            for (int h = 0; h < n_heads; ++h) {
                const std::size_t col0 = static_cast<std::size_t>(h) * shd;
                const auto& Q = qh[static_cast<std::size_t>(h)];
                const auto& Kh = kh[static_cast<std::size_t>(h)];
                const auto& V = vh[static_cast<std::size_t>(h)];
                const auto& P = probs[static_cast<std::size_t>(h)];
                for (std::size_t t = 0; t < st; ++t)
                    std::copy(out.grad_data() + t * sd + col0,
                              out.grad_data() + t * sd + col0 + shd, doh.data() + t * shd);
                std::fill(dqh.begin(), dqh.end(), Real(0));
                std::fill(dkh.begin(), dkh.end(), Real(0));
                std::fill(dvh.begin(), dvh.end(), Real(0));
                for (std::size_t i = 0; i < st; ++i) {
                    const std::size_t len = i + 1;
                    const Real* pi = P.data() + i * st;
                    const Real* doi = doh.data() + i * shd;
                    // dP[i,j] = dO[i,:] . V[j,:]; softmax backward within the row
                    Real dot_pp = Real(0);
                    for (std::size_t j = 0; j < len; ++j) {
                        dp[j] = K.dot(doi, V.data() + j * shd, shd);
                        dot_pp += dp[j] * pi[j];
                    }
                    for (std::size_t j = 0; j < len; ++j) {
                        ds[j] = pi[j] * (dp[j] - dot_pp) * inv_sqrt_hd;
                        K.axpy(pi[j], doi, dvh.data() + j * shd, shd);
                    }
                    Real* dqi = dqh.data() + i * shd;
                    for (std::size_t j = 0; j < len; ++j) {
                        K.axpy(ds[j], Kh.data() + j * shd, dqi, shd);
                        K.axpy(ds[j], Q.data() + i * shd, dkh.data() + j * shd, shd);
                    }
                }
                if (q.requires_grad())
                    for (std::size_t t = 0; t < st; ++t)
                        K.add(q.grad_data() + t * sd + col0, dqh.data() + t * shd,
                              q.grad_data() + t * sd + col0, shd);
                if (k.requires_grad())
                    for (std::size_t t = 0; t < st; ++t)
                        K.add(k.grad_data() + t * sd + col0, dkh.data() + t * shd,
                              k.grad_data() + t * sd + col0, shd);
                if (v.requires_grad())
                    for (std::size_t t = 0; t < st; ++t)
                        K.add(v.grad_data() + t * sd + col0, dvh.data() + t * shd,
                              v.grad_data() + t * sd + col0, shd);
            }
        });
    }
    return out;
}

// Row-wise log-softmax via max subtraction. Rejects non-finite input.
template <class Real>
Tensor<Real> log_softmax(Graph<Real>* g, const Tensor<Real>& logits) {
    if (logits.shape().size() != 2 || logits.cols() < 1)
        throw UsageError("log_softmax: expected rank-2 [rows, vocab]");
    if (!logits.all_finite())
        throw NumericalError("log_softmax: non-finite input");
    const int m = logits.rows();
    const std::size_t n = static_cast<std::size_t>(logits.cols());
    const auto& K = kernels::table<Real>();
    auto out = Tensor<Real>::zeros(logits.shape());
    for (int i = 0; i < m; ++i) {
        const Real* xi = logits.data() + static_cast<std::size_t>(i) * n;
        Real* oi = out.data() + static_cast<std::size_t>(i) * n;
        const Real mx = K.reduce_max(xi, n);
        Real denom = Real(0);
        for (std::size_t j = 0; j < n; ++j) denom += std::exp(xi[j] - mx);
        const Real lse = mx + std::log(denom);
        for (std::size_t j = 0; j < n; ++j) oi[j] = xi[j] - lse;
    }
    if (detail::want_grad(g, {&logits})) {
        detail::mark(g, out, [out, logits, m, n]() mutable {
            if (!out.has_grad()) return;
            logits.ensure_grad();
            const auto& K = kernels::table<Real>();
            for (int i = 0; i < m; ++i) {
                const std::size_t off = static_cast<std::size_t>(i) * n;
                const Real* goi = out.grad_data() + off;
                const Real* oi = out.data() + off;
                Real* gx = logits.grad_data() + off;
                const Real gsum = K.reduce_sum(goi, n);
                for (std::size_t j = 0; j < n; ++j)
                    gx[j] += goi[j] - std::exp(oi[j]) * gsum;
            }
        });
    }
    return out;
}

// Sum over unmasked rows of sum_v exp(p)*(p - q), in nats. The p side is the
// fixed reference distribution and must not carry gradients.
template <class Real>
Tensor<Real> kl_rowwise(Graph<Real>* g, const Tensor<Real>& p_logprobs,
                        const Tensor<Real>& q_logprobs, const std::vector<char>& row_mask) {
    if (p_logprobs.shape() != q_logprobs.shape())
        throw UsageError("kl_rowwise: shape mismatch between p and q");
    if (p_logprobs.shape().size() != 2)
        throw UsageError("kl_rowwise: expected rank-2 log-probability tensors");
    if (row_mask.size() != static_cast<std::size_t>(p_logprobs.rows()))
        throw UsageError("kl_rowwise: row mask length does not match rows");
    if (p_logprobs.requires_grad())
        throw UsageError("kl_rowwise: reference side must not require gradients");
    const int m = p_logprobs.rows();
    const std::size_t n = static_cast<std::size_t>(p_logprobs.cols());
    Real total = Real(0);
    for (int i = 0; i < m; ++i) {
        if (!row_mask[static_cast<std::size_t>(i)]) continue;
        const std::size_t off = static_cast<std::size_t>(i) * n;
        const Real* pi = p_logprobs.data() + off;
        const Real* qi = q_logprobs.data() + off;
        for (std::size_t j = 0; j < n; ++j) total += std::exp(pi[j]) * (pi[j] - qi[j]);
    }
    auto out = Tensor<Real>::scalar(total);
    if (detail::want_grad(g, {&q_logprobs})) {
        detail::mark(g, out, [out, p_logprobs, q_logprobs, row_mask, m, n]() mutable {
            if (!out.has_grad()) return;
            const Real go = out.grad_data()[0];
            q_logprobs.ensure_grad();
            for (int i = 0; i < m; ++i) {
                if (!row_mask[static_cast<std::size_t>(i)]) continue;
                const std::size_t off = static_cast<std::size_t>(i) * n;
                const Real* pi = p_logprobs.data() + off;
                Real* gq = q_logprobs.grad_data() + off;
                for (std::size_t j = 0; j < n; ++j) gq[j] -= go * std::exp(pi[j]);
            }
        });
    }
    return out;
}

// Sum of lp[rows[i], cols[i]]; the building block for span log-probabilities
// and cross-entropy (negated).
template <class Real>
Tensor<Real> select_sum(Graph<Real>* g, const Tensor<Real>& lp, const std::vector<int>& rows,
                        const std::vector<int>& cols) {
    if (lp.shape().size() != 2) throw UsageError("select_sum: expected rank-2 input");
    if (rows.size() != cols.size()) throw UsageError("select_sum: rows/cols length mismatch");
    const std::size_t n = static_cast<std::size_t>(lp.cols());
    Real total = Real(0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= lp.rows() || cols[i] < 0 || cols[i] >= lp.cols())
            throw UsageError("select_sum: index out of range");
        total += lp.data()[static_cast<std::size_t>(rows[i]) * n + static_cast<std::size_t>(cols[i])];
    }
    auto out = Tensor<Real>::scalar(total);
    if (detail::want_grad(g, {&lp})) {
        detail::mark(g, out, [out, lp, rows, cols, n]() mutable {
            if (!out.has_grad()) return;
            const Real go = out.grad_data()[0];
            lp.ensure_grad();
            for (std::size_t i = 0; i < rows.size(); ++i)
                lp.grad_data()[static_cast<std::size_t>(rows[i]) * n +
                               static_cast<std::size_t>(cols[i])] += go;
        });
    }
    return out;
}

// Rows [r0, r1) of a rank-2 tensor as a copy; backward scatters into the
// source row range.
template <class Real>
Tensor<Real> slice_rows(Graph<Real>* g, const Tensor<Real>& x, int r0, int r1) {
    if (x.shape().size() != 2) throw UsageError("slice_rows: expected rank-2 input");
    if (r0 < 0 || r1 <= r0 || r1 > x.rows()) throw UsageError("slice_rows: bad row range");
    const std::size_t n = static_cast<std::size_t>(x.cols());
    auto out = Tensor<Real>::zeros({r1 - r0, x.cols()});
    std::copy(x.data() + static_cast<std::size_t>(r0) * n,
              x.data() + static_cast<std::size_t>(r1) * n, out.data());
    if (detail::want_grad(g, {&x})) {
        detail::mark(g, out, [out, x, r0, n]() {
            if (!out.has_grad()) return;
            x.ensure_grad();
            kernels::table<Real>().axpy(Real(1), out.grad_data(),
                                        x.grad_data() + static_cast<std::size_t>(r0) * n,
                                        out.numel());
        });
    }
    return out;
}

template <class Real>
Tensor<Real> sum_all(Graph<Real>* g, const Tensor<Real>& a) {
    const auto& K = kernels::table<Real>();
    auto out = Tensor<Real>::scalar(K.reduce_sum(a.data(), a.numel()));
    if (detail::want_grad(g, {&a})) {
        detail::mark(g, out, [out, a]() mutable {
            if (!out.has_grad()) return;
            a.ensure_grad();
            const Real go = out.grad_data()[0];
            Real* ga = a.grad_data();
            for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += go;
        });
    }
    return out;
}

} // namespace bialign::ops
