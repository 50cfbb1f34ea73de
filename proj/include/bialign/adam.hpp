#pragma once

#include "bialign/errors.hpp"
#include "bialign/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace bialign {

// Adam with bias correction. Moment buffers are keyed by position in the
// parameter list, which must stay stable across steps.
template <class Real>
class AdamState {
public:
    AdamState(Real learning_rate, Real beta1 = Real(0.9), Real beta2 = Real(0.999),
              Real eps = Real(1e-8))
        : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
        if (!(learning_rate > Real(0))) throw UsageError("adam: learning rate must be > 0");
    }

    std::int64_t step_count() const { return step_; }
    Real learning_rate() const { return lr_; }

    // lr_override < 0 keeps the configured rate (used for warmup schedules).
    void step(std::vector<Tensor<Real>>& params, Real lr_override = Real(-1)) {
        const Real rate = lr_override < Real(0) ? lr_ : lr_override;
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (std::size_t p = 0; p < params.size(); ++p) {
                m_[p].assign(params[p].numel(), Real(0));
                v_[p].assign(params[p].numel(), Real(0));
            }
        }
        if (m_.size() != params.size())
            throw UsageError("adam: parameter list changed size between steps");
        step_ += 1;
        const Real bc1 = Real(1) - std::pow(beta1_, Real(step_));
        const Real bc2 = Real(1) - std::pow(beta2_, Real(step_));
        for (std::size_t p = 0; p < params.size(); ++p) {
            auto& param = params[p];
            if (m_[p].size() != param.numel())
                throw UsageError("adam: parameter shape changed between steps");
            const bool have_grad = param.has_grad();
            const Real* grad = have_grad ? param.grad_data() : nullptr;
            Real* w = param.data();
            Real* m = m_[p].data();
            Real* v = v_[p].data();
            for (std::size_t i = 0; i < param.numel(); ++i) {
                const Real gi = have_grad ? grad[i] : Real(0);
                if (!std::isfinite(static_cast<double>(gi)))
                    throw NumericalError("adam: non-finite gradient in parameter '" +
                                         (param.name().empty() ? ("#" + std::to_string(p))
                                                               : param.name()) +
                                         "' at index " + std::to_string(i));
                m[i] = beta1_ * m[i] + (Real(1) - beta1_) * gi;
                v[i] = beta2_ * v[i] + (Real(1) - beta2_) * gi * gi;
                const Real mhat = m[i] / bc1;
                const Real vhat = v[i] / bc2;
                w[i] -= rate * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

private:
    Real lr_, beta1_, beta2_, eps_;
    std::int64_t step_ = 0;
    std::vector<std::vector<Real>> m_, v_;
};

} // namespace bialign
