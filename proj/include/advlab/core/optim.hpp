#pragma once

#include <cmath>
#include <vector>

#include "advlab/core/autodiff.hpp"

namespace advlab {

class Adam {
public:
    Adam(std::vector<Var> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (auto& p : params_) {
            m_.push_back(Tensor::zeros(p->val.shape));
            v_.push_back(Tensor::zeros(p->val.shape));
        }
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, t_);
        const double bc2 = 1.0 - std::pow(b2_, t_);
        for (size_t i = 0; i < params_.size(); ++i) {
            Node& p = *params_[i];
            if (p.grad.data.empty()) continue;  // parameter unused this step
            float* w = p.val.ptr();
            const float* g = p.grad.ptr();
            float* m = m_[i].ptr();
            float* v = v_[i].ptr();
            for (int64_t j = 0; j < p.val.numel(); ++j) {
                const double gj = g[j];
                const double mj = b1_ * m[j] + (1.0 - b1_) * gj;
                const double vj = b2_ * v[j] + (1.0 - b2_) * gj * gj;
                m[j] = static_cast<float>(mj);
                v[j] = static_cast<float>(vj);
                w[j] -= static_cast<float>(lr_ * (mj / bc1) / (std::sqrt(vj / bc2) + eps_));
            }
        }
    }

private:
    std::vector<Var> params_;
    std::vector<Tensor> m_, v_;
    double lr_, b1_, b2_, eps_;
    int64_t t_ = 0;
};

}  // namespace advlab
