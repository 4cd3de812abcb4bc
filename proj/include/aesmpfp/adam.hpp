#pragma once

#include "tape.hpp"

namespace aesmpfp {

// Linear decay from lr_start at step 0 to lr_end at step total_steps.
inline double lr_schedule(uint64_t step, uint64_t total_steps, double lr_start = 1e-4,
                          double lr_end = 1e-6) {
  if (total_steps == 0) return lr_start;
  const double f = static_cast<double>(step) / static_cast<double>(total_steps);
  // Homogeneous form so both endpoints are hit exactly.
  return lr_start * (1.0 - f) + lr_end * f;
}

// Adam with bias correction over a fixed set of parameters.
class Adam {
 public:
  explicit Adam(std::vector<Param*> params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : params_(std::move(params)), b1_(beta1), b2_(beta2), eps_(eps) {
    for (Param* p : params_) {
      m_.push_back(Tensor::zeros(p->value.dims()));
      v_.push_back(Tensor::zeros(p->value.dims()));
    }
  }

  const std::vector<Param*>& params() const { return params_; }

  void zero_grad() {
    for (Param* p : params_) p->zero_grad();
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (size_t k = 0; k < params_.size(); ++k) {
      Param& p = *params_[k];
      if (!all_finite(p.grad.data(), p.grad.numel()))
        throw NonFiniteValue("adam: non-finite gradient in " + p.name);
      for (size_t i = 0; i < p.value.numel(); ++i) {
        const double g = p.grad[i];
        m_[k][i] = b1_ * m_[k][i] + (1.0 - b1_) * g;
        v_[k][i] = b2_ * v_[k][i] + (1.0 - b2_) * g * g;
        const double mhat = m_[k][i] / bc1;
        const double vhat = v_[k][i] / bc2;
        p.value[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  std::vector<Param*> params_;
  std::vector<Tensor> m_, v_;
  uint64_t t_ = 0;
  double b1_, b2_, eps_;
};

}  // namespace aesmpfp
