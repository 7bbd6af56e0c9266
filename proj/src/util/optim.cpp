#include "projlens/optim.hpp"

#include <cmath>

#include "projlens/error.hpp"

namespace projlens {

Adam::Adam(std::span<const Tensor* const> params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const Tensor* t : params) {
    m_.emplace_back(t->size(), 0.0);
    v_.emplace_back(t->size(), 0.0);
  }
}

void Adam::step(std::span<Tensor* const> params, std::span<const Tensor* const> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) throw DimensionError("Adam: parameter count changed");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k]->values();
    const auto g = grads[k]->values();
    if (w.size() != m_[k].size() || g.size() != w.size()) throw DimensionError("Adam: parameter shape changed");
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * gi;
      v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * gi * gi;
      const double update = (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + eps_);
      w[i] = static_cast<float>(static_cast<double>(w[i]) - lr_ * update);
    }
  }
}

}  // namespace projlens
