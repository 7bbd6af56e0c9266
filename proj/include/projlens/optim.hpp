#pragma once

// Adam with bias correction; moments kept in double.

#include <span>
#include <vector>

#include "projlens/tensor.hpp"

namespace projlens {

class Adam {
 public:
  Adam(std::span<const Tensor* const> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  // params[k] -= lr * mhat / (sqrt(vhat) + eps), elementwise.
  void step(std::span<Tensor* const> params, std::span<const Tensor* const> grads);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace projlens
