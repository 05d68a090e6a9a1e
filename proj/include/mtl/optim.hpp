#pragma once

#include <cstdint>
#include <vector>

#include "mtl/tensor.hpp"

namespace mtl {

// Step-decay schedule: the initial rate is halved after every `period`
// iterations; once a halving would drop below `floor`, the rate clamps there.
double decayed_lr(std::int64_t iter, double init, std::int64_t period, double floor);

// Adam (adaptive-moment gradient descent) with bias correction.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  // One update from the parameters' accumulated .grad fields; a parameter
  // with no gradient this step contributes zero (its moments still decay).
  void step(double lr);
  // One update from explicitly supplied gradients (one per parameter, same
  // order). Used when gradients are computed without touching .grad.
  void step_with(double lr, const std::vector<Tensor>& grads);
  void zero_grad();
  std::int64_t steps() const { return t_; }

 private:
  void apply(double lr, const std::vector<const double*>& grads);

  std::vector<Tensor> params_;
  double beta1_, beta2_, eps_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

// Plain in-place gradient step p -= lr * g for each (param, grad) pair.
void sgd_step(const std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr);

}  // namespace mtl
