#include <cmath>

#include "mtl/errors.hpp"
#include "mtl/optim.hpp"

namespace mtl {

double decayed_lr(std::int64_t iter, double init, std::int64_t period, double floor) {
  if (iter < 0) throw ContractError("decayed_lr: negative iteration");
  if (period < 1) throw ConfigError("decayed_lr: period must be >= 1");
  if (floor > init) throw ConfigError("decayed_lr: floor exceeds the initial rate");
  const auto halvings = static_cast<double>(iter / period);
  return std::max(floor, init * std::pow(0.5, halvings));
}

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (params_.empty()) throw ContractError("Adam: empty parameter list");
  for (const Tensor& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.size()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p.size()), 0.0);
  }
}

void Adam::apply(double lr, const std::vector<const double*>& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    double* p = params_[i].data();
    const double* g = grads[i];
    auto& m = m_[i];
    auto& v = v_[i];
    const std::size_t n = m.size();
    for (std::size_t j = 0; j < n; ++j) {
      const double gj = g == nullptr ? 0.0 : g[j];
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::step(double lr) {
  std::vector<const double*> grads;
  grads.reserve(params_.size());
  for (const Tensor& p : params_) grads.push_back(p.has_grad() ? p.grad().data() : nullptr);
  apply(lr, grads);
}

void Adam::step_with(double lr, const std::vector<Tensor>& grads) {
  if (grads.size() != params_.size())
    throw ContractError("Adam: gradient list size does not match parameter list");
  std::vector<const double*> ptrs;
  ptrs.reserve(grads.size());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].size() != params_[i].size())
      throw DimensionError("Adam: gradient " + std::to_string(i) + " has " +
                           std::to_string(grads[i].size()) + " elements, parameter has " +
                           std::to_string(params_[i].size()));
    ptrs.push_back(grads[i].data());
  }
  apply(lr, ptrs);
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.clear_grad();
}

void sgd_step(const std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr) {
  if (params.size() != grads.size())
    throw ContractError("sgd_step: parameter and gradient lists differ in length");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].size())
      throw DimensionError("sgd_step: gradient " + std::to_string(i) + " has " +
                           std::to_string(grads[i].size()) + " elements, parameter has " +
                           std::to_string(params[i].size()));
    Tensor p = params[i];  // handle copy: shares storage
    double* pd = p.data();
    const double* g = grads[i].data();
    for (std::int64_t j = 0; j < p.size(); ++j) pd[j] -= lr * g[j];
  }
}

}  // namespace mtl
