#pragma once

// Finite-difference verification harness shared by the unit tests and the
// acceptance suite.

#include <functional>
#include <string>
#include <vector>

#include "mtl/tensor.hpp"

namespace gradcheck {

struct Report {
  std::string op;
  double max_rel_err = 0.0;
};

// Compares tape gradients of `forward` (a scalar-valued graph builder reading
// the params' current contents) against central finite differences.
double check(std::vector<mtl::Tensor> params, const std::function<mtl::Tensor()>& forward,
             double h = 1e-5);

// Every differentiable op, randomized by `seed`. Returns per-op worst error.
std::vector<Report> op_suite(std::uint64_t seed);

// conv -> relu -> max-pool blocks feeding an FC classifier and cross-entropy;
// checks every parameter of the composition.
double composite_net(std::uint64_t seed, int blocks);

// One-parameter quadratic inner/outer problem solved by the recorded
// (create_graph) gradient path; returns relative error against the
// closed-form unrolled derivative.
double second_order_toy(std::uint64_t seed);

}  // namespace gradcheck
