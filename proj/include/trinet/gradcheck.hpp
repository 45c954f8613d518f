#pragma once

#include <functional>
#include <vector>

#include "trinet/tensor.hpp"

namespace trinet::ad {

// Max over components of |analytic - central difference| / max(1, |analytic|)
// for d f / d x, where f maps tracking leaves to a scalar. eps must lie in
// [1e-7, 1e-4]. Values of `inputs` are perturbed in place and restored.
double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                  double eps = 1e-5);

// Single-input convenience form.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double eps = 1e-5);

}  // namespace trinet::ad
