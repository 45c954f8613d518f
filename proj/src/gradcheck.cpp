#include "trinet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "trinet/error.hpp"

namespace trinet::ad {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  Tensor y = f();
  if (y.numel() != 1) throw ContractError("grad_check: function is not scalar-valued");
  const double v = y.item();
  if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite function value");
  return v;
}

}  // namespace

double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-4)) throw InputError("grad_check: eps outside [1e-7, 1e-4]");
  for (auto& x : inputs) {
    x.set_track(true);
    x.zero_grad();
  }
  Tensor loss = f();
  if (loss.numel() != 1 || !std::isfinite(loss.item())) {
    throw NumericalError("grad_check: function is not a finite scalar");
  }
  backward(reshape(loss, {}));

  double worst = 0.0;
  for (auto& x : inputs) {
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
    NoGradGuard no_grad;
    auto values = x.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = evaluate(f);
      values[i] = saved - eps;
      const double down = evaluate(f);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps) {
  return grad_check([&] { return f(x); }, std::vector<Tensor>{x}, eps);
}

}  // namespace trinet::ad
