#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "dedgan/errors.hpp"
#include "dedgan/numerics/autodiff.hpp"
#include "dedgan/numerics/tensor.hpp"

namespace dedgan {

/// Compares the tape gradient of a scalar function against central
/// differences at `point`. Returns
///   max_i |analytic_i - numeric_i| / max(1, |analytic_i|).
template <typename Scalar>
Scalar grad_check(const std::function<Var<Scalar>(const Var<Scalar>&)>& f, const Tensor<Scalar>& point,
                  Scalar h = Scalar(1e-5)) {
  Var<Scalar> x(point, true);
  Var<Scalar> y = f(x);
  if (y.size() != 1) throw DimensionError("grad_check: function must return a scalar");
  if (!std::isfinite(y.item())) throw NumericError("grad_check: non-finite value at the point");
  y.backward();
  Tensor<Scalar> analytic = x.has_grad() ? x.grad() : Tensor<Scalar>::zeros(point.shape());

  Scalar worst = 0;
  Tensor<Scalar> probe = point;
  for (Index i = 0; i < point.size(); ++i) {
    const Scalar orig = probe[i];
    probe[i] = orig + h;
    const Scalar up = f(Var<Scalar>(probe)).item();
    probe[i] = orig - h;
    const Scalar down = f(Var<Scalar>(probe)).item();
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("grad_check: non-finite value at perturbed coordinate " + std::to_string(i));
    const Scalar numeric = (up - down) / (Scalar(2) * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(Scalar(1), std::abs(analytic[i])));
  }
  return worst;
}

}  // namespace dedgan
