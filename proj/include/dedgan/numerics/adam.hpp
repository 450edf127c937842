#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dedgan/errors.hpp"
#include "dedgan/numerics/autodiff.hpp"
#include "dedgan/numerics/tensor.hpp"

namespace dedgan {

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("adam: learning rate must be positive");
    if (!(beta1 > 0 && beta1 < 1)) throw ConfigError("adam: beta1 must lie in (0,1)");
    if (!(beta2 > 0 && beta2 < 1)) throw ConfigError("adam: beta2 must lie in (0,1)");
    if (!(epsilon > 0)) throw ConfigError("adam: epsilon must be positive");
  }
};

template <typename Scalar>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor<Scalar>> first_moment;
  std::vector<Tensor<Scalar>> second_moment;

  AdamState() = default;

  /// Zero accumulators shaped like the given parameters.
  template <typename Params>
  AdamState(const AdamConfig& cfg, const Params& params) : config(cfg) {
    config.validate();
    for (const auto& p : params) {
      first_moment.emplace_back(p.shape());
      second_moment.emplace_back(p.shape());
    }
  }
};

/// One bias-corrected Adam update over aligned (param, grad) lists. Params
/// without a gradient slot are treated as having a zero gradient.
template <typename Scalar>
void adam_step(std::vector<Var<Scalar>>& params, AdamState<Scalar>& state) {
  if (params.size() != state.first_moment.size())
    throw DimensionError("adam: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(state.first_moment.size()) + " accumulators");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].shape() != state.first_moment[i].shape())
      throw DimensionError("adam: parameter " + std::to_string(i) + " has shape " + shape_str(params[i].shape()) +
                           ", accumulator has " + shape_str(state.first_moment[i].shape()));

  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const Scalar b1 = static_cast<Scalar>(c.beta1), b2 = static_cast<Scalar>(c.beta2);
  const Scalar correction1 = static_cast<Scalar>(1.0 - std::pow(c.beta1, t));
  const Scalar correction2 = static_cast<Scalar>(1.0 - std::pow(c.beta2, t));
  const Scalar lr = static_cast<Scalar>(c.learning_rate), eps = static_cast<Scalar>(c.epsilon);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i].vec();
    auto& v = state.second_moment[i].vec();
    if (params[i].has_grad()) {
      const auto& g = params[i].grad().vec();
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
    } else {
      m *= b1;
      v *= b2;
    }
    auto& p = params[i].mutable_value().vec();
    p.array() -= lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + eps);
    if (!p.allFinite()) throw NumericError("adam: parameter " + std::to_string(i) + " became non-finite");
  }
}

}  // namespace dedgan
