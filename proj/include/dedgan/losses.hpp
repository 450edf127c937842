#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dedgan/errors.hpp"
#include "dedgan/numerics/autodiff.hpp"
#include "dedgan/numerics/ops.hpp"

namespace dedgan {

/// Guard added inside every logarithm.
inline constexpr double kLogEps = 1e-7;

struct LossWeights {
  double adv = 1.0;
  double id = 1.0;
  double pose = 0.1;
  double pixel = 10.0;

  void validate(const char* which) const {
    if (!(adv >= 0 && id >= 0 && pose >= 0 && pixel >= 0))
      throw ConfigError(std::string(which) + " loss weights must be non-negative");
  }
};

/// lambda weights the discriminator objective, mu the generator objective.
struct LossWeightSet {
  LossWeights lambda;
  LossWeights mu;

  void validate() const {
    lambda.validate("discriminator");
    mu.validate("generator");
  }
};

struct EquilibriumState {
  double k = 0.0;
  double lambda_k = 0.001;
  double beta = 0.9;
  int eta = 1;

  void validate() const {
    if (!(k >= 0 && k <= 1)) throw ConfigError("equilibrium: k must lie in [0,1]");
    if (!(lambda_k >= 0)) throw ConfigError("equilibrium: lambda_k must be non-negative");
    if (!(beta >= 0)) throw ConfigError("equilibrium: beta must be non-negative");
    if (eta != 1 && eta != 2) throw ConfigError("equilibrium: eta must be 1 or 2");
  }
};

namespace detail {

template <typename Scalar>
void require_probabilities(const Var<Scalar>& p, const char* op) {
  const auto& v = p.value().vec();
  if ((v.array() < Scalar(0)).any() || (v.array() > Scalar(1)).any())
    throw NumericError(std::string(op) + ": probability outside [0,1]");
}

template <typename Scalar>
Var<Scalar> neg_log(const Var<Scalar>& p) {
  return scale(log_eps(p, static_cast<Scalar>(kLogEps)), Scalar(-1));
}

template <typename Scalar>
Var<Scalar> one_minus(const Var<Scalar>& p) {
  return add_scalar(scale(p, Scalar(-1)), Scalar(1));
}

}  // namespace detail

/// L(x) = mean |x - recon|^eta.
template <typename Scalar>
Var<Scalar> autoencoder_loss(const Var<Scalar>& x, const Var<Scalar>& recon, int eta = 1) {
  if (x.shape() != recon.shape())
    throw DimensionError("autoencoder_loss: image " + shape_str(x.shape()) + " vs reconstruction " +
                         shape_str(recon.shape()));
  if (eta != 1 && eta != 2) throw ConfigError("autoencoder_loss: eta must be 1 or 2");
  Var<Scalar> diff = sub(x, recon);
  return mean(eta == 1 ? abs(diff) : square(diff));
}

/// E[-log a_real] + E[-log(1 - a_fake)].
template <typename Scalar>
Var<Scalar> d_adv_loss(const Var<Scalar>& a_real, const Var<Scalar>& a_fake) {
  detail::require_probabilities(a_real, "d_adv_loss");
  detail::require_probabilities(a_fake, "d_adv_loss");
  return add(mean(detail::neg_log(a_real)), mean(detail::neg_log(detail::one_minus(a_fake))));
}

/// E[-log a_fake], the non-saturating generator form.
template <typename Scalar>
Var<Scalar> g_adv_loss(const Var<Scalar>& a_fake) {
  detail::require_probabilities(a_fake, "g_adv_loss");
  return mean(detail::neg_log(a_fake));
}

/// Mean negative log of the labelled class probability. Used for identity on
/// both networks and for the binned pose variant.
template <typename Scalar>
Var<Scalar> class_nll(const Var<Scalar>& probs, const std::vector<int>& labels) {
  if (probs.shape().size() != 2) throw DimensionError("class_nll: probabilities must be [N,K]");
  if (static_cast<Index>(labels.size()) != probs.dim(0))
    throw DimensionError("class_nll: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(probs.dim(0)));
  for (int y : labels)
    if (y < 0 || y >= probs.dim(1))
      throw RangeError("class_nll: label " + std::to_string(y) + " outside [0," + std::to_string(probs.dim(1)) + ")");
  detail::require_probabilities(probs, "class_nll");
  return mean(detail::neg_log(gather_rows(probs, labels)));
}

template <typename Scalar>
Var<Scalar> d_id_loss(const Var<Scalar>& probs, const std::vector<int>& labels) {
  return class_nll(probs, labels);
}

template <typename Scalar>
Var<Scalar> g_id_loss(const Var<Scalar>& probs_fake, const std::vector<int>& labels) {
  return class_nll(probs_fake, labels);
}

/// Mean |c_hat - target|.
template <typename Scalar>
Var<Scalar> pose_regression_loss(const Var<Scalar>& c_hat, const Var<Scalar>& target) {
  if (c_hat.shape() != target.shape())
    throw DimensionError("pose_regression_loss: prediction " + shape_str(c_hat.shape()) + " vs target " +
                         shape_str(target.shape()));
  return mean(abs(sub(c_hat, target)));
}

/// L(x) - k * L(G(x)).
template <typename Scalar>
Var<Scalar> d_pixel_loss(const Var<Scalar>& loss_real, const Var<Scalar>& loss_fake, double k) {
  return sub(loss_real, scale(loss_fake, static_cast<Scalar>(k)));
}

template <typename Scalar>
Var<Scalar> g_pixel_loss(const Var<Scalar>& loss_fake) {
  return loss_fake;
}

template <typename Scalar>
struct LossParts {
  Var<Scalar> adv, id, pose, pixel;
};

/// w_a L_adv + w_d L_id + w_c L_pose + w_r L_pixel. Zero-weight terms are left
/// out of the graph so a zeroed head contributes no gradient at all.
template <typename Scalar>
Var<Scalar> weighted_total(const LossParts<Scalar>& parts, const LossWeights& w) {
  std::vector<std::pair<Scalar, Var<Scalar>>> terms;
  auto push = [&](double weight, const Var<Scalar>& v, const char* name) {
    if (!v.defined()) {
      if (weight != 0) throw ConfigError(std::string("weighted_total: missing ") + name + " term");
      return;
    }
    if (!std::isfinite(static_cast<double>(v.item())))
      throw NumericError(std::string("weighted_total: ") + name + " term is not finite");
    if (weight != 0) terms.emplace_back(static_cast<Scalar>(weight), v);
  };
  push(w.adv, parts.adv, "adversarial");
  push(w.id, parts.id, "identity");
  push(w.pose, parts.pose, "pose");
  push(w.pixel, parts.pixel, "pixel");
  if (terms.empty()) return Var<Scalar>(Tensor<Scalar>::scalar(0));
  return weighted_sum(terms);
}

template <typename Scalar>
Var<Scalar> total_d_loss(const LossParts<Scalar>& parts, const LossWeightSet& w) {
  return weighted_total(parts, w.lambda);
}

template <typename Scalar>
Var<Scalar> total_g_loss(const LossParts<Scalar>& parts, const LossWeightSet& w) {
  return weighted_total(parts, w.mu);
}

/// k <- clamp(k + lambda_k (beta L_real - L_fake), 0, 1).
inline EquilibriumState update_k(EquilibriumState state, double loss_real, double loss_fake) {
  if (!std::isfinite(loss_real) || !std::isfinite(loss_fake))
    throw NumericError("update_k: non-finite reconstruction loss");
  state.k = std::clamp(state.k + state.lambda_k * (state.beta * loss_real - loss_fake), 0.0, 1.0);
  return state;
}

struct WassersteinBound {
  double bound = 0;  // |m_1 - m_2|
  double exact = 0;  // W_1 between the two empirical distributions
};

/// Exact one-dimensional W_1 by coupling quantiles of the sorted samples.
/// Sets of unequal size are handled by merging the quantile breakpoints.
inline WassersteinBound wasserstein_lower_bound(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ArgumentError("wasserstein_lower_bound: sample sets must be non-empty");
  for (double v : a)
    if (!std::isfinite(v)) throw NumericError("wasserstein_lower_bound: non-finite sample");
  for (double v : b)
    if (!std::isfinite(v)) throw NumericError("wasserstein_lower_bound: non-finite sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::size_t n = a.size(), m = b.size();
  double mean_a = 0, mean_b = 0;
  for (double v : a) mean_a += v;
  for (double v : b) mean_b += v;
  mean_a /= static_cast<double>(n);
  mean_b /= static_cast<double>(m);

  double w = 0;
  std::size_t i = 0, j = 0;
  double u = 0;
  while (i < n && j < m) {
    // Quantile cell ends are (i+1)/n and (j+1)/m; compare in integers.
    const std::size_t lhs = (i + 1) * m, rhs = (j + 1) * n;
    const double next = lhs <= rhs ? static_cast<double>(i + 1) / static_cast<double>(n)
                                   : static_cast<double>(j + 1) / static_cast<double>(m);
    w += (next - u) * std::abs(a[i] - b[j]);
    u = next;
    if (lhs <= rhs) ++i;
    if (rhs <= lhs) ++j;
  }
  return {std::abs(mean_a - mean_b), w};
}

/// Equal-width bin index of a pose code in [lo, hi]; values outside are
/// clamped to the end bins.
inline int pose_bin(double code, double lo, double hi, int bins) {
  if (bins < 1 || !(hi > lo)) throw ConfigError("pose_bin: need bins >= 1 and hi > lo");
  const double t = (code - lo) / (hi - lo) * bins;
  return std::clamp(static_cast<int>(std::floor(t)), 0, bins - 1);
}

inline double pose_bin_center(int bin, double lo, double hi, int bins) {
  return lo + (hi - lo) * (static_cast<double>(bin) + 0.5) / bins;
}

/// Per-step scalar record; the JSON-lines log writes fields() in order.
struct LossReport {
  std::uint64_t step = 0;
  double d_adv = 0, d_id = 0, d_pose = 0, d_pixel = 0;
  double g_adv = 0, g_id = 0, g_pose = 0, g_pixel = 0;
  double d_total = 0, g_total = 0;
  double loss_real = 0, loss_fake = 0;
  double k = 0;

  std::vector<std::pair<const char*, double>> fields() const {
    return {{"d_adv", d_adv},   {"d_id", d_id},       {"d_pose", d_pose},   {"d_pixel", d_pixel},
            {"g_adv", g_adv},   {"g_id", g_id},       {"g_pose", g_pose},   {"g_pixel", g_pixel},
            {"d_total", d_total}, {"g_total", g_total}, {"loss_real", loss_real}, {"loss_fake", loss_fake},
            {"k", k}};
  }

  bool all_finite() const {
    for (const auto& [name, v] : fields())
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const LossReport&) const = default;
};

}  // namespace dedgan
