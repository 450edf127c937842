#include <cmath>
#include <vector>

#include "doctest.h"
#include "dedgan/losses.hpp"
#include "gradcheck_suite.hpp"

using namespace dedgan;

namespace {

VarD col(std::vector<double> v) {
  const Index n = static_cast<Index>(v.size());
  TensorD t(Shape{n, 1});
  for (Index i = 0; i < n; ++i) t[i] = v[static_cast<std::size_t>(i)];
  return VarD(t);
}

double brute_w1(std::vector<double> a, std::vector<double> b) {
  // Equal-size sets only: mean absolute difference of sorted samples.
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace

TEST_CASE("autoencoder loss") {
  VarD x(TensorD(Shape{2, 1, 2, 2}, 1.0));
  CHECK(autoencoder_loss(x, x).item() == 0.0);
  CHECK(autoencoder_loss(x, VarD(TensorD(Shape{2, 1, 2, 2}, 0.0))).item() == doctest::Approx(1.0));
  CHECK_THROWS_AS(autoencoder_loss(x, VarD(TensorD(Shape{2, 1, 2, 1}, 0.0))), DimensionError);

  RngStream rng(1);
  auto a = gradcheck_suite::random_tensor({3, 2, 4, 4}, rng), b = gradcheck_suite::random_tensor({3, 2, 4, 4}, rng);
  for (int eta : {1, 2}) {
    double s = 0;
    for (Index i = 0; i < a.size(); ++i) s += std::pow(std::abs(a[i] - b[i]), eta);
    CHECK(std::abs(autoencoder_loss(VarD(a), VarD(b), eta).item() - s / static_cast<double>(a.size())) < 1e-6);
  }
}

TEST_CASE("adversarial losses") {
  CHECK(std::abs(d_adv_loss(col({1.0}), col({0.0})).item()) < 1e-6);
  CHECK(d_adv_loss(col({0.5, 0.5}), col({0.5, 0.5})).item() == doctest::Approx(2 * std::log(2.0)).epsilon(1e-6));
  CHECK(g_adv_loss(col({1.0})).item() == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(g_adv_loss(col({std::exp(-1.0)})).item() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_THROWS_AS(d_adv_loss(col({1.2}), col({0.3})), NumericError);
  CHECK_THROWS_AS(g_adv_loss(col({-0.1})), NumericError);
  CHECK(std::isfinite(g_adv_loss(col({0.0})).item()));

  std::vector<double> ar{0.9, 0.3, 0.6}, af{0.2, 0.7, 0.1};
  double want = 0, want_g = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    want += -std::log(ar[i] + kLogEps) / 3 - std::log(1 - af[i] + kLogEps) / 3;
    want_g += -std::log(af[i] + kLogEps) / 3;
  }
  CHECK(std::abs(d_adv_loss(col(ar), col(af)).item() - want) < 1e-6);
  CHECK(std::abs(g_adv_loss(col(af)).item() - want_g) < 1e-6);
}

TEST_CASE("identity loss") {
  TensorD onehot(Shape{2, 3}, {0, 1, 0, 1, 0, 0});
  CHECK(std::abs(d_id_loss(VarD(onehot), {1, 0}).item()) < 1e-6);
  TensorD uniform(Shape{2, 4}, 0.25);
  CHECK(d_id_loss(VarD(uniform), {3, 2}).item() == doctest::Approx(std::log(4.0)).epsilon(1e-6));
  CHECK_THROWS_AS(d_id_loss(VarD(uniform), {4, 0}), RangeError);
  CHECK_THROWS_AS(d_id_loss(VarD(uniform), {-1, 0}), RangeError);

  RngStream rng(2);
  auto probs = softmax_rows(VarD(gradcheck_suite::random_tensor({5, 4}, rng))).value();
  std::vector<int> y{0, 3, 2, 2, 1};
  double want = 0;
  for (Index i = 0; i < 5; ++i) want -= std::log(probs.at(i, y[static_cast<std::size_t>(i)]) + kLogEps) / 5;
  CHECK(std::abs(g_id_loss(VarD(probs), y).item() - want) < 1e-6);
}

TEST_CASE("pose regression loss") {
  CHECK(pose_regression_loss(col({1, 2}), col({1, 2})).item() == 0.0);
  CHECK(pose_regression_loss(col({3, -1}), col({1, -3})).item() == doctest::Approx(2.0));
  CHECK_THROWS_AS(pose_regression_loss(col({1}), col({1, 2})), DimensionError);
  std::vector<double> a{0.3, -4.0, 7.5, 2.0}, b{1.0, 1.0, -2.0, 2.5};
  double want = 0;
  for (std::size_t i = 0; i < 4; ++i) want += std::abs(a[i] - b[i]) / 4;
  CHECK(std::abs(pose_regression_loss(col(a), col(b)).item() - want) < 1e-6);
}

TEST_CASE("pixel losses") {
  VarD two(TensorD::scalar(2.0)), one(TensorD::scalar(1.0));
  CHECK(d_pixel_loss(two, one, 0.0).item() == 2.0);
  CHECK(d_pixel_loss(two, one, 0.5).item() == doctest::Approx(1.5));
  CHECK(g_pixel_loss(one).item() == 1.0);
}

TEST_CASE("weighted totals") {
  auto s = [](double v) { return VarD(TensorD::scalar(v)); };
  LossParts<double> unit{s(1), s(1), s(1), s(1)};
  LossWeightSet w;
  CHECK(total_d_loss(unit, w).item() == doctest::Approx(12.1));
  CHECK(total_g_loss(unit, w).item() == doctest::Approx(12.1));
  LossWeightSet zero;
  zero.lambda = {0, 0, 0, 0};
  CHECK(total_d_loss(unit, zero).item() == 0.0);

  LossParts<double> parts{s(0.7), s(2.3), s(5.1), s(0.04)};
  const double sum = 1.0 * 0.7 + 1.0 * 2.3 + 0.1 * 5.1 + 10.0 * 0.04;
  CHECK(std::abs(total_d_loss(parts, w).item() - sum) < 1e-12);

  // Doubling one weight doubles that term's contribution.
  LossWeightSet doubled = w;
  doubled.lambda.pose *= 2;
  CHECK(std::abs((total_d_loss(parts, doubled).item() - total_d_loss(parts, w).item()) - 0.1 * 5.1) < 1e-12);
}

TEST_CASE("equilibrium controller") {
  EquilibriumState st;
  CHECK(st.k == 0.0);
  CHECK(st.beta == 0.9);
  CHECK(st.lambda_k == 0.001);
  st.k = 0.5;
  CHECK(update_k(st, 2.0, 1.0).k == doctest::Approx(0.5008).epsilon(1e-12));
  // Fixed point: beta * L_real == L_fake. 0.5 * 2.0 is exact in binary.
  EquilibriumState half;
  half.k = 0.25;
  half.beta = 0.5;
  CHECK(update_k(half, 2.0, 1.0).k == 0.25);
  EquilibriumState zero;
  CHECK(update_k(zero, 0.0, 1e6).k == 0.0);
  EquilibriumState top;
  top.k = 1.0;
  CHECK(update_k(top, 1e6, 0.0).k == 1.0);
}

TEST_CASE("wasserstein lower bound") {
  auto id = wasserstein_lower_bound({0.3, 1.2, 0.7}, {0.7, 0.3, 1.2});
  CHECK(id.bound == 0.0);
  CHECK(id.exact == 0.0);
  auto pm = wasserstein_lower_bound({0, 0}, {1, 1});
  CHECK(pm.bound == 1.0);
  CHECK(pm.exact == 1.0);
  CHECK_THROWS_AS(wasserstein_lower_bound({}, {1.0}), ArgumentError);

  RngStream rng(3);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng.uniform_int(30);
    std::vector<double> a(n), b(n);
    for (auto& v : a) v = std::abs(rng.normal(1.0, 1.0));
    for (auto& v : b) v = rng.uniform(0.0, 3.0);
    auto r = wasserstein_lower_bound(a, b);
    CHECK(std::abs(r.exact - brute_w1(a, b)) < 1e-12);
    CHECK(r.bound <= r.exact + 1e-9);
  }
  // Unequal sizes: {0,1} vs {0,0,1,1,1} -> quantile functions differ on (2/5, 1/2].
  auto uneven = wasserstein_lower_bound({0, 1}, {0, 0, 1, 1, 1});
  CHECK(uneven.exact == doctest::Approx(0.1));
}

TEST_CASE("pose bins") {
  CHECK(pose_bin(-17, -17, 17, 9) == 0);
  CHECK(pose_bin(17, -17, 17, 9) == 8);
  CHECK(pose_bin(0, -17, 17, 9) == 4);
  CHECK(pose_bin_center(4, -17, 17, 9) == doctest::Approx(0.0));
}

TEST_CASE("loss terms pass gradient checks") {
  for (const auto& r : gradcheck_suite::run_loss_terms(20, 5)) {
    INFO(r.name << " worst " << r.worst);
    CHECK(r.trials >= 20);
    CHECK(r.worst < 1e-4);
  }
  for (const auto& r : gradcheck_suite::run_total_losses(6)) {
    INFO(r.name << " worst " << r.worst);
    CHECK(r.worst < 1e-4);
  }
}
