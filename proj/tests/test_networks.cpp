#include <cmath>
#include <set>

#include "doctest.h"
#include "dedgan/networks.hpp"

using namespace dedgan;

namespace {

TensorF random_images(Index n, Index size, RngStream& rng) {
  TensorF t(Shape{n, 3, size, size});
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

}  // namespace

TEST_CASE("desk architecture shapes") {
  ArchConfig cfg = ArchConfig::desk(20);
  RngStream rng(1);
  auto nets = init_params<float>(cfg, rng);
  RngStream data(2);
  VarF x(random_images(4, 32, data));

  VarF e = nets.generator.encode(x);
  CHECK(e.shape() == Shape{4, 64});
  CHECK(cfg.decoder_input_dim() == 64 + 1 + 16);
  VarF c(TensorF(Shape{4, 1}, 0.5f)), z(TensorF(Shape{4, 16}, 0.1f));
  VarF img = nets.generator.decode(e, c, z);
  CHECK(img.shape() == x.shape());
  CHECK(img.value().vec().cwiseAbs().maxCoeff() < 1.0f);

  auto out = nets.discriminator.forward(x);
  CHECK(out.real_prob.shape() == Shape{4, 1});
  CHECK(out.identity_prob.shape() == Shape{4, 20});
  CHECK(out.pose.shape() == Shape{4, 1});
  CHECK(out.recon.shape() == x.shape());
  for (Index i = 0; i < 4; ++i) {
    double s = 0;
    for (Index j = 0; j < 20; ++j) s += out.identity_prob.value().at(i, j);
    CHECK(std::abs(s - 1.0) < 1e-5);
    const float a = out.real_prob.value()[i];
    CHECK((a > 0.0f && a < 1.0f));
  }
}

TEST_CASE("paper architecture dimensions") {
  ArchConfig cfg = ArchConfig::paper(10);
  CHECK(cfg.feature_dim == 320);
  CHECK(cfg.noise_dim == 50);
  CHECK(cfg.decoder_input_dim() == 371);
  CHECK(cfg.final_extent() == 6);
  RngStream rng(3);
  auto nets = init_params<float>(cfg, rng);
  RngStream data(4);
  VarF x(random_images(2, 96, data));
  auto e = nets.generator.encode(x, ForwardMode::eval());
  CHECK(e.shape() == Shape{2, 320});
  auto out = nets.discriminator.forward(x, ForwardMode::eval());
  CHECK(out.recon.shape() == Shape{2, 3, 96, 96});
}

TEST_CASE("dimension errors") {
  ArchConfig cfg = ArchConfig::desk(5);
  RngStream rng(5);
  auto nets = init_params<float>(cfg, rng);
  RngStream data(6);
  CHECK_THROWS_AS(nets.generator.encode(VarF(random_images(2, 28, data))), DimensionError);
  VarF e(TensorF(Shape{2, 64}, 0.f));
  CHECK_THROWS_AS(nets.generator.decode(e, VarF(TensorF(Shape{2, 2}, 0.f)), VarF(TensorF(Shape{2, 16}, 0.f))),
                  DimensionError);
  CHECK_THROWS_AS(nets.generator.decode(e, VarF(TensorF(Shape{2, 1}, 0.f)), VarF(TensorF(Shape{2, 15}, 0.f))),
                  DimensionError);
  CHECK_THROWS_AS(ArchConfig::from_profile("huge", 5), ConfigError);
}

TEST_CASE("determinism and extreme inputs") {
  ArchConfig cfg = ArchConfig::desk(5);
  RngStream r1(7), r2(7), r3(8);
  auto a = init_params<float>(cfg, r1);
  auto b = init_params<float>(cfg, r2);
  auto c = init_params<float>(cfg, r3);
  auto pa = a.generator.named_parameters(), pb = b.generator.named_parameters(), pc = c.generator.named_parameters();
  REQUIRE(pa.size() == pb.size());
  bool all_same = true, any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    all_same = all_same && pa[i].var.value() == pb[i].var.value();
    any_diff = any_diff || !(pa[i].var.value() == pc[i].var.value());
  }
  CHECK(all_same);
  CHECK(any_diff);

  RngStream data(9);
  TensorF x = random_images(3, 32, data);
  auto e1 = a.generator.encode(VarF(x), ForwardMode::eval()).value();
  auto e2 = a.generator.encode(VarF(x), ForwardMode::eval()).value();
  CHECK(e1 == e2);
  VarF ones(TensorF(Shape{2, 3, 32, 32}, 1.f)), neg(TensorF(Shape{2, 3, 32, 32}, -1.f));
  CHECK(a.generator.encode(ones).value().all_finite());
  CHECK(a.generator.encode(neg).value().all_finite());
}

TEST_CASE("initialization statistics") {
  ArchConfig cfg = ArchConfig::desk(20);
  RngStream rng(10);
  auto nets = init_params<double>(cfg, rng);
  std::vector<double> w;
  auto take = [&](auto params) {
    for (auto& p : params) {
      const auto& name = p.name;
      const auto& v = p.var.value();
      if (name.ends_with("/weight")) {
        for (Index i = 0; i < v.size(); ++i) w.push_back(v[i]);
      } else if (name.ends_with("/bias") || name.ends_with("/bn_shift")) {
        CHECK(v.vec().cwiseAbs().maxCoeff() == 0.0);
      } else if (name.ends_with("/bn_scale")) {
        CHECK((v.vec().array() == 1.0).all());
      }
    }
  };
  take(nets.generator.named_parameters());
  take(nets.discriminator.named_parameters());
  REQUIRE(w.size() >= 100000);
  w.resize(100000);
  double mean = 0;
  for (double v : w) mean += v;
  mean /= static_cast<double>(w.size());
  double var = 0;
  for (double v : w) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(w.size() - 1));
  CHECK(std::abs(mean) < 3 * 0.02 / std::sqrt(1e5));
  CHECK(std::abs(sd - 0.02) < 0.05 * 0.02);
}

TEST_CASE("buffers and parameter names are unique") {
  ArchConfig cfg = ArchConfig::desk(4);
  RngStream rng(11);
  auto nets = init_params<float>(cfg, rng);
  std::set<std::string> names;
  for (auto& p : nets.generator.named_parameters()) CHECK(names.insert(p.name).second);
  for (auto& p : nets.discriminator.named_parameters()) CHECK(names.insert(p.name).second);
  for (auto& b : nets.generator.named_buffers()) CHECK(names.insert(b.name).second);
  for (auto& b : nets.discriminator.named_buffers()) CHECK(names.insert(b.name).second);
  CHECK(!nets.generator.named_buffers().empty());
}

TEST_CASE("pose classification head") {
  ArchConfig cfg = ArchConfig::desk(4);
  cfg.pose_classes = 9;
  RngStream rng(12);
  auto nets = init_params<float>(cfg, rng);
  RngStream data(13);
  auto out = nets.discriminator.forward(VarF(random_images(2, 32, data)));
  CHECK(out.pose.shape() == Shape{2, 9});
}
