#include "dedgan/training.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>

#include "json.hpp"

#include "dedgan/archive.hpp"
#include "dedgan/errors.hpp"

namespace dedgan {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

json weights_json(const LossWeights& w) {
  return {{"adv", w.adv}, {"id", w.id}, {"pose", w.pose}, {"pixel", w.pixel}};
}

LossWeights weights_from(const json& j) {
  LossWeights w;
  w.adv = j.at("adv").get<double>();
  w.id = j.at("id").get<double>();
  w.pose = j.at("pose").get<double>();
  w.pixel = j.at("pixel").get<double>();
  return w;
}

json arch_json(const ArchConfig& a) {
  json blocks = json::array();
  for (const auto& block : a.encoder_blocks) {
    json b = json::array();
    for (const auto& l : block) b.push_back({l.out_channels, l.stride});
    blocks.push_back(b);
  }
  return {{"profile", a.profile},       {"image_size", a.image_size}, {"channels", a.channels},
          {"encoder_blocks", blocks},   {"feature_dim", a.feature_dim}, {"noise_dim", a.noise_dim},
          {"code_dim", a.code_dim},     {"identities", a.identities}, {"pose_classes", a.pose_classes},
          {"init_stddev", a.init_stddev}};
}

ArchConfig arch_from(const json& j) {
  ArchConfig a;
  a.profile = j.at("profile").get<std::string>();
  a.image_size = j.at("image_size").get<Index>();
  a.channels = j.at("channels").get<Index>();
  for (const auto& b : j.at("encoder_blocks")) {
    BlockSpec block;
    for (const auto& l : b) block.push_back({l.at(0).get<Index>(), l.at(1).get<Index>()});
    a.encoder_blocks.push_back(block);
  }
  a.feature_dim = j.at("feature_dim").get<Index>();
  a.noise_dim = j.at("noise_dim").get<Index>();
  a.code_dim = j.at("code_dim").get<Index>();
  a.identities = j.at("identities").get<Index>();
  a.pose_classes = j.at("pose_classes").get<Index>();
  a.init_stddev = j.at("init_stddev").get<double>();
  return a;
}

TensorF sample_noise(RngStream& rng, Index n, Index dim) {
  TensorF z(Shape{n, dim});
  for (Index i = 0; i < z.size(); ++i) z[i] = static_cast<float>(rng.normal());
  return z;
}

struct SampledCodes {
  TensorF fed;              // decoder input, [B, 1]
  std::vector<int> bins;    // pose-classification targets
};

SampledCodes sample_codes(const TrainConfig& cfg, RngStream& rng, Index n) {
  SampledCodes s{TensorF(Shape{n, 1}), {}};
  const int classes = static_cast<int>(cfg.arch.pose_classes);
  for (Index i = 0; i < n; ++i) {
    double c = rng.uniform(cfg.code_min, cfg.code_max);
    if (classes > 0) {
      const int bin = pose_bin(c, cfg.code_min, cfg.code_max, classes);
      s.bins.push_back(bin);
      c = pose_bin_center(bin, cfg.code_min, cfg.code_max, classes);
    }
    s.fed[i] = static_cast<float>(c);
  }
  return s;
}

/// Evaluates one loss term, reporting any numeric failure under its name.
template <typename F>
VarF loss_term(std::uint64_t step, const char* name, F&& compute) {
  const std::string where = "step " + std::to_string(step) + ": " + name + " loss is not finite";
  VarF v;
  try {
    v = compute();
  } catch (const NumericError& e) {
    throw TrainingError(where + " (" + e.what() + ")");
  }
  if (!std::isfinite(v.item())) throw TrainingError(where);
  return v;
}

template <typename Net>
void store_network(Archive& a, Net& net, const AdamState<float>& adam, const std::string& tag) {
  auto params = net.named_parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    a.put(params[i].name, params[i].var.value());
    a.put("adam/" + params[i].name + "/m", adam.first_moment[i]);
    a.put("adam/" + params[i].name + "/v", adam.second_moment[i]);
  }
  for (auto& b : net.named_buffers()) a.put(b.name, *b.tensor);
  a.put_u64("adam/" + tag + "/step", {adam.step});
}

template <typename Net>
void restore_network(const Archive& a, Net& net, AdamState<float>* adam, const std::string& tag) {
  auto params = net.named_parameters();
  auto take = [&](const std::string& name, TensorF& dst) {
    const TensorF& src = a.get(name);
    if (src.shape() != dst.shape())
      throw CheckpointError("checkpoint: '" + name + "' has shape " + shape_str(src.shape()) + ", expected " +
                            shape_str(dst.shape()));
    dst = src;
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    take(params[i].name, params[i].var.mutable_value());
    if (adam) {
      take("adam/" + params[i].name + "/m", adam->first_moment[i]);
      take("adam/" + params[i].name + "/v", adam->second_moment[i]);
    }
  }
  for (auto& b : net.named_buffers()) take(b.name, *b.tensor);
  if (adam) adam->step = a.get_u64_scalar("adam/" + tag + "/step");
}

TrainConfig config_from_archive(const Archive& a) {
  try {
    return TrainConfig::from_json(a.get_bytes("config"));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed config record: ") + e.what());
  }
}

}  // namespace

void TrainConfig::validate() const {
  arch.validate();
  weights.validate();
  equilibrium.validate();
  adam.validate();
  if (batch_size < 2) throw ConfigError("batch size must be at least 2 (batch normalization)");
  if (code_min > code_max) throw ConfigError("pose code range is empty");
  if (!std::isfinite(code_min) || !std::isfinite(code_max)) throw ConfigError("pose code range must be finite");
}

std::string TrainConfig::to_json() const {
  json j = {{"arch", arch_json(arch)},
            {"lambda", weights_json(weights.lambda)},
            {"mu", weights_json(weights.mu)},
            {"equilibrium",
             {{"k", equilibrium.k},
              {"lambda_k", equilibrium.lambda_k},
              {"beta", equilibrium.beta},
              {"eta", equilibrium.eta}}},
            {"adam",
             {{"learning_rate", adam.learning_rate},
              {"beta1", adam.beta1},
              {"beta2", adam.beta2},
              {"epsilon", adam.epsilon}}},
            {"batch_size", batch_size},
            {"steps", steps},
            {"seed", seed},
            {"checkpoint_interval", checkpoint_interval},
            {"code_min", code_min},
            {"code_max", code_max}};
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  TrainConfig c;
  c.arch = arch_from(j.at("arch"));
  c.weights.lambda = weights_from(j.at("lambda"));
  c.weights.mu = weights_from(j.at("mu"));
  const auto& e = j.at("equilibrium");
  c.equilibrium.k = e.at("k").get<double>();
  c.equilibrium.lambda_k = e.at("lambda_k").get<double>();
  c.equilibrium.beta = e.at("beta").get<double>();
  c.equilibrium.eta = e.at("eta").get<int>();
  const auto& ad = j.at("adam");
  c.adam.learning_rate = ad.at("learning_rate").get<double>();
  c.adam.beta1 = ad.at("beta1").get<double>();
  c.adam.beta2 = ad.at("beta2").get<double>();
  c.adam.epsilon = ad.at("epsilon").get<double>();
  c.batch_size = j.at("batch_size").get<Index>();
  c.steps = j.at("steps").get<std::uint64_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.checkpoint_interval = j.at("checkpoint_interval").get<std::uint64_t>();
  c.code_min = j.at("code_min").get<double>();
  c.code_max = j.at("code_max").get<double>();
  return c;
}

TrainingState initial_state(const TrainConfig& config) {
  config.validate();
  RngStream rng(config.seed);
  auto nets = init_params<float>(config.arch, rng);
  AdamState<float> g_adam(config.adam, nets.generator.parameters());
  AdamState<float> d_adam(config.adam, nets.discriminator.parameters());
  return TrainingState{config,         std::move(nets.generator), std::move(nets.discriminator),
                       std::move(g_adam), std::move(d_adam),     config.equilibrium,
                       0,              rng};
}

Batch next_batch(TrainingState& state, const Dataset& dataset) {
  BatchIterator it(dataset.split("train"), state.config.batch_size, state.config.seed);
  return make_batch(dataset, it.batch(state.step), state.config.arch.image_size, &state.rng);
}

LossReport train_step(TrainingState& state, const Batch& batch, const std::function<void()>& after_d_update) {
  const TrainConfig& cfg = state.config;
  if (!cfg.has_code_range()) throw ConfigError("train_step: pose code range is not set");
  const Index n = batch.images.dim(0);
  if (n < 2) throw ConfigError("train_step: batch size must be at least 2");
  const bool classify = cfg.pose_classification();
  const int classes = static_cast<int>(cfg.arch.pose_classes);
  const int eta = state.equilibrium.eta;
  const double k = state.equilibrium.k;
  auto& G = state.generator;
  auto& D = state.discriminator;
  const std::uint64_t t = state.step;

  LossReport r;
  r.step = t;
  try {
    const VarF x(batch.images);

    // Discriminator update on real and detached generated images.
    SampledCodes c1 = sample_codes(cfg, state.rng, n);
    const TensorF z1 = sample_noise(state.rng, n, cfg.arch.noise_dim);
    VarF fake = G.forward(x, VarF(c1.fed), VarF(z1), ForwardMode::train(false)).detach();

    D.set_requires_grad(true);
    D.zero_grad();
    auto real_out = D.forward(x, ForwardMode::train(true));
    auto fake_out = D.forward(fake, ForwardMode::train(false));
    VarF loss_real = loss_term(t, "L(x)", [&] { return autoencoder_loss(x, real_out.recon, eta); });
    VarF loss_fake = loss_term(t, "L(G(x))", [&] { return autoencoder_loss(fake, fake_out.recon, eta); });
    LossParts<float> dp;
    dp.adv = loss_term(t, "d_adv", [&] { return d_adv_loss(real_out.real_prob, fake_out.real_prob); });
    dp.id = loss_term(t, "d_id", [&] { return d_id_loss(real_out.identity_prob, batch.identities); });
    dp.pose = loss_term(t, "d_pose", [&] {
      if (!classify) return pose_regression_loss(real_out.pose, VarF(batch.codes));
      std::vector<int> bins;
      for (Index i = 0; i < n; ++i) {
        if (!std::isfinite(batch.codes[i])) throw NumericError("non-finite pose code");
        bins.push_back(pose_bin(batch.codes[i], cfg.code_min, cfg.code_max, classes));
      }
      return class_nll(real_out.pose, bins);
    });
    dp.pixel = loss_term(t, "d_pixel", [&] { return d_pixel_loss(loss_real, loss_fake, k); });
    VarF d_total = loss_term(t, "d_total", [&] { return total_d_loss(dp, cfg.weights); });
    d_total.backward();
    auto d_params = D.parameters();
    adam_step(d_params, state.d_adam);
    D.zero_grad();

    r.d_adv = dp.adv.item();
    r.d_id = dp.id.item();
    r.d_pose = dp.pose.item();
    r.d_pixel = dp.pixel.item();
    r.d_total = d_total.item();
    r.loss_real = loss_real.item();
    r.loss_fake = loss_fake.item();
    if (after_d_update) after_d_update();

    // Generator update with the discriminator frozen.
    SampledCodes c2 = sample_codes(cfg, state.rng, n);
    const TensorF z2 = sample_noise(state.rng, n, cfg.arch.noise_dim);
    D.set_requires_grad(false);
    G.zero_grad();
    VarF gen = G.forward(x, VarF(c2.fed), VarF(z2), ForwardMode::train(true));
    auto gen_out = D.forward(gen, ForwardMode::train(false));
    LossParts<float> gp;
    gp.adv = loss_term(t, "g_adv", [&] { return g_adv_loss(gen_out.real_prob); });
    gp.id = loss_term(t, "g_id", [&] { return g_id_loss(gen_out.identity_prob, batch.identities); });
    gp.pose = loss_term(t, "g_pose", [&] {
      return classify ? class_nll(gen_out.pose, c2.bins) : pose_regression_loss(gen_out.pose, VarF(c2.fed));
    });
    gp.pixel = loss_term(t, "g_pixel", [&] { return g_pixel_loss(autoencoder_loss(gen, gen_out.recon, eta)); });
    VarF g_total = loss_term(t, "g_total", [&] { return total_g_loss(gp, cfg.weights); });
    g_total.backward();
    auto g_params = G.parameters();
    adam_step(g_params, state.g_adam);
    G.zero_grad();
    D.set_requires_grad(true);

    r.g_adv = gp.adv.item();
    r.g_id = gp.id.item();
    r.g_pose = gp.pose.item();
    r.g_pixel = gp.pixel.item();
    r.g_total = g_total.item();
  } catch (const NumericError& e) {
    D.set_requires_grad(true);
    throw TrainingError("step " + std::to_string(t) + ": " + e.what());
  } catch (...) {
    D.set_requires_grad(true);
    throw;
  }

  state.equilibrium = update_k(state.equilibrium, r.loss_real, r.loss_fake);
  r.k = state.equilibrium.k;
  ++state.step;
  return r;
}

std::string log_record(const LossReport& report, double wall_seconds, bool with_wall_time) {
  json j;
  j["step"] = report.step;
  for (const auto& [name, v] : report.fields()) j[name] = v;
  if (with_wall_time) j["wall_time"] = wall_seconds;
  return j.dump();
}

LossReport train(TrainingState& state, const Dataset& dataset, const TrainOptions& options) {
  if (dataset.samples.empty()) throw ConfigError("train: empty dataset");
  if (dataset.split("train").empty()) throw ConfigError("train: empty training split");
  if (dataset.identities != state.config.arch.identities)
    throw ConfigError("train: dataset has " + std::to_string(dataset.identities) +
                      " identities but the identity head has " + std::to_string(state.config.arch.identities));
  if (!state.config.has_code_range()) {
    auto [lo, hi] = dataset.code_range("train");
    if (!(hi > lo)) throw ConfigError("train: training split has a degenerate pose code range");
    state.config.code_min = lo;
    state.config.code_max = hi;
  }

  std::ofstream log;
  if (!options.log_path.empty()) {
    log.open(options.log_path, std::ios::app);
    if (!log) throw Error("cannot open training log " + options.log_path.string());
  }
  if (!options.checkpoint_dir.empty()) fs::create_directories(options.checkpoint_dir);

  const auto start = std::chrono::steady_clock::now();
  LossReport last;
  while (state.step < state.config.steps) {
    Batch batch = next_batch(state, dataset);
    last = train_step(state, batch);
    if (log.is_open()) {
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log << log_record(last, wall, options.log_wall_time) << '\n';
      log.flush();
    }
    if (options.on_step) options.on_step(last);
    const auto interval = state.config.checkpoint_interval;
    if (!options.checkpoint_dir.empty() && interval > 0 && state.step % interval == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%06llu.ckpt", static_cast<unsigned long long>(state.step));
      save_checkpoint(state, options.checkpoint_dir / name);
    }
  }
  return last;
}

void save_checkpoint(TrainingState& state, const fs::path& path) {
  Archive a;
  a.put_bytes("config", state.config.to_json());
  a.put_u64("state/step", {state.step});
  a.put_u64("state/rng", {state.rng.state()});
  a.put_f64("state/equilibrium",
            {state.equilibrium.k, state.equilibrium.lambda_k, state.equilibrium.beta,
             static_cast<double>(state.equilibrium.eta)});
  store_network(a, state.generator, state.g_adam, "G");
  store_network(a, state.discriminator, state.d_adam, "D");
  a.save(path);
}

TrainingState load_checkpoint(const fs::path& path) {
  const Archive a = Archive::load(path);
  TrainConfig cfg = config_from_archive(a);
  TrainingState state = initial_state(cfg);
  state.step = a.get_u64_scalar("state/step");
  state.rng.set_state(a.get_u64_scalar("state/rng"));
  const auto eq = a.get_f64("state/equilibrium");
  if (eq.size() != 4) throw CheckpointError("checkpoint: malformed equilibrium record");
  state.equilibrium.k = eq[0];
  state.equilibrium.lambda_k = eq[1];
  state.equilibrium.beta = eq[2];
  state.equilibrium.eta = static_cast<int>(eq[3]);
  restore_network(a, state.generator, &state.g_adam, "G");
  restore_network(a, state.discriminator, &state.d_adam, "D");
  return state;
}

Generator<float> load_generator(const fs::path& path) {
  const Archive a = Archive::load(path);
  const TrainConfig cfg = config_from_archive(a);
  RngStream rng(cfg.seed);
  Generator<float> g(cfg.arch, rng);
  restore_network<Generator<float>>(a, g, nullptr, "G");
  return g;
}

}  // namespace dedgan
