// Acceptance run: one PASS/FAIL line per criterion, artifacts under --out.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dedgan/errors.hpp"
#include "dedgan/evaluation.hpp"
#include "dedgan/shapemodel.hpp"
#include "dedgan/stats.hpp"
#include "dedgan/training.hpp"
#include "gradcheck_suite.hpp"

using namespace dedgan;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kGradRelTol = 1e-4;
constexpr int kGradTrials = 20;
constexpr double kGradSeconds = 120;
constexpr int kJensenPairs = 200;
constexpr double kJensenSlack = 1e-12;
constexpr double kJensenOracleTol = 1e-12;
constexpr double kJensenSeconds = 10;
constexpr double kResidualRatio = 0.5;
constexpr double kOracleMaeFraction = 0.10;
constexpr double kSpearmanMin = 0.8;
constexpr double kPipelineSeconds = 30 * 60;
constexpr int kSweepCodes = 9;
constexpr double kRank1Min = 0.25;
constexpr double kBinomialLevel = 0.99;
constexpr double kFidSelfMax = 1e-6;
constexpr double kFidClosedFormRel = 0.05;
constexpr int kFidSamples = 100000;
constexpr double kShapeRoundTrip = 1e-6;
constexpr double kShapeMeanCode = 1e-9;
constexpr double kShapeInvariance = 1e-6;
constexpr double kShapeSpearmanMin = 0.95;
constexpr std::uint64_t kToySteps = 2000;
constexpr std::uint64_t kToySeed = 1;
constexpr std::uint64_t kDataSeed = 1;
constexpr int kRankBins = 9;

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    notes.push_back((ok ? "" : "FAILED ") + what);
  }
};

void report(int id, const std::string& title, const Outcome& o) {
  std::cout << "criterion " << id << " [" << title << "]: " << (o.pass ? "PASS" : "FAIL");
  for (std::size_t i = 0; i < o.notes.size(); ++i) std::cout << (i ? "; " : " (") << o.notes[i];
  if (!o.notes.empty()) std::cout << ')';
  std::cout << std::endl;
}

Outcome guarded(const std::function<void(Outcome&)>& body) {
  Outcome o;
  try {
    body(o);
  } catch (const std::exception& e) {
    o.require(false, std::string("exception: ") + e.what());
  }
  return o;
}

// ---------------------------------------------------------------------------

void gradient_checks(Outcome& o) {
  const auto t0 = Clock::now();
  std::vector<gradcheck_suite::Result> all = gradcheck_suite::run_layer_ops(kGradTrials, 101);
  for (auto& r : gradcheck_suite::run_loss_terms(kGradTrials, 102)) all.push_back(r);
  for (auto& r : gradcheck_suite::run_total_losses(103)) all.push_back(r);
  double worst = 0;
  std::string worst_name;
  for (const auto& r : all) {
    if (r.worst > worst) {
      worst = r.worst;
      worst_name = r.name;
    }
    o.require(r.worst < kGradRelTol, r.name + " rel " + fmt("%.2e", r.worst));
  }
  const double secs = seconds_since(t0);
  o.notes.erase(std::remove_if(o.notes.begin(), o.notes.end(), [](const std::string& s) { return s.rfind("FAILED", 0); }),
                o.notes.end());
  o.notes.push_back(std::to_string(all.size()) + " checks, worst " + fmt("%.2e", worst) + " (" + worst_name + ")");
  o.require(secs < kGradSeconds, "runtime " + fmt("%.1f", secs) + " s");
}

double sorted_coupling_w1(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

void jensen_bound(Outcome& o) {
  const auto t0 = Clock::now();
  RngStream rng(202);
  int violations = 0, oracle_mismatch = 0;
  double min_gap = 1e300;
  for (int t = 0; t < kJensenPairs; ++t) {
    const std::size_t n = 1 + rng.uniform_int(64);
    std::vector<double> a(n), b(n);
    const double shift = rng.normal(0.0, 2.0);
    for (auto& v : a) v = rng.normal(0.0, 1.0 + rng.uniform(0.0, 2.0));
    for (auto& v : b) v = shift + rng.uniform(-3.0, 3.0);
    const WassersteinBound w = wasserstein_lower_bound(a, b);
    if (!(w.bound <= w.exact + kJensenSlack)) ++violations;
    if (std::abs(w.exact - sorted_coupling_w1(a, b)) > kJensenOracleTol) ++oracle_mismatch;
    min_gap = std::min(min_gap, w.exact - w.bound);
  }
  const double secs = seconds_since(t0);
  o.require(violations == 0, std::to_string(violations) + " of " + std::to_string(kJensenPairs) + " pairs violate");
  o.require(oracle_mismatch == 0, std::to_string(oracle_mismatch) + " disagreements with the sorted-coupling oracle");
  o.notes.push_back("smallest W1 - |m1-m2| " + fmt("%.3e", min_gap));
  o.require(secs < kJensenSeconds, "runtime " + fmt("%.3f", secs) + " s");
}

void controller_identities(Outcome& o) {
  const EquilibriumState defaults;
  o.require(defaults.k == 0.0 && defaults.beta == 0.9 && defaults.lambda_k == 0.001, "defaults k0=0 beta=0.9 lambda_k=0.001");
  EquilibriumState fixed;
  fixed.k = 0.25;
  fixed.beta = 0.5;
  o.require(update_k(fixed, 2.0, 1.0).k == 0.25, "fixed point at beta*L(x) = L(G(x))");
  EquilibriumState low;
  o.require(update_k(low, 0.0, 1e6).k == 0.0, "clamp at 0");
  EquilibriumState high;
  high.k = 1.0;
  o.require(update_k(high, 1e6, 0.0).k == 1.0, "clamp at 1");
  EquilibriumState step;
  step.k = 0.5;
  o.require(update_k(step, 2.0, 1.0).k == 0.5 + 0.001 * (0.9 * 2.0 - 1.0), "proportional step");
}

// ---------------------------------------------------------------------------

struct ToyRun {
  Dataset data;
  TrainConfig config;
  std::optional<TrainingState> state;
  std::vector<LossReport> reports;
  double train_seconds = 0;
  bool finite = true;
};

TrainConfig toy_config(const Dataset& data) {
  TrainConfig c;
  c.arch = ArchConfig::desk(data.identities);
  c.steps = kToySteps;
  c.seed = kToySeed;
  return c;
}

void run_toy(ToyRun& toy, const fs::path& out) {
  toy.data = generate_synthetic(SyntheticFaceConfig{}, kDataSeed);
  toy.config = toy_config(toy.data);
  toy.state.emplace(initial_state(toy.config));
  TrainOptions opts;
  opts.log_path = out / "toy_train_log.jsonl";
  fs::remove(opts.log_path);
  opts.on_step = [&](const LossReport& r) {
    toy.reports.push_back(r);
    toy.finite = toy.finite && r.all_finite();
    if (r.step % 250 == 0) std::cerr << "  toy step " << r.step << " k " << r.k << std::endl;
  };
  const auto t0 = Clock::now();
  train(*toy.state, toy.data, opts);
  toy.train_seconds = seconds_since(t0);
  save_checkpoint(*toy.state, out / "toy_final.ckpt");
}

void controller_toy(Outcome& o, const ToyRun& toy) {
  controller_identities(o);
  const auto& r = toy.reports;
  o.require(r.size() == kToySteps, std::to_string(r.size()) + " toy steps");
  if (r.size() < 200) return;
  auto residual = [](const LossReport& x) { return std::abs(0.9 * x.loss_real - x.loss_fake); };
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    first += residual(r[i]);
    last += residual(r[r.size() - 1 - i]);
  }
  first /= 100;
  last /= 100;
  const double ratio = last / first;
  o.require(ratio <= kResidualRatio, "residual first-100 " + fmt("%.5f", first) + ", last-100 " + fmt("%.5f", last) +
                                         ", ratio " + fmt("%.3f", ratio));
  bool in_range = true;
  for (const auto& x : r) in_range = in_range && x.k >= 0.0 && x.k <= 1.0;
  o.require(in_range, "k in [0,1] throughout, final " + fmt("%.4f", r.back().k));
}

void disentanglement_check(Outcome& o, ToyRun& toy, const fs::path& out) {
  const auto t0 = Clock::now();
  PoseOracle oracle = PoseOracle::train(PoseOracle::Options{});
  const double oracle_secs = seconds_since(t0);
  oracle.save(out / "pose_oracle.bin");
  o.require(oracle.heldout_mae() < kOracleMaeFraction * oracle.yaw_range(),
            "oracle held-out MAE " + fmt("%.2f", oracle.heldout_mae()) + " deg (bound " +
                fmt("%.1f", kOracleMaeFraction * oracle.yaw_range()) + ", " + fmt("%.0f", oracle_secs) + " s)");

  auto& state = *toy.state;
  const auto t1 = Clock::now();
  const DisentanglementResult d =
      disentanglement(state.generator, toy.data, oracle, state.config.code_min, state.config.code_max, kSweepCodes);
  const double eval_secs = seconds_since(t1);
  const double worst = *std::min_element(d.per_image.begin(), d.per_image.end());
  o.require(d.mean_spearman > kSpearmanMin, "Spearman " + fmt("%.3f", d.mean_spearman) + " mean over " +
                                                std::to_string(d.per_image.size()) + " gallery images (min " +
                                                fmt("%.3f", worst) + ")");

  const std::size_t first_gallery = toy.data.split("gallery").front();
  const TensorF image = center_crop(toy.data.samples[first_gallery].image, state.config.arch.image_size);
  const PoseSweep sweep = pose_sweep(state.generator, image,
                                     code_grid(state.config.code_min, state.config.code_max, kSweepCodes), 7, &oracle);
  write_ppm(sweep_grid(sweep.images), out / "toy_sweep.ppm");

  const double total = toy.train_seconds + eval_secs;
  o.require(total < kPipelineSeconds, "train + eval " + fmt("%.0f", total) + " s");
}

/// Two-sided interval [lo, hi] of Binomial(n, p) holding at least `level` mass.
std::pair<std::size_t, std::size_t> binomial_interval(std::size_t n, double p, double level) {
  std::vector<double> pmf(n + 1);
  for (std::size_t k = 0; k <= n; ++k)
    pmf[k] = std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) + k * std::log(p) +
                      (n - k) * std::log1p(-p));
  const double tail = (1 - level) / 2;
  std::size_t lo = 0, hi = n;
  double acc = 0;
  while (lo < n && acc + pmf[lo] <= tail) acc += pmf[lo++];
  acc = 0;
  while (hi > 0 && acc + pmf[hi] <= tail) acc += pmf[hi--];
  return {lo, hi};
}

void identity_check(Outcome& o, ToyRun& toy, const fs::path& out) {
  auto& state = *toy.state;
  const Rank1Result r =
      evaluate_rank1(state.generator, toy.data, state.config.code_min, state.config.code_max, kRankBins);
  write_rank1_csv(r, out / "toy_rank1.csv");
  const double chance = 1.0 / toy.data.identities;
  o.require(r.overall >= kRank1Min, "rank-1 " + fmt("%.3f", r.overall) + " over " + std::to_string(r.probes) +
                                        " probes (bin average " + fmt("%.3f", r.average) + ", chance " +
                                        fmt("%.3f", chance) + ")");

  const auto& gallery = toy.data.split("gallery");
  const auto& probes = toy.data.split("probe");
  const Index dim = state.config.arch.feature_dim;
  RngStream rng(505);
  auto random_rows = [&](std::size_t n) {
    Eigen::MatrixXd m(static_cast<Index>(n), dim);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
  };
  std::vector<int> gids, pids;
  std::vector<double> codes;
  for (auto i : gallery) gids.push_back(toy.data.samples[i].identity);
  for (auto i : probes) {
    pids.push_back(toy.data.samples[i].identity);
    codes.push_back(toy.data.samples[i].pose_code);
  }
  const Eigen::MatrixXd g = random_rows(gallery.size());
  const Eigen::MatrixXd p = random_rows(probes.size());
  const Rank1Result control =
      rank1_identification(g, gids, p, pids, codes, state.config.code_min, state.config.code_max, kRankBins);
  const auto [lo, hi] = binomial_interval(control.probes, chance, kBinomialLevel);
  const std::size_t hits = static_cast<std::size_t>(std::lround(control.overall * control.probes));
  o.require(hits >= lo && hits <= hi, "random-embedding control " + std::to_string(hits) + "/" +
                                          std::to_string(control.probes) + " correct, 99% band [" +
                                          std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

TensorF stack_crops(const Dataset& data, const std::vector<std::size_t>& idx, Index t) {
  TensorF out({static_cast<Index>(idx.size()), 3, t, t});
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.vec().segment(static_cast<Index>(i) * 3 * t * t, 3 * t * t) = center_crop(data.samples[idx[i]].image, t).vec();
  return out;
}

void fid_checks(Outcome& o, const Dataset& data) {
  const auto& train_idx = data.split("train");
  std::vector<std::size_t> half_a, half_b;
  for (std::size_t i = 0; i < train_idx.size(); ++i) (i % 2 ? half_b : half_a).push_back(train_idx[i]);
  const Index t = 32;
  const Eigen::MatrixXd a = flatten_images(stack_crops(data, half_a, t));
  const Eigen::MatrixXd b = flatten_images(stack_crops(data, half_b, t));
  RngStream rng(606);
  Eigen::MatrixXd noise(a.rows(), a.cols());
  for (Index i = 0; i < noise.size(); ++i) noise.data()[i] = rng.uniform(-1.0, 1.0);

  const double self = fid(a, a).value;
  o.require(std::abs(self) < kFidSelfMax, "fid(A,A) " + fmt("%.2e", self));

  Eigen::MatrixXd x(kFidSamples, 1), y(kFidSamples, 1);
  const double m1 = 1.0, s1 = 2.0, m2 = -0.5, s2 = 1.0;
  for (Index i = 0; i < kFidSamples; ++i) {
    x(i, 0) = rng.normal(m1, s1);
    y(i, 0) = rng.normal(m2, s2);
  }
  const double closed = (m1 - m2) * (m1 - m2) + (s1 - s2) * (s1 - s2);
  const double est = frechet_distance(fid_stats(x), fid_stats(y));
  o.require(std::abs(est - closed) / closed < kFidClosedFormRel,
            "1-D Gaussians " + fmt("%.4f", est) + " vs closed form " + fmt("%.4f", closed));

  const double halves = fid(a, b).value, vs_noise = fid(a, noise).value;
  o.require(halves < vs_noise, "fid(real, disjoint half) " + fmt("%.3f", halves) + " < fid(real, noise) " +
                                   fmt("%.3f", vs_noise));
}

Landmarks similarity(const Landmarks& s, double angle, double scale, double tx, double ty) {
  Landmarks out;
  const double c = std::cos(angle), sn = std::sin(angle);
  for (int i = 0; i < 5; ++i) {
    out(i, 0) = scale * (c * s(i, 0) - sn * s(i, 1)) + tx;
    out(i, 1) = scale * (sn * s(i, 0) + c * s(i, 1)) + ty;
  }
  return out;
}

void shape_checks(Outcome& o, const Dataset& data) {
  const ShapeModel& m = data.shape_model;
  double round_trip = 0, invariance = 0;
  RngStream rng(707);
  std::vector<double> yaw, code;
  for (const auto& s : data.samples) {
    round_trip = std::max(round_trip, (flatten(reconstruct(m, project(m, s.landmarks))) - align(m, s.landmarks))
                                          .cwiseAbs()
                                          .maxCoeff());
    const double c = pose_code(m, s.landmarks);
    const Landmarks moved = similarity(s.landmarks, rng.uniform(-0.6, 0.6), rng.uniform(0.3, 3.0),
                                       rng.normal(0.0, 20.0), rng.normal(0.0, 20.0));
    invariance = std::max(invariance, std::abs(pose_code(m, moved) - c));
    yaw.push_back(s.yaw_degrees);
    code.push_back(c);
  }
  const double mean_code = std::abs(pose_code(m, unflatten(m.mean)));
  const double rho = spearman(yaw, code);
  o.require(round_trip < kShapeRoundTrip, "full-basis round trip " + fmt("%.2e", round_trip));
  o.require(mean_code < kShapeMeanCode, "mean shape code " + fmt("%.2e", mean_code));
  o.require(invariance < kShapeInvariance, "similarity invariance " + fmt("%.2e", invariance));
  o.require(rho > kShapeSpearmanMin, "yaw vs code Spearman " + fmt("%.4f", rho) + " over " +
                                         std::to_string(data.samples.size()) + " samples");
}

std::vector<TensorF> snapshot(std::vector<NamedParam<float>> params, std::vector<NamedBuffer<float>> buffers) {
  std::vector<TensorF> out;
  for (auto& p : params) out.push_back(p.var.value());
  for (auto& b : buffers) out.push_back(*b.tensor);
  return out;
}

std::vector<LossReport> run_steps(TrainingState& s, const Dataset& d, std::uint64_t until) {
  std::vector<LossReport> out;
  TrainOptions opts;
  opts.on_step = [&](const LossReport& r) { out.push_back(r); };
  s.config.steps = until;
  train(s, d, opts);
  return out;
}

void mechanics_checks(Outcome& o, const Dataset& data, const fs::path& out) {
  TrainConfig c = toy_config(data);
  auto [lo, hi] = data.code_range("train");
  c.code_min = lo;
  c.code_max = hi;

  TrainingState s = initial_state(c);
  bool pure = true;
  for (int step = 0; step < 5; ++step) {
    const auto g0 = snapshot(s.generator.named_parameters(), s.generator.named_buffers());
    const auto d0 = snapshot(s.discriminator.named_parameters(), s.discriminator.named_buffers());
    std::vector<TensorF> d_mid;
    Batch b = next_batch(s, data);
    train_step(s, b, [&] {
      pure = pure && snapshot(s.generator.named_parameters(), s.generator.named_buffers()) == g0;
      d_mid = snapshot(s.discriminator.named_parameters(), s.discriminator.named_buffers());
      pure = pure && d_mid != d0;
    });
    pure = pure && snapshot(s.discriminator.named_parameters(), s.discriminator.named_buffers()) == d_mid;
    pure = pure && snapshot(s.generator.named_parameters(), s.generator.named_buffers()) != g0;
  }
  o.require(pure, "alternation purity over 5 steps");

  TrainingState a = initial_state(c), b = initial_state(c);
  const auto ra = run_steps(a, data, 50), rb = run_steps(b, data, 50);
  o.require(ra.size() == 50 && ra == rb, "50-step logs bit-identical");
  bool k_ok = true;
  for (const auto& r : ra) k_ok = k_ok && r.k >= 0.0 && r.k <= 1.0;
  o.require(k_ok, "k in [0,1] at every step");

  TrainingState straight = initial_state(c);
  run_steps(straight, data, 20);
  const auto tail_straight = run_steps(straight, data, 40);
  TrainingState first = initial_state(c);
  run_steps(first, data, 20);
  save_checkpoint(first, out / "mechanics_step20.ckpt");
  TrainingState resumed = load_checkpoint(out / "mechanics_step20.ckpt");
  const auto tail_resumed = run_steps(resumed, data, 40);
  o.require(tail_resumed == tail_straight &&
                snapshot(resumed.generator.named_parameters(), {}) == snapshot(straight.generator.named_parameters(), {}),
            "resume at step 20 matches the uninterrupted run through step 40");
}

void ablation_checks(Outcome& o, ToyRun& toy, const fs::path& out) {
  AblationTable table;
  auto& state = *toy.state;
  AblationRow full;
  full.variant = variant_name(AblationVariant::Full);
  full.steps = state.step;
  full.finite = toy.finite;
  full.rank1 = evaluate_rank1(state.generator, toy.data, state.config.code_min, state.config.code_max, kRankBins);
  table.rows.push_back(full);

  std::vector<AblationVariant> rest;
  for (auto v : all_variants())
    if (v != AblationVariant::Full) rest.push_back(v);
  for (auto v : rest) {
    try {
      AblationTable one = run_ablation(toy.config, toy.data, {v}, kRankBins);
      table.rows.push_back(one.rows.front());
    } catch (const std::exception& e) {
      AblationRow failed;
      failed.variant = variant_name(v);
      failed.finite = false;
      table.rows.push_back(failed);
      o.notes.push_back(failed.variant + " aborted: " + e.what());
    }
  }
  write_ablation_csv(table, out / "ablation.csv");
  {
    std::ofstream json(out / "ablation.json");
    json << ablation_json(table);
  }
  for (const auto& row : table.rows) {
    o.require(row.finite && row.steps == kToySteps, row.variant + " " + std::to_string(row.steps) + " steps, rank-1 avg " +
                                                        fmt("%.3f", row.rank1.average) +
                                                        (row.finite ? "" : " non-finite"));
  }
  o.require(fs::exists(out / "ablation.csv") && table.rows.size() == 5, "variant x pose-bin table written");
  bool full_best = true;
  for (const auto& row : table.rows) full_best = full_best && table.rows.front().rank1.average >= row.rank1.average;
  o.notes.push_back(std::string("full >= every variant: ") + (full_best ? "yes" : "no") + " (reported only)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  std::string out_arg = "acceptance_out";
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 9));
  app.add_option("--out", out_arg, "Artifact directory");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9}
                                              : std::set<int>(only.begin(), only.end());
  const fs::path out = out_arg;
  fs::create_directories(out);

  std::vector<std::pair<int, Outcome>> results;
  auto run = [&](int id, const std::string& title, const std::function<void(Outcome&)>& body) {
    if (!selected.count(id)) return;
    const auto t0 = Clock::now();
    Outcome o = guarded(body);
    o.notes.push_back(fmt("%.1f", seconds_since(t0)) + " s");
    report(id, title, o);
    results.emplace_back(id, o);
  };

  run(1, "gradient correctness", gradient_checks);
  run(2, "Jensen bound", jensen_bound);

  ToyRun toy;
  const bool need_toy = selected.count(3) || selected.count(4) || selected.count(5) || selected.count(9);
  const bool need_data = need_toy || selected.count(6) || selected.count(7) || selected.count(8);
  std::string toy_error;
  if (need_toy) {
    try {
      run_toy(toy, out);
    } catch (const std::exception& e) {
      toy_error = e.what();
    }
  } else if (need_data) {
    toy.data = generate_synthetic(SyntheticFaceConfig{}, kDataSeed);
  }
  auto with_toy = [&](const std::function<void(Outcome&)>& body) {
    return [&, body](Outcome& o) {
      if (!toy_error.empty()) throw TrainingError("toy run failed: " + toy_error);
      body(o);
    };
  };

  run(3, "controller", with_toy([&](Outcome& o) { controller_toy(o, toy); }));
  run(4, "disentanglement", with_toy([&](Outcome& o) { disentanglement_check(o, toy, out); }));
  run(5, "identity preservation", with_toy([&](Outcome& o) { identity_check(o, toy, out); }));
  run(6, "FID implementation", [&](Outcome& o) { fid_checks(o, toy.data); });
  run(7, "shape model", [&](Outcome& o) { shape_checks(o, toy.data); });
  run(8, "training mechanics", [&](Outcome& o) { mechanics_checks(o, toy.data, out); });
  run(9, "ablation harness", with_toy([&](Outcome& o) { ablation_checks(o, toy, out); }));

  int failed = 0;
  for (const auto& [id, o] : results) failed += o.pass ? 0 : 1;
  std::cout << "acceptance: " << results.size() - failed << " of " << results.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
