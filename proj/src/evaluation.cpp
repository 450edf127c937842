#include "dedgan/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "json.hpp"

#include "dedgan/archive.hpp"
#include "dedgan/errors.hpp"
#include "dedgan/losses.hpp"
#include "dedgan/stats.hpp"

namespace dedgan {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

Eigen::MatrixXd to_rows(const TensorF& t) {
  const Index n = t.dim(0), d = t.size() / t.dim(0);
  return t.matrix(n, d).cast<double>();
}

std::ofstream open_report(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write report " + path.string());
  return out;
}

json rank1_to_json(const Rank1Result& r) {
  json bins = json::array();
  for (std::size_t b = 0; b < r.bin_lo.size(); ++b) {
    json row = {{"code_lo", r.bin_lo[b]}, {"code_hi", r.bin_hi[b]}, {"probes", r.bin_probes[b]},
                {"correct", r.bin_correct[b]}};
    row["accuracy"] = r.bin_probes[b] ? json(r.bin_accuracy(b)) : json(nullptr);
    bins.push_back(row);
  }
  return {{"protocol", "rank1"}, {"bins", bins}, {"average", r.average}, {"overall", r.overall}, {"probes", r.probes}};
}

void require_rows(const Eigen::MatrixXd& m, const char* what) {
  if (m.rows() == 0) throw ProtocolError(std::string(what) + " is empty");
}

}  // namespace

// ---------------------------------------------------------------------------
// Embeddings and similarity

Eigen::MatrixXd extract_features(Generator<float>& generator, const TensorF& images) {
  const auto& cfg = generator.config();
  if (images.rank() != 4 || images.dim(1) != cfg.channels || images.dim(2) != cfg.image_size ||
      images.dim(3) != cfg.image_size)
    throw DimensionError("extract_features: expected [N, " + std::to_string(cfg.channels) + ", " +
                         std::to_string(cfg.image_size) + ", " + std::to_string(cfg.image_size) + "], got " +
                         shape_str(images.shape()));
  return to_rows(generator.encode(VarF(images), ForwardMode::eval()).value());
}

Eigen::MatrixXd extract_features(Generator<float>& generator, const Dataset& dataset,
                                 const std::vector<std::size_t>& indices, Index batch_size) {
  const Index target = generator.config().image_size;
  Eigen::MatrixXd out(static_cast<Index>(indices.size()), generator.config().feature_dim);
  for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(indices.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                   indices.begin() + static_cast<std::ptrdiff_t>(end));
    Batch b = make_batch(dataset, chunk, target, nullptr);
    out.middleRows(static_cast<Index>(start), static_cast<Index>(chunk.size())) = extract_features(generator, b.images);
  }
  return out;
}

double cosine_similarity(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  if (u.size() != v.size())
    throw DimensionError("cosine_similarity: sizes " + std::to_string(u.size()) + " and " + std::to_string(v.size()));
  const double nu = u.norm(), nv = v.norm();
  if (nu == 0 || nv == 0) throw NumericError("cosine_similarity: zero vector");
  return std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Rank-1 identification

double Rank1Result::bin_accuracy(std::size_t b) const {
  if (bin_probes.at(b) == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(bin_correct[b]) / static_cast<double>(bin_probes[b]);
}

Rank1Result rank1_identification(const Eigen::MatrixXd& gallery, const std::vector<int>& gallery_ids,
                                 const Eigen::MatrixXd& probes, const std::vector<int>& probe_ids,
                                 const std::vector<double>& probe_codes, double code_lo, double code_hi, int bins) {
  require_rows(gallery, "rank1: gallery");
  require_rows(probes, "rank1: probe set");
  if (static_cast<Index>(gallery_ids.size()) != gallery.rows() || static_cast<Index>(probe_ids.size()) != probes.rows() ||
      probe_codes.size() != probe_ids.size())
    throw DimensionError("rank1: label and embedding counts differ");
  if (gallery.cols() != probes.cols()) throw DimensionError("rank1: gallery and probe dimensions differ");
  std::set<int> enrolled;
  for (int id : gallery_ids)
    if (!enrolled.insert(id).second) throw ProtocolError("rank1: identity " + std::to_string(id) + " enrolled twice");
  for (int id : probe_ids)
    if (!enrolled.count(id)) throw ProtocolError("rank1: probe identity " + std::to_string(id) + " is not in the gallery");

  Eigen::MatrixXd g = gallery;
  for (Index i = 0; i < g.rows(); ++i) {
    const double n = g.row(i).norm();
    if (n == 0) throw NumericError("rank1: zero gallery embedding");
    g.row(i) /= n;
  }

  Rank1Result r;
  for (int b = 0; b < bins; ++b) {
    r.bin_lo.push_back(pose_bin_center(b, code_lo, code_hi, bins) - 0.5 * (code_hi - code_lo) / bins);
    r.bin_hi.push_back(pose_bin_center(b, code_lo, code_hi, bins) + 0.5 * (code_hi - code_lo) / bins);
  }
  r.bin_probes.assign(static_cast<std::size_t>(bins), 0);
  r.bin_correct.assign(static_cast<std::size_t>(bins), 0);
  std::size_t correct = 0;
  for (Index p = 0; p < probes.rows(); ++p) {
    const double n = probes.row(p).norm();
    if (n == 0) throw NumericError("rank1: zero probe embedding");
    const Eigen::VectorXd sims = g * (probes.row(p).transpose() / n);
    Index best = 0;
    for (Index j = 1; j < sims.size(); ++j)
      if (sims[j] > sims[best]) best = j;
    const bool hit = gallery_ids[static_cast<std::size_t>(best)] == probe_ids[static_cast<std::size_t>(p)];
    const auto bin = static_cast<std::size_t>(pose_bin(probe_codes[static_cast<std::size_t>(p)], code_lo, code_hi, bins));
    ++r.bin_probes[bin];
    r.bin_correct[bin] += hit;
    correct += hit;
  }
  r.probes = static_cast<std::size_t>(probes.rows());
  r.overall = static_cast<double>(correct) / static_cast<double>(r.probes);
  int filled = 0;
  for (std::size_t b = 0; b < r.bin_probes.size(); ++b)
    if (r.bin_probes[b]) {
      r.average += r.bin_accuracy(b);
      ++filled;
    }
  r.average /= filled;
  return r;
}

// ---------------------------------------------------------------------------
// Verification

void VerificationProtocol::validate(std::size_t embedding_count) const {
  if (folds.empty()) throw ProtocolError("verification: no folds");
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (folds[f].empty()) throw ProtocolError("verification: fold " + std::to_string(f) + " is empty");
    std::size_t matched = 0;
    for (const auto& p : folds[f]) {
      if (p.a >= embedding_count || p.b >= embedding_count)
        throw ProtocolError("verification: pair references a missing embedding");
      if (!seen.insert({std::min(p.a, p.b), std::max(p.a, p.b)}).second)
        throw ProtocolError("verification: pair (" + std::to_string(p.a) + ", " + std::to_string(p.b) +
                            ") appears twice");
      matched += p.matched;
    }
    if (2 * matched != folds[f].size())
      throw ProtocolError("verification: fold " + std::to_string(f) + " is not class-balanced");
  }
}

VerificationProtocol make_verification_protocol(const std::vector<int>& identities, int folds, int per_class,
                                                std::uint64_t seed) {
  if (folds < 2 || per_class < 1) throw ConfigError("verification: need at least 2 folds and 1 pair per class");
  RngStream rng(seed);
  const std::size_t n = identities.size();
  if (n < 2) throw ProtocolError("verification: need at least two samples");
  std::set<std::pair<std::size_t, std::size_t>> used;
  const std::size_t limit = 1000 * static_cast<std::size_t>(folds * per_class) + 1000;
  auto draw = [&](bool matched) {
    for (std::size_t attempt = 0; attempt < limit; ++attempt) {
      const auto a = static_cast<std::size_t>(rng.uniform_int(n));
      const auto b = static_cast<std::size_t>(rng.uniform_int(n));
      if (a == b || (identities[a] == identities[b]) != matched) continue;
      if (!used.insert({std::min(a, b), std::max(a, b)}).second) continue;
      return VerificationPair{a, b, matched};
    }
    throw ProtocolError(std::string("verification: cannot draw enough distinct ") + (matched ? "matched" : "non-matched") +
                        " pairs");
  };
  VerificationProtocol p;
  for (int f = 0; f < folds; ++f) {
    std::vector<VerificationPair> fold;
    for (int i = 0; i < per_class; ++i) {
      fold.push_back(draw(true));
      fold.push_back(draw(false));
    }
    p.folds.push_back(std::move(fold));
  }
  return p;
}

double best_threshold(const std::vector<double>& similarity, const std::vector<bool>& matched) {
  if (similarity.empty() || similarity.size() != matched.size())
    throw ProtocolError("best_threshold: need equal, non-empty similarity and label lists");
  std::vector<std::size_t> order(similarity.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return similarity[a] < similarity[b]; });
  const std::size_t n = order.size();
  std::size_t total_matched = 0;
  for (bool m : matched) total_matched += m;

  // Cut i declares order[i..n) matched.
  std::size_t matched_below = 0, unmatched_below = 0;
  double best_t = similarity[order[0]];
  std::size_t best_correct = total_matched;
  for (std::size_t i = 1; i <= n; ++i) {
    matched_below += matched[order[i - 1]];
    unmatched_below += !matched[order[i - 1]];
    if (i < n && similarity[order[i]] == similarity[order[i - 1]]) continue;
    const std::size_t correct = (total_matched - matched_below) + unmatched_below;
    if (correct > best_correct) {
      best_correct = correct;
      best_t = i < n ? 0.5 * (similarity[order[i - 1]] + similarity[order[i]]) : similarity[order[n - 1]] + 1.0;
    }
  }
  return best_t;
}

VerificationResult verification_accuracy(const VerificationProtocol& protocol, const Eigen::MatrixXd& embeddings) {
  protocol.validate(static_cast<std::size_t>(embeddings.rows()));
  std::vector<std::vector<double>> sims(protocol.folds.size());
  for (std::size_t f = 0; f < protocol.folds.size(); ++f)
    for (const auto& p : protocol.folds[f])
      sims[f].push_back(cosine_similarity(embeddings.row(static_cast<Index>(p.a)).transpose(),
                                          embeddings.row(static_cast<Index>(p.b)).transpose()));
  VerificationResult r;
  for (std::size_t f = 0; f < protocol.folds.size(); ++f) {
    std::vector<double> s;
    std::vector<bool> m;
    for (std::size_t o = 0; o < protocol.folds.size(); ++o) {
      if (o == f) continue;
      s.insert(s.end(), sims[o].begin(), sims[o].end());
      for (const auto& p : protocol.folds[o]) m.push_back(p.matched);
    }
    const double t = best_threshold(s, m);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < protocol.folds[f].size(); ++i)
      correct += (sims[f][i] >= t) == protocol.folds[f][i].matched;
    r.thresholds.push_back(t);
    r.fold_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(protocol.folds[f].size()));
  }
  const double k = static_cast<double>(r.fold_accuracy.size());
  for (double a : r.fold_accuracy) r.mean += a;
  r.mean /= k;
  for (double a : r.fold_accuracy) r.stddev += (a - r.mean) * (a - r.mean);
  r.stddev = std::sqrt(r.stddev / k);
  return r;
}

// ---------------------------------------------------------------------------
// FID

FidStats fid_stats(const Eigen::MatrixXd& features) {
  if (features.rows() < 2) throw ArgumentError("fid: need at least 2 samples");
  FidStats s;
  s.count = features.rows();
  s.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
  s.cov = centered.transpose() * centered / static_cast<double>(s.count - 1);
  return s;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw NumericError(std::string("fid: eigendecomposition of ") + what + " failed");
  Eigen::VectorXd ev = es.eigenvalues();
  for (Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-6) throw NumericError(std::string("fid: ") + what + " is not positive semi-definite");
    ev[i] = std::sqrt(std::max(ev[i], 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const FidStats& a, const FidStats& b) {
  if (a.mean.size() != b.mean.size()) throw DimensionError("fid: feature dimensions differ");
  const Eigen::MatrixXd root_a = psd_sqrt(a.cov, "the first covariance");
  const Eigen::MatrixXd inner = root_a * b.cov * root_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("fid: matrix square root did not converge");
  double trace_root = 0;
  for (Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double ev = es.eigenvalues()[i];
    if (ev < -1e-6) throw NumericError("fid: covariance product has a negative eigenvalue");
    trace_root += std::sqrt(std::max(ev, 0.0));
  }
  const double value = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2 * trace_root;
  return std::max(value, 0.0);
}

PcaFeatures PcaFeatures::fit(const Eigen::MatrixXd& pixels, Index dims) {
  if (pixels.rows() < 2) throw ArgumentError("pca: need at least 2 samples");
  PcaFeatures p;
  p.mean = pixels.colwise().mean().transpose();
  const Eigen::MatrixXd centered = pixels.rowwise() - p.mean.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Index k = std::min({dims, pixels.rows() - 1, pixels.cols()});
  p.components = svd.matrixV().leftCols(k);
  return p;
}

Eigen::MatrixXd PcaFeatures::apply(const Eigen::MatrixXd& pixels) const {
  if (pixels.cols() != mean.size()) throw DimensionError("pca: pixel count differs from the fitted set");
  return (pixels.rowwise() - mean.transpose()) * components;
}

Eigen::MatrixXd flatten_images(const TensorF& images) { return to_rows(images); }

FidReport fid(const Eigen::MatrixXd& real, const Eigen::MatrixXd& generated, Index dims) {
  const PcaFeatures phi = PcaFeatures::fit(real, dims);
  FidReport r;
  r.dims = phi.components.cols();
  r.real_count = real.rows();
  r.generated_count = generated.rows();
  r.feature_function = "pca" + std::to_string(r.dims) + "-pixels (fitted on the real set; not Inception)";
  r.value = frechet_distance(fid_stats(phi.apply(real)), fid_stats(phi.apply(generated)));
  return r;
}

// ---------------------------------------------------------------------------
// Pose oracle

PoseOracle::PoseOracle(const Options& options) : options_(options) {
  arch_ = ArchConfig::desk(2);
  arch_.image_size = options.image_size;
  arch_.encoder_blocks = {{{16, 2}}, {{32, 2}}, {{32, 2}}};
  arch_.validate();
  RngStream rng(options.seed);
  encoder_ = std::make_shared<Encoder<float>>(arch_, 32, rng);
  head_ = std::make_shared<DenseHead<float>>(32, 1, arch_.init_stddev, rng);
}

VarF PoseOracle::forward(const VarF& x, ForwardMode mode) { return head_->forward(encoder_->forward(x, mode)); }

std::vector<NamedParam<float>> PoseOracle::named_parameters() {
  std::vector<NamedParam<float>> params;
  std::vector<NamedBuffer<float>> buffers;
  encoder_->collect("oracle/enc", params, buffers);
  head_->collect("oracle/head", params);
  return params;
}

std::vector<NamedBuffer<float>> PoseOracle::named_buffers() {
  std::vector<NamedParam<float>> params;
  std::vector<NamedBuffer<float>> buffers;
  encoder_->collect("oracle/enc", params, buffers);
  return buffers;
}

std::vector<double> PoseOracle::predict(const TensorF& images) {
  if (images.rank() != 4 || images.dim(2) != options_.image_size)
    throw DimensionError("pose oracle: expected [N, 3, " + std::to_string(options_.image_size) + ", " +
                         std::to_string(options_.image_size) + "], got " + shape_str(images.shape()));
  const TensorF out = forward(VarF(images), ForwardMode::eval()).value();
  std::vector<double> yaw;
  for (Index i = 0; i < out.size(); ++i) yaw.push_back(out[i] * options_.max_yaw_degrees);
  return yaw;
}

PoseOracle PoseOracle::train(const Options& options) {
  SyntheticFaceConfig sc;
  sc.identities = options.identities;
  sc.train_per_identity = options.train_per_identity;
  sc.heldout_per_identity = options.heldout_per_identity;
  sc.image_size = options.image_size;
  sc.source_size = options.source_size;
  sc.max_yaw_degrees = options.max_yaw_degrees;
  const Dataset data = generate_synthetic(sc, options.seed);

  PoseOracle oracle(options);
  auto named = oracle.named_parameters();
  std::vector<VarF> params;
  for (auto& p : named) params.push_back(p.var);
  AdamConfig ac;
  ac.learning_rate = options.learning_rate;
  ac.beta1 = 0.9;
  AdamState<float> adam(ac, params);

  RngStream rng = RngStream(options.seed).fork(0x0AC1E);
  BatchIterator batches(data.split("train"), options.batch_size, options.seed);
  const Index plane = 3 * options.image_size * options.image_size;
  for (int step = 0; step < options.steps; ++step) {
    Batch b = make_batch(data, batches.batch(static_cast<std::uint64_t>(step)), options.image_size, &rng);
    TensorF target(Shape{b.images.dim(0), 1});
    for (Index i = 0; i < b.images.dim(0); ++i) {
      double yaw = b.yaw_degrees[static_cast<std::size_t>(i)];
      // The renderer is mirror-symmetric, so a mirrored face has negated yaw.
      if (rng.uniform() < 0.5) {
        TensorF img(Shape{3, options.image_size, options.image_size}, b.images.vec().segment(i * plane, plane));
        b.images.vec().segment(i * plane, plane) = mirror(img).vec();
        yaw = -yaw;
      }
      target[i] = static_cast<float>(yaw / options.max_yaw_degrees);
    }
    for (auto& p : params) p.zero_grad();
    VarF loss = mean(square(sub(oracle.forward(VarF(b.images), ForwardMode::train(true)), VarF(target))));
    loss.backward();
    adam_step(params, adam);
  }

  auto mae = [&](const std::vector<std::size_t>& idx) {
    double total = 0;
    for (std::size_t start = 0; start < idx.size(); start += 64) {
      std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                     idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), start + 64)));
      Batch b = make_batch(data, chunk, options.image_size, nullptr);
      const auto yaw = oracle.predict(b.images);
      for (std::size_t i = 0; i < chunk.size(); ++i) total += std::abs(yaw[i] - b.yaw_degrees[i]);
    }
    return total / static_cast<double>(idx.size());
  };
  std::vector<std::size_t> heldout = data.split("gallery");
  const auto& probes = data.split("probe");
  heldout.insert(heldout.end(), probes.begin(), probes.end());
  oracle.train_mae_ = mae(data.split("train"));
  oracle.heldout_mae_ = mae(heldout);
  if (!(oracle.heldout_mae_ < 0.1 * oracle.yaw_range()))
    throw OracleUnfitError("pose oracle: held-out MAE " + std::to_string(oracle.heldout_mae_) +
                           " degrees is not below 10% of the " + std::to_string(oracle.yaw_range()) +
                           " degree range");
  return oracle;
}

void PoseOracle::save(const fs::path& path) {
  Archive a;
  for (auto& p : named_parameters()) a.put(p.name, p.var.value());
  for (auto& b : named_buffers()) a.put(b.name, *b.tensor);
  a.put_u64("oracle/options", {static_cast<std::uint64_t>(options_.identities),
                               static_cast<std::uint64_t>(options_.train_per_identity),
                               static_cast<std::uint64_t>(options_.heldout_per_identity),
                               static_cast<std::uint64_t>(options_.image_size),
                               static_cast<std::uint64_t>(options_.source_size), static_cast<std::uint64_t>(options_.steps),
                               static_cast<std::uint64_t>(options_.batch_size), options_.seed});
  a.put_f64("oracle/metrics", {options_.max_yaw_degrees, options_.learning_rate, train_mae_, heldout_mae_});
  a.save(path);
}

PoseOracle PoseOracle::load(const fs::path& path) {
  const Archive a = Archive::load(path);
  const auto u = a.get_u64("oracle/options");
  const auto f = a.get_f64("oracle/metrics");
  if (u.size() != 8 || f.size() != 4) throw CheckpointError(path.string() + ": malformed pose oracle record");
  Options o;
  o.identities = static_cast<int>(u[0]);
  o.train_per_identity = static_cast<int>(u[1]);
  o.heldout_per_identity = static_cast<int>(u[2]);
  o.image_size = static_cast<Index>(u[3]);
  o.source_size = static_cast<Index>(u[4]);
  o.steps = static_cast<int>(u[5]);
  o.batch_size = static_cast<Index>(u[6]);
  o.seed = u[7];
  o.max_yaw_degrees = f[0];
  o.learning_rate = f[1];
  PoseOracle oracle(o);
  auto take = [&](const std::string& name, TensorF& dst) {
    const TensorF& src = a.get(name);
    if (src.shape() != dst.shape()) throw CheckpointError(path.string() + ": '" + name + "' has the wrong shape");
    dst = src;
  };
  for (auto& p : oracle.named_parameters()) take(p.name, p.var.mutable_value());
  for (auto& b : oracle.named_buffers()) take(b.name, *b.tensor);
  oracle.train_mae_ = f[2];
  oracle.heldout_mae_ = f[3];
  return oracle;
}

// ---------------------------------------------------------------------------
// Pose sweep

std::vector<double> code_grid(double lo, double hi, int count) {
  if (count < 1) throw ConfigError("code grid: need at least one code");
  if (count == 1) return {0.5 * (lo + hi)};
  std::vector<double> out;
  for (int i = 0; i < count; ++i) out.push_back(lo + (hi - lo) * i / (count - 1));
  return out;
}

PoseSweep pose_sweep(Generator<float>& generator, const TensorF& image, const std::vector<double>& codes,
                     std::uint64_t z_seed, PoseOracle* oracle) {
  if (codes.empty()) throw ConfigError("pose sweep: empty code grid");
  for (std::size_t i = 1; i < codes.size(); ++i)
    if (!(codes[i] > codes[i - 1])) throw ConfigError("pose sweep: code grid must be increasing");
  const auto& cfg = generator.config();
  const Index k = static_cast<Index>(codes.size());
  const TensorF x = image.reshaped(Shape{1, image.dim(0), image.dim(1), image.dim(2)});
  const TensorF e = generator.encode(VarF(x), ForwardMode::eval()).value();

  RngStream rng(z_seed);
  Eigen::VectorXf z(cfg.noise_dim);
  for (Index i = 0; i < z.size(); ++i) z[i] = static_cast<float>(rng.normal());
  TensorF es(Shape{k, cfg.feature_dim}), cs(Shape{k, 1}), zs(Shape{k, cfg.noise_dim});
  for (Index i = 0; i < k; ++i) {
    es.vec().segment(i * cfg.feature_dim, cfg.feature_dim) = e.vec();
    cs[i] = static_cast<float>(codes[static_cast<std::size_t>(i)]);
    zs.vec().segment(i * cfg.noise_dim, cfg.noise_dim) = z;
  }
  PoseSweep s;
  s.codes = codes;
  s.images = generator.decode(VarF(es), VarF(cs), VarF(zs), ForwardMode::eval()).value();
  if (oracle) {
    s.oracle_yaw = oracle->predict(s.images);
    s.spearman = codes.size() > 1 ? spearman(codes, s.oracle_yaw) : 0.0;
  }
  return s;
}

DisentanglementResult disentanglement(Generator<float>& generator, const Dataset& dataset, PoseOracle& oracle,
                                      double code_lo, double code_hi, int grid, std::uint64_t z_seed) {
  const auto codes = code_grid(code_lo, code_hi, grid);
  DisentanglementResult r;
  const Index target = generator.config().image_size;
  for (std::size_t idx : dataset.split("gallery")) {
    const TensorF img = center_crop(dataset.samples[idx].image, target);
    r.per_image.push_back(pose_sweep(generator, img, codes, z_seed, &oracle).spearman);
  }
  if (r.per_image.empty()) throw ProtocolError("disentanglement: empty gallery");
  for (double v : r.per_image) r.mean_spearman += v / static_cast<double>(r.per_image.size());
  return r;
}

Image8 sweep_grid(const TensorF& images) {
  const Index k = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  TensorF grid(Shape{c, h, k * w});
  for (Index i = 0; i < k; ++i)
    for (Index ch = 0; ch < c; ++ch)
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) grid[(ch * h + y) * k * w + i * w + x] = images.at(i, ch, y, x);
  return to_image(grid);
}

// ---------------------------------------------------------------------------
// Ablation

const char* variant_name(AblationVariant v) {
  switch (v) {
    case AblationVariant::Full: return "full";
    case AblationVariant::MinusPose: return "minus-Dc";
    case AblationVariant::MinusPixel: return "minus-Dr";
    case AblationVariant::MinusAdversarial: return "minus-Da";
    case AblationVariant::PoseClassification: return "pose-classification";
  }
  return "?";
}

AblationVariant variant_from_name(const std::string& name) {
  for (auto v : all_variants())
    if (name == variant_name(v)) return v;
  throw ConfigError("unknown ablation variant '" + name +
                    "' (expected full, minus-Dc, minus-Dr, minus-Da or pose-classification)");
}

std::vector<AblationVariant> all_variants() {
  return {AblationVariant::Full, AblationVariant::MinusPose, AblationVariant::MinusPixel,
          AblationVariant::MinusAdversarial, AblationVariant::PoseClassification};
}

TrainConfig apply_variant(TrainConfig config, AblationVariant v) {
  auto& l = config.weights.lambda;
  auto& m = config.weights.mu;
  switch (v) {
    case AblationVariant::Full: break;
    case AblationVariant::MinusPose: l.pose = m.pose = 0; break;
    case AblationVariant::MinusPixel: l.pixel = m.pixel = 0; break;
    case AblationVariant::MinusAdversarial: l.adv = m.adv = 0; break;
    case AblationVariant::PoseClassification: config.arch.pose_classes = 9; break;
  }
  return config;
}

Rank1Result evaluate_rank1(Generator<float>& generator, const Dataset& dataset, double code_lo, double code_hi,
                           int bins) {
  const auto& gallery = dataset.split("gallery");
  const auto& probes = dataset.split("probe");
  std::vector<int> gid, pid;
  std::vector<double> pcode;
  for (std::size_t i : gallery) gid.push_back(dataset.samples[i].identity);
  for (std::size_t i : probes) {
    pid.push_back(dataset.samples[i].identity);
    pcode.push_back(dataset.samples[i].pose_code);
  }
  return rank1_identification(extract_features(generator, dataset, gallery), gid,
                              extract_features(generator, dataset, probes), pid, pcode, code_lo, code_hi, bins);
}

AblationTable run_ablation(const TrainConfig& base, const Dataset& dataset, const std::vector<AblationVariant>& variants,
                           int bins, const std::function<void(AblationVariant, TrainingState&)>& trained) {
  AblationTable table;
  for (auto v : variants) {
    TrainingState state = initial_state(apply_variant(base, v));
    AblationRow row;
    row.variant = variant_name(v);
    TrainOptions opts;
    opts.on_step = [&](const LossReport& r) { row.finite = row.finite && r.all_finite(); };
    train(state, dataset, opts);
    row.steps = state.step;
    row.rank1 = evaluate_rank1(state.generator, dataset, state.config.code_min, state.config.code_max, bins);
    if (trained) trained(v, state);
    table.rows.push_back(std::move(row));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Reports

void write_rank1_csv(const Rank1Result& r, const fs::path& path) {
  auto out = open_report(path);
  out << "bin,code_lo,code_hi,probes,correct,accuracy\n";
  for (std::size_t b = 0; b < r.bin_lo.size(); ++b)
    out << b << ',' << r.bin_lo[b] << ',' << r.bin_hi[b] << ',' << r.bin_probes[b] << ',' << r.bin_correct[b] << ','
        << (r.bin_probes[b] ? std::to_string(r.bin_accuracy(b)) : "") << '\n';
  out << "average,,,,," << r.average << '\n';
  out << "overall,,," << r.probes << ",," << r.overall << '\n';
}

void write_verification_csv(const VerificationResult& r, const fs::path& path) {
  auto out = open_report(path);
  out << "fold,threshold,accuracy\n";
  for (std::size_t f = 0; f < r.fold_accuracy.size(); ++f)
    out << f << ',' << r.thresholds[f] << ',' << r.fold_accuracy[f] << '\n';
  out << "mean,," << r.mean << '\n' << "std,," << r.stddev << '\n';
}

void write_ablation_csv(const AblationTable& t, const fs::path& path) {
  auto out = open_report(path);
  out << "variant";
  if (!t.rows.empty())
    for (std::size_t b = 0; b < t.rows.front().rank1.bin_lo.size(); ++b)
      out << ",bin" << b << "[" << t.rows.front().rank1.bin_lo[b] << ";" << t.rows.front().rank1.bin_hi[b] << ")";
  out << ",average,overall,finite,steps\n";
  for (const auto& row : t.rows) {
    out << row.variant;
    for (std::size_t b = 0; b < row.rank1.bin_lo.size(); ++b)
      out << ',' << (row.rank1.bin_probes[b] ? std::to_string(row.rank1.bin_accuracy(b)) : "");
    out << ',' << row.rank1.average << ',' << row.rank1.overall << ',' << (row.finite ? "true" : "false") << ','
        << row.steps << '\n';
  }
}

std::string rank1_json(const Rank1Result& r) { return rank1_to_json(r).dump(2); }

std::string verification_json(const VerificationResult& r) {
  return json{{"protocol", "verify"},
              {"folds", r.fold_accuracy.size()},
              {"fold_accuracy", r.fold_accuracy},
              {"thresholds", r.thresholds},
              {"mean", r.mean},
              {"std", r.stddev}}
      .dump(2);
}

std::string fid_json(const FidReport& r) {
  return json{{"protocol", "fid"},
              {"fid", r.value},
              {"feature_dims", r.dims},
              {"real_count", r.real_count},
              {"generated_count", r.generated_count},
              {"feature_function", r.feature_function}}
      .dump(2);
}

std::string ablation_json(const AblationTable& t) {
  json rows = json::array();
  for (const auto& row : t.rows) {
    json j = rank1_to_json(row.rank1);
    j["variant"] = row.variant;
    j["finite"] = row.finite;
    j["steps"] = row.steps;
    rows.push_back(j);
  }
  json out = {{"protocol", "ablate"}, {"variants", rows}};
  const AblationRow* full = nullptr;
  for (const auto& row : t.rows)
    if (row.variant == "full") full = &row;
  if (full) {
    json cmp = json::object();
    for (const auto& row : t.rows)
      if (&row != full) cmp[row.variant] = full->rank1.overall >= row.rank1.overall;
    out["full_at_least_variant"] = cmp;
  }
  return out.dump(2);
}

}  // namespace dedgan
