#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dedgan/data.hpp"
#include "dedgan/networks.hpp"
#include "dedgan/training.hpp"

namespace dedgan {

/// Row i is the G_enc embedding of indices[i], from a centre crop in eval mode.
Eigen::MatrixXd extract_features(Generator<float>& generator, const Dataset& dataset,
                                 const std::vector<std::size_t>& indices, Index batch_size = 64);
/// Embeddings of a ready [N, C, T, T] batch.
Eigen::MatrixXd extract_features(Generator<float>& generator, const TensorF& images);

double cosine_similarity(const Eigen::VectorXd& u, const Eigen::VectorXd& v);

struct Rank1Result {
  std::vector<double> bin_lo, bin_hi;
  std::vector<std::size_t> bin_probes, bin_correct;
  double average = 0;  // mean over non-empty bins
  double overall = 0;  // fraction of all probes
  std::size_t probes = 0;

  /// Accuracy of bin b, NaN when the bin is empty.
  double bin_accuracy(std::size_t b) const;
};

/// Nearest gallery row by cosine similarity; ties go to the lowest gallery
/// index. Probes are binned by pose code into `bins` equal-width bins over
/// [code_lo, code_hi].
Rank1Result rank1_identification(const Eigen::MatrixXd& gallery, const std::vector<int>& gallery_ids,
                                 const Eigen::MatrixXd& probes, const std::vector<int>& probe_ids,
                                 const std::vector<double>& probe_codes, double code_lo, double code_hi,
                                 int bins = 9);

struct VerificationPair {
  std::size_t a = 0, b = 0;
  bool matched = false;
};

struct VerificationProtocol {
  std::vector<std::vector<VerificationPair>> folds;

  /// Throws ProtocolError on an empty or unbalanced fold or a repeated pair.
  void validate(std::size_t embedding_count) const;
};

/// `folds` folds of `per_class` matched and `per_class` non-matched pairs,
/// drawn without repetition from samples labelled by `identities`.
VerificationProtocol make_verification_protocol(const std::vector<int>& identities, int folds, int per_class,
                                                std::uint64_t seed);

struct VerificationResult {
  std::vector<double> fold_accuracy, thresholds;
  double mean = 0;
  double stddev = 0;  // population standard deviation over folds
};

/// Threshold for fold f maximises accuracy on the other folds; pairs with
/// similarity >= threshold are declared matched.
VerificationResult verification_accuracy(const VerificationProtocol& protocol, const Eigen::MatrixXd& embeddings);

/// Threshold maximising accuracy on the given similarities. Candidates are the
/// midpoints between consecutive distinct values plus both ends; ties go to
/// the smallest threshold.
double best_threshold(const std::vector<double>& similarity, const std::vector<bool>& matched);

struct FidStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased
  Index count = 0;
};

/// Rows are samples.
FidStats fid_stats(const Eigen::MatrixXd& features);
/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2).
double frechet_distance(const FidStats& a, const FidStats& b);

/// Linear PCA projection of flattened pixels, fitted on a reference set.
struct PcaFeatures {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // pixels x dims

  static PcaFeatures fit(const Eigen::MatrixXd& pixels, Index dims);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& pixels) const;
};

/// One flattened image per row.
Eigen::MatrixXd flatten_images(const TensorF& images);

struct FidReport {
  double value = 0;
  Index dims = 0;
  Index real_count = 0, generated_count = 0;
  std::string feature_function;
};

/// FID with a PCA feature function fitted on `real` (rows are flattened images).
FidReport fid(const Eigen::MatrixXd& real, const Eigen::MatrixXd& generated, Index dims = 64);

/// Small convolutional yaw regressor trained on renderer ground truth.
class PoseOracle {
 public:
  struct Options {
    int identities = 20;
    int train_per_identity = 60;
    int heldout_per_identity = 10;
    Index image_size = 32;
    Index source_size = 36;
    double max_yaw_degrees = 60.0;
    int steps = 3000;
    Index batch_size = 32;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0x0AC1E;
  };

  explicit PoseOracle(const Options& options);

  /// Trains on a fresh synthetic set; throws OracleUnfitError when the held-out
  /// MAE is not below 10% of the yaw range.
  static PoseOracle train(const Options& options);

  /// Yaw estimates in degrees for a [N, 3, T, T] batch.
  std::vector<double> predict(const TensorF& images);

  double heldout_mae() const { return heldout_mae_; }
  double train_mae() const { return train_mae_; }
  double yaw_range() const { return 2 * options_.max_yaw_degrees; }
  const Options& options() const { return options_; }

  void save(const std::filesystem::path& path);
  static PoseOracle load(const std::filesystem::path& path);

 private:
  VarF forward(const VarF& x, ForwardMode mode);
  std::vector<NamedParam<float>> named_parameters();
  std::vector<NamedBuffer<float>> named_buffers();

  Options options_;
  ArchConfig arch_;
  std::shared_ptr<Encoder<float>> encoder_;
  std::shared_ptr<DenseHead<float>> head_;
  double heldout_mae_ = 0, train_mae_ = 0;
};

struct PoseSweep {
  TensorF images;  // [K, 3, T, T]
  std::vector<double> codes;
  std::vector<double> oracle_yaw;  // empty without an oracle
  double spearman = 0;
};

/// G_dec(G_enc(x), c_i, z) over the code grid with one z drawn from
/// RngStream(z_seed). `image` is [3, T, T].
PoseSweep pose_sweep(Generator<float>& generator, const TensorF& image, const std::vector<double>& codes,
                     std::uint64_t z_seed, PoseOracle* oracle = nullptr);

/// `count` evenly spaced codes over [lo, hi].
std::vector<double> code_grid(double lo, double hi, int count);

/// Sweeps each gallery image and averages the per-image Spearman correlation.
struct DisentanglementResult {
  std::vector<double> per_image;
  double mean_spearman = 0;
};
DisentanglementResult disentanglement(Generator<float>& generator, const Dataset& dataset, PoseOracle& oracle,
                                      double code_lo, double code_hi, int grid = 9, std::uint64_t z_seed = 7);

/// Side-by-side [3, T, K*T] grid of a sweep.
Image8 sweep_grid(const TensorF& images);

enum class AblationVariant { Full, MinusPose, MinusPixel, MinusAdversarial, PoseClassification };

const char* variant_name(AblationVariant v);
AblationVariant variant_from_name(const std::string& name);
std::vector<AblationVariant> all_variants();
/// Zeroes lambda and mu of the removed head, or switches to 9 pose classes.
TrainConfig apply_variant(TrainConfig config, AblationVariant v);

struct AblationRow {
  std::string variant;
  Rank1Result rank1;
  bool finite = true;
  std::uint64_t steps = 0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
};

/// Rank-1 of a trained generator on the dataset's gallery and probe splits.
Rank1Result evaluate_rank1(Generator<float>& generator, const Dataset& dataset, double code_lo, double code_hi,
                           int bins = 9);

/// Trains every variant from the same seed and budget and evaluates rank-1.
/// `trained` receives each variant's final state (may be null).
AblationTable run_ablation(const TrainConfig& base, const Dataset& dataset, const std::vector<AblationVariant>& variants,
                           int bins = 9, const std::function<void(AblationVariant, TrainingState&)>& trained = {});

void write_rank1_csv(const Rank1Result& r, const std::filesystem::path& path);
void write_verification_csv(const VerificationResult& r, const std::filesystem::path& path);
void write_ablation_csv(const AblationTable& t, const std::filesystem::path& path);
std::string rank1_json(const Rank1Result& r);
std::string verification_json(const VerificationResult& r);
std::string fid_json(const FidReport& r);
std::string ablation_json(const AblationTable& t);

}  // namespace dedgan
