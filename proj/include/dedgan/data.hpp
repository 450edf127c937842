#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dedgan/numerics/rng.hpp"
#include "dedgan/numerics/tensor.hpp"
#include "dedgan/shapemodel.hpp"

namespace dedgan {

/// 8-bit interleaved RGB image.
struct Image8 {
  Index width = 0, height = 0;
  std::vector<std::uint8_t> rgb;

  std::uint8_t& at(Index y, Index x, Index c) { return rgb[static_cast<std::size_t>((y * width + x) * 3 + c)]; }
  std::uint8_t at(Index y, Index x, Index c) const { return rgb[static_cast<std::size_t>((y * width + x) * 3 + c)]; }
  bool operator==(const Image8&) const = default;
};

Image8 read_ppm(const std::filesystem::path& path);
void write_ppm(const Image8& image, const std::filesystem::path& path);

/// Linear map [0,255] -> [-1,1], output [3,H,W].
TensorF preprocess(const Image8& image);
/// Inverse of preprocess with rounding and clamping; accepts [3,H,W].
Image8 to_image(const TensorF& chw);

/// Uniform random offset crop of a [C,H,W] image.
TensorF random_crop(const TensorF& chw, Index target, RngStream& rng);
/// Centre crop (offset floor((H - target) / 2)).
TensorF center_crop(const TensorF& chw, Index target);
/// Train-time crops draw from rng; eval-time crops (rng == nullptr) centre.
TensorF augment_crop(const TensorF& chw, Index target, RngStream* rng);

struct FaceSample {
  TensorF image;  // [3, H, W] at source resolution, values in [-1, 1]
  int identity = 0;
  Landmarks landmarks = Landmarks::Zero();
  double pose_code = 0.0;
  double yaw_degrees = 0.0;  // renderer ground truth; NaN for ingested images
  bool real = true;
};

struct Dataset {
  std::vector<FaceSample> samples;
  int identities = 0;
  std::vector<std::string> identity_names;
  ShapeModel shape_model;
  /// Named index lists: "train", "gallery", "probe".
  std::map<std::string, std::vector<std::size_t>> splits;

  const std::vector<std::size_t>& split(const std::string& name) const;
  /// Throws if a sample breaks its invariants or splits overlap.
  void validate() const;
  /// Smallest and largest pose code over a split.
  std::pair<double, double> code_range(const std::string& split_name) const;
};

struct SyntheticFaceConfig {
  int identities = 20;
  Index image_size = 32;   // crop target
  Index source_size = 36;  // rendered resolution
  double max_yaw_degrees = 60.0;
  double noise_std = 2.0;  // in 8-bit levels
  int train_per_identity = 40;
  int heldout_per_identity = 10;

  void validate() const;
};

/// Per-identity face geometry and colouring in units of the face half-width.
struct FaceGeometry {
  double radius_x, radius_y, radius_z;
  double eye_x, eye_y, eye_rx, eye_ry;
  double brow_y, brow_thickness;
  double nose_y, nose_length, nose_width;
  double mouth_y, mouth_half_width, mouth_ry;
  double hair_line;
  double skin[3], hair[3], eyes[3], lips[3];
};

FaceGeometry identity_geometry(int identity, std::uint64_t seed);

struct RenderedFace {
  Image8 image;
  Landmarks landmarks;
};

/// Orthographic render of a yawed ellipsoid face. Positive yaw turns the nose
/// towards +x. noise_rng may be null for a noise-free render.
RenderedFace render_face(const FaceGeometry& g, double yaw_degrees, Index size, double noise_std,
                         RngStream* noise_rng);

/// Renders the identities, fits the shape model on the training landmarks and
/// labels every sample with its pose code. The first held-out sample of each
/// identity is rendered at yaw 0; the gallery holds the held-out sample with
/// the smallest |code| per identity and the probes hold the rest.
Dataset generate_synthetic(const SyntheticFaceConfig& config, std::uint64_t seed);

/// Writes <dir>/<identity>/<nnnnn>.ppm, manifest.csv and splits.ini.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

struct LoadOptions {
  /// When unset the shape model is fitted on the manifest landmarks.
  const ShapeModel* shape_model = nullptr;
};

/// Reads a manifest of "path,x1,y1,...,x5,y5" lines; identity is the image's
/// parent directory name (sorted). A splits.ini next to the manifest is used
/// when present; otherwise every sample is "train".
Dataset load_directory(const std::filesystem::path& manifest, const LoadOptions& options = {});

/// Reads the key-value [splits] section: name = comma-separated indices.
std::map<std::string, std::vector<std::size_t>> read_splits(const std::filesystem::path& path);
void write_splits(const std::map<std::string, std::vector<std::size_t>>& splits, const std::filesystem::path& path);

/// Seeded per-epoch permutation over a fixed index list; batch t is a pure
/// function of (seed, t). The final short batch of each epoch is dropped.
class BatchIterator {
 public:
  BatchIterator(std::vector<std::size_t> indices, Index batch_size, std::uint64_t seed);

  std::vector<std::size_t> batch(std::uint64_t step);
  Index batches_per_epoch() const { return per_epoch_; }

 private:
  std::vector<std::size_t> indices_;
  Index batch_size_, per_epoch_;
  std::uint64_t seed_;
  std::uint64_t cached_epoch_ = ~std::uint64_t{0};
  std::vector<std::size_t> order_;
};

struct Batch {
  TensorF images;  // [B, 3, T, T]
  std::vector<int> identities;
  TensorF codes;  // [B, 1]
  std::vector<double> yaw_degrees;
};

/// Stacks crops of the selected samples; crop_rng null means centre crops.
Batch make_batch(const Dataset& dataset, const std::vector<std::size_t>& indices, Index target, RngStream* crop_rng);

/// Horizontal mirror of a [C,H,W] or [N,C,H,W] tensor.
TensorF mirror(const TensorF& images);

}  // namespace dedgan
