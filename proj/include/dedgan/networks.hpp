#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dedgan/numerics/autodiff.hpp"
#include "dedgan/numerics/ops.hpp"
#include "dedgan/numerics/rng.hpp"
#include "dedgan/numerics/tensor.hpp"

namespace dedgan {

/// One convolution of an encoder block. Stride 2 uses a 4x4 kernel, stride 1 a
/// 3x3 kernel, both with padding 1, so every layer tiles its input exactly and
/// the mirrored transposed layer restores the original extent.
struct LayerSpec {
  Index out_channels = 0;
  Index stride = 1;
};

using BlockSpec = std::vector<LayerSpec>;

struct ArchConfig {
  std::string profile = "desk";
  Index image_size = 32;
  Index channels = 3;
  /// Encoder topology shared by G_enc and D_enc; the final layer width is
  /// replaced by feature_dim (G) or code_dim (D).
  std::vector<BlockSpec> encoder_blocks;
  Index feature_dim = 64;  // N^f
  Index noise_dim = 16;    // N^z
  Index code_dim = 64;     // width of the discriminator auto-encoder code layer
  Index identities = 20;   // N^d
  Index pose_classes = 0;  // 0: pose regression head; >0: pose classification head
  double init_stddev = 0.02;

  /// 4 blocks, 32 -> 16 -> 8 -> 4 -> global pool; N^f = 64, N^z = 16.
  static ArchConfig desk(Index identities);
  /// One double-convolution block and four triple-convolution blocks on
  /// 96x96 input; N^f = 320, N^z = 50.
  static ArchConfig paper(Index identities);
  static ArchConfig from_profile(const std::string& name, Index identities);

  Index decoder_input_dim() const { return feature_dim + 1 + noise_dim; }
  /// Spatial extent after the encoder's strided layers.
  Index final_extent() const;
  void validate() const;
};

struct ForwardMode {
  NormMode norm = NormMode::Train;
  bool update_stats = true;

  static ForwardMode train(bool update = true) { return {NormMode::Train, update}; }
  static ForwardMode eval() { return {NormMode::Eval, false}; }
};

template <typename Scalar>
struct NamedParam {
  std::string name;
  Var<Scalar> var;
};

template <typename Scalar>
struct NamedBuffer {
  std::string name;
  Tensor<Scalar>* tensor;
};

/// Convolution (or transposed convolution) followed by batch norm and ELU, or
/// by a bias and tanh when it produces an image.
template <typename Scalar>
class ConvLayer {
 public:
  ConvLayer(Index in_channels, Index out_channels, Index kernel, Index stride, Index padding, bool transpose,
            bool image_output, double init_stddev, RngStream& rng);

  Var<Scalar> forward(const Var<Scalar>& x, ForwardMode mode);
  void collect(const std::string& prefix, std::vector<NamedParam<Scalar>>& params,
               std::vector<NamedBuffer<Scalar>>& buffers);

  Index stride() const { return stride_; }
  Index padding() const { return padding_; }
  const Var<Scalar>& weight() const { return weight_; }

 private:
  Index stride_, padding_;
  bool transpose_, image_output_;
  Var<Scalar> weight_;
  Var<Scalar> gamma_, beta_;  // batch-norm affine, hidden layers only
  Var<Scalar> bias_;          // image output layer only
  BatchNormStats<Scalar> stats_;
};

template <typename Scalar>
class DenseHead {
 public:
  DenseHead(Index in, Index out, double init_stddev, RngStream& rng);
  Var<Scalar> forward(const Var<Scalar>& x) const { return linear(x, weight_, bias_); }
  void collect(const std::string& prefix, std::vector<NamedParam<Scalar>>& params) const;

 private:
  Var<Scalar> weight_, bias_;
};

/// Conv stack ending in global average pooling: image -> [N, out_dim].
template <typename Scalar>
class Encoder {
 public:
  Encoder(const ArchConfig& cfg, Index out_dim, RngStream& rng);
  Var<Scalar> forward(const Var<Scalar>& x, ForwardMode mode);
  void collect(const std::string& prefix, std::vector<NamedParam<Scalar>>& params,
               std::vector<NamedBuffer<Scalar>>& buffers);

 private:
  Index image_size_, channels_;
  std::vector<ConvLayer<Scalar>> layers_;
};

/// Transposed-conv stack mirroring the encoder: [N, in_dim] -> image.
template <typename Scalar>
class Decoder {
 public:
  Decoder(const ArchConfig& cfg, Index in_dim, Index top_channels, RngStream& rng);
  Var<Scalar> forward(const Var<Scalar>& code, ForwardMode mode);
  void collect(const std::string& prefix, std::vector<NamedParam<Scalar>>& params,
               std::vector<NamedBuffer<Scalar>>& buffers);

 private:
  Index in_dim_;
  std::vector<ConvLayer<Scalar>> layers_;
};

/// G = [G_enc, G_dec]. The decoder consumes the concatenation [e, c, z].
template <typename Scalar>
class Generator {
 public:
  Generator(const ArchConfig& cfg, RngStream& rng);

  /// e = G_enc(x), shape [N, N^f].
  Var<Scalar> encode(const Var<Scalar>& x, ForwardMode mode = {});
  /// G_dec([e, c, z]) with c of shape [N, 1] and z of shape [N, N^z].
  Var<Scalar> decode(const Var<Scalar>& e, const Var<Scalar>& c, const Var<Scalar>& z, ForwardMode mode = {});
  Var<Scalar> forward(const Var<Scalar>& x, const Var<Scalar>& c, const Var<Scalar>& z, ForwardMode mode = {}) {
    return decode(encode(x, mode), c, z, mode);
  }

  const ArchConfig& config() const { return cfg_; }
  std::vector<NamedParam<Scalar>> named_parameters();
  std::vector<NamedBuffer<Scalar>> named_buffers();
  std::vector<Var<Scalar>> parameters();
  void set_requires_grad(bool on);
  void zero_grad();

 private:
  void collect(std::vector<NamedParam<Scalar>>& params, std::vector<NamedBuffer<Scalar>>& buffers);

  ArchConfig cfg_;
  Encoder<Scalar> encoder_;
  Decoder<Scalar> decoder_;
};

template <typename Scalar>
struct DiscriminatorOutput {
  Var<Scalar> real_prob;      // D^a, [N, 1], sigmoid
  Var<Scalar> identity_prob;  // D^d, [N, N^d], softmax
  Var<Scalar> pose;           // D^c, [N, 1] regression or [N, K] class probabilities
  Var<Scalar> recon;          // D^r, [N, C, H, W], tanh
};

/// D = [D_enc, D_dec] with the four heads attached to the code layer.
template <typename Scalar>
class Discriminator {
 public:
  Discriminator(const ArchConfig& cfg, RngStream& rng);

  DiscriminatorOutput<Scalar> forward(const Var<Scalar>& x, ForwardMode mode = {});

  const ArchConfig& config() const { return cfg_; }
  std::vector<NamedParam<Scalar>> named_parameters();
  std::vector<NamedBuffer<Scalar>> named_buffers();
  std::vector<Var<Scalar>> parameters();
  void set_requires_grad(bool on);
  void zero_grad();

 private:
  void collect(std::vector<NamedParam<Scalar>>& params, std::vector<NamedBuffer<Scalar>>& buffers);

  ArchConfig cfg_;
  Encoder<Scalar> encoder_;
  Decoder<Scalar> decoder_;
  DenseHead<Scalar> adv_head_, id_head_, pose_head_;
};

template <typename Scalar>
struct NetworkPair {
  Generator<Scalar> generator;
  Discriminator<Scalar> discriminator;
};

/// Draws every weight from Normal(0, init_stddev); biases and batch-norm
/// shifts start at 0, batch-norm scales at 1. G is drawn before D.
template <typename Scalar>
NetworkPair<Scalar> init_params(const ArchConfig& cfg, RngStream& rng) {
  cfg.validate();
  Generator<Scalar> g(cfg, rng);
  Discriminator<Scalar> d(cfg, rng);
  return {std::move(g), std::move(d)};
}

}  // namespace dedgan
