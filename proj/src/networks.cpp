#include "dedgan/networks.hpp"

#include <string>

namespace dedgan {

namespace {

template <typename Scalar>
Var<Scalar> normal_param(Shape shape, double stddev, RngStream& rng) {
  Tensor<Scalar> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(rng.normal(0.0, stddev));
  return Var<Scalar>(std::move(t), true);
}

template <typename Scalar>
Var<Scalar> const_param(Index n, Scalar value) {
  return Var<Scalar>(Tensor<Scalar>(Shape{n}, value), true);
}

Index kernel_for_stride(Index stride) { return stride == 2 ? 4 : 3; }

}  // namespace

// ---------------------------------------------------------------------------

ArchConfig ArchConfig::desk(Index identities) {
  ArchConfig cfg;
  cfg.profile = "desk";
  cfg.image_size = 32;
  cfg.encoder_blocks = {{{32, 2}}, {{64, 2}}, {{128, 2}}, {{64, 1}}};
  cfg.feature_dim = 64;
  cfg.noise_dim = 16;
  cfg.code_dim = 64;
  cfg.identities = identities;
  return cfg;
}

ArchConfig ArchConfig::paper(Index identities) {
  ArchConfig cfg;
  cfg.profile = "paper";
  cfg.image_size = 96;
  cfg.encoder_blocks = {
      {{32, 1}, {64, 1}},
      {{64, 2}, {64, 1}, {128, 1}},
      {{128, 2}, {96, 1}, {192, 1}},
      {{192, 2}, {128, 1}, {256, 1}},
      {{256, 2}, {160, 1}, {320, 1}},
  };
  cfg.feature_dim = 320;
  cfg.noise_dim = 50;
  cfg.code_dim = 320;
  cfg.identities = identities;
  return cfg;
}

ArchConfig ArchConfig::from_profile(const std::string& name, Index identities) {
  if (name == "desk") return desk(identities);
  if (name == "paper") return paper(identities);
  throw ConfigError("unknown architecture profile '" + name + "' (expected desk or paper)");
}

Index ArchConfig::final_extent() const {
  Index extent = image_size;
  for (const auto& block : encoder_blocks)
    for (const auto& layer : block) {
      if (layer.stride == 2) {
        if (extent % 2 != 0)
          throw ConfigError("architecture: extent " + std::to_string(extent) + " cannot be halved");
        extent /= 2;
      }
    }
  return extent;
}

void ArchConfig::validate() const {
  if (channels < 1) throw ConfigError("architecture: channels must be positive");
  if (image_size < 4) throw ConfigError("architecture: image size too small");
  if (encoder_blocks.empty()) throw ConfigError("architecture: no encoder blocks");
  for (const auto& block : encoder_blocks) {
    if (block.empty()) throw ConfigError("architecture: empty encoder block");
    for (const auto& layer : block) {
      if (layer.out_channels < 1) throw ConfigError("architecture: layer width must be positive");
      if (layer.stride != 1 && layer.stride != 2) throw ConfigError("architecture: stride must be 1 or 2");
    }
  }
  if (feature_dim < 1 || code_dim < 1) throw ConfigError("architecture: feature and code widths must be positive");
  if (noise_dim < 0) throw ConfigError("architecture: noise dimension must be non-negative");
  if (identities < 2) throw ConfigError("architecture: need at least 2 identities");
  if (pose_classes < 0 || pose_classes == 1) throw ConfigError("architecture: pose classes must be 0 or >= 2");
  if (!(init_stddev > 0)) throw ConfigError("architecture: init stddev must be positive");
  final_extent();
}

// ---------------------------------------------------------------------------

template <typename Scalar>
ConvLayer<Scalar>::ConvLayer(Index in_channels, Index out_channels, Index kernel, Index stride, Index padding,
                             bool transpose, bool image_output, double init_stddev, RngStream& rng)
    : stride_(stride), padding_(padding), transpose_(transpose), image_output_(image_output), stats_(out_channels) {
  // conv2d kernels are [out, in, k, k]; transposed kernels are [in, out, k, k]
  Shape shape = transpose ? Shape{in_channels, out_channels, kernel, kernel}
                          : Shape{out_channels, in_channels, kernel, kernel};
  weight_ = normal_param<Scalar>(std::move(shape), init_stddev, rng);
  if (image_output) {
    bias_ = const_param<Scalar>(out_channels, Scalar(0));
  } else {
    gamma_ = const_param<Scalar>(out_channels, Scalar(1));
    beta_ = const_param<Scalar>(out_channels, Scalar(0));
  }
}

template <typename Scalar>
Var<Scalar> ConvLayer<Scalar>::forward(const Var<Scalar>& x, ForwardMode mode) {
  Var<Scalar> h = transpose_ ? conv2d_transpose(x, weight_, stride_, padding_) : conv2d(x, weight_, stride_, padding_);
  if (image_output_) return tanh(add_channel_bias(h, bias_));
  return elu(batch_norm(h, gamma_, beta_, stats_, mode.norm, mode.update_stats));
}

template <typename Scalar>
void ConvLayer<Scalar>::collect(const std::string& prefix, std::vector<NamedParam<Scalar>>& params,
                                std::vector<NamedBuffer<Scalar>>& buffers) {
  params.push_back({prefix + "/weight", weight_});
  if (image_output_) {
    params.push_back({prefix + "/bias", bias_});
  } else {
    params.push_back({prefix + "/bn_scale", gamma_});
    params.push_back({prefix + "/bn_shift", beta_});
    buffers.push_back({prefix + "/bn_running_mean", &stats_.running_mean});
    buffers.push_back({prefix + "/bn_running_var", &stats_.running_var});
  }
}

template <typename Scalar>
DenseHead<Scalar>::DenseHead(Index in, Index out, double init_stddev, RngStream& rng)
    : weight_(normal_param<Scalar>(Shape{out, in}, init_stddev, rng)), bias_(const_param<Scalar>(out, Scalar(0))) {}

template <typename Scalar>
void DenseHead<Scalar>::collect(const std::string& prefix, std::vector<NamedParam<Scalar>>& params) const {
  params.push_back({prefix + "/weight", weight_});
  params.push_back({prefix + "/bias", bias_});
}

// ---------------------------------------------------------------------------

template <typename Scalar>
Encoder<Scalar>::Encoder(const ArchConfig& cfg, Index out_dim, RngStream& rng)
    : image_size_(cfg.image_size), channels_(cfg.channels) {
  Index in = cfg.channels;
  for (std::size_t b = 0; b < cfg.encoder_blocks.size(); ++b) {
    const auto& block = cfg.encoder_blocks[b];
    for (std::size_t l = 0; l < block.size(); ++l) {
      const bool last = b + 1 == cfg.encoder_blocks.size() && l + 1 == block.size();
      const Index out = last ? out_dim : block[l].out_channels;
      layers_.emplace_back(in, out, kernel_for_stride(block[l].stride), block[l].stride, 1, false, false,
                           cfg.init_stddev, rng);
      in = out;
    }
  }
}

template <typename Scalar>
Var<Scalar> Encoder<Scalar>::forward(const Var<Scalar>& x, ForwardMode mode) {
  if (x.shape().size() != 4) throw DimensionError("encoder: input must be [N,C,H,W], got " + shape_str(x.shape()));
  if (x.dim(1) != channels_)
    throw DimensionError("encoder: channel axis has " + std::to_string(x.dim(1)) + ", expected " +
                         std::to_string(channels_));
  if (x.dim(2) != image_size_ || x.dim(3) != image_size_)
    throw DimensionError("encoder: spatial size " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                         " does not match configured " + std::to_string(image_size_));
  Var<Scalar> h = x;
  for (auto& layer : layers_) h = layer.forward(h, mode);
  return global_avg_pool(h);
}

template <typename Scalar>
void Encoder<Scalar>::collect(const std::string& prefix, std::vector<NamedParam<Scalar>>& params,
                              std::vector<NamedBuffer<Scalar>>& buffers) {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(prefix + "/" + std::to_string(i), params, buffers);
}

template <typename Scalar>
Decoder<Scalar>::Decoder(const ArchConfig& cfg, Index in_dim, Index top_channels, RngStream& rng) : in_dim_(in_dim) {
  struct Flat {
    Index in, out, stride;
  };
  std::vector<Flat> enc;
  Index in = cfg.channels;
  for (std::size_t b = 0; b < cfg.encoder_blocks.size(); ++b)
    for (std::size_t l = 0; l < cfg.encoder_blocks[b].size(); ++l) {
      const bool last = b + 1 == cfg.encoder_blocks.size() && l + 1 == cfg.encoder_blocks[b].size();
      const Index out = last ? top_channels : cfg.encoder_blocks[b][l].out_channels;
      enc.push_back({in, out, cfg.encoder_blocks[b][l].stride});
      in = out;
    }
  // Projection from the 1x1 code to the encoder's final extent.
  const Index extent = cfg.final_extent();
  layers_.emplace_back(in_dim, top_channels, extent, 1, 0, true, false, cfg.init_stddev, rng);
  for (auto it = enc.rbegin(); it != enc.rend(); ++it) {
    const bool image = std::next(it) == enc.rend();
    layers_.emplace_back(it->out, it->in, kernel_for_stride(it->stride), it->stride, 1, true, image, cfg.init_stddev,
                         rng);
  }
}

template <typename Scalar>
Var<Scalar> Decoder<Scalar>::forward(const Var<Scalar>& code, ForwardMode mode) {
  if (code.shape().size() != 2 || code.dim(1) != in_dim_)
    throw DimensionError("decoder: input must be [N," + std::to_string(in_dim_) + "], got " + shape_str(code.shape()));
  Var<Scalar> h = reshape(code, Shape{code.dim(0), in_dim_, 1, 1});
  for (auto& layer : layers_) h = layer.forward(h, mode);
  return h;
}

template <typename Scalar>
void Decoder<Scalar>::collect(const std::string& prefix, std::vector<NamedParam<Scalar>>& params,
                              std::vector<NamedBuffer<Scalar>>& buffers) {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(prefix + "/" + std::to_string(i), params, buffers);
}

// ---------------------------------------------------------------------------

template <typename Scalar>
Generator<Scalar>::Generator(const ArchConfig& cfg, RngStream& rng)
    : cfg_(cfg),
      encoder_(cfg, cfg.feature_dim, rng),
      decoder_(cfg, cfg.decoder_input_dim(), cfg.feature_dim, rng) {}

template <typename Scalar>
Var<Scalar> Generator<Scalar>::encode(const Var<Scalar>& x, ForwardMode mode) {
  return encoder_.forward(x, mode);
}

template <typename Scalar>
Var<Scalar> Generator<Scalar>::decode(const Var<Scalar>& e, const Var<Scalar>& c, const Var<Scalar>& z,
                                      ForwardMode mode) {
  if (e.shape().size() != 2 || e.dim(1) != cfg_.feature_dim)
    throw DimensionError("g_decode: feature must be [N," + std::to_string(cfg_.feature_dim) + "], got " +
                         shape_str(e.shape()));
  const Index n = e.dim(0);
  if (c.shape() != Shape{n, 1})
    throw DimensionError("g_decode: pose code must be [" + std::to_string(n) + ",1], got " + shape_str(c.shape()));
  if (cfg_.noise_dim > 0 && z.shape() != Shape{n, cfg_.noise_dim})
    throw DimensionError("g_decode: noise must be [" + std::to_string(n) + "," + std::to_string(cfg_.noise_dim) +
                         "], got " + shape_str(z.shape()));
  Var<Scalar> joined = cfg_.noise_dim > 0 ? concat_cols<Scalar>({e, c, z}) : concat_cols<Scalar>({e, c});
  return decoder_.forward(joined, mode);
}

template <typename Scalar>
void Generator<Scalar>::collect(std::vector<NamedParam<Scalar>>& params, std::vector<NamedBuffer<Scalar>>& buffers) {
  encoder_.collect("G/enc", params, buffers);
  decoder_.collect("G/dec", params, buffers);
}

template <typename Scalar>
std::vector<NamedParam<Scalar>> Generator<Scalar>::named_parameters() {
  std::vector<NamedParam<Scalar>> p;
  std::vector<NamedBuffer<Scalar>> b;
  collect(p, b);
  return p;
}

template <typename Scalar>
std::vector<NamedBuffer<Scalar>> Generator<Scalar>::named_buffers() {
  std::vector<NamedParam<Scalar>> p;
  std::vector<NamedBuffer<Scalar>> b;
  collect(p, b);
  return b;
}

template <typename Scalar>
std::vector<Var<Scalar>> Generator<Scalar>::parameters() {
  std::vector<Var<Scalar>> out;
  for (auto& np : named_parameters()) out.push_back(np.var);
  return out;
}

template <typename Scalar>
void Generator<Scalar>::set_requires_grad(bool on) {
  for (auto& p : parameters()) p.set_requires_grad(on);
}

template <typename Scalar>
void Generator<Scalar>::zero_grad() {
  for (auto& p : parameters()) p.zero_grad();
}

// ---------------------------------------------------------------------------

template <typename Scalar>
Discriminator<Scalar>::Discriminator(const ArchConfig& cfg, RngStream& rng)
    : cfg_(cfg),
      encoder_(cfg, cfg.code_dim, rng),
      decoder_(cfg, cfg.code_dim, cfg.code_dim, rng),
      adv_head_(cfg.code_dim, 1, cfg.init_stddev, rng),
      id_head_(cfg.code_dim, cfg.identities, cfg.init_stddev, rng),
      pose_head_(cfg.code_dim, cfg.pose_classes > 0 ? cfg.pose_classes : 1, cfg.init_stddev, rng) {}

template <typename Scalar>
DiscriminatorOutput<Scalar> Discriminator<Scalar>::forward(const Var<Scalar>& x, ForwardMode mode) {
  Var<Scalar> code = encoder_.forward(x, mode);
  DiscriminatorOutput<Scalar> out;
  out.real_prob = sigmoid(adv_head_.forward(code));
  out.identity_prob = softmax_rows(id_head_.forward(code));
  out.pose = cfg_.pose_classes > 0 ? softmax_rows(pose_head_.forward(code)) : pose_head_.forward(code);
  out.recon = decoder_.forward(code, mode);
  return out;
}

template <typename Scalar>
void Discriminator<Scalar>::collect(std::vector<NamedParam<Scalar>>& params,
                                    std::vector<NamedBuffer<Scalar>>& buffers) {
  encoder_.collect("D/enc", params, buffers);
  decoder_.collect("D/dec", params, buffers);
  adv_head_.collect("D/head_adv", params);
  id_head_.collect("D/head_id", params);
  pose_head_.collect("D/head_pose", params);
}

template <typename Scalar>
std::vector<NamedParam<Scalar>> Discriminator<Scalar>::named_parameters() {
  std::vector<NamedParam<Scalar>> p;
  std::vector<NamedBuffer<Scalar>> b;
  collect(p, b);
  return p;
}

template <typename Scalar>
std::vector<NamedBuffer<Scalar>> Discriminator<Scalar>::named_buffers() {
  std::vector<NamedParam<Scalar>> p;
  std::vector<NamedBuffer<Scalar>> b;
  collect(p, b);
  return b;
}

template <typename Scalar>
std::vector<Var<Scalar>> Discriminator<Scalar>::parameters() {
  std::vector<Var<Scalar>> out;
  for (auto& np : named_parameters()) out.push_back(np.var);
  return out;
}

template <typename Scalar>
void Discriminator<Scalar>::set_requires_grad(bool on) {
  for (auto& p : parameters()) p.set_requires_grad(on);
}

template <typename Scalar>
void Discriminator<Scalar>::zero_grad() {
  for (auto& p : parameters()) p.zero_grad();
}

template class ConvLayer<float>;
template class ConvLayer<double>;
template class DenseHead<float>;
template class DenseHead<double>;
template class Encoder<float>;
template class Encoder<double>;
template class Decoder<float>;
template class Decoder<double>;
template class Generator<float>;
template class Generator<double>;
template class Discriminator<float>;
template class Discriminator<double>;

}  // namespace dedgan
