#pragma once

// Single-view (sVAE) and multi-view (mVAE) variational auto-encoders.
//
// Per view the encoder is a stack of stride-2 convolutions with relu, then
// two linear heads producing (mu, logvar). The decoder mirrors it with
// transposed convolutions and ends in a sigmoid. The mVAE concatenates the
// three per-view latents, passes them through one shared "bottleneck" linear
// layer, and splits back into per-view projections feeding three decoders.
//
// Parameter names are "<block>.<layer>.<weight|bias>", e.g.
// "enc_axial.conv1.weight", "bottleneck.weight", "dec_sagittal.deconv3.bias".

#include "mvood/random.hpp"
#include "mvood/tensor.hpp"
#include "mvood/view.hpp"

#include <array>
#include <string>
#include <vector>

namespace mvood {

struct LossWeights {
  double axial = 1.0;     // lambda
  double coronal = 1.0;   // delta
  double sagittal = 1.0;  // gamma
};

struct VAEConfig {
  int height = 32;
  int width = 32;
  std::vector<int> channels{16, 32, 64};
  int latent_dim = 32;
  double beta = 1.0;
  bool multi_view = false;
  LossWeights loss_weights;

  static constexpr int kKernel = 4;
  static constexpr int kStride = 2;
  static constexpr int kPadding = 1;

  /// Spatial extent after the last encoder block.
  int bottom_height() const { return height >> channels.size(); }
  int bottom_width() const { return width >> channels.size(); }
  Index flat_features() const {
    return Index{channels.back()} * bottom_height() * bottom_width();
  }
  int merged_dim() const { return multi_view ? 3 * latent_dim : latent_dim; }

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;
};

inline std::string encoder_prefix(View v) { return "enc_" + to_string(v); }
inline std::string decoder_prefix(View v) { return "dec_" + to_string(v); }

template <typename Scalar>
struct ViewOutput {
  Tensor<Scalar> reconstruction;
  Tensor<Scalar> mu;
  Tensor<Scalar> logvar;
};

template <typename Scalar>
struct VAEOutput {
  std::vector<ViewOutput<Scalar>> views;  // axial first; three entries for the mVAE
  Tensor<Scalar> z;                       // [N, latent_dim] or [N, 3*latent_dim]
};

/// Per-view reparameterisation noise; entries beyond the model's view count
/// are ignored. Undefined entries mean epsilon = 0.
template <typename Scalar>
using Epsilon = std::array<Tensor<Scalar>, 3>;

namespace detail {

template <typename Scalar>
void add_param(ParamSet<Scalar>& ps, const std::string& name, Shape shape, double bound, Rng& rng) {
  const Index n = shape_numel(shape);
  Vec<Scalar> v(n);
  for (Index i = 0; i < n; ++i) v[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
  ps.emplace(name, Tensor<Scalar>(std::move(shape), std::move(v), true));
}

template <typename Scalar>
void add_zero(ParamSet<Scalar>& ps, const std::string& name, Shape shape) {
  ps.emplace(name, Tensor<Scalar>::zeros(std::move(shape), true));
}

template <typename Scalar>
const Tensor<Scalar>& param(const ParamSet<Scalar>& ps, const std::string& name) {
  auto it = ps.find(name);
  if (it == ps.end()) throw std::invalid_argument("missing parameter '" + name + "'");
  return it->second;
}

template <typename Scalar>
void init_linear(ParamSet<Scalar>& ps, const std::string& name, Index in, Index out, Rng& rng) {
  add_param(ps, name + ".weight", {in, out}, std::sqrt(6.0 / static_cast<double>(in + out)), rng);
  add_zero(ps, name + ".bias", {out});
}

}  // namespace detail

template <typename Scalar>
void init_encoder(ParamSet<Scalar>& ps, const VAEConfig& cfg, const std::string& prefix, Rng& rng) {
  constexpr int k = VAEConfig::kKernel;
  int in = 1;
  for (std::size_t b = 0; b < cfg.channels.size(); ++b) {
    const int out = cfg.channels[b];
    const std::string name = prefix + ".conv" + std::to_string(b + 1);
    detail::add_param(ps, name + ".weight", {out, in, k, k}, std::sqrt(6.0 / (in * k * k)), rng);
    detail::add_zero(ps, name + ".bias", {out});
    in = out;
  }
  detail::init_linear(ps, prefix + ".mu", cfg.flat_features(), cfg.latent_dim, rng);
  detail::init_linear(ps, prefix + ".logvar", cfg.flat_features(), cfg.latent_dim, rng);
}

template <typename Scalar>
void init_decoder(ParamSet<Scalar>& ps, const VAEConfig& cfg, const std::string& prefix, Rng& rng) {
  constexpr int k = VAEConfig::kKernel;
  detail::init_linear(ps, prefix + ".fc", cfg.latent_dim, cfg.flat_features(), rng);
  const std::size_t blocks = cfg.channels.size();
  for (std::size_t b = 0; b < blocks; ++b) {
    const int in = cfg.channels[blocks - 1 - b];
    const int out = b + 1 < blocks ? cfg.channels[blocks - 2 - b] : 1;
    const std::string name = prefix + ".deconv" + std::to_string(b + 1);
    detail::add_param(ps, name + ".weight", {in, out, k, k}, std::sqrt(6.0 / (in * k * k)), rng);
    detail::add_zero(ps, name + ".bias", {out});
  }
}

/// Fresh parameters for `cfg`, uniform He/Glorot style, zero biases.
template <typename Scalar>
ParamSet<Scalar> init_vae_params(const VAEConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamSet<Scalar> ps;
  if (!cfg.multi_view) {
    init_encoder(ps, cfg, encoder_prefix(View::Axial), rng);
    init_decoder(ps, cfg, decoder_prefix(View::Axial), rng);
    return ps;
  }
  for (View v : kPlanarViews) init_encoder(ps, cfg, encoder_prefix(v), rng);
  detail::init_linear(ps, "bottleneck", cfg.merged_dim(), cfg.merged_dim(), rng);
  for (View v : kPlanarViews) {
    detail::init_linear(ps, "proj_" + to_string(v), cfg.merged_dim(), cfg.latent_dim, rng);
    init_decoder(ps, cfg, decoder_prefix(v), rng);
  }
  return ps;
}

/// Convolutional trunk of one encoder, flattened to [N, flat_features].
template <typename Scalar>
Tensor<Scalar> encoder_features(const ParamSet<Scalar>& ps, const VAEConfig& cfg,
                                const std::string& prefix, const Tensor<Scalar>& x) {
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != cfg.height || x.dim(3) != cfg.width)
    throw ShapeError("encoder input " + shape_str(x.shape()) + " does not match configured [N,1," +
                     std::to_string(cfg.height) + "," + std::to_string(cfg.width) + "]");
  Tensor<Scalar> h = x;
  for (std::size_t b = 0; b < cfg.channels.size(); ++b) {
    const std::string name = prefix + ".conv" + std::to_string(b + 1);
    h = relu(conv2d(h, detail::param(ps, name + ".weight"), detail::param(ps, name + ".bias"),
                    VAEConfig::kStride, VAEConfig::kPadding));
  }
  return reshape(h, {x.dim(0), cfg.flat_features()});
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> encode(const ParamSet<Scalar>& ps, const VAEConfig& cfg,
                                                 const std::string& prefix,
                                                 const Tensor<Scalar>& x) {
  const auto h = encoder_features(ps, cfg, prefix, x);
  auto mu = linear(h, detail::param(ps, prefix + ".mu.weight"), detail::param(ps, prefix + ".mu.bias"));
  auto logvar = linear(h, detail::param(ps, prefix + ".logvar.weight"),
                       detail::param(ps, prefix + ".logvar.bias"));
  return {mu, logvar};
}

template <typename Scalar>
Tensor<Scalar> decode(const ParamSet<Scalar>& ps, const VAEConfig& cfg, const std::string& prefix,
                      const Tensor<Scalar>& z) {
  const Index n = z.dim(0);
  auto h = relu(linear(z, detail::param(ps, prefix + ".fc.weight"),
                       detail::param(ps, prefix + ".fc.bias")));
  h = reshape(h, {n, Index{cfg.channels.back()}, Index{cfg.bottom_height()},
                  Index{cfg.bottom_width()}});
  const std::size_t blocks = cfg.channels.size();
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::string name = prefix + ".deconv" + std::to_string(b + 1);
    h = conv2d_transpose(h, detail::param(ps, name + ".weight"), detail::param(ps, name + ".bias"),
                         VAEConfig::kStride, VAEConfig::kPadding);
    h = b + 1 < blocks ? relu(h) : sigmoid(h);
  }
  return h;
}

namespace detail {

template <typename Scalar>
Tensor<Scalar> sample_latent(const Tensor<Scalar>& mu, const Tensor<Scalar>& logvar,
                             const Tensor<Scalar>& eps) {
  return reparameterize(mu, logvar, eps.defined() ? eps : Tensor<Scalar>::zeros(mu.shape()));
}

}  // namespace detail

template <typename Scalar>
VAEOutput<Scalar> svae_forward(const ParamSet<Scalar>& ps, const VAEConfig& cfg,
                               const Tensor<Scalar>& x, const Tensor<Scalar>& epsilon = {}) {
  if (!x.defined()) throw std::invalid_argument("svae_forward: missing input");
  const auto [mu, logvar] = encode(ps, cfg, encoder_prefix(View::Axial), x);
  auto z = detail::sample_latent(mu, logvar, epsilon);
  VAEOutput<Scalar> out;
  out.views.push_back({decode(ps, cfg, decoder_prefix(View::Axial), z), mu, logvar});
  out.z = z;
  return out;
}

template <typename Scalar>
VAEOutput<Scalar> mvae_forward(const ParamSet<Scalar>& ps, const VAEConfig& cfg,
                               const std::array<Tensor<Scalar>, 3>& inputs,
                               const Epsilon<Scalar>& epsilon = {}) {
  for (std::size_t i = 0; i < 3; ++i)
    if (!inputs[i].defined())
      throw std::invalid_argument("mvae_forward: missing " + to_string(kPlanarViews[i]) + " input");
  if (inputs[0].shape() != inputs[1].shape() || inputs[0].shape() != inputs[2].shape())
    throw ShapeError("mvae_forward: view inputs differ in shape");

  VAEOutput<Scalar> out;
  std::vector<Tensor<Scalar>> latents;
  for (std::size_t i = 0; i < 3; ++i) {
    auto [mu, logvar] = encode(ps, cfg, encoder_prefix(kPlanarViews[i]), inputs[i]);
    latents.push_back(detail::sample_latent(mu, logvar, epsilon[i]));
    out.views.push_back({Tensor<Scalar>{}, mu, logvar});
  }
  out.z = concat_features(latents);
  const auto shared = relu(linear(out.z, detail::param(ps, std::string("bottleneck.weight")),
                                  detail::param(ps, std::string("bottleneck.bias"))));
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string proj = "proj_" + to_string(kPlanarViews[i]);
    auto zi = linear(shared, detail::param(ps, proj + ".weight"), detail::param(ps, proj + ".bias"));
    out.views[i].reconstruction = decode(ps, cfg, decoder_prefix(kPlanarViews[i]), zi);
  }
  return out;
}

/// mse(recon, x) + beta * KL.
template <typename Scalar>
Tensor<Scalar> vae_view_loss(const Tensor<Scalar>& recon, const Tensor<Scalar>& x,
                             const Tensor<Scalar>& mu, const Tensor<Scalar>& logvar, double beta) {
  auto rec = mse_loss(recon, x);
  if (beta == 0.0) return rec;
  return add(rec, scale(kl_divergence_diag_gaussian(mu, logvar), static_cast<Scalar>(beta)));
}

/// lambda * L_a + delta * L_c + gamma * L_s.
template <typename Scalar>
Tensor<Scalar> multiview_total_loss(const Tensor<Scalar>& axial, const Tensor<Scalar>& coronal,
                                    const Tensor<Scalar>& sagittal, const LossWeights& w) {
  if (w.axial < 0 || w.coronal < 0 || w.sagittal < 0)
    throw std::invalid_argument("loss weights must be non-negative");
  return weighted_sum<Scalar>({axial, coronal, sagittal},
                              {static_cast<Scalar>(w.axial), static_cast<Scalar>(w.coronal),
                               static_cast<Scalar>(w.sagittal)});
}

/// Training objective for either architecture. `inputs` holds the axial
/// tensor first; the mVAE additionally needs coronal and sagittal.
template <typename Scalar>
Tensor<Scalar> model_loss(const ParamSet<Scalar>& ps, const VAEConfig& cfg,
                          const std::array<Tensor<Scalar>, 3>& inputs,
                          const Epsilon<Scalar>& epsilon = {}) {
  if (!cfg.multi_view) {
    const auto out = svae_forward(ps, cfg, inputs[0], epsilon[0]);
    const auto& v = out.views[0];
    return vae_view_loss(v.reconstruction, inputs[0], v.mu, v.logvar, cfg.beta);
  }
  const auto out = mvae_forward(ps, cfg, inputs, epsilon);
  std::array<Tensor<Scalar>, 3> terms;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& v = out.views[i];
    terms[i] = vae_view_loss(v.reconstruction, inputs[i], v.mu, v.logvar, cfg.beta);
  }
  return multiview_total_loss(terms[0], terms[1], terms[2], cfg.loss_weights);
}

}  // namespace mvood
