#pragma once

// DCGAN-style generator G(z; w): a stack of transposed convolutions with
// optional per-channel normalization, ReLU hidden activations and a tanh
// output, followed by a center crop when the target size is not a power of two.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "csdip/random.hpp"
#include "csdip/tensor.hpp"

namespace csdip {

struct LayerSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 4;
  std::size_t stride = 2;
  std::size_t pad = 1;
  bool normalize = true;
  Activation activation = Activation::relu;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct GeneratorConfig {
  std::size_t latent_dim = 128;
  std::vector<LayerSpec> layers;
  Shape output_shape;  ///< {channels, height, width}

  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;

  /// Shape produced by the layer stack before cropping.
  Shape composed_shape() const {
    std::size_t h = 1, w = 1, c = latent_dim;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& s = layers[l];
      if (s.in_channels != c) {
        throw ConfigError("generator layer " + std::to_string(l) + ": in_channels " +
                          std::to_string(s.in_channels) + " does not match previous width " +
                          std::to_string(c));
      }
      const long nh = conv_transpose_extent(h, s.kernel, s.stride, s.pad);
      const long nw = conv_transpose_extent(w, s.kernel, s.stride, s.pad);
      if (s.kernel < 1 || s.stride < 1 || nh < 1 || nw < 1) {
        throw ConfigError("generator layer " + std::to_string(l) + ": degenerate geometry");
      }
      h = static_cast<std::size_t>(nh);
      w = static_cast<std::size_t>(nw);
      c = s.out_channels;
    }
    return {c, h, w};
  }

  void validate() const {
    if (latent_dim < 1) throw ConfigError("generator: latent_dim must be >= 1");
    if (layers.empty()) throw ConfigError("generator: at least one layer is required");
    if (output_shape.size() != 3) {
      throw ConfigError("generator: output_shape must be {channels, height, width}");
    }
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
      if (layers[l].activation != Activation::relu) {
        throw ConfigError("generator layer " + std::to_string(l) + ": hidden activation must be relu");
      }
    }
    if (layers.back().activation != Activation::tanh) {
      throw ConfigError("generator: final activation must be tanh");
    }
    const Shape composed = composed_shape();
    if (composed[0] != output_shape[0] || composed[1] < output_shape[1] ||
        composed[2] < output_shape[2]) {
      throw ConfigError("generator: layers compose to " + shape_string(composed) +
                        ", which cannot be cropped to " + shape_string(output_shape));
    }
  }

  std::size_t output_size() const { return shape_size(output_shape); }
};

/// Default architecture for a {channels, height, width} image: a 4x4 stem
/// (K=4, stride 1, pad 0) then stride-2 doublings up to the next power of two
/// >= max(height, width), with hidden widths 128 .. 64, 32, 16 counting back
/// from the output. Hidden layers are normalized.
inline GeneratorConfig default_generator_config(std::size_t channels, std::size_t height,
                                                std::size_t width, std::size_t latent_dim = 128) {
  if (channels == 0 || height == 0 || width == 0) {
    throw ConfigError("default_generator_config: empty output shape");
  }
  std::size_t doublings = 0;
  while ((std::size_t{4} << doublings) < std::max(height, width)) ++doublings;
  const std::size_t layer_count = doublings + 1;

  GeneratorConfig cfg;
  cfg.latent_dim = latent_dim;
  cfg.output_shape = {channels, height, width};
  std::size_t in = latent_dim;
  for (std::size_t l = 0; l < layer_count; ++l) {
    const bool last = l + 1 == layer_count;
    const std::size_t from_end = layer_count - 2 - l;  // 0 for the last hidden layer
    const std::size_t out =
        last ? channels : std::min<std::size_t>(128, std::size_t{16} << std::min<std::size_t>(from_end, 3));
    LayerSpec spec;
    spec.in_channels = in;
    spec.out_channels = out;
    spec.kernel = 4;
    spec.stride = l == 0 ? 1 : 2;
    spec.pad = l == 0 ? 0 : 1;
    spec.normalize = !last;
    spec.activation = last ? Activation::tanh : Activation::relu;
    cfg.layers.push_back(spec);
    in = out;
  }
  cfg.validate();
  return cfg;
}

struct LayerWeights {
  Tensor kernels;  ///< [C_in, C_out, K, K]
  Tensor gain;     ///< [C_out], empty when the layer is not normalized
  Tensor bias;     ///< [C_out], empty when the layer is not normalized

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;

  std::size_t size() const { return kernels.size() + gain.size() + bias.size(); }
};

/// The optimizable weights w, grouped by layer. Also used for gradients and
/// optimizer buffers, which share the layout.
struct GeneratorWeights {
  GeneratorConfig config;
  std::vector<LayerWeights> layers;

  friend bool operator==(const GeneratorWeights&, const GeneratorWeights&) = default;

  std::size_t layer_count() const noexcept { return layers.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.size();
    return n;
  }

  /// Parameter tensors of one layer in a fixed order: kernels, gain, bias.
  std::vector<std::span<double>> layer_spans(std::size_t l) {
    auto& lw = layers.at(l);
    std::vector<std::span<double>> out{lw.kernels.values()};
    if (!lw.gain.empty()) {
      out.push_back(lw.gain.values());
      out.push_back(lw.bias.values());
    }
    return out;
  }
  std::vector<std::span<const double>> layer_spans(std::size_t l) const {
    const auto& lw = layers.at(l);
    std::vector<std::span<const double>> out{lw.kernels.values()};
    if (!lw.gain.empty()) {
      out.push_back(lw.gain.values());
      out.push_back(lw.bias.values());
    }
    return out;
  }

  /// Every parameter tensor, layer by layer.
  std::vector<std::span<double>> spans() {
    std::vector<std::span<double>> out;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto s = layer_spans(l);
      out.insert(out.end(), s.begin(), s.end());
    }
    return out;
  }
  std::vector<std::span<const double>> spans() const {
    std::vector<std::span<const double>> out;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto s = layer_spans(l);
      out.insert(out.end(), s.begin(), s.end());
    }
    return out;
  }

  std::vector<double> flatten() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for (auto s : spans()) flat.insert(flat.end(), s.begin(), s.end());
    return flat;
  }

  void assign_flat(std::span<const double> flat) {
    if (flat.size() != parameter_count()) {
      throw ShapeError("assign_flat: got " + std::to_string(flat.size()) + " values for " +
                       std::to_string(parameter_count()) + " parameters");
    }
    std::size_t off = 0;
    for (auto s : spans()) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), s.size(), s.begin());
      off += s.size();
    }
  }

  GeneratorWeights zeros_like() const {
    GeneratorWeights z{config, {}};
    auto zero = [](const Tensor& t) { return t.empty() ? Tensor() : Tensor(t.shape()); };
    for (const auto& l : layers) z.layers.push_back({zero(l.kernels), zero(l.gain), zero(l.bias)});
    return z;
  }

  void require_same_layout(const GeneratorWeights& other, std::string_view where) const {
    if (other.layers.size() != layers.size()) {
      throw ShapeError(std::string(where) + ": layer count " + std::to_string(layers.size()) +
                       " vs " + std::to_string(other.layers.size()));
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
      layers[l].kernels.require_same_shape(other.layers[l].kernels, where);
      layers[l].gain.require_same_shape(other.layers[l].gain, where);
      layers[l].bias.require_same_shape(other.layers[l].bias, where);
    }
  }
};

/// Weights built from config with every tensor zero-initialized.
inline GeneratorWeights zero_weights(const GeneratorConfig& config) {
  config.validate();
  GeneratorWeights w{config, {}};
  for (const auto& s : config.layers) {
    LayerWeights lw{Tensor({s.in_channels, s.out_channels, s.kernel, s.kernel}), {}, {}};
    if (s.normalize) {
      lw.gain = Tensor({s.out_channels}, 1.0);
      lw.bias = Tensor({s.out_channels}, 0.0);
    }
    w.layers.push_back(std::move(lw));
  }
  return w;
}

inline constexpr double kInitStddev = 0.02;

/// Kernels i.i.d. N(0, 0.02^2), gains 1, biases 0.
inline GeneratorWeights init_weights(const GeneratorConfig& config, std::uint64_t seed,
                                     double stddev = kInitStddev) {
  GeneratorWeights w = zero_weights(config);
  Rng rng(seed);
  for (auto& l : w.layers)
    for (double& v : l.kernels.values()) v = stddev * rng.normal();
  return w;
}

/// The fixed network input z, shape [latent_dim, 1, 1], entries i.i.d. N(0,1).
struct LatentSeed {
  Tensor z;
  std::uint64_t seed = 0;
  friend bool operator==(const LatentSeed&, const LatentSeed&) = default;
};

inline LatentSeed make_latent(std::size_t latent_dim, std::uint64_t seed) {
  Rng rng(seed);
  Tensor z({latent_dim, 1, 1});
  for (double& v : z.values()) v = rng.normal();
  return {std::move(z), seed};
}

/// Intermediate values of one forward pass, kept for the reverse pass.
struct ForwardCache {
  std::vector<Tensor> inputs;    ///< input of each layer
  std::vector<Tensor> conv_out;  ///< transposed-convolution output of each layer
  std::vector<Tensor> pre_act;   ///< activation input (normalized when enabled)
  Tensor uncropped;
  Tensor output;
};

namespace detail {

inline void check_latent(const GeneratorWeights& w, const Tensor& z) {
  if (z.size() != w.config.latent_dim) {
    throw ShapeError("generator: latent has " + std::to_string(z.size()) +
                     " entries, config expects " + std::to_string(w.config.latent_dim));
  }
  if (w.layers.size() != w.config.layers.size()) {
    throw ShapeError("generator: weights have " + std::to_string(w.layers.size()) +
                     " layers, config has " + std::to_string(w.config.layers.size()));
  }
}

}  // namespace detail

inline ForwardCache forward_cached(const GeneratorWeights& weights, const Tensor& z) {
  detail::check_latent(weights, z);
  const auto& cfg = weights.config;
  ForwardCache cache;
  Tensor x = z.reshaped({cfg.latent_dim, 1, 1});
  for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
    const auto& spec = cfg.layers[l];
    const auto& lw = weights.layers[l];
    Tensor conv = conv_transpose2d(x, lw.kernels, spec.stride, spec.pad);
    Tensor pre = spec.normalize ? channel_norm(conv, lw.gain, lw.bias) : conv;
    Tensor next = activation(pre, spec.activation);
    cache.inputs.push_back(std::move(x));
    cache.conv_out.push_back(std::move(conv));
    cache.pre_act.push_back(std::move(pre));
    x = std::move(next);
  }
  cache.output = center_crop(x, cfg.output_shape[1], cfg.output_shape[2]);
  cache.uncropped = std::move(x);
  return cache;
}

/// G(z; w).
inline Tensor forward(const GeneratorWeights& weights, const Tensor& z) {
  return forward_cached(weights, z).output;
}

/// Reverse-mode gradient of <grad_output, G(z; w)> with respect to w.
inline GeneratorWeights backward(const GeneratorWeights& weights, const ForwardCache& cache,
                                 const Tensor& grad_output) {
  const auto& cfg = weights.config;
  if (grad_output.shape() != cfg.output_shape) {
    throw ShapeError("generator backward: grad_output shape " + shape_string(grad_output.shape()) +
                     " must equal output shape " + shape_string(cfg.output_shape));
  }
  GeneratorWeights grads{cfg, std::vector<LayerWeights>(cfg.layers.size())};
  Tensor g = center_crop_backward(cache.uncropped.shape(), grad_output);
  for (std::size_t l = cfg.layers.size(); l-- > 0;) {
    const auto& spec = cfg.layers[l];
    const auto& lw = weights.layers[l];
    Tensor g_pre = activation_backward(cache.pre_act[l], g, spec.activation);
    Tensor g_conv;
    if (spec.normalize) {
      auto ng = channel_norm_backward(cache.conv_out[l], lw.gain, lw.bias, g_pre);
      grads.layers[l].gain = std::move(ng.gain);
      grads.layers[l].bias = std::move(ng.bias);
      g_conv = std::move(ng.input);
    } else {
      g_conv = std::move(g_pre);
    }
    auto cg = conv_transpose2d_backward(cache.inputs[l], lw.kernels, g_conv, spec.stride, spec.pad);
    grads.layers[l].kernels = std::move(cg.kernels);
    g = std::move(cg.input);
  }
  return grads;
}

inline GeneratorWeights backward(const GeneratorWeights& weights, const Tensor& z,
                                 const Tensor& grad_output) {
  return backward(weights, forward_cached(weights, z), grad_output);
}

}  // namespace csdip
