#pragma once

// File formats: a JSON-header + little-endian float64 payload container for
// measurements, weights and reconstructions; 8-bit PGM/PNG images mapped to
// [-1, 1]; JSON for generator configs and prior statistics.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <png.h>

#include "json.hpp"

#include "csdip/generator.hpp"
#include "csdip/regularization.hpp"
#include "csdip/tensor.hpp"

namespace csdip {

using json = nlohmann::json;

class IoError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Pixel mapping
// ---------------------------------------------------------------------------

/// v in {0..255} -> 2v/255 - 1.
inline double pixel_to_unit(std::uint8_t v) { return 2.0 * static_cast<double>(v) / 255.0 - 1.0; }

/// Inverse of pixel_to_unit, rounding halves away from zero and clamping.
inline std::uint8_t unit_to_pixel(double x) {
  const long v = std::lround((x + 1.0) * 255.0 / 2.0);
  return static_cast<std::uint8_t>(std::clamp(v, 0L, 255L));
}

// ---------------------------------------------------------------------------
// Container
// ---------------------------------------------------------------------------

struct NamedArray {
  std::string name;
  Tensor tensor;
};

/// One JSON header line followed by the arrays listed in header["arrays"],
/// each as raw float64 little-endian values in row-major order.
struct Container {
  json header = json::object();
  std::vector<NamedArray> arrays;

  const Tensor& get(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return a.tensor;
    throw IoError("container has no array named '" + name + "'");
  }
  bool has(const std::string& name) const {
    return std::any_of(arrays.begin(), arrays.end(), [&](const auto& a) { return a.name == name; });
  }
};

namespace detail {

inline std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffULL) << (8 * (7 - i));
    return r;
  }
  return v;
}

}  // namespace detail

inline void write_container(const std::filesystem::path& path, const Container& c) {
  json header = c.header;
  header["dtype"] = "f64le";
  header["arrays"] = json::array();
  for (const auto& a : c.arrays) header["arrays"].push_back({{"name", a.name}, {"shape", a.tensor.shape()}});

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << header.dump() << '\n';
  for (const auto& a : c.arrays) {
    for (double v : a.tensor.values()) {
      const std::uint64_t bits = detail::to_little_endian(std::bit_cast<std::uint64_t>(v));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("'" + path.string() + "': missing header line");
  Container c;
  try {
    c.header = json::parse(line);
  } catch (const json::exception& e) {
    throw IoError("'" + path.string() + "': bad JSON header: " + e.what());
  }
  if (c.header.value("dtype", "") != "f64le") {
    throw IoError("'" + path.string() + "': unsupported dtype");
  }
  for (const auto& spec : c.header.at("arrays")) {
    Shape shape = spec.at("shape").get<Shape>();
    std::vector<double> values(shape_size(shape));
    for (double& v : values) {
      std::uint64_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) {
        throw IoError("'" + path.string() + "': payload truncated in array '" +
                      spec.at("name").get<std::string>() + "'");
      }
      v = std::bit_cast<double>(detail::to_little_endian(bits));
    }
    c.arrays.push_back({spec.at("name").get<std::string>(), Tensor(std::move(shape), std::move(values))});
  }
  return c;
}

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string magic;
  in >> magic;
  auto next_int = [&]() {
    long v = -1;
    while (in >> std::ws && in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
    }
    in >> v;
    if (!in || v < 0) throw IoError("'" + path.string() + "': malformed PGM header");
    return static_cast<std::size_t>(v);
  };
  if (magic != "P5" && magic != "P2") throw IoError("'" + path.string() + "': not a PGM file");
  const std::size_t width = next_int(), height = next_int(), maxval = next_int();
  if (maxval != 255) throw IoError("'" + path.string() + "': only 8-bit PGM (maxval 255) is supported");
  Tensor img({1, height, width});
  if (magic == "P5") {
    in.get();
    std::vector<unsigned char> raw(width * height);
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
      throw IoError("'" + path.string() + "': truncated PGM payload");
    }
    for (std::size_t i = 0; i < raw.size(); ++i) img[i] = pixel_to_unit(raw[i]);
  } else {
    for (std::size_t i = 0; i < width * height; ++i) img[i] = pixel_to_unit(static_cast<std::uint8_t>(next_int()));
  }
  return img;
}

inline Tensor read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw IoError("'" + path.string() + "': " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const std::size_t channels = color ? 3 : 1;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    throw IoError("'" + path.string() + "': " + image.message);
  }
  const std::size_t h = image.height, w = image.width;
  Tensor img({channels, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < channels; ++c) img.at(c, y, x) = pixel_to_unit(buffer[(y * w + x) * channels + c]);
  return img;
}

}  // namespace detail

/// Loads an 8-bit PGM or PNG as [C,H,W] in [-1, 1]. Alpha is dropped.
inline Tensor read_image(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw IoError("cannot open '" + path.string() + "'");
  char magic[2] = {0, 0};
  probe.read(magic, 2);
  if (magic[0] == 'P' && (magic[1] == '5' || magic[1] == '2')) return detail::read_pgm(path);
  return detail::read_png(path);
}

/// Writes [C,H,W] in [-1, 1] as PGM (".pgm", single channel) or PNG.
inline void write_image(const std::filesystem::path& path, const Tensor& image) {
  detail::require_rank(image, 3, "write_image", "image");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (path.extension() == ".pgm") {
    if (c != 1) throw IoError("write_image: PGM needs one channel, image has " + std::to_string(c));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << "P5\n" << w << ' ' << h << "\n255\n";
    for (double v : image.values()) out.put(static_cast<char>(unit_to_pixel(v)));
    if (!out) throw IoError("write to '" + path.string() + "' failed");
    return;
  }
  if (c != 1 && c != 3) throw IoError("write_image: PNG needs 1 or 3 channels, image has " + std::to_string(c));
  std::vector<png_byte> buffer(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) buffer[(y * w + x) * c + ch] = unit_to_pixel(image.at(ch, y, x));
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(w);
  png.height = static_cast<png_uint_32>(h);
  png.format = c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, buffer.data(), 0, nullptr)) {
    throw IoError("'" + path.string() + "': " + png.message);
  }
}

// ---------------------------------------------------------------------------
// JSON forms
// ---------------------------------------------------------------------------

inline json to_json(const GeneratorConfig& cfg) {
  json layers = json::array();
  for (const auto& l : cfg.layers) {
    layers.push_back({{"in_channels", l.in_channels},
                      {"out_channels", l.out_channels},
                      {"kernel", l.kernel},
                      {"stride", l.stride},
                      {"pad", l.pad},
                      {"normalize", l.normalize},
                      {"activation", std::string(to_string(l.activation))}});
  }
  return {{"latent_dim", cfg.latent_dim}, {"output_shape", cfg.output_shape}, {"layers", layers}};
}

inline GeneratorConfig generator_config_from_json(const json& j) {
  GeneratorConfig cfg;
  try {
    cfg.latent_dim = j.value("latent_dim", std::size_t{128});
    cfg.output_shape = j.at("output_shape").get<Shape>();
    for (const auto& l : j.at("layers")) {
      LayerSpec s;
      s.in_channels = l.at("in_channels").get<std::size_t>();
      s.out_channels = l.at("out_channels").get<std::size_t>();
      s.kernel = l.value("kernel", std::size_t{4});
      s.stride = l.value("stride", std::size_t{2});
      s.pad = l.value("pad", std::size_t{1});
      s.normalize = l.value("normalize", true);
      s.activation = activation_from_string(l.value("activation", std::string("relu")));
      cfg.layers.push_back(s);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("generator config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

inline json to_json(const PriorStats& stats) {
  const auto& m = stats.meta();
  return {{"L", stats.layer_count()},
          {"mu", stats.mu()},
          {"sigma_diag", stats.sigma_diag()},
          {"meta",
           {{"Q", m.Q}, {"S", m.S}, {"T", m.T}, {"seed", m.seed}, {"max_abs_offdiag", m.max_abs_offdiag},
            {"covariance", m.covariance}}}};
}

inline PriorStats prior_stats_from_json(const json& j) {
  try {
    PriorMeta meta;
    if (j.contains("meta")) {
      const auto& m = j.at("meta");
      meta.Q = m.value("Q", std::size_t{0});
      meta.S = m.value("S", std::size_t{0});
      meta.T = m.value("T", std::size_t{0});
      meta.seed = m.value("seed", std::uint64_t{0});
      meta.max_abs_offdiag = m.value("max_abs_offdiag", 0.0);
      meta.covariance = m.value("covariance", std::vector<double>{});
    }
    PriorStats stats(j.at("mu").get<std::vector<double>>(), j.at("sigma_diag").get<std::vector<double>>(),
                     std::move(meta));
    if (j.contains("L") && j.at("L").get<std::size_t>() != stats.layer_count()) {
      throw ConfigError("prior stats: L does not match the length of mu");
    }
    return stats;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("prior stats: ") + e.what());
  }
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("'" + path.string() + "': " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

inline Container weights_container(const GeneratorWeights& w, const LatentSeed* latent = nullptr) {
  Container c;
  c.header["kind"] = "generator_weights";
  c.header["config"] = to_json(w.config);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    c.arrays.push_back({p + "kernels", w.layers[l].kernels});
    if (!w.layers[l].gain.empty()) {
      c.arrays.push_back({p + "gain", w.layers[l].gain});
      c.arrays.push_back({p + "bias", w.layers[l].bias});
    }
  }
  if (latent) {
    c.header["latent_seed"] = latent->seed;
    c.arrays.push_back({"latent", latent->z});
  }
  return c;
}

inline GeneratorWeights weights_from_container(const Container& c) {
  if (c.header.value("kind", "") != "generator_weights") {
    throw IoError("container does not hold generator weights");
  }
  GeneratorWeights w = zero_weights(generator_config_from_json(c.header.at("config")));
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    auto take = [&](Tensor& dst, const std::string& name) {
      const Tensor& src = c.get(p + name);
      dst.require_same_shape(src, "weights " + p + name);
      dst = src;
    };
    take(w.layers[l].kernels, "kernels");
    if (!w.layers[l].gain.empty()) {
      take(w.layers[l].gain, "gain");
      take(w.layers[l].bias, "bias");
    }
  }
  return w;
}

inline void write_weights(const std::filesystem::path& path, const GeneratorWeights& w,
                          const LatentSeed* latent = nullptr) {
  write_container(path, weights_container(w, latent));
}

inline GeneratorWeights read_weights(const std::filesystem::path& path) {
  return weights_from_container(read_container(path));
}

}  // namespace csdip
