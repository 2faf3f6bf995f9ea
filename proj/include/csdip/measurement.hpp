#pragma once

// Measurement sets: y = A x + noise together with a descriptor from which A
// is regenerated bit-exactly (seeds, mask parameters, image shape).

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>

#include "csdip/io.hpp"
#include "csdip/linops.hpp"
#include "csdip/random.hpp"

namespace csdip {

struct MeasurementSet {
  json descriptor;  ///< kind, m, n, channels, height, width, lines, sigma2, seeds
  MeasurementOperator op;
  Tensor y;
  Shape image_shape;
};

/// Regenerates the operator recorded in a descriptor.
inline MeasurementOperator operator_from_descriptor(const json& d) {
  const std::string kind = d.at("kind").get<std::string>();
  if (kind == "gaussian") {
    return make_gaussian(d.at("m").get<std::size_t>(), d.at("n").get<std::size_t>(),
                         d.at("operator_seed").get<std::uint64_t>());
  }
  if (kind == "fourier") {
    return make_radial_mask(d.at("height").get<std::size_t>(), d.at("width").get<std::size_t>(),
                            d.at("lines").get<std::size_t>());
  }
  if (kind == "identity") return IdentityOperator(d.at("n").get<std::size_t>());
  throw ConfigError("unknown measurement kind '" + kind + "'");
}

struct MeasureRequest {
  std::string kind = "gaussian";  ///< gaussian | fourier | identity
  std::size_t m = 0;              ///< gaussian only
  std::size_t lines = 0;          ///< fourier only
  double sigma2 = 0.0;
  std::uint64_t seed = 0;
};

/// Measures an image. The operator and noise seeds are derived from req.seed.
inline MeasurementSet measure(const Tensor& image, const MeasureRequest& req) {
  detail::require_rank(image, 3, "measure", "image");
  const std::size_t n = image.size();
  json d = {{"kind", req.kind},
            {"n", n},
            {"channels", image.dim(0)},
            {"height", image.dim(1)},
            {"width", image.dim(2)},
            {"lines", req.lines},
            {"sigma2", req.sigma2},
            {"seed", req.seed},
            {"operator_seed", derive_seed(req.seed, 0x6f70ULL)},
            {"noise_seed", derive_seed(req.seed, 0x6e6fULL)}};
  if (req.kind == "gaussian") {
    if (req.m == 0) throw ConfigError("measure: gaussian kind needs m >= 1");
    d["m"] = req.m;
  } else if (req.kind == "fourier") {
    if (image.dim(0) != 1) throw ConfigError("measure: fourier kind needs a single-channel image");
  } else if (req.kind != "identity") {
    throw ConfigError("measure: unknown kind '" + req.kind + "'");
  }
  MeasurementOperator op = operator_from_descriptor(d);
  d["m"] = output_size(op);
  Tensor clean = apply_operator(op, image);
  Tensor y = add_noise(clean, {req.sigma2, d["noise_seed"].get<std::uint64_t>()}, clean.size());
  return {std::move(d), std::move(op), std::move(y), image.shape()};
}

inline void write_measurements(const std::filesystem::path& path, const MeasurementSet& set) {
  Container c;
  c.header = set.descriptor;
  c.arrays.push_back({"y", set.y});
  write_container(path, c);
}

inline MeasurementSet read_measurements(const std::filesystem::path& path) {
  Container c = read_container(path);
  json d = c.header;
  d.erase("arrays");
  d.erase("dtype");
  MeasurementSet set{d, operator_from_descriptor(d), c.get("y"),
                     {d.at("channels").get<std::size_t>(), d.at("height").get<std::size_t>(),
                      d.at("width").get<std::size_t>()}};
  if (set.y.size() != output_size(set.op)) {
    throw IoError("'" + path.string() + "': y has " + std::to_string(set.y.size()) +
                  " entries, regenerated operator produces " + std::to_string(output_size(set.op)));
  }
  return set;
}

}  // namespace csdip
