#pragma once

// Synthetic images and finite-difference helpers shared by the unit tests and
// the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "csdip/random.hpp"
#include "csdip/tensor.hpp"

namespace fixtures {

using csdip::Tensor;

inline Tensor random_tensor(csdip::Shape shape, std::uint64_t seed, double scale = 1.0) {
  csdip::Rng rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

/// ||a - b|| / max(||a||, ||b||), or the absolute gap when both are ~0.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom < 1e-300 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

/// Central differences of f over the entries of x (restored afterwards).
inline std::vector<double> numeric_gradient(const std::function<double()>& f, std::span<double> x,
                                            double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Digit-like glyphs: polylines in a unit box rendered with a soft 1.5 px pen.
// ---------------------------------------------------------------------------

using Polyline = std::vector<std::pair<double, double>>;  // (x, y), y down

inline std::vector<Polyline> digit_strokes(int digit) {
  auto arc = [](double cx, double cy, double rx, double ry, double a0, double a1, int n) {
    Polyline p;
    for (int i = 0; i <= n; ++i) {
      const double a = a0 + (a1 - a0) * i / n;
      p.emplace_back(cx + rx * std::cos(a), cy + ry * std::sin(a));
    }
    return p;
  };
  const double pi = std::numbers::pi;
  switch (digit % 10) {
    case 0: return {arc(0.5, 0.5, 0.32, 0.45, 0, 2 * pi, 28)};
    case 1: return {{{0.35, 0.2}, {0.55, 0.05}, {0.55, 0.95}}, {{0.35, 0.95}, {0.75, 0.95}}};
    case 2: return {arc(0.5, 0.3, 0.3, 0.25, pi, 2.2 * pi, 14), {{0.72, 0.45}, {0.2, 0.95}, {0.82, 0.95}}};
    case 3: return {arc(0.5, 0.28, 0.28, 0.23, -0.8 * pi, 0.5 * pi, 12),
                    arc(0.5, 0.72, 0.3, 0.23, -0.5 * pi, 0.8 * pi, 12)};
    case 4: return {{{0.65, 0.95}, {0.65, 0.05}, {0.15, 0.65}, {0.85, 0.65}}};
    case 5: return {{{0.8, 0.05}, {0.25, 0.05}, {0.22, 0.45}},
                    arc(0.48, 0.67, 0.3, 0.27, -0.75 * pi, 0.75 * pi, 14)};
    case 6: return {arc(0.5, 0.68, 0.28, 0.27, 0, 2 * pi, 20), {{0.22, 0.68}, {0.35, 0.3}, {0.65, 0.05}}};
    case 7: return {{{0.15, 0.05}, {0.85, 0.05}, {0.4, 0.95}}, {{0.35, 0.5}, {0.7, 0.5}}};
    case 8: return {arc(0.5, 0.27, 0.24, 0.22, 0, 2 * pi, 18), arc(0.5, 0.72, 0.3, 0.23, 0, 2 * pi, 20)};
    default: return {arc(0.5, 0.32, 0.28, 0.27, 0, 2 * pi, 20), {{0.78, 0.32}, {0.65, 0.7}, {0.4, 0.95}}};
  }
}

inline double segment_distance(double px, double py, std::pair<double, double> a,
                               std::pair<double, double> b) {
  const double dx = b.first - a.first, dy = b.second - a.second;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - a.first) * dx + (py - a.second) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double qx = a.first + t * dx - px, qy = a.second + t * dy - py;
  return std::sqrt(qx * qx + qy * qy);
}

/// A 1x28x28 handwritten-style digit in [-1, 1]: background -1, ink +1.
/// `variant` jitters position and size so repeated digits differ.
inline Tensor digit_image(int digit, std::uint64_t variant = 0, std::size_t size = 28) {
  csdip::Rng rng(csdip::derive_seed(0xd1917ULL, static_cast<std::uint64_t>(digit), variant));
  const double s = static_cast<double>(size);
  const double box_w = s * (0.42 + 0.06 * rng.uniform());
  const double box_h = s * (0.64 + 0.06 * rng.uniform());
  const double x0 = (s - box_w) / 2 + (rng.uniform() - 0.5) * 2.0;
  const double y0 = (s - box_h) / 2 + (rng.uniform() - 0.5) * 2.0;
  const double pen = 1.3 + 0.4 * rng.uniform();
  const auto strokes = digit_strokes(digit);
  Tensor img({1, size, size});
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      const double px = static_cast<double>(c) + 0.5, py = static_cast<double>(r) + 0.5;
      double d = 1e9;
      for (const auto& line : strokes) {
        for (std::size_t i = 0; i + 1 < line.size(); ++i) {
          const std::pair<double, double> a{x0 + line[i].first * box_w, y0 + line[i].second * box_h};
          const std::pair<double, double> b{x0 + line[i + 1].first * box_w,
                                            y0 + line[i + 1].second * box_h};
          d = std::min(d, segment_distance(px, py, a, b));
        }
      }
      const double ink = std::clamp(pen - d, 0.0, 1.0);
      img.at(0, r, c) = 2.0 * ink - 1.0;
    }
  }
  return img;
}

/// A smooth natural-looking texture: a few oriented low-frequency waves plus
/// blurred noise, scaled into [-0.9, 0.9].
inline Tensor texture_image(std::uint64_t seed, std::size_t size = 32, std::size_t channels = 1) {
  csdip::Rng rng(csdip::derive_seed(0x7e47ULL, seed));
  const double s = static_cast<double>(size);
  Tensor img({channels, size, size});
  Tensor noise = random_tensor({channels, size, size}, rng.next_u64());
  for (std::size_t ch = 0; ch < channels; ++ch) {
    struct Wave { double fx, fy, phase, amp; };
    std::vector<Wave> waves;
    for (int k = 0; k < 5; ++k) {
      waves.push_back({(rng.uniform() - 0.5) * 6.0, (rng.uniform() - 0.5) * 6.0,
                       rng.uniform() * 2 * std::numbers::pi, 0.4 + rng.uniform()});
    }
    for (std::size_t r = 0; r < size; ++r) {
      for (std::size_t c = 0; c < size; ++c) {
        double v = 0;
        for (const auto& w : waves) {
          v += w.amp * std::cos(2 * std::numbers::pi * (w.fx * c + w.fy * r) / s + w.phase);
        }
        double blur = 0;
        int cnt = 0;
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const long rr = static_cast<long>(r) + dr, cc = static_cast<long>(c) + dc;
            if (rr < 0 || cc < 0 || rr >= static_cast<long>(size) || cc >= static_cast<long>(size)) continue;
            blur += noise.at(ch, rr, cc);
            ++cnt;
          }
        }
        img.at(ch, r, c) = v + 0.5 * blur / cnt;
      }
    }
  }
  const auto [lo, hi] = std::minmax_element(img.values().begin(), img.values().end());
  const double mid = (*hi + *lo) / 2, half = (*hi - *lo) / 2;
  for (double& v : img.values()) v = 0.9 * (v - mid) / half;
  return img;
}

}  // namespace fixtures
