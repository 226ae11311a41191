#pragma once

// Independent reference implementations used by the tests. None of these
// call into the library's numeric code.

#include "progtx/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace oracle {

// J0(x) from its power series; accurate to ~1e-15 for |x| < 10.
inline double bessel_j0(double x) {
  double term = 1.0, sum = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 80; ++k) {
    term *= -q / (static_cast<double>(k) * k);
    sum += term;
    if (std::abs(term) < 1e-18) break;
  }
  return sum;
}

// Q(x) = erfc(x / sqrt 2) / 2 with erf from its Maclaurin series (x small)
// or the continued fraction of erfc (x large).
inline double erfc_series(double z) {
  if (z < 0) return 2.0 - erfc_series(-z);
  if (z < 3.0) {
    double sum = 0.0, term = z;
    for (int n = 0; n < 200; ++n) {
      sum += term / (2 * n + 1);
      term *= -z * z / (n + 1);
      if (std::abs(term) < 1e-20) break;
    }
    return 1.0 - 2.0 / std::sqrt(M_PI) * sum;
  }
  // Lentz evaluation of erfc(z) = exp(-z^2)/sqrt(pi) * 1/(z + 1/2/(z + 1/(z + 3/2/(z + ...)))).
  double f = z;
  for (int k = 200; k >= 1; --k) f = z + (k / 2.0) / f;
  return std::exp(-z * z) / std::sqrt(M_PI) / f;
}

inline double q_series(double x) { return 0.5 * erfc_series(x / std::sqrt(2.0)); }

inline double inverse_q_bisect(double eps) {
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (q_series(mid) > eps ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Population standard deviation.
inline double two_pass_std(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

inline double naive_mse(const progtx::ImageBuffer& a, const progtx::ImageBuffer& b) {
  double s = 0.0;
  long n = 0;
  for (int p = 0; p < 3; ++p)
    for (int y = 0; y < a.height(); ++y)
      for (int x = 0; x < a.width(); ++x) {
        const double d = double(a.planes[p](y, x)) - double(b.planes[p](y, x));
        s += d * d;
        ++n;
      }
  return s / n;
}

inline double naive_psnr(const progtx::ImageBuffer& a, const progtx::ImageBuffer& b) {
  const double m = naive_mse(a, b);
  return m == 0 ? INFINITY : 10.0 * std::log10(255.0 * 255.0 / m);
}

// SSIM with a full 2-D Gaussian window evaluated directly at every valid
// position.
inline double naive_ssim(const progtx::ImageBuffer& a, const progtx::ImageBuffer& b) {
  const int w = a.width(), h = a.height(), win = 11;
  auto y = [](const progtx::ImageBuffer& im, int r, int c) {
    return 0.299 * im.planes[0](r, c) + 0.587 * im.planes[1](r, c) + 0.114 * im.planes[2](r, c);
  };
  double g[11][11], gs = 0.0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
      gs += g[i][j];
    }
  const double c1 = std::pow(0.01 * 255, 2), c2 = std::pow(0.03 * 255, 2);
  double total = 0.0;
  int count = 0;
  for (int r = 0; r + win <= h; ++r)
    for (int c = 0; c + win <= w; ++c) {
      double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          const double wt = g[i][j] / gs, va = y(a, r + i, c + j), vb = y(b, r + i, c + j);
          mx += wt * va;
          my += wt * vb;
          xx += wt * va * va;
          yy += wt * vb * vb;
          xy += wt * va * vb;
        }
      const double sx = xx - mx * mx, sy = yy - my * my, sxy = xy - mx * my;
      total += ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sx + sy + c2));
      ++count;
    }
  return total / count;
}

inline progtx::ImageBuffer random_image(int w, int h, std::uint32_t seed) {
  std::mt19937 rng(seed);
  progtx::ImageBuffer im(w, h);
  for (auto& p : im.planes)
    for (int i = 0; i < p.size(); ++i) p.data()[i] = static_cast<std::uint8_t>(rng() & 0xFF);
  return im;
}

// Smooth image with a little texture, closer to photographs than noise.
inline progtx::ImageBuffer smooth_image(int w, int h, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double fx = 0.02 + 0.1 * u(rng), fy = 0.02 + 0.1 * u(rng), ph = 6.0 * u(rng);
  progtx::ImageBuffer im(w, h);
  for (int p = 0; p < 3; ++p)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const double v = 128 + 70 * std::sin(fx * c + ph + p) * std::cos(fy * r) + 20 * (u(rng) - 0.5);
        im.planes[p](r, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
  return im;
}

// Nearest-rank percentile by full sort.
inline double sorted_percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(v.size()) - 1e-9));
  return v[std::max<std::size_t>(rank, 1) - 1];
}

}  // namespace oracle
