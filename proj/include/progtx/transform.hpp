#pragma once

#include "progtx/image.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace progtx {

/// C = 3*b*b coefficient planes, one per (color plane, u, v) basis function.
/// Channel index is plane*b*b + u*b + v; each plane is (H/b) x (W/b).
template <typename Scalar>
struct ChannelizedLatent {
  using Plane = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  int block = 8;
  std::vector<Plane> channels;

  int channel_count() const { return static_cast<int>(channels.size()); }
  int grid_rows() const { return channels.empty() ? 0 : static_cast<int>(channels[0].rows()); }
  int grid_cols() const { return channels.empty() ? 0 : static_cast<int>(channels[0].cols()); }

  static ChannelizedLatent zeros(int block, int grid_rows, int grid_cols) {
    ChannelizedLatent out;
    out.block = block;
    out.channels.assign(3 * block * block, Plane::Zero(grid_rows, grid_cols));
    return out;
  }
};

/// Orthonormal DCT-II matrix: row u is the u-th basis vector.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> dct_basis(int b) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> t(b, b);
  for (int u = 0; u < b; ++u) {
    const double a = u == 0 ? std::sqrt(1.0 / b) : std::sqrt(2.0 / b);
    for (int x = 0; x < b; ++x)
      t(u, x) = static_cast<Scalar>(a * std::cos((2 * x + 1) * u * std::numbers::pi / (2.0 * b)));
  }
  return t;
}

inline constexpr double kMidGray = 128.0;

/// Blockwise orthonormal DCT of each color plane, centered at mid-gray.
template <typename Scalar>
ChannelizedLatent<Scalar> analyze(const ImageBuffer& image, int b = 8) {
  if (b < 1) throw std::invalid_argument("block size must be positive");
  if (image.width() == 0 || image.height() == 0 || image.width() % b != 0 ||
      image.height() % b != 0)
    throw std::invalid_argument("image " + std::to_string(image.width()) + "x" +
                                std::to_string(image.height()) +
                                " is not divisible into " + std::to_string(b) + "x" +
                                std::to_string(b) + " blocks");
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Mat t = dct_basis<Scalar>(b);
  const int gr = image.height() / b;
  const int gc = image.width() / b;
  auto out = ChannelizedLatent<Scalar>::zeros(b, gr, gc);
  Mat block(b, b), coef(b, b);
  for (int p = 0; p < 3; ++p) {
    const auto plane = image.planes[p].template cast<Scalar>();
    for (int by = 0; by < gr; ++by)
      for (int bx = 0; bx < gc; ++bx) {
        block = plane.block(by * b, bx * b, b, b).array() - static_cast<Scalar>(kMidGray);
        coef.noalias() = t * block * t.transpose();
        for (int u = 0; u < b; ++u)
          for (int v = 0; v < b; ++v) out.channels[p * b * b + u * b + v](by, bx) = coef(u, v);
      }
  }
  return out;
}

/// Inverse of `analyze` without rounding or clamping (mid-gray restored).
template <typename Scalar>
std::array<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>, 3>
synthesize_real(const ChannelizedLatent<Scalar>& latent) {
  const int b = latent.block;
  if (latent.channel_count() != 3 * b * b)
    throw std::invalid_argument("latent has " + std::to_string(latent.channel_count()) +
                                " channels, expected " + std::to_string(3 * b * b));
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Mat t = dct_basis<Scalar>(b);
  const int gr = latent.grid_rows();
  const int gc = latent.grid_cols();
  std::array<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>, 3> out;
  Mat coef(b, b), block(b, b);
  for (int p = 0; p < 3; ++p) {
    out[p].resize(gr * b, gc * b);
    for (int by = 0; by < gr; ++by)
      for (int bx = 0; bx < gc; ++bx) {
        for (int u = 0; u < b; ++u)
          for (int v = 0; v < b; ++v) coef(u, v) = latent.channels[p * b * b + u * b + v](by, bx);
        block.noalias() = t.transpose() * coef * t;
        out[p].block(by * b, bx * b, b, b) = block.array() + static_cast<Scalar>(kMidGray);
      }
  }
  return out;
}

/// Inverse of `analyze`, rounded and clamped to 8-bit samples.
template <typename Scalar>
ImageBuffer synthesize(const ChannelizedLatent<Scalar>& latent) {
  const auto planes = synthesize_real(latent);
  ImageBuffer img(static_cast<int>(planes[0].cols()), static_cast<int>(planes[0].rows()));
  for (int p = 0; p < 3; ++p)
    for (Eigen::Index i = 0; i < planes[p].size(); ++i)
      img.planes[p].data()[i] = to_sample(static_cast<double>(planes[p].data()[i]));
  return img;
}

}  // namespace progtx
