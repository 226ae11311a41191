#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>

namespace progtx {

/// Planar 8-bit RGB image. Each plane is height x width, row-major.
struct ImageBuffer {
  using Plane = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  std::array<Plane, 3> planes;

  ImageBuffer() = default;
  ImageBuffer(int width, int height, std::uint8_t fill = 0);

  int width() const { return static_cast<int>(planes[0].cols()); }
  int height() const { return static_cast<int>(planes[0].rows()); }
  long pixel_count() const { return static_cast<long>(width()) * height(); }

  friend bool operator==(const ImageBuffer& a, const ImageBuffer& b);
};

/// Edge-replicates the right and bottom borders so both dimensions become
/// multiples of `block`.
ImageBuffer pad_to_multiple(const ImageBuffer& image, int block);

/// Top-left crop.
ImageBuffer crop(const ImageBuffer& image, int width, int height);

/// Clamps to [0, 255] and rounds half away from zero.
inline std::uint8_t to_sample(double v) {
  if (!(v > 0.0)) return 0;
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(v + 0.5);
}

}  // namespace progtx
