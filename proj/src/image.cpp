#include "progtx/image.hpp"

#include <algorithm>
#include <stdexcept>

namespace progtx {

ImageBuffer::ImageBuffer(int width, int height, std::uint8_t fill) {
  if (width < 0 || height < 0) throw std::invalid_argument("negative image dimensions");
  for (auto& p : planes) p = Plane::Constant(height, width, fill);
}

bool operator==(const ImageBuffer& a, const ImageBuffer& b) {
  if (a.width() != b.width() || a.height() != b.height()) return false;
  for (int c = 0; c < 3; ++c)
    if (a.planes[c] != b.planes[c]) return false;
  return true;
}

ImageBuffer pad_to_multiple(const ImageBuffer& image, int block) {
  if (block < 1) throw std::invalid_argument("block size must be positive");
  const int w = image.width();
  const int h = image.height();
  if (w == 0 || h == 0) throw std::invalid_argument("cannot pad an empty image");
  const int pw = (w + block - 1) / block * block;
  const int ph = (h + block - 1) / block * block;
  if (pw == w && ph == h) return image;
  ImageBuffer out(pw, ph);
  for (int c = 0; c < 3; ++c) {
    auto& dst = out.planes[c];
    const auto& src = image.planes[c];
    for (int y = 0; y < ph; ++y)
      for (int x = 0; x < pw; ++x) dst(y, x) = src(std::min(y, h - 1), std::min(x, w - 1));
  }
  return out;
}

ImageBuffer crop(const ImageBuffer& image, int width, int height) {
  if (width > image.width() || height > image.height())
    throw std::invalid_argument("crop larger than image");
  if (width == image.width() && height == image.height()) return image;
  ImageBuffer out;
  for (int c = 0; c < 3; ++c) out.planes[c] = image.planes[c].topLeftCorner(height, width);
  return out;
}

}  // namespace progtx
