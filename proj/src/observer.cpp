#include "progtx/observer.hpp"

#include "progtx/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace progtx::observer {

using masking::ImportanceRanking;
using masking::Latent;

namespace {

// MSE of an unrounded reconstruction against the original (cropped area).
double real_mse(const ImageBuffer& image, const Latent& latent) {
  const auto planes = synthesize_real(latent);
  double acc = 0.0;
  for (int p = 0; p < 3; ++p) {
    const auto ref = image.planes[p].cast<double>();
    acc += (planes[p].topLeftCorner(image.height(), image.width()) - ref).squaredNorm();
  }
  return acc / (3.0 * static_cast<double>(image.pixel_count()));
}

}  // namespace

ImportanceRanking rank_channels(const std::vector<ImageBuffer>& corpus) {
  if (corpus.empty()) throw std::invalid_argument("rank_channels: empty corpus");
  const int n = masking::kChannels;
  std::vector<double> scores(n, 0.0);
  for (const auto& image : corpus) {
    Latent latent = masking::analyze_image(image);
    const double base = real_mse(image, latent);
    for (int c = 0; c < n; ++c) {
      auto saved = latent.channels[c];
      latent.channels[c].setZero();
      scores[c] += real_mse(image, latent) - base;
      latent.channels[c] = std::move(saved);
    }
  }
  ImportanceRanking r;
  r.scores.resize(n);
  for (int c = 0; c < n; ++c) r.scores[c] = std::max(0.0, scores[c] / static_cast<double>(corpus.size()));
  r.order.resize(n);
  std::iota(r.order.begin(), r.order.end(), 0);
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](int a, int b) { return r.scores[a] > r.scores[b]; });
  return r;
}

std::vector<CurvePoint> masking_curve(const masking::MaskingCodec& codec, const ImportanceRanking& order,
                                      const ImageBuffer& image, const std::vector<int>& keep_grid) {
  if (!std::is_sorted(keep_grid.begin(), keep_grid.end()))
    throw std::invalid_argument("keep_grid must be sorted ascending");
  const Latent latent = masking::analyze_image(image);
  std::vector<CurvePoint> out;
  for (const int keep : keep_grid) {
    const Latent masked = masking::mask_channels(latent, order, keep);
    const auto symbols = masking::quantize(masked, codec.table());
    const ImageBuffer rec =
        masking::synthesize_image(masking::dequantize(symbols, codec.table()), image.width(), image.height());
    out.push_back({keep, metrics::psnr(image, rec).psnr_db});
  }
  return out;
}

}  // namespace progtx::observer
