#pragma once

#include "progtx/codec_masking.hpp"
#include "progtx/image.hpp"

#include <vector>

namespace progtx::observer {

/// Ranks channels by the mean rise in reconstruction MSE when each one alone
/// is zeroed. Quantization is disabled, so each score is that channel's share
/// of the signal energy. Ties keep the lower channel index first.
masking::ImportanceRanking rank_channels(const std::vector<ImageBuffer>& corpus);

struct CurvePoint {
  int keep = 0;
  double psnr_db = 0.0;
};

/// PSNR of the codec's quantized decode keeping the first `keep` channels of
/// `order`, for each entry of the ascending `keep_grid`.
std::vector<CurvePoint> masking_curve(const masking::MaskingCodec& codec,
                                      const masking::ImportanceRanking& order,
                                      const ImageBuffer& image, const std::vector<int>& keep_grid);

}  // namespace progtx::observer
