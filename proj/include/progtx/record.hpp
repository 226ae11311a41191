#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace progtx {

struct QualityPoint {
  std::int64_t slot = 0;  // relative to the image's first slot
  int units = 0;          // units decoded (or quality level index + 1)
  double psnr_db = 0.0;
  double ssim = 0.0;
};

/// Outcome of transmitting one image under one method in one realization.
struct TransmissionRecord {
  double snr_db = 0.0;
  std::string method;
  std::string image;
  int realization = 0;
  std::int64_t pixels = 0;
  std::int64_t start_slot = 0;  // absolute slot within the realization
  std::int64_t elapsed_slots = 0;  // slots occupied before the next image starts
  std::optional<std::int64_t> first_decode_slot;
  std::optional<std::int64_t> completion_slot;
  std::vector<QualityPoint> trajectory;
  std::int64_t bits_sent = 0;

  bool decoded() const { return first_decode_slot.has_value(); }
};

}  // namespace progtx
