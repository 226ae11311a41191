#pragma once

#include "progtx/image.hpp"
#include "progtx/record.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <limits>
#include <optional>
#include <span>

namespace progtx::metrics {

inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();
inline constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

struct QualityReport {
  double mse = 0.0;
  double psnr_db = kPsnrInfinity;
  double ssim = kUndefined;
};

/// Mean squared error over all samples of all three planes.
double mse(const ImageBuffer& reference, const ImageBuffer& test);
/// 10 log10(255^2 / mse); +inf for mse == 0.
double psnr_from_mse(double mse);
QualityReport psnr(const ImageBuffer& reference, const ImageBuffer& test);

/// BT.601 luma, unrounded.
Eigen::MatrixXd luma(const ImageBuffer& image);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// Mean SSIM over all valid 11x11 Gaussian windows of the luma plane.
double ssim(const ImageBuffer& reference, const ImageBuffer& test);

/// PSNR and SSIM together.
QualityReport quality(const ImageBuffer& reference, const ImageBuffer& test);

/// Normalized 1-D Gaussian taps of the SSIM window.
Eigen::VectorXd gaussian_taps(int size, double sigma);

/// Pixels of every record with a decode event, counted once, per second of
/// `horizon_s`, in megapixels.
double throughput_mpps(std::span<const TransmissionRecord> records, double horizon_s);

struct WaitStats {
  double t_avg_ms = kUndefined;
  double t_p999_ms = kUndefined;
  double incomplete_fraction = 0.0;
  std::size_t completed = 0;
};

/// Zero-based index of the nearest-rank percentile ceil(p * n) for
/// p = permille / 1000.
std::size_t nearest_rank_index(std::size_t n, int permille);

/// Samples without a value are incomplete: excluded from the mean and the
/// percentile and counted in `incomplete_fraction`.
WaitStats wait_stats(std::span<const std::optional<double>> samples_ms);

}  // namespace progtx::metrics
