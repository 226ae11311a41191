#include "progtx/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace progtx::metrics {

namespace {

void check_same_size(const ImageBuffer& a, const ImageBuffer& b) {
  if (a.width() != b.width() || a.height() != b.height())
    throw std::invalid_argument("image dimensions differ: " + std::to_string(a.width()) + "x" +
                                std::to_string(a.height()) + " vs " + std::to_string(b.width()) +
                                "x" + std::to_string(b.height()));
}

// Valid-mode separable filtering with the same taps along both axes.
Eigen::MatrixXd filter_valid(const Eigen::MatrixXd& in, const Eigen::VectorXd& taps) {
  const Eigen::Index k = taps.size();
  const Eigen::Index rows = in.rows() - k + 1;
  const Eigen::Index cols = in.cols() - k + 1;
  Eigen::MatrixXd horiz = Eigen::MatrixXd::Zero(in.rows(), cols);
  for (Eigen::Index i = 0; i < k; ++i) horiz += taps(i) * in.middleCols(i, cols);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(rows, cols);
  for (Eigen::Index i = 0; i < k; ++i) out += taps(i) * horiz.middleRows(i, rows);
  return out;
}

}  // namespace

double mse(const ImageBuffer& reference, const ImageBuffer& test) {
  check_same_size(reference, test);
  double acc = 0.0;
  for (int p = 0; p < 3; ++p)
    acc += (reference.planes[p].cast<double>() - test.planes[p].cast<double>()).squaredNorm();
  return acc / (3.0 * static_cast<double>(reference.pixel_count()));
}

double psnr_from_mse(double m) {
  if (m <= 0.0) return kPsnrInfinity;
  return 10.0 * std::log10(255.0 * 255.0 / m);
}

QualityReport psnr(const ImageBuffer& reference, const ImageBuffer& test) {
  QualityReport r;
  r.mse = mse(reference, test);
  r.psnr_db = psnr_from_mse(r.mse);
  return r;
}

Eigen::MatrixXd luma(const ImageBuffer& image) {
  return 0.299 * image.planes[0].cast<double>() + 0.587 * image.planes[1].cast<double>() +
         0.114 * image.planes[2].cast<double>();
}

Eigen::VectorXd gaussian_taps(int size, double sigma) {
  Eigen::VectorXd g(size);
  const double c = (size - 1) / 2.0;
  for (int i = 0; i < size; ++i) g(i) = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
  return g / g.sum();
}

double ssim(const ImageBuffer& reference, const ImageBuffer& test) {
  check_same_size(reference, test);
  if (reference.width() < kSsimWindow || reference.height() < kSsimWindow)
    throw std::invalid_argument("image smaller than the 11x11 SSIM window");
  constexpr double c1 = (0.01 * 255) * (0.01 * 255);
  constexpr double c2 = (0.03 * 255) * (0.03 * 255);
  const Eigen::VectorXd taps = gaussian_taps(kSsimWindow, kSsimSigma);
  const Eigen::MatrixXd x = luma(reference);
  const Eigen::MatrixXd y = luma(test);

  const Eigen::ArrayXXd mx = filter_valid(x, taps).array();
  const Eigen::ArrayXXd my = filter_valid(y, taps).array();
  const Eigen::ArrayXXd sxx = filter_valid(x.cwiseProduct(x), taps).array() - mx * mx;
  const Eigen::ArrayXXd syy = filter_valid(y.cwiseProduct(y), taps).array() - my * my;
  const Eigen::ArrayXXd sxy = filter_valid(x.cwiseProduct(y), taps).array() - mx * my;

  const Eigen::ArrayXXd map = ((2 * mx * my + c1) * (2 * sxy + c2)) /
                              ((mx * mx + my * my + c1) * (sxx + syy + c2));
  return map.mean();
}

QualityReport quality(const ImageBuffer& reference, const ImageBuffer& test) {
  QualityReport r = psnr(reference, test);
  r.ssim = ssim(reference, test);
  return r;
}

double throughput_mpps(std::span<const TransmissionRecord> records, double horizon_s) {
  if (!(horizon_s > 0)) throw std::invalid_argument("throughput horizon must be > 0");
  double pixels = 0.0;
  for (const auto& r : records)
    if (r.decoded()) pixels += static_cast<double>(r.pixels);
  return pixels / horizon_s / 1e6;
}

std::size_t nearest_rank_index(std::size_t n, int permille) {
  if (n == 0) throw std::invalid_argument("percentile of an empty sample");
  // ceil(permille * n / 1000) in integers, at least rank 1.
  const std::size_t rank = (static_cast<std::size_t>(permille) * n + 999) / 1000;
  return std::max<std::size_t>(rank, 1) - 1;
}

WaitStats wait_stats(std::span<const std::optional<double>> samples_ms) {
  if (samples_ms.empty()) throw std::invalid_argument("wait_stats needs at least one sample");
  std::vector<double> done;
  done.reserve(samples_ms.size());
  for (const auto& s : samples_ms)
    if (s) done.push_back(*s);
  WaitStats w;
  w.completed = done.size();
  w.incomplete_fraction =
      static_cast<double>(samples_ms.size() - done.size()) / static_cast<double>(samples_ms.size());
  if (done.empty()) return w;
  double sum = 0.0;
  for (const double v : done) sum += v;
  w.t_avg_ms = sum / static_cast<double>(done.size());
  const std::size_t k = nearest_rank_index(done.size(), 999);
  std::nth_element(done.begin(), done.begin() + static_cast<std::ptrdiff_t>(k), done.end());
  w.t_p999_ms = done[k];
  return w;
}

}  // namespace progtx::metrics
